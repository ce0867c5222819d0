"""Asymmetric weight quantization, int8 activation quantization, and the
KV-cache codecs (int8 keys with per-token params, fp8 E4M3 values).

Weight codes follow the affine rule

    code = round((w - w_min) / ((w_max - w_min) / (clip_max - clip_min))) + clip_min

with half-away-from-zero rounding and clamping to the clip range.
Constant blocks force scale = 1 and all codes to clip_min so dequant
recovers them exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import TinyforgeError, pack_i4, unpack_i4

CLIP = {4: (-8, 7), 8: (-128, 127)}


@dataclass(frozen=True)
class QuantParams:
    scale: float
    w_min: float
    clip_min: int
    clip_max: int


@dataclass
class QTensor:
    """Per-(row, block) asymmetrically quantized [h, l] weight matrix.

    codes:  int8 ndarray [h, l] holding the integer codes (4-bit codes are
            stored widened; the on-disk form packs them two per byte).
    scales / w_mins: float32 ndarrays [h, l // block_size].
    """

    codes: np.ndarray
    scales: np.ndarray
    w_mins: np.ndarray
    block_size: int
    bits: int

    @property
    def h(self) -> int:
        return self.codes.shape[0]

    @property
    def l(self) -> int:
        return self.codes.shape[1]

    @property
    def clip(self) -> tuple[int, int]:
        return CLIP[self.bits]

    def dequantize(self) -> np.ndarray:
        clip_min, _ = self.clip
        h, l = self.codes.shape
        nb = l // self.block_size
        c = self.codes.reshape(h, nb, self.block_size).astype(np.float64)
        w = (c - clip_min) * self.scales[:, :, None] + self.w_mins[:, :, None]
        return w.reshape(h, l).astype(np.float32)


def quant_asym(values, bits: int) -> tuple[np.ndarray, QuantParams]:
    """Quantize one block of float values to int codes plus QuantParams."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise TinyforgeError("bad-shape", "empty block")
    clip_min, clip_max = CLIP[bits]
    w_min = float(np.float32(v.min()))
    w_max = float(np.float32(v.max()))
    if w_max == w_min:
        return np.full(v.size, clip_min, dtype=np.int8), QuantParams(1.0, w_min, clip_min, clip_max)
    scale = float(np.float32((w_max - w_min) / (clip_max - clip_min)))
    q = (v - w_min) / scale
    codes = np.floor(q + 0.5).astype(np.int64) + clip_min  # q >= 0: half-away == half-up
    codes = np.clip(codes, clip_min, clip_max).astype(np.int8)
    return codes, QuantParams(scale, w_min, clip_min, clip_max)


def dequant_asym(codes, params: QuantParams) -> np.ndarray:
    c = np.asarray(codes, dtype=np.int64)
    if c.size and (c.min() < params.clip_min or c.max() > params.clip_max):
        raise TinyforgeError("bad-code", "code outside clip range")
    return ((c - params.clip_min) * params.scale + params.w_min).astype(np.float32)


def quantize_weights(w: np.ndarray, bits: int, block_size: int = 32) -> QTensor:
    """Quantize an [h, l] float matrix per (row, block) independently."""
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2:
        raise TinyforgeError("bad-shape", f"expected 2-D weights, got {w.shape}")
    h, l = w.shape
    if block_size <= 0 or l % block_size:
        raise TinyforgeError("bad-block", f"block {block_size} does not divide l={l}")
    clip_min, clip_max = CLIP[bits]
    nb = l // block_size
    blocks = w.reshape(h, nb, block_size).astype(np.float64)
    w_min = blocks.min(axis=2)
    w_max = blocks.max(axis=2)
    w_min32 = w_min.astype(np.float32).astype(np.float64)
    w_max32 = w_max.astype(np.float32).astype(np.float64)
    const = w_max32 == w_min32
    scale = np.where(
        const, 1.0, ((w_max32 - w_min32) / (clip_max - clip_min)).astype(np.float32)
    ).astype(np.float64)
    q = (blocks - w_min32[:, :, None]) / scale[:, :, None]
    codes = np.floor(q + 0.5).astype(np.int64) + clip_min
    codes = np.clip(codes, clip_min, clip_max)
    codes[const] = clip_min
    return QTensor(
        codes=codes.reshape(h, l).astype(np.int8),
        scales=scale.astype(np.float32),
        w_mins=w_min32.astype(np.float32),
        block_size=block_size,
        bits=bits,
    )


def quant_activations_i8(x) -> tuple[np.ndarray, float]:
    """Symmetric per-row int8: scale = max|x| / 127, codes in [-127, 127]."""
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise TinyforgeError("bad-shape", "empty activation row")
    amax = np.abs(v).max()
    scale = 1.0 if amax == 0 else float(np.float32(amax / 127.0))
    codes = np.clip(np.sign(v) * np.floor(np.abs(v) / scale + 0.5), -127, 127)
    return codes.astype(np.int8), scale


def quant_activations_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise quant_activations_i8 over an [e, l] matrix."""
    x = np.asarray(x, dtype=np.float32)
    codes = np.empty(x.shape, dtype=np.int8)
    scales = np.empty(x.shape[0], dtype=np.float32)
    for i in range(x.shape[0]):
        codes[i], scales[i] = quant_activations_i8(x[i])
    return codes, scales


def quant_key(k, bits: int = 8) -> tuple[np.ndarray, QuantParams]:
    """Per-token asymmetric quantization of one key vector.

    Each token is coded independently, so appending new keys never touches
    previously stored codes or params.
    """
    return quant_asym(k, bits)


# ---------------------------------------------------------------------------
# fp8 E4M3: 1 sign, 4 exponent (bias 7), 3 mantissa; no infinities; the
# exp=15 mantissa=7 pattern is NaN, max finite is 448. Encoding saturates.

def _build_e4m3_table() -> np.ndarray:
    vals = np.empty(256, dtype=np.float64)
    for code in range(256):
        sign = -1.0 if code & 0x80 else 1.0
        exp = (code >> 3) & 0xF
        man = code & 0x7
        if exp == 0xF and man == 0x7:
            vals[code] = np.nan
        elif exp == 0:
            vals[code] = sign * (man / 8.0) * 2.0**-6
        else:
            vals[code] = sign * (1.0 + man / 8.0) * 2.0 ** (exp - 7)
    return vals


E4M3_TABLE = _build_e4m3_table()
E4M3_MAX = 448.0

# positive finite codes sorted ascending by value (codes 0x00..0x7E are
# already monotone in value)
_POS_CODES = np.arange(0x7F, dtype=np.uint8)
_POS_VALS = E4M3_TABLE[:0x7F]


def encode_fp8(x) -> np.ndarray:
    """Nearest-even E4M3 encoding with saturation at +-448; scalar or array."""
    v = np.asarray(x, dtype=np.float64)
    if np.isnan(v).any():
        raise TinyforgeError("bad-value", "NaN has no fp8 encoding")
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    sign = np.signbit(v)
    mag = np.minimum(np.abs(v), E4M3_MAX)
    idx = np.searchsorted(_POS_VALS, mag)
    idx = np.clip(idx, 1, len(_POS_VALS) - 1)
    lo = idx - 1
    d_lo = mag - _POS_VALS[lo]
    d_hi = _POS_VALS[idx] - mag
    pick_hi = d_hi < d_lo
    tie = d_hi == d_lo
    # ties to even mantissa: adjacent codes differ by one, pick the even one
    pick_hi = np.where(tie, (idx & 1) == 0, pick_hi)
    code = np.where(pick_hi, idx, lo).astype(np.uint8)
    code = np.where(sign & (code != 0), code | 0x80, code)
    out = code.astype(np.uint8)
    return out[0] if scalar else out


def decode_fp8(c) -> np.ndarray:
    """Exact decode of E4M3 codes to float32; scalar or array."""
    codes = np.asarray(c, dtype=np.uint8)
    out = E4M3_TABLE[codes].astype(np.float32)
    return np.float32(out) if codes.ndim == 0 else out


# ---------------------------------------------------------------------------
# QTensor serialization: header (bits u8, pad u8, block u32, h u32, l u32),
# params array row-major [h][l/block] of (scale f32, w_min f32), packed codes.

def dump_qtensor(q: QTensor) -> bytes:
    head = struct.pack("<BBIII", q.bits, 0, q.block_size, q.h, q.l)
    params = np.empty((q.h, q.l // q.block_size, 2), dtype="<f4")
    params[:, :, 0] = q.scales
    params[:, :, 1] = q.w_mins
    if q.bits == 4:
        codes = pack_i4(q.codes)
    else:
        codes = q.codes.astype(np.int8).tobytes()
    return head + params.tobytes() + codes


def load_qtensor(buf: bytes, offset: int = 0) -> tuple[QTensor, int]:
    bits, _, block, h, l = struct.unpack_from("<BBIII", buf, offset)
    if bits not in (4, 8) or block <= 0 or l % block:
        raise TinyforgeError("bad-model", "malformed quantized tensor header")
    off = offset + 14
    nb = l // block
    params = np.frombuffer(buf, dtype="<f4", count=h * nb * 2, offset=off).reshape(h, nb, 2)
    off += h * nb * 8
    n = h * l
    if bits == 4:
        nbytes = (n + 1) // 2
        codes = unpack_i4(buf[off : off + nbytes], n).reshape(h, l)
    else:
        nbytes = n
        codes = np.frombuffer(buf, dtype=np.int8, count=n, offset=off).reshape(h, l).copy()
    return (
        QTensor(codes, params[:, :, 0].copy(), params[:, :, 1].copy(), block, bits),
        off + nbytes,
    )

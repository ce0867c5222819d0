"""Packed-layout quantized GEMM, the register-tile solver, memory-access
accounting, and the mixed-precision attention primitives.

An [e, l] int8 activation matrix is rearranged as [e/e_p, l/l_p, e_p, l_p]
and [h, l] weights as [h/h_p, l/l_p, h_p, l_p]; the GEMM walks macro-tiles
so each loaded panel is reused across the whole tile, cutting the element
access count from 2ehl + eh to (e/e_p)(h/h_p)(l e_p + l h_p + h_p e_p).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .quantize import QTensor, decode_fp8
from .tensor import TinyforgeError

ACCESS_DEBUG_ENV = "TINYFORGE_COUNT_ACCESSES"


@dataclass(frozen=True)
class TileConfig:
    e_p: int
    h_p: int
    l_p: int


# Authoritative per-architecture presets; the solver below reproduces the
# ARM i8sdot row with R=116, iw=4.
TILE_PRESETS = {
    "arm-i8sdot": TileConfig(12, 8, 4),
    "arm-i8mm": TileConfig(10, 8, 8),
    "x86-avx2": TileConfig(4, 8, 4),
    "x86-avx512": TileConfig(4, 64, 4),
}


def solve_tile_sizes(R: int, instruction_width: int) -> TileConfig:
    """Exhaustively minimize 1/e_p + 1/h_p subject to e_p + h_p + h_p*e_p <= R.

    Ties break toward larger e_p, then larger h_p. l_p is pinned to the
    instruction width.
    """
    if instruction_width < 1:
        raise TinyforgeError("infeasible", "instruction width must be >= 1")
    if R < 3:
        raise TinyforgeError("infeasible", f"R={R} admits no tile (need R >= 3)")
    best = None
    best_key = None
    for e_p in range(1, R + 1):
        for h_p in range(1, R + 1):
            if e_p + h_p + h_p * e_p > R:
                break
            key = (1.0 / e_p + 1.0 / h_p, -e_p, -h_p)
            if best_key is None or key < best_key:
                best_key = key
                best = (e_p, h_p)
    assert best is not None
    return TileConfig(best[0], best[1], instruction_width)


def tile_config_from_spec(spec: str) -> TileConfig:
    """Parse a preset name or 'solve:R,iw'."""
    if spec in TILE_PRESETS:
        return TILE_PRESETS[spec]
    if spec.startswith("solve:"):
        try:
            r_s, iw_s = spec[len("solve:") :].split(",")
            return solve_tile_sizes(int(r_s), int(iw_s))
        except ValueError as exc:
            raise TinyforgeError("bad-tiles", f"cannot parse {spec!r}") from exc
    raise TinyforgeError("bad-tiles", f"unknown tile spec {spec!r}")


@dataclass(frozen=True)
class AccessCount:
    naive: int
    tiled: int
    exact: bool


def count_accesses(e: int, h: int, l: int, t: TileConfig) -> AccessCount:
    """Closed-form element load/store counts for an (e, h, l) GEMM."""
    naive = 2 * e * h * l + e * h
    eb = math.ceil(e / t.e_p)
    hb = math.ceil(h / t.h_p)
    lp = math.ceil(l / t.l_p) * t.l_p
    tiled = eb * hb * (lp * t.e_p + lp * t.h_p + t.h_p * t.e_p)
    exact = e % t.e_p == 0 and h % t.h_p == 0 and l % t.l_p == 0
    return AccessCount(naive=naive, tiled=tiled, exact=exact)


@dataclass
class AccessCounter:
    loads: int = 0
    stores: int = 0

    @property
    def total(self) -> int:
        return self.loads + self.stores


def _pad_to(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    out = np.zeros((rows, cols), dtype=x.dtype)
    out[: x.shape[0], : x.shape[1]] = x
    return out


@dataclass
class PackedActivations:
    """int8 codes in [e/e_p, l/l_p, e_p, l_p] order plus per-row scales."""

    codes: np.ndarray  # [eb, lb, e_p, l_p] int8, zero-padded tails
    scales: np.ndarray  # [e] float32
    e: int
    l: int
    tile: TileConfig


@dataclass
class PackedWeights:
    """Quantized codes in [h/h_p, l/l_p, h_p, l_p] order, params tile-adjacent."""

    codes: np.ndarray  # [hb, lb, h_p, l_p] int8, zero-padded tails
    scales: np.ndarray  # [hb, n_blocks, h_p] float32, zero on padded rows
    w_mins: np.ndarray  # [hb, n_blocks, h_p] float32
    h: int
    l: int
    block_size: int
    bits: int
    tile: TileConfig


def pack_activations(codes: np.ndarray, scales: np.ndarray, t: TileConfig) -> PackedActivations:
    codes = np.asarray(codes, dtype=np.int8)
    e, l = codes.shape
    eb = math.ceil(e / t.e_p)
    lb = math.ceil(l / t.l_p)
    padded = _pad_to(codes, eb * t.e_p, lb * t.l_p)
    packed = padded.reshape(eb, t.e_p, lb, t.l_p).transpose(0, 2, 1, 3).copy()
    return PackedActivations(packed, np.asarray(scales, dtype=np.float32), e, l, t)


def unpack_activations(p: PackedActivations) -> np.ndarray:
    eb, lb = p.codes.shape[0], p.codes.shape[1]
    full = p.codes.transpose(0, 2, 1, 3).reshape(eb * p.tile.e_p, lb * p.tile.l_p)
    return full[: p.e, : p.l].copy()


def pack_weights(w: QTensor, t: TileConfig) -> PackedWeights:
    if w.block_size % t.l_p and t.l_p % w.block_size:
        raise TinyforgeError(
            "bad-layout", f"block {w.block_size} incompatible with l_p {t.l_p}"
        )
    h, l = w.h, w.l
    hb = math.ceil(h / t.h_p)
    lb = math.ceil(l / t.l_p)
    padded = _pad_to(w.codes, hb * t.h_p, lb * t.l_p)
    packed = padded.reshape(hb, t.h_p, lb, t.l_p).transpose(0, 2, 1, 3).copy()
    nb = l // w.block_size
    scales = np.zeros((hb, nb, t.h_p), dtype=np.float32)
    w_mins = np.zeros((hb, nb, t.h_p), dtype=np.float32)
    for jb in range(hb):
        rows = min(t.h_p, h - jb * t.h_p)
        scales[jb, :, :rows] = w.scales[jb * t.h_p : jb * t.h_p + rows].T
        w_mins[jb, :, :rows] = w.w_mins[jb * t.h_p : jb * t.h_p + rows].T
    return PackedWeights(packed, scales, w_mins, h, l, w.block_size, w.bits, t)


def unpack_weights(p: PackedWeights) -> np.ndarray:
    hb, lb = p.codes.shape[0], p.codes.shape[1]
    full = p.codes.transpose(0, 2, 1, 3).reshape(hb * p.tile.h_p, lb * p.tile.l_p)
    return full[: p.h, : p.l].copy()


def gemm_q(
    a: PackedActivations,
    w: PackedWeights,
    t: TileConfig | None = None,
    counter: AccessCounter | None = None,
    row_range: tuple[int, int] | None = None,
    col_block_range: tuple[int, int] | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Tiled W4A8/W8A8 GEMM: out[i, j] = sum_k dequant(w[j, k]) * a[i, k].

    Integer dot products accumulate in int32 per quantization block; the
    asymmetric correction (scale, w_min, clip_min) is applied per block and
    the running output accumulates in float32, blocks in ascending l so the
    result is run-to-run deterministic.

    ``row_range`` restricts computation to output rows [lo, hi) of the e
    axis (prefill sharding); ``col_block_range`` restricts to h_p-sized
    output column blocks [lo, hi) (decode sharding). Either way workers
    write disjoint slices of ``out``.
    """
    t = t or a.tile
    if a.l != w.l:
        raise TinyforgeError("bad-shape", f"reduction mismatch {a.l} vs {w.l}")
    if a.tile != t or w.tile != t:
        raise TinyforgeError("bad-shape", "packed operands disagree on tile config")
    if counter is None and os.environ.get(ACCESS_DEBUG_ENV):
        counter = AccessCounter()
    e, h, l = a.e, w.h, w.l
    if out is None:
        out = np.zeros((e, h), dtype=np.float32)
    clip_min = -8 if w.bits == 4 else -128
    eb_all = a.codes.shape[0]
    hb_all = w.codes.shape[0]
    lb_all = a.codes.shape[1]
    lo, hi = row_range if row_range is not None else (0, e)
    ib_lo = lo // t.e_p
    ib_hi = math.ceil(hi / t.e_p)
    jb_lo, jb_hi = col_block_range if col_block_range is not None else (0, hb_all)
    # segments: intersections of quant blocks and l_p tiles, ascending in l
    bs = w.block_size
    n_blocks = l // bs
    scales_pad = np.pad(a.scales, (0, eb_all * t.e_p - e)).astype(np.float32)
    for ib in range(ib_lo, ib_hi):
        a_rows = a.codes[ib]  # [lb, e_p, l_p]
        row_scale = scales_pad[ib * t.e_p : (ib + 1) * t.e_p]
        for jb in range(jb_lo, jb_hi):
            acc = np.zeros((t.e_p, t.h_p), dtype=np.float32)
            for b in range(n_blocks):
                iacc = np.zeros((t.e_p, t.h_p), dtype=np.int32)
                asum = np.zeros(t.e_p, dtype=np.int32)
                k0, k1 = b * bs, (b + 1) * bs
                lb0, lb1 = k0 // t.l_p, math.ceil(k1 / t.l_p)
                for lb in range(lb0, lb1):
                    s0 = max(k0 - lb * t.l_p, 0)
                    s1 = min(k1 - lb * t.l_p, t.l_p)
                    a_blk = a_rows[lb][:, s0:s1].astype(np.int32)
                    w_blk = w.codes[jb, lb][:, s0:s1].astype(np.int32)
                    if counter is not None:
                        counter.loads += t.e_p * (s1 - s0) + t.h_p * (s1 - s0)
                    iacc += a_blk @ w_blk.T
                    asum += a_blk.sum(axis=1, dtype=np.int32)
                sc = w.scales[jb, b]  # [h_p]
                wm = w.w_mins[jb, b]
                corr = (iacc - clip_min * asum[:, None]).astype(np.float32)
                acc += row_scale[:, None] * (sc[None, :] * corr + wm[None, :] * asum[:, None].astype(np.float32))
            if counter is not None:
                counter.stores += t.e_p * t.h_p
            r0 = ib * t.e_p
            rows = min(t.e_p, e - r0)
            cols = min(t.h_p, h - jb * t.h_p)
            out[r0 : r0 + rows, jb * t.h_p : jb * t.h_p + cols] = acc[:rows, :cols]
    return out


def gemm_q_reference(a: PackedActivations, w: PackedWeights) -> np.ndarray:
    """Naive float64 matmul over dequantized operands (oracle path)."""
    a_codes = unpack_activations(a).astype(np.float64)
    x = a_codes * a.scales[:, None].astype(np.float64)
    clip_min = -8 if w.bits == 4 else -128
    codes = unpack_weights(w).astype(np.float64)
    nb = w.l // w.block_size
    hb = w.codes.shape[0]
    scales = np.zeros((hb * w.tile.h_p, nb))
    w_mins = np.zeros((hb * w.tile.h_p, nb))
    for jb in range(hb):
        scales[jb * w.tile.h_p : (jb + 1) * w.tile.h_p] = w.scales[jb].T
        w_mins[jb * w.tile.h_p : (jb + 1) * w.tile.h_p] = w.w_mins[jb].T
    scales = scales[: w.h]
    w_mins = w_mins[: w.h]
    deq = (codes.reshape(w.h, nb, w.block_size) - clip_min) * scales[:, :, None] + w_mins[:, :, None]
    return (x @ deq.reshape(w.h, w.l).T).astype(np.float64)


# ---------------------------------------------------------------------------
# mixed-precision attention path

def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row softmax computed entirely in float32 with per-row max subtraction."""
    v = np.asarray(x).astype(np.float32)
    if v.ndim == 1:
        v = v[None, :]
        squeeze = True
    else:
        squeeze = False
    m = v.max(axis=-1, keepdims=True)
    ex = np.exp((v - m).astype(np.float32), dtype=np.float32)
    out = ex / ex.sum(axis=-1, keepdims=True, dtype=np.float32)
    return out[0] if squeeze else out


@dataclass
class KvView:
    """Dequantization-ready view of one layer's cached keys and values.

    Keys stay in their stored int8 per-token codes, values in fp8 bytes;
    attention consumes them in this layout without rearranging history.
    """

    k_codes: np.ndarray  # [kv_heads, T, d] int8
    k_scales: np.ndarray  # [kv_heads, T] float32
    k_mins: np.ndarray  # [kv_heads, T] float32
    v_codes: np.ndarray  # [kv_heads, T, d] uint8 (E4M3)
    key_clip_min: int = -128

    @property
    def length(self) -> int:
        return self.k_codes.shape[1]

    def keys_f32(self, kv_head: int) -> np.ndarray:
        c = self.k_codes[kv_head].astype(np.float32)
        return (c - self.key_clip_min) * self.k_scales[kv_head][:, None] + self.k_mins[
            kv_head
        ][:, None]

    def values_f32(self, kv_head: int) -> np.ndarray:
        return decode_fp8(self.v_codes[kv_head])


def attention(q: np.ndarray, kv: KvView, causal: bool = True) -> np.ndarray:
    """Grouped-query attention over the quantized cache.

    The 1/sqrt(d) normalization is applied to the query before the QK^T
    product (keeping score magnitudes small), and the softmax runs in
    float32. q is [heads, s_q, d]; the last s_q cached positions are the
    query positions when ``causal`` is set.
    """
    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 3:
        raise TinyforgeError("bad-shape", f"query must be [heads, s_q, d], got {q.shape}")
    heads, s_q, d = q.shape
    kv_heads = kv.k_codes.shape[0]
    if kv.k_codes.shape[2] != d:
        raise TinyforgeError("bad-shape", "head_dim mismatch between query and cache")
    if heads % kv_heads:
        raise TinyforgeError("bad-shape", f"{heads} heads not divisible by {kv_heads} kv heads")
    T = kv.length
    if s_q > T:
        raise TinyforgeError("bad-shape", "more query positions than cached tokens")
    group = heads // kv_heads
    scaled = (q * np.float32(1.0 / math.sqrt(d))).astype(np.float32)
    out = np.empty((heads, s_q, d), dtype=np.float32)
    for hd in range(heads):
        g = hd // group
        keys = kv.keys_f32(g)  # [T, d]
        scores = scaled[hd] @ keys.T  # [s_q, T] float32
        if causal:
            offset = T - s_q
            mask = np.arange(T)[None, :] > (np.arange(s_q)[:, None] + offset)
            scores = np.where(mask, np.float32(-np.inf), scores)
        probs = softmax_rows(scores)
        out[hd] = probs @ kv.values_f32(g)
    return out

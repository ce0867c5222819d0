"""Element types, the tensor container, and deterministic random tensors.

Everything downstream moves bytes through this module: tensors are
immutable row-major byte buffers tagged with a shape and an element type,
and the binary dump format here is what the model files are made of.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np


class TinyforgeError(Exception):
    """Base error; ``code`` is a short stable identifier."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ElementType(Enum):
    F32 = 0
    BF16 = 1
    I8 = 2
    I4P = 3  # two 4-bit codes per byte, low nibble first
    FP8E4M3 = 4
    I32 = 5

    @property
    def itemsize(self) -> float:
        # I4P reports 0.5; use nbytes() for exact sizing.
        return {_F32: 4, _BF16: 2, _I8: 1, _I4P: 0.5, _FP8: 1, _I32: 4}[self]

    def nbytes(self, n_elements: int) -> int:
        if self is _I4P:
            return (n_elements + 1) // 2
        return int(self.itemsize) * n_elements


_F32 = ElementType.F32
_BF16 = ElementType.BF16
_I8 = ElementType.I8
_I4P = ElementType.I4P
_FP8 = ElementType.FP8E4M3
_I32 = ElementType.I32

_MAGIC = b"TFTENSR1"


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1 or any(s <= 0 for s in shape):
        raise TinyforgeError("bad-shape", f"invalid shape {shape}")
    return shape


@dataclass(frozen=True)
class Tensor:
    """Contiguous row-major byte storage with a shape and element type."""

    shape: tuple[int, ...]
    etype: ElementType
    data: bytes

    def __post_init__(self):
        object.__setattr__(self, "shape", _check_shape(self.shape))
        expected = self.etype.nbytes(self.numel)
        if len(self.data) != expected:
            raise TinyforgeError(
                "bad-shape",
                f"payload {len(self.data)} bytes, expected {expected} for "
                f"{self.shape} {self.etype.name}",
            )

    @property
    def numel(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    def to_f32(self) -> np.ndarray:
        """Decode to a float32 ndarray (F32 and BF16 only)."""
        if self.etype is _F32:
            return np.frombuffer(self.data, dtype="<f4").reshape(self.shape).copy()
        if self.etype is _BF16:
            u16 = np.frombuffer(self.data, dtype="<u2").astype(np.uint32)
            return (u16 << 16).view(np.float32).reshape(self.shape).copy()
        raise TinyforgeError("bad-cast", f"cannot decode {self.etype.name} to f32")

    def to_ints(self) -> np.ndarray:
        if self.etype is _I8:
            return np.frombuffer(self.data, dtype=np.int8).reshape(self.shape).copy()
        if self.etype is _I32:
            return np.frombuffer(self.data, dtype="<i4").reshape(self.shape).copy()
        if self.etype is _I4P:
            return unpack_i4(self.data, self.numel).reshape(self.shape)
        raise TinyforgeError("bad-cast", f"{self.etype.name} is not an integer type")


def from_f32(arr: np.ndarray) -> Tensor:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return Tensor(arr.shape, _F32, arr.tobytes())


def f32_to_bf16_bits(arr: np.ndarray) -> np.ndarray:
    """Round-to-nearest-even truncation of f32 patterns to 16-bit bf16."""
    u = np.ascontiguousarray(arr, dtype="<f4").view(np.uint32)
    rounded = (u.astype(np.uint64) + 0x7FFF + ((u >> 16) & 1)) >> 16
    return rounded.astype(np.uint16)


def cast(t: Tensor, to: ElementType) -> Tensor:
    """Convert between the float storage types F32 and BF16."""
    if t.etype not in (_F32, _BF16) or to not in (_F32, _BF16):
        raise TinyforgeError("bad-cast", f"{t.etype.name} -> {to.name}")
    if t.etype is to:
        return t
    if to is _BF16:
        bits = f32_to_bf16_bits(np.frombuffer(t.data, dtype="<f4"))
        return Tensor(t.shape, _BF16, bits.astype("<u2").tobytes())
    return Tensor(t.shape, _F32, t.to_f32().astype("<f4").tobytes())


def make_random_tensor(shape, etype: ElementType, seed: int) -> Tensor:
    """Deterministic uniform [-1, 1) tensor from a PCG64 stream.

    Identical (shape, etype, seed) produce bit-identical bytes on every
    platform; no global RNG state is consulted.
    """
    shape = _check_shape(shape)
    if etype not in (_F32, _BF16):
        raise TinyforgeError("bad-cast", f"random tensors are float only, got {etype.name}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = 1
    for s in shape:
        n *= s
    vals = (rng.random(n, dtype=np.float64) * 2.0 - 1.0).astype("<f4")
    t = Tensor(shape, _F32, vals.tobytes())
    if etype is _BF16:
        t = cast(t, _BF16)
    return t


# ---------------------------------------------------------------------------
# int4 nibble packing (low nibble first, two's complement nibbles)

def pack_i4(codes: np.ndarray) -> bytes:
    """Pack int codes in [-8, 7] two per byte, low nibble first."""
    flat = np.asarray(codes).reshape(-1).astype(np.int64)
    if flat.size and (flat.min() < -8 or flat.max() > 7):
        raise TinyforgeError("bad-code", "int4 code out of [-8, 7]")
    u = (flat & 0xF).astype(np.uint8)
    if u.size % 2:
        u = np.concatenate([u, np.zeros(1, dtype=np.uint8)])
    return (u[0::2] | (u[1::2] << 4)).tobytes()


def unpack_i4(data: bytes, n: int) -> np.ndarray:
    b = np.frombuffer(data, dtype=np.uint8)
    lo = b & 0xF
    hi = b >> 4
    u = np.empty(2 * b.size, dtype=np.uint8)
    u[0::2] = lo
    u[1::2] = hi
    out = u[:n].astype(np.int8)
    out[out > 7] -= 16
    return out


# ---------------------------------------------------------------------------
# binary dump format: magic, u8 etype tag, u8 rank, u32 LE extents, payload

def dump_tensor(t: Tensor) -> bytes:
    head = _MAGIC + struct.pack("<BB", t.etype.value, len(t.shape))
    head += struct.pack(f"<{len(t.shape)}I", *t.shape)
    return head + t.data


def load_tensor(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one tensor dump at ``offset``; returns (tensor, next_offset)."""
    if buf[offset : offset + 8] != _MAGIC:
        raise TinyforgeError("bad-model", "bad tensor magic")
    tag, rank = struct.unpack_from("<BB", buf, offset + 8)
    try:
        etype = ElementType(tag)
    except ValueError:
        raise TinyforgeError("bad-model", f"unknown element type tag {tag}") from None
    shape = struct.unpack_from(f"<{rank}I", buf, offset + 10)
    body = offset + 10 + 4 * rank
    n = 1
    for s in shape:
        n *= s
    size = etype.nbytes(n)
    if body + size > len(buf):
        raise TinyforgeError("bad-model", "truncated tensor payload")
    return Tensor(shape, etype, bytes(buf[body : body + size])), body + size

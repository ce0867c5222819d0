"""Region-based rearrangement: transpose, gather, concat, and slice are all
expressed as rank-3 affine address maps and executed by one copy loop.

A Region maps lattice points x = (i, j, k) to a source address
``src_offset + i*ss0 + j*ss1 + k*ss2`` and a destination address built the
same way, so any data-movement operator becomes one or more Regions.
Chained Regions over an intermediate buffer can often be composed into a
single affine map, which is what ``fuse_regions`` does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import TinyforgeError


@dataclass(frozen=True)
class Region:
    size: tuple[int, int, int]
    src_offset: int
    src_stride: tuple[int, int, int]
    dst_offset: int
    dst_stride: tuple[int, int, int]

    @property
    def moves(self) -> int:
        return self.size[0] * self.size[1] * self.size[2]

    def src_addrs(self) -> np.ndarray:
        return _addrs(self.size, self.src_offset, self.src_stride)

    def dst_addrs(self) -> np.ndarray:
        return _addrs(self.size, self.dst_offset, self.dst_stride)


def _addrs(size, offset, stride) -> np.ndarray:
    i, j, k = np.meshgrid(
        np.arange(size[0]), np.arange(size[1]), np.arange(size[2]), indexing="ij"
    )
    return (offset + i * stride[0] + j * stride[1] + k * stride[2]).reshape(-1)


def flat_copy(n: int, src_offset: int = 0, dst_offset: int = 0) -> Region:
    return Region((n, 1, 1), src_offset, (1, 0, 0), dst_offset, (1, 0, 0))


def _row_major_strides(shape) -> list[int]:
    strides = [1] * len(shape)
    for i in range(len(shape) - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    return strides


def _pad3(vals, fill) -> tuple:
    vals = list(vals)
    while len(vals) < 3:
        vals.append(fill)
    return tuple(vals[:3])


def region_for_transpose(shape, perm) -> list[Region]:
    """One Region realizing dst[perm(x)] = src[x] over row-major buffers."""
    shape = tuple(int(s) for s in shape)
    if not 2 <= len(shape) <= 3:
        raise TinyforgeError("bad-perm", f"transpose supports rank 2-3, got {shape}")
    if sorted(perm) != list(range(len(shape))):
        raise TinyforgeError("bad-perm", f"{perm} is not a permutation of {len(shape)} axes")
    src_strides = _row_major_strides(shape)
    dst_shape = [shape[p] for p in perm]
    dst_rm = _row_major_strides(dst_shape)
    # axis a of the source lands at position perm.index(a) in the output
    dst_strides = [dst_rm[list(perm).index(a)] for a in range(len(shape))]
    return [
        _canonicalize(
            Region(
                _pad3(shape, 1),
                0,
                _pad3(src_strides, 0),
                0,
                _pad3(dst_strides, 0),
            )
        )
    ]


def region_for_slice(shape, begin, size) -> list[Region]:
    shape = tuple(int(s) for s in shape)
    begin = tuple(int(b) for b in begin)
    size = tuple(int(s) for s in size)
    if len(begin) != len(shape) or len(size) != len(shape) or len(shape) > 3:
        raise TinyforgeError("bad-range", "slice spec rank mismatch (rank <= 3)")
    for b, s, ext in zip(begin, size, shape):
        if b < 0 or s <= 0 or b + s > ext:
            raise TinyforgeError("bad-range", f"slice [{b}:{b + s}] outside extent {ext}")
    src_strides = _row_major_strides(shape)
    src_offset = sum(b * st for b, st in zip(begin, src_strides))
    dst_strides = _row_major_strides(size)
    return [
        Region(_pad3(size, 1), src_offset, _pad3(src_strides, 0), 0, _pad3(dst_strides, 0))
    ]


def region_for_concat(shapes, axis: int) -> list[Region]:
    """One Region per input, copying it into its slot of the concatenation."""
    shapes = [tuple(int(s) for s in sh) for sh in shapes]
    if not shapes:
        raise TinyforgeError("bad-range", "concat of zero inputs")
    rank = len(shapes[0])
    if not 0 <= axis < rank:
        raise TinyforgeError("bad-range", f"axis {axis} out of range for rank {rank}")
    for sh in shapes:
        if len(sh) != rank or any(
            sh[a] != shapes[0][a] for a in range(rank) if a != axis
        ):
            raise TinyforgeError("bad-range", f"incompatible concat shapes {shapes}")
    outer = math.prod(shapes[0][:axis])
    inner = math.prod(shapes[0][axis + 1 :])
    total_axis = sum(sh[axis] for sh in shapes)
    out_row = total_axis * inner
    regions = []
    prefix = 0
    for sh in shapes:
        block = sh[axis] * inner
        regions.append(
            Region(
                (outer, block, 1),
                0,
                (block, 1, 0),
                prefix * inner,
                (out_row, 1, 0),
            )
        )
        prefix += sh[axis]
    return regions


def region_for_gather(shape, indices) -> list[Region]:
    """Gather rows of a 2-D tensor; consecutive index runs merge into one Region."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise TinyforgeError("bad-range", "gather expects a 2-D source")
    n, m = shape
    idx = [int(i) for i in indices]
    if any(i < 0 or i >= n for i in idx):
        raise TinyforgeError("bad-range", f"gather index outside [0, {n})")
    regions = []
    pos = 0
    while pos < len(idx):
        run = 1
        while pos + run < len(idx) and idx[pos + run] == idx[pos] + run:
            run += 1
        regions.append(flat_copy(run * m, src_offset=idx[pos] * m, dst_offset=pos * m))
        pos += run
    return regions


def apply_regions(src: np.ndarray, regions, dst: np.ndarray) -> None:
    """Execute Regions over element arrays; untouched dst entries persist.

    ``src``/``dst`` are 1-D arrays of whatever element dtype the caller
    uses (use a structured or bytes-per-element view for raw buffers).
    """
    src = np.asarray(src).reshape(-1)
    for r in regions:
        s = r.src_addrs()
        d = r.dst_addrs()
        if s.size and (s.min() < 0 or s.max() >= src.size):
            raise TinyforgeError("region-oob", f"source address out of bounds in {r}")
        if d.size and (d.min() < 0 or d.max() >= dst.size):
            raise TinyforgeError("region-oob", f"destination address out of bounds in {r}")
        dst[d] = src[s]


def apply_regions_bytes(src: bytes, regions, dst: bytearray, elem_size: int) -> None:
    """Byte-buffer form of apply_regions: addresses are element indices."""
    if len(src) % elem_size or len(dst) % elem_size:
        raise TinyforgeError("region-oob", "buffer size not a multiple of elem_size")
    s = np.frombuffer(src, dtype=np.uint8).reshape(-1, elem_size)
    d = np.frombuffer(dst, dtype=np.uint8).reshape(-1, elem_size)
    apply_regions(
        s.view([("e", np.uint8, elem_size)]).reshape(-1),
        regions,
        d.view([("e", np.uint8, elem_size)]).reshape(-1),
    )


def move_count(regions) -> int:
    return sum(r.moves for r in regions)


def _fit_affine(size, values: np.ndarray) -> tuple[int, tuple[int, int, int]] | None:
    """Fit values over the (size) lattice as offset + stride . x, or None."""
    vals = values.reshape(size)
    offset = int(vals[0, 0, 0])
    strides = []
    for axis in range(3):
        if size[axis] > 1:
            idx = [0, 0, 0]
            idx[axis] = 1
            strides.append(int(vals[tuple(idx)]) - offset)
        else:
            strides.append(0)
    expect = _addrs(size, offset, strides).reshape(size)
    if not np.array_equal(vals, expect):
        return None
    return offset, (strides[0], strides[1], strides[2])


def _canonicalize(r: Region) -> Region:
    """Rewrite an identity map over a contiguous range as a flat copy."""
    # degenerate axes carry no information; zero their strides first
    ss = tuple(0 if r.size[a] == 1 else r.src_stride[a] for a in range(3))
    ds = tuple(0 if r.size[a] == 1 else r.dst_stride[a] for a in range(3))
    r = Region(r.size, r.src_offset, ss, r.dst_offset, ds)
    if r.src_offset == r.dst_offset and r.src_stride == r.dst_stride:
        a = np.sort(r.src_addrs())
        if a.size == a[-1] - a[0] + 1 and np.array_equal(a, np.arange(a[0], a[-1] + 1)):
            return flat_copy(int(a.size), int(a[0]), int(a[0]))
    return r


def fuse_regions(producers, consumers) -> tuple[list[Region], bool]:
    """Compose producer Regions (writing an intermediate buffer) with the
    consumer Regions that read it.

    When every consumer's read addresses are covered by the producers and
    the composed source map is affine, returns the composed Regions (the
    intermediate buffer disappears) and True. Otherwise returns
    producers + consumers unchanged and False.
    """
    inter: dict[int, int] = {}
    for p in producers:
        s = p.src_addrs()
        d = p.dst_addrs()
        for da, sa in zip(d.tolist(), s.tolist()):
            inter[da] = sa  # later producers overwrite earlier ones
    fused = []
    for c in consumers:
        reads = c.src_addrs()
        try:
            srcs = np.array([inter[a] for a in reads.tolist()], dtype=np.int64)
        except KeyError:
            return list(producers) + list(consumers), False
        fit = _fit_affine(c.size, srcs)
        if fit is None:
            return list(producers) + list(consumers), False
        offset, strides = fit
        fused.append(
            _canonicalize(Region(c.size, offset, strides, c.dst_offset, c.dst_stride))
        )
    return fused, True

"""Region-based data movement: one affine map type runs every rearrange.

Transpose, slice, concat, and gather all lower to Regions — rank-3
lattices with source/destination offsets and strides — executed by a
single copy loop. Chained Regions through a scratch buffer often compose
into one map, deleting the intermediate entirely.
"""

import numpy as np

from tinyforge.geometry import (
    apply_regions,
    fuse_regions,
    move_count,
    region_for_gather,
    region_for_slice,
    region_for_transpose,
)

print("== transpose as a Region ==")
(r,) = region_for_transpose((2, 3), (1, 0))
print(r)
src = np.arange(6)
dst = np.zeros(6, dtype=np.int64)
apply_regions(src, [r], dst)
print("0..5 viewed as 2x3, transposed:", dst, "(numpy:", np.arange(6).reshape(2, 3).T.reshape(-1), ")")

print("\n== gather merges consecutive runs ==")
for idx in ([1, 2, 3], [3, 1, 2]):
    regs = region_for_gather((5, 4), idx)
    print(f"rows {idx}: {len(regs)} region(s), {move_count(regs)} moves")

print("\n== fusing a transpose chain ==")
p = region_for_transpose((4, 6), (1, 0))
c = region_for_transpose((6, 4), (1, 0))
fused, ok = fuse_regions(p, c)
print(f"transpose then transpose-back: fused={ok} -> {fused[0]}")
print(f"moves: {move_count(p) + move_count(c)} unfused vs {move_count(fused)} fused, "
      "and the scratch buffer is gone")

print("\n== slicing through a transpose ==")
p = region_for_transpose((4, 6), (1, 0))
c = region_for_slice((6, 4), (1, 1), (2, 2))
fused, ok = fuse_regions(p, c)
src = np.arange(24)
out = np.zeros(4, dtype=np.int64)
apply_regions(src, fused, out)
print(f"fused={ok}, single hop reads the window straight from the source: {out}")
print("check:", np.arange(24).reshape(4, 6).T[1:3, 1:3].reshape(-1))

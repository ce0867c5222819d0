"""Rate-proportional multicore partitioning.

Phone and laptop cores differ in speed, so splitting a loop evenly leaves
fast cores idle. Ranges are sized by measured (or overridden) per-worker
rates; the simulated makespan shows the win over an even split.
"""

import numpy as np

from tinyforge.scheduler import (
    WorkerPool,
    measure_rates,
    partition,
    simulated_makespan,
    uniform_partition,
)

print("== proportional split, 2:1:1 cores ==")
profiles = measure_rates(3, override=[2.0, 1.0, 1.0])
ranges = partition(100, profiles)
print("ranges:", ranges, "-> sizes", [hi - lo for lo, hi in ranges])

print("\n== makespan: balanced vs uniform ==")
for rates in ([4.0, 1.0], [3.0, 2.0, 1.0], [8.0, 8.0, 1.0, 1.0]):
    profiles = measure_rates(len(rates), override=rates)
    n = 1200
    bal = simulated_makespan(partition(n, profiles), profiles)
    uni = simulated_makespan(uniform_partition(n, len(rates)), profiles)
    print(f"rates {rates}: balanced {bal:7.1f}  uniform {uni:7.1f}  "
          f"({uni / bal:.2f}x faster)")

print("\n== running real work through the pool ==")
profiles = measure_rates(4, override=[1.0, 2.0, 2.0, 4.0])
pool = WorkerPool(profiles)
x = np.arange(100_000, dtype=np.float64)
out = np.zeros_like(x)

def task(lo, hi, worker_id):
    out[lo:hi] = np.sqrt(x[lo:hi])

pool.parallel_for(pool.partition(x.size), task)
pool.close()
print("parallel result matches serial:", bool(np.allclose(out, np.sqrt(x))))

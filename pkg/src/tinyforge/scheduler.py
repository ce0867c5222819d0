"""Multicore workload balancing: capability probing, proportional range
partitioning, and a fixed thread pool.

Cores on phones (and laptops with E/P cores) are not interchangeable, so
ranges are sized by each worker's measured throughput instead of evenly.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CoreProfile:
    worker_id: int
    rate: float  # relative throughput, normalized so the slowest is 1.0


def _normalize(raw: list[float]) -> list[CoreProfile]:
    if any(r <= 0 for r in raw):
        raise ValueError("rates must be positive")
    lo = min(raw)
    return [CoreProfile(i, r / lo) for i, r in enumerate(raw)]


def measure_rates(
    n_workers: int,
    probe_size: int = 200_000,
    override: list[float] | None = None,
) -> list[CoreProfile]:
    """Time an identical arithmetic probe on each worker; rate = fastest/own.

    ``override`` bypasses measurement with fixed rates (normalized the same
    way) so tests and simulations stay hermetic.
    """
    if n_workers < 1:
        raise ValueError("need at least one worker")
    if override is not None:
        if len(override) != n_workers:
            raise ValueError("override length must equal n_workers")
        return _normalize(list(override))
    times = [0.0] * n_workers

    def probe(i: int) -> None:
        x = np.arange(probe_size, dtype=np.float64)
        t0 = time.perf_counter()
        for _ in range(5):
            x = np.sqrt(x * 1.0000001 + 1.0)
        times[i] = time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        list(pool.map(probe, range(n_workers)))
    fastest = min(times)
    return _normalize([fastest / t if t > 0 else 1.0 for t in times])


def partition(n: int, profiles: list[CoreProfile]) -> list[tuple[int, int]]:
    """Contiguous ranges covering [0, n), sized proportionally to rates.

    |range_i| = floor(n * rate_i / sum(rates)); leftover items go one by
    one to the highest-rate workers (ties to the lower worker id).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    total = sum(p.rate for p in profiles)
    sizes = [int(n * p.rate / total) for p in profiles]
    leftover = n - sum(sizes)
    order = sorted(range(len(profiles)), key=lambda i: (-profiles[i].rate, i))
    for j in range(leftover):
        sizes[order[j % len(order)]] += 1
    ranges = []
    start = 0
    for s in sizes:
        ranges.append((start, start + s))
        start += s
    assert start == n
    return ranges


def uniform_partition(n: int, k: int) -> list[tuple[int, int]]:
    profiles = [CoreProfile(i, 1.0) for i in range(k)]
    return partition(n, profiles)


def simulated_makespan(ranges, profiles) -> float:
    """max_i(|range_i| / rate_i) in probe-time units."""
    return max(
        ((hi - lo) / p.rate for (lo, hi), p in zip(ranges, profiles)), default=0.0
    )


class WorkerPool:
    """Fixed pool created once; work arrives as precomputed disjoint ranges."""

    def __init__(self, profiles: list[CoreProfile]):
        self.profiles = profiles
        self.n_workers = len(profiles)
        self._pool = (
            ThreadPoolExecutor(max_workers=self.n_workers) if self.n_workers > 1 else None
        )

    def parallel_for(self, ranges, task) -> None:
        """Run task(lo, hi, worker_id) for every non-empty range; joins all
        workers before returning. Exceptions propagate after completion."""
        work = [(lo, hi, i) for i, (lo, hi) in enumerate(ranges) if hi > lo]
        if not work:
            return
        if self._pool is None or len(work) == 1:
            for lo, hi, i in work:
                task(lo, hi, i)
            return
        futures = [self._pool.submit(task, lo, hi, i) for lo, hi, i in work]
        errors = []
        for f in futures:
            try:
                f.result()
            except Exception as exc:  # noqa: BLE001 - collected, re-raised below
                errors.append(exc)
        if errors:
            raise errors[0]

    def partition(self, n: int) -> list[tuple[int, int]]:
        return partition(n, self.profiles)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)


def parallel_for(ranges, task, profiles: list[CoreProfile] | None = None) -> None:
    """One-shot convenience wrapper around WorkerPool.parallel_for."""
    profiles = profiles or [CoreProfile(i, 1.0) for i in range(len(ranges))]
    pool = WorkerPool(profiles)
    try:
        pool.parallel_for(ranges, task)
    finally:
        pool.close()

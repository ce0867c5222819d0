"""DRAM/flash hybrid storage with simulated-time accounting.

Flash is a real directory of files plus a ledger of simulated seconds, not
OS-level throttling: bytes are always bit-exact regardless of where they
live, and only the ledger changes with placement. Embedding tables go to
flash wholesale, the KV cache spills to per-layer append-only files past a
token threshold, and a prefetcher hides flash reads behind compute time
credited to the ledger.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .tensor import TinyforgeError

# defaults per mobile-class hardware: LPDDR5X ~58 GB/s, UFS ~1 GB/s with
# ~15 us extra latency per read
DEFAULT_DRAM_BW = 58e9
DEFAULT_FLASH_BW = 1e9
DEFAULT_FLASH_LATENCY = 15e-6

UNLIMITED = None


@dataclass
class StorageConfig:
    dram_bandwidth: float = DEFAULT_DRAM_BW
    flash_bandwidth: float = DEFAULT_FLASH_BW
    flash_latency: float = DEFAULT_FLASH_LATENCY
    kv_dram_limit_tokens: int | None = UNLIMITED  # None = never spill
    flash_dir: str | Path = "."

    def __post_init__(self):
        if self.dram_bandwidth <= 0 or self.flash_bandwidth <= 0:
            raise TinyforgeError("bad-config", "bandwidths must be positive")


@dataclass
class TimingLedger:
    compute: float = 0.0
    dram_traffic: float = 0.0
    flash_traffic: float = 0.0
    hidden_by_prefetch: float = 0.0

    @property
    def exposed_flash(self) -> float:
        return self.flash_traffic - self.hidden_by_prefetch

    def snapshot(self) -> "TimingLedger":
        return TimingLedger(
            self.compute, self.dram_traffic, self.flash_traffic, self.hidden_by_prefetch
        )


@dataclass
class EmbeddingHandle:
    rows: int
    row_bytes: int
    path: Path | None  # None when the table is DRAM-resident
    dram_copy: bytes | None


@dataclass
class PrefetchTicket:
    ticket_id: int
    layer: int
    token_range: tuple[int, int]
    duration: float
    compute_at_issue: float
    data: bytes


class Store:
    """File-backed flash segments plus DRAM byte accounting and the ledger."""

    def __init__(self, cfg: StorageConfig):
        self.cfg = cfg
        self.dir = Path(cfg.flash_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            probe = self.dir / ".wtest"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as exc:
            raise TinyforgeError("io-error", f"flash dir {self.dir}: {exc}") from exc
        self.ledger = TimingLedger()
        self.dram_resident_bytes = 0
        self._kv_dram: dict[int, bytearray] = {}
        self._kv_flash_files: dict[int, Path] = {}
        self._kv_lengths: dict[int, int] = {}
        self._kv_record_bytes: dict[int, int] = {}
        self._tickets: dict[int, PrefetchTicket] = {}
        self._next_ticket = 0

    # -- ledger -------------------------------------------------------------

    def add_compute(self, seconds: float) -> None:
        self.ledger.compute += seconds

    def add_dram_traffic(self, nbytes: int) -> None:
        self.ledger.dram_traffic += nbytes / self.cfg.dram_bandwidth

    def _flash_read_cost(self, nbytes: int) -> float:
        return self.cfg.flash_latency + nbytes / self.cfg.flash_bandwidth

    def register_dram_bytes(self, nbytes: int) -> None:
        self.dram_resident_bytes += nbytes

    # -- embedding table ----------------------------------------------------

    def put_embedding_table(
        self, rows: int, row_bytes: int, source: bytes, offload: bool = True
    ) -> EmbeddingHandle:
        if len(source) != rows * row_bytes:
            raise TinyforgeError(
                "bad-size", f"{len(source)} bytes != {rows} x {row_bytes}"
            )
        if offload:
            path = self.dir / "emb.bin"
            path.write_bytes(source)
            return EmbeddingHandle(rows, row_bytes, path, None)
        self.register_dram_bytes(len(source))
        return EmbeddingHandle(rows, row_bytes, None, source)

    def read_embedding_row(self, h: EmbeddingHandle, token_id: int) -> bytes:
        if not 0 <= token_id < h.rows:
            raise TinyforgeError("bad-token", f"token {token_id} >= vocab {h.rows}")
        off = token_id * h.row_bytes
        if h.path is not None:
            with open(h.path, "rb") as f:
                f.seek(off)
                data = f.read(h.row_bytes)
            self.ledger.flash_traffic += self._flash_read_cost(h.row_bytes)
            return data
        self.add_dram_traffic(h.row_bytes)
        return h.dram_copy[off : off + h.row_bytes]

    # -- KV cache tiers -----------------------------------------------------

    def _kv_path(self, layer: int) -> Path:
        return self.dir / f"kv_L{layer}.bin"

    def kv_append(self, layer: int, token_index: int, record: bytes) -> None:
        """Append one token's KV record; DRAM below the limit, flash above."""
        cur = self._kv_lengths.get(layer, 0)
        if token_index != cur:
            raise TinyforgeError(
                "bad-token", f"layer {layer}: expected token {cur}, got {token_index}"
            )
        rb = self._kv_record_bytes.setdefault(layer, len(record))
        if len(record) != rb:
            raise TinyforgeError("bad-size", "KV record size changed mid-layer")
        limit = self.cfg.kv_dram_limit_tokens
        if limit is None or token_index < limit:
            self._kv_dram.setdefault(layer, bytearray()).extend(record)
            self.register_dram_bytes(len(record))
        else:
            path = self._kv_path(layer)
            if layer not in self._kv_flash_files:
                path.write_bytes(b"")  # truncate any stale segment from a prior run
                self._kv_flash_files[layer] = path
            with open(path, "ab") as f:
                f.write(record)
        self._kv_lengths[layer] = cur + 1

    def kv_length(self, layer: int) -> int:
        return self._kv_lengths.get(layer, 0)

    def kv_flash_tokens(self, layer: int) -> int:
        limit = self.cfg.kv_dram_limit_tokens
        n = self.kv_length(layer)
        if limit is None:
            return 0
        return max(0, n - limit)

    def _kv_read_raw(self, layer: int, lo: int, hi: int) -> tuple[bytes, int]:
        """Returns (bytes, flash_bytes_touched) without ledger accounting."""
        n = self.kv_length(layer)
        if not 0 <= lo <= hi <= n:
            raise TinyforgeError("bad-token", f"KV range [{lo}, {hi}) outside [0, {n})")
        rb = self._kv_record_bytes.get(layer, 0)
        limit = self.cfg.kv_dram_limit_tokens
        split = n if limit is None else min(limit, n)
        out = bytearray()
        flash_bytes = 0
        d_lo, d_hi = lo, min(hi, split)
        if d_hi > d_lo:
            out += self._kv_dram[layer][d_lo * rb : d_hi * rb]
        f_lo, f_hi = max(lo, split), hi
        if f_hi > f_lo:
            with open(self._kv_flash_files[layer], "rb") as f:
                f.seek((f_lo - split) * rb)
                chunk = f.read((f_hi - f_lo) * rb)
            out += chunk
            flash_bytes = len(chunk)
        return bytes(out), flash_bytes

    def kv_read(self, layer: int, lo: int, hi: int) -> bytes:
        """Synchronous read; flash portions pay full latency on the ledger."""
        data, flash_bytes = self._kv_read_raw(layer, lo, hi)
        if flash_bytes:
            self.ledger.flash_traffic += self._flash_read_cost(flash_bytes)
        self.add_dram_traffic(len(data) - flash_bytes)
        return data

    # -- prefetch -----------------------------------------------------------

    def prefetch_kv(self, layer: int, token_range: tuple[int, int]) -> PrefetchTicket:
        lo, hi = token_range
        data, flash_bytes = self._kv_read_raw(layer, lo, hi)
        duration = self._flash_read_cost(flash_bytes) if flash_bytes else 0.0
        ticket = PrefetchTicket(
            self._next_ticket, layer, (lo, hi), duration, self.ledger.compute, data
        )
        self._next_ticket += 1
        self._tickets[ticket.ticket_id] = ticket
        if flash_bytes:
            self.ledger.flash_traffic += duration
        self.add_dram_traffic(len(data) - flash_bytes)
        return ticket

    def await_prefetch(self, ticket: PrefetchTicket) -> bytes:
        """Complete a prefetch; compute elapsed since issue hides flash time."""
        if self._tickets.pop(ticket.ticket_id, None) is None:
            raise TinyforgeError("bad-ticket", f"unknown ticket {ticket.ticket_id}")
        window = self.ledger.compute - ticket.compute_at_issue
        self.ledger.hidden_by_prefetch += min(max(window, 0.0), ticket.duration)
        return ticket.data


def open_store(cfg: StorageConfig) -> Store:
    return Store(cfg)


def timing_report(store: Store) -> TimingLedger:
    return store.ledger.snapshot()


def decode_latency_curve(
    cfg: StorageConfig,
    flash_kv_bytes: list[int],
    compute_window: float,
    prefetch: bool,
    dram_baseline: float = 0.0,
) -> list[float]:
    """Simulated per-decode-step latency as flash-resident KV grows.

    Reproduces the four regimes: flat while everything is in DRAM, linear
    growth at 1/flash_bandwidth without prefetch, flat until the prefetch
    window is exhausted (window x bandwidth bytes), then linear again once
    loading exceeds what compute can hide.
    """
    out = []
    for nbytes in flash_kv_bytes:
        if nbytes <= 0:
            out.append(dram_baseline)
            continue
        load = cfg.flash_latency + nbytes / cfg.flash_bandwidth
        exposed = max(0.0, load - compute_window) if prefetch else load
        out.append(dram_baseline + exposed)
    return out

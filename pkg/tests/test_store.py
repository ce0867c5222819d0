import numpy as np
import pytest

from tinyforge.store import (
    Store,
    StorageConfig,
    decode_latency_curve,
    open_store,
    timing_report,
)
from tinyforge.tensor import TinyforgeError


@pytest.fixture()
def store(tmp_path):
    return open_store(StorageConfig(flash_dir=tmp_path / "flash"))


def spilling_store(tmp_path, limit, **kw):
    return open_store(
        StorageConfig(flash_dir=tmp_path / "flash", kv_dram_limit_tokens=limit, **kw)
    )


class TestConfig:
    def test_defaults(self):
        cfg = StorageConfig()
        assert cfg.dram_bandwidth == 58e9
        assert cfg.flash_bandwidth == 1e9
        assert cfg.flash_latency == 15e-6
        assert cfg.kv_dram_limit_tokens is None

    def test_bad_bandwidth(self):
        with pytest.raises(TinyforgeError, match="bad-config"):
            StorageConfig(flash_bandwidth=0)

    def test_unwritable_dir(self):
        with pytest.raises(TinyforgeError, match="io-error"):
            open_store(StorageConfig(flash_dir="/proc/nope"))


class TestEmbeddingTable:
    def test_flash_roundtrip(self, store):
        rows = np.arange(12, dtype=np.float32).tobytes()
        h = store.put_embedding_table(3, 16, rows, offload=True)
        assert h.path is not None and h.path.exists()
        got = store.read_embedding_row(h, 1)
        assert got == rows[16:32]

    def test_dram_roundtrip(self, store):
        rows = bytes(range(32))
        h = store.put_embedding_table(2, 16, rows, offload=False)
        assert h.path is None
        assert store.read_embedding_row(h, 0) == rows[:16]
        assert store.dram_resident_bytes == 32

    def test_placement_does_not_change_bytes(self, store):
        rows = np.random.default_rng(0).bytes(64)
        hf = store.put_embedding_table(4, 16, rows, offload=True)
        hd = store.put_embedding_table(4, 16, rows, offload=False)
        for t in range(4):
            assert store.read_embedding_row(hf, t) == store.read_embedding_row(hd, t)

    def test_ledger_costs(self, tmp_path):
        s = spilling_store(tmp_path, None, flash_bandwidth=1e6, flash_latency=1e-3)
        h = s.put_embedding_table(2, 1000, bytes(2000), offload=True)
        s.read_embedding_row(h, 0)
        assert s.ledger.flash_traffic == pytest.approx(1e-3 + 1000 / 1e6)
        assert s.ledger.dram_traffic == 0.0

    def test_bad_token(self, store):
        h = store.put_embedding_table(2, 4, bytes(8))
        with pytest.raises(TinyforgeError, match="bad-token"):
            store.read_embedding_row(h, 2)

    def test_bad_size(self, store):
        with pytest.raises(TinyforgeError, match="bad-size"):
            store.put_embedding_table(2, 4, bytes(7))


class TestKvTiers:
    def test_append_and_read_dram_only(self, store):
        for t in range(5):
            store.kv_append(0, t, bytes([t]) * 8)
        assert store.kv_length(0) == 5
        assert store.kv_flash_tokens(0) == 0
        assert store.kv_read(0, 1, 3) == bytes([1] * 8 + [2] * 8)

    def test_append_must_be_in_order(self, store):
        store.kv_append(0, 0, bytes(4))
        with pytest.raises(TinyforgeError, match="bad-token"):
            store.kv_append(0, 2, bytes(4))

    def test_record_size_fixed(self, store):
        store.kv_append(1, 0, bytes(4))
        with pytest.raises(TinyforgeError, match="bad-size"):
            store.kv_append(1, 1, bytes(5))

    def test_spill_past_limit(self, tmp_path):
        s = spilling_store(tmp_path, 3)
        for t in range(8):
            s.kv_append(0, t, bytes([t]) * 4)
        assert s.kv_flash_tokens(0) == 5
        assert (s.dir / "kv_L0.bin").stat().st_size == 5 * 4
        # reads spanning both tiers are bit-exact
        want = b"".join(bytes([t]) * 4 for t in range(8))
        assert s.kv_read(0, 0, 8) == want
        assert s.kv_read(0, 2, 6) == want[8:24]

    def test_limit_zero_all_flash(self, tmp_path):
        s = spilling_store(tmp_path, 0)
        for t in range(4):
            s.kv_append(0, t, bytes([t]))
        assert s.kv_flash_tokens(0) == 4
        assert s.kv_read(0, 0, 4) == bytes([0, 1, 2, 3])

    def test_tiering_is_transparent(self, tmp_path):
        records = [np.random.default_rng(t).bytes(16) for t in range(10)]
        reads = {}
        for limit in (0, 4, None):
            s = spilling_store(tmp_path / str(limit), limit)
            for t, rec in enumerate(records):
                s.kv_append(0, t, rec)
            reads[limit] = s.kv_read(0, 0, 10)
        assert reads[0] == reads[4] == reads[None]

    def test_stale_flash_file_truncated(self, tmp_path):
        d = tmp_path / "same"
        s1 = spilling_store(d, 0)
        for t in range(6):
            s1.kv_append(0, t, bytes([9]) * 2)
        s2 = open_store(StorageConfig(flash_dir=d / "flash", kv_dram_limit_tokens=0))
        s2.kv_append(0, 0, bytes([1]) * 2)
        assert s2.kv_read(0, 0, 1) == bytes([1, 1])
        assert (s2.dir / "kv_L0.bin").stat().st_size == 2

    def test_bad_range(self, store):
        store.kv_append(0, 0, bytes(2))
        with pytest.raises(TinyforgeError, match="bad-token"):
            store.kv_read(0, 0, 2)

    def test_flash_read_pays_latency(self, tmp_path):
        s = spilling_store(tmp_path, 0, flash_bandwidth=1e6, flash_latency=1e-3)
        for t in range(3):
            s.kv_append(0, t, bytes(1000))
        s.kv_read(0, 0, 3)
        assert s.ledger.flash_traffic == pytest.approx(1e-3 + 3000 / 1e6)


class TestPrefetch:
    def test_data_matches_sync_read(self, tmp_path):
        s = spilling_store(tmp_path, 2)
        for t in range(6):
            s.kv_append(0, t, bytes([t]) * 4)
        ticket = s.prefetch_kv(0, (0, 6))
        assert s.await_prefetch(ticket) == s.kv_read(0, 0, 6)

    def test_compute_window_hides_flash_time(self, tmp_path):
        s = spilling_store(tmp_path, 0, flash_bandwidth=1e6, flash_latency=0.0)
        for t in range(4):
            s.kv_append(0, t, bytes(1000))
        ticket = s.prefetch_kv(0, (0, 4))  # duration = 4000/1e6 = 4 ms
        s.add_compute(0.001)
        s.await_prefetch(ticket)
        assert s.ledger.hidden_by_prefetch == pytest.approx(0.001)
        assert s.ledger.exposed_flash == pytest.approx(0.003)

    def test_long_window_hides_everything(self, tmp_path):
        s = spilling_store(tmp_path, 0, flash_bandwidth=1e6, flash_latency=0.0)
        for t in range(2):
            s.kv_append(0, t, bytes(500))
        ticket = s.prefetch_kv(0, (0, 2))
        s.add_compute(1.0)
        s.await_prefetch(ticket)
        assert s.ledger.hidden_by_prefetch == pytest.approx(ticket.duration)
        assert s.ledger.exposed_flash == pytest.approx(0.0)

    def test_dram_only_prefetch_free(self, store):
        store.kv_append(0, 0, bytes(8))
        ticket = store.prefetch_kv(0, (0, 1))
        assert ticket.duration == 0.0
        store.await_prefetch(ticket)
        assert store.ledger.flash_traffic == 0.0

    def test_double_await_rejected(self, store):
        store.kv_append(0, 0, bytes(8))
        ticket = store.prefetch_kv(0, (0, 1))
        store.await_prefetch(ticket)
        with pytest.raises(TinyforgeError, match="bad-ticket"):
            store.await_prefetch(ticket)

    def test_report_snapshot_is_copy(self, store):
        snap = timing_report(store)
        store.add_compute(5.0)
        assert snap.compute == 0.0


class TestLatencyCurve:
    CFG = StorageConfig(flash_bandwidth=1e9, flash_latency=0.0)

    def test_dram_regime_flat(self):
        out = decode_latency_curve(self.CFG, [0, 0, 0], 3e-3, True, dram_baseline=2e-3)
        assert out == [2e-3, 2e-3, 2e-3]

    def test_no_prefetch_linear(self):
        sizes = [1_000_000, 2_000_000, 4_000_000]
        out = decode_latency_curve(self.CFG, sizes, 3e-3, prefetch=False)
        # 1 MB/ms at 1 GB/s
        assert out == pytest.approx([1e-3, 2e-3, 4e-3])

    def test_prefetch_breakpoint_at_window(self):
        # 3 ms window hides exactly 3 MB at 1 GB/s
        sizes = [1_000_000, 3_000_000, 4_000_000, 6_000_000]
        out = decode_latency_curve(self.CFG, sizes, 3e-3, prefetch=True)
        assert out[0] == 0.0 and out[1] == 0.0
        assert out[2] == pytest.approx(1e-3)
        assert out[3] == pytest.approx(3e-3)

    def test_prefetch_never_slower(self):
        rng = np.random.default_rng(2)
        sizes = [int(x) for x in rng.integers(0, 10_000_000, 50)]
        with_p = decode_latency_curve(self.CFG, sizes, 2e-3, True)
        without = decode_latency_curve(self.CFG, sizes, 2e-3, False)
        assert all(a <= b + 1e-12 for a, b in zip(with_p, without))

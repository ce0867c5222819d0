import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinyforge.quantize import (
    E4M3_MAX,
    E4M3_TABLE,
    QuantParams,
    decode_fp8,
    dequant_asym,
    dump_qtensor,
    encode_fp8,
    load_qtensor,
    quant_activations_i8,
    quant_asym,
    quant_key,
    quantize_weights,
)
from tinyforge.tensor import TinyforgeError

floats = st.floats(min_value=-100, max_value=100, allow_nan=False, width=32)


class TestQuantAsym:
    def test_hand_example_int4(self):
        codes, p = quant_asym([-1.0, 1.0, 0.5], 4)
        assert list(codes) == [-8, 7, 3]
        assert p.w_min == -1.0 and p.clip_min == -8 and p.clip_max == 7
        assert p.scale == pytest.approx(2 / 15)

    def test_extremes_map_to_clips(self):
        codes, p = quant_asym([0.25, -3.0, 7.5], 8)
        assert codes[np.argmin([0.25, -3.0, 7.5])] == p.clip_min
        assert codes[np.argmax([0.25, -3.0, 7.5])] == p.clip_max

    def test_constant_block(self):
        codes, p = quant_asym([0.7, 0.7, 0.7], 4)
        assert p.scale == 1.0 and list(codes) == [-8, -8, -8]
        assert np.allclose(dequant_asym(codes, p), 0.7, atol=1e-7)

    def test_roundtrip_bound_int8(self):
        rng = np.random.default_rng(3)
        vals = rng.uniform(-5, 5, 256)
        codes, p = quant_asym(vals, 8)
        err = np.abs(vals - dequant_asym(codes, p).astype(np.float64))
        assert err.max() <= p.scale / 2 + 1e-9

    @given(st.lists(floats, min_size=1, max_size=64), st.sampled_from([4, 8]))
    @settings(max_examples=200)
    def test_monotone(self, vals, bits):
        codes, _ = quant_asym(vals, bits)
        order = np.argsort(vals, kind="stable")
        assert (np.diff(codes[order].astype(int)) >= 0).all()

    @given(st.lists(floats, min_size=1, max_size=32), st.sampled_from([4, 8]))
    @settings(max_examples=100)
    def test_idempotent(self, vals, bits):
        codes, p = quant_asym(vals, bits)
        codes2, p2 = quant_asym(dequant_asym(codes, p), bits)
        assert np.array_equal(codes, codes2)


class TestDequant:
    def test_clip_min_gives_w_min(self):
        p = QuantParams(0.5, -2.0, -8, 7)
        assert dequant_asym([-8], p)[0] == -2.0

    def test_clip_max_gives_w_max(self):
        # w_max = w_min + scale * (clip_max - clip_min)
        p = QuantParams(0.5, -2.0, -8, 7)
        assert dequant_asym([7], p)[0] == pytest.approx(-2.0 + 0.5 * 15)

    def test_out_of_range_code(self):
        with pytest.raises(TinyforgeError, match="bad-code"):
            dequant_asym([9], QuantParams(1.0, 0.0, -8, 7))


class TestQuantizeWeights:
    def test_single_row(self):
        q = quantize_weights(np.array([[-1.0, 1.0, 0.5, 0.0]], dtype=np.float32), 4, 4)
        assert list(q.codes[0][:3]) == [-8, 7, 3]

    def test_all_zero(self):
        q = quantize_weights(np.zeros((2, 32), dtype=np.float32), 4, 32)
        assert (q.codes == -8).all() and (q.scales == 1.0).all()

    def test_rows_independent(self):
        rng = np.random.default_rng(0)
        w = rng.uniform(-1, 1, (4, 32)).astype(np.float32)
        q = quantize_weights(w, 4, 32)
        q_perm = quantize_weights(w[::-1].copy(), 4, 32)
        assert np.array_equal(q.codes[::-1], q_perm.codes)
        assert np.array_equal(q.scales[::-1], q_perm.scales)

    def test_bad_block(self):
        with pytest.raises(TinyforgeError, match="bad-block"):
            quantize_weights(np.zeros((2, 10), dtype=np.float32), 4, 32)

    def test_dequantize_bound(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(-3, 3, (8, 64)).astype(np.float32)
        q = quantize_weights(w, 8, 32)
        err = np.abs(w - q.dequantize())
        bound = np.repeat(q.scales / 2, 32, axis=1)
        assert (err <= bound + 1e-6).all()

    def test_serialization_roundtrip(self):
        rng = np.random.default_rng(2)
        for bits in (4, 8):
            w = rng.uniform(-1, 1, (5, 64)).astype(np.float32)
            q = quantize_weights(w, bits, 32)
            q2, off = load_qtensor(dump_qtensor(q))
            assert off == len(dump_qtensor(q))
            assert np.array_equal(q.codes, q2.codes)
            assert np.array_equal(q.scales, q2.scales)
            assert np.array_equal(q.w_mins, q2.w_mins)


class TestActivations:
    def test_zeros(self):
        codes, scale = quant_activations_i8([0.0, 0.0])
        assert list(codes) == [0, 0] and scale == 1.0

    def test_full_range(self):
        codes, scale = quant_activations_i8([-127.0, 127.0])
        assert list(codes) == [-127, 127] and scale == 1.0

    def test_oracle_rounding(self):
        x = [0.5, -0.25, 1.0]
        codes, scale = quant_activations_i8(x)
        assert scale == pytest.approx(1 / 127)
        expect = [int(np.sign(v) * np.floor(abs(v) / scale + 0.5)) for v in x]
        assert list(codes) == expect
        assert list(codes) == [64, -32, 127]


class TestKeyCodec:
    def test_constant_key_exact(self):
        codes, p = quant_key(np.full(16, 0.25))
        assert (codes == p.clip_min).all()
        assert np.allclose(dequant_asym(codes, p), 0.25, atol=1e-7)

    def test_append_only(self):
        rng = np.random.default_rng(5)
        first = rng.uniform(-1, 1, 16)
        stored = quant_key(first)[0].tobytes()
        for _ in range(100):
            quant_key(rng.uniform(-1, 1, 16))
        assert quant_key(first)[0].tobytes() == stored

    def test_reconstruction_bound(self):
        rng = np.random.default_rng(6)
        k = rng.uniform(-2, 2, 64)
        codes, p = quant_key(k)
        assert np.abs(k - dequant_asym(codes, p)).max() <= p.scale / 2 + 1e-9

    def test_int4_option(self):
        codes, p = quant_key(np.linspace(-1, 1, 16), bits=4)
        assert p.clip_min == -8 and codes.min() >= -8 and codes.max() <= 7


class TestFp8:
    def test_one(self):
        assert int(encode_fp8(1.0)) == 0x38
        assert decode_fp8(np.uint8(0x38)) == 1.0

    def test_zero(self):
        assert int(encode_fp8(0.0)) == 0 and decode_fp8(np.uint8(0)) == 0.0

    def test_saturation(self):
        assert decode_fp8(encode_fp8(500.0)) == E4M3_MAX
        assert decode_fp8(encode_fp8(-10000.0)) == -E4M3_MAX

    def test_nan_rejected(self):
        with pytest.raises(TinyforgeError, match="bad-value"):
            encode_fp8(float("nan"))

    def test_exact_values_roundtrip(self):
        # every representable finite value encodes to itself
        finite = [c for c in range(256) if not np.isnan(E4M3_TABLE[c])]
        vals = E4M3_TABLE[finite]
        codes = encode_fp8(vals)
        assert np.array_equal(decode_fp8(codes), vals.astype(np.float32))

    def test_nearest_even(self):
        # midpoint between 1.0 (0x38) and 1.125 (0x39) resolves to even code
        assert int(encode_fp8(1.0625)) == 0x38

    @given(st.floats(min_value=-1000, max_value=1000, allow_nan=False))
    @settings(max_examples=300)
    def test_nearest_property(self, x):
        v = decode_fp8(encode_fp8(x))
        finite = E4M3_TABLE[~np.isnan(E4M3_TABLE)]
        clipped = np.clip(x, -E4M3_MAX, E4M3_MAX)
        best = np.min(np.abs(finite - clipped))
        assert abs(v - clipped) <= best + 1e-12

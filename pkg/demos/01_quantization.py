"""Block-asymmetric weight quantization and the fp8 value codec.

Weights are quantized per block of 32: each block stores int4 or int8
codes plus one (scale, w_min) float pair, so every block spans its own
range exactly. Keys in the KV cache use the same codec at int8; values
use an 8-bit e4m3 float that trades precision for dynamic range.
"""

import numpy as np

from tinyforge.quantize import (
    E4M3_MAX,
    decode_fp8,
    dequant_asym,
    encode_fp8,
    quant_asym,
    quantize_weights,
)

rng = np.random.default_rng(0)

print("== one block, by hand ==")
vals = [-1.0, 1.0, 0.5]
codes, p = quant_asym(vals, 4)
print(f"values {vals} -> int4 codes {list(codes)}")
print(f"scale {p.scale:.5f}, w_min {p.w_min}, clip [{p.clip_min}, {p.clip_max}]")
print("reconstructed:", np.round(dequant_asym(codes, p), 4))

print("\n== error bound over a random matrix ==")
w = rng.normal(0, 1, (64, 128)).astype(np.float32)
for bits in (4, 8):
    q = quantize_weights(w, bits, block_size=32)
    err = np.abs(w - q.dequantize())
    bound = q.scales.repeat(32, axis=1) / 2
    print(
        f"int{bits}: max error {err.max():.5f}, always <= scale/2 "
        f"({bool((err <= bound + 1e-6).all())}); "
        f"{bits/8 + 8/32:.3f} bytes/element stored"
    )

print("\n== fp8 (e4m3) value codec ==")
xs = np.array([0.0, 1.0, 1.0625, 3.14159, 448.0, 1000.0, -0.001])
enc = encode_fp8(xs)
dec = decode_fp8(enc)
for x, c, v in zip(xs, enc, dec):
    print(f"  {x:>10.5f} -> 0x{int(c):02x} -> {v:>9.5f}")
print(f"values saturate at +/-{E4M3_MAX}; eight bits buy ~2 decimal digits")

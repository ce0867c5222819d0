"""tinyforge: a desk-scale CPU inference runtime for tiny decoder models.

Combines block-asymmetric weight quantization, an fp8/int8 quantized KV
cache, register-tiled quantized GEMM with a tile-size solver, Region-based
data rearrangement with fusion, rate-balanced multicore scheduling, and a
simulated DRAM/flash storage tier.
"""

__version__ = "0.1.0"

from .tensor import ElementType, Tensor, TinyforgeError, cast, make_random_tensor

__all__ = [
    "ElementType",
    "Tensor",
    "TinyforgeError",
    "cast",
    "make_random_tensor",
    "__version__",
]

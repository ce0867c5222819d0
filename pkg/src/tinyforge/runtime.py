"""Decoder-only model assembly: config, weight generation and loading,
prefill/decode with the quantized KV cache, LoRA, and greedy generation.

The architecture is a pre-norm decoder with grouped-query attention and a
gated (SiLU) MLP. Weights live as block-quantized packed matrices, keys
are cached as per-token int8 codes, values as fp8 bytes, and all linear
ops run through the tiled GEMM with scheduler partitioning.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, quantize, scheduler, store as storemod
from .kernels import (
    AccessCounter,
    KvView,
    PackedWeights,
    TileConfig,
    attention,
    gemm_q,
    pack_activations,
    pack_weights,
    tile_config_from_spec,
)
from .quantize import (
    CLIP,
    decode_fp8,
    encode_fp8,
    quant_activations_rows,
    quant_asym,
    quantize_weights,
)
from .store import StorageConfig, Store
from .tensor import (
    ElementType,
    Tensor,
    TinyforgeError,
    cast,
    dump_tensor,
    from_f32,
    load_tensor,
    make_random_tensor,
)

BOS_ID = 256
EOS_ID = 257
RMS_EPS = 1e-6
ROPE_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int
    intermediate_size: int
    n_layers: int
    n_heads: int
    n_kv_heads: int

    def __post_init__(self):
        vals = (
            self.vocab_size,
            self.hidden_size,
            self.intermediate_size,
            self.n_layers,
            self.n_heads,
            self.n_kv_heads,
        )
        if any(v <= 0 for v in vals):
            raise TinyforgeError("bad-model", "config fields must be positive")
        if self.n_heads % self.n_kv_heads:
            raise TinyforgeError("bad-model", "n_heads must divide by n_kv_heads")
        if self.hidden_size % self.n_heads:
            raise TinyforgeError("bad-model", "hidden_size must divide by n_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    @property
    def kv_dim(self) -> int:
        return self.n_kv_heads * self.head_dim

    def to_json(self) -> str:
        return json.dumps(
            {
                "vocab_size": self.vocab_size,
                "hidden_size": self.hidden_size,
                "intermediate_size": self.intermediate_size,
                "n_layers": self.n_layers,
                "n_heads": self.n_heads,
                "n_kv_heads": self.n_kv_heads,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
            return cls(
                int(d["vocab_size"]),
                int(d["hidden_size"]),
                int(d["intermediate_size"]),
                int(d["n_layers"]),
                int(d["n_heads"]),
                int(d["n_kv_heads"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise TinyforgeError("bad-model", f"malformed config: {exc}") from exc


CONFIG_PRESETS = {
    "tiny": ModelConfig(256, 64, 128, 2, 4, 2),
    "qwen2-7b": ModelConfig(151646, 3584, 18944, 28, 28, 4),
}


def weight_order(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared (name, shape) sequence of tensors inside weights.bin."""
    order: list[tuple[str, tuple[int, ...]]] = [
        ("embedding", (cfg.vocab_size, cfg.hidden_size))
    ]
    h, kv, it = cfg.hidden_size, cfg.kv_dim, cfg.intermediate_size
    for i in range(cfg.n_layers):
        order += [
            (f"L{i}.attn_norm", (h,)),
            (f"L{i}.q", (h, h)),
            (f"L{i}.k", (kv, h)),
            (f"L{i}.v", (kv, h)),
            (f"L{i}.o", (h, h)),
            (f"L{i}.mlp_norm", (h,)),
            (f"L{i}.gate", (it, h)),
            (f"L{i}.up", (it, h)),
            (f"L{i}.down", (h, it)),
        ]
    order += [("final_norm", (h,)), ("lm_head", (cfg.vocab_size, h))]
    return order


def generate_model(cfg: ModelConfig, seed: int, out_dir: str | Path) -> Path:
    """Write a deterministic random-weight model directory.

    Projections are scaled by 1/sqrt(fan_in) to keep activations sane; norm
    scales sit near one. Identical (config, seed) produce byte-identical
    weights.bin.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    blobs = []
    for idx, (name, shape) in enumerate(weight_order(cfg)):
        t = make_random_tensor(shape, ElementType.F32, seed * 100_003 + idx)
        arr = t.to_f32()
        if name.endswith("_norm"):
            arr = 1.0 + 0.05 * arr
        elif len(shape) == 2 and name != "embedding":
            arr = arr / np.float32(math.sqrt(shape[1]))
        blobs.append(dump_tensor(from_f32(arr.astype(np.float32))))
    (out / "weights.bin").write_bytes(b"".join(blobs))
    return out


# ---------------------------------------------------------------------------
# byte-level tokenizer

def tokenize(text: bytes) -> list[int]:
    return list(text)


def detokenize(tokens) -> bytes:
    out = bytearray()
    for t in tokens:
        t = int(t)
        if t > EOS_ID or t < 0:
            raise TinyforgeError("bad-token", f"token id {t} out of range")
        if t < 256:
            out.append(t)
    return bytes(out)


# ---------------------------------------------------------------------------
# size accounting

def quant_bytes_per_element(bits: int, block_size: int) -> float:
    """Codes plus one (scale, w_min) float32 pair per block."""
    return bits / 8 + 8 / block_size


def model_size_report(
    cfg: ModelConfig,
    embedding_storage: str = "bf16",
    layer_bits: int = 4,
    lm_head_storage: str = "bf16",
    block_size: int = 32,
) -> dict:
    """Storage footprint of the three parameter groups in bytes.

    Defaults mirror the mobile deployment accounting: bfloat16 embedding
    and LM head, int4 block-quantized layers.
    """
    float_bytes = {"bf16": 2, "f32": 4}
    h, kv, it = cfg.hidden_size, cfg.kv_dim, cfg.intermediate_size
    emb_params = cfg.vocab_size * h
    layer_params = 2 * h * h + 2 * kv * h + 3 * h * it
    layer_norm_params = 2 * h
    lm_params = cfg.vocab_size * h
    layer_bytes = (
        layer_params * quant_bytes_per_element(layer_bits, block_size)
        + layer_norm_params * 4
    )
    emb_bytes = emb_params * float_bytes[embedding_storage]
    lm_bytes = lm_params * float_bytes[lm_head_storage]
    total_params = emb_params + cfg.n_layers * (layer_params + layer_norm_params) + lm_params
    return {
        "embedding_params": emb_params,
        "layers_params": cfg.n_layers * (layer_params + layer_norm_params),
        "lm_head_params": lm_params,
        "total_params": total_params,
        "embedding_bytes": int(emb_bytes),
        "layers_bytes": int(cfg.n_layers * layer_bytes),
        "lm_head_bytes": int(lm_bytes),
        "total_bytes": int(emb_bytes + cfg.n_layers * layer_bytes + lm_bytes),
        "embedding_row_bytes": h * float_bytes[embedding_storage],
        "embedding_share": emb_bytes / (emb_bytes + cfg.n_layers * layer_bytes + lm_bytes),
    }


def lora_cost(h: int, r: int) -> dict:
    """Cost algebra for the two LoRA evaluation orders on an [h, h] input."""
    if h < 1 or r < 1:
        raise TinyforgeError("bad-shape", "h and r must be >= 1")
    direct_flops = r * h * h + h**3
    direct_mem = 2 * (r * h * h + h * h + h**3)
    re_flops = 2 * r * h * h
    re_mem = 4 * r * h * h + h * h + r * h
    return {
        "direct": {"flops": direct_flops, "mem": direct_mem},
        "reassociated": {"flops": re_flops, "mem": re_mem},
        "flops_ratio": re_flops / direct_flops,
        "mem_ratio": re_mem / direct_mem,
    }


# ---------------------------------------------------------------------------
# engine

@dataclass
class EngineOptions:
    tiles: str | TileConfig = "arm-i8sdot"
    layer_bits: int = 4
    lm_head_bits: int = 8
    block_size: int = 32
    key_bits: int = 8
    threads: int = 1
    rates: list[float] | None = None
    storage: StorageConfig | None = None
    embed_flash: bool = False
    context_limit: int = 4096
    count_accesses: bool = False


@dataclass
class LayerWeights:
    attn_norm: np.ndarray
    q: PackedWeights
    k: PackedWeights
    v: PackedWeights
    o: PackedWeights
    mlp_norm: np.ndarray
    gate: PackedWeights
    up: PackedWeights
    down: PackedWeights


@dataclass
class LoraAdapter:
    """Low-rank bypass maps per adapted projection.

    maps: projection name (e.g. "L0.q") -> (up_map [out, r], down_map [r, in]);
    the forward adds up_map @ (down_map @ x) to the base projection output.
    """

    rank: int
    maps: dict[str, tuple[np.ndarray, np.ndarray]]


def rms_norm(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    x = x.astype(np.float32)
    ms = np.mean(x.astype(np.float32) ** 2, axis=-1, keepdims=True, dtype=np.float32)
    inv = (1.0 / np.sqrt(ms + np.float32(RMS_EPS))).astype(np.float32)
    return x * inv * weight.astype(np.float32)


def silu(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float32)
    return (x / (1.0 + np.exp(-x, dtype=np.float32))).astype(np.float32)


def apply_rope(x: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Rotary embedding over [s, heads, d]; rotates (j, j + d/2) pairs."""
    s, heads, d = x.shape
    half = d // 2
    inv = (ROPE_BASE ** (-np.arange(half, dtype=np.float32) / half)).astype(np.float32)
    ang = positions.astype(np.float32)[:, None] * inv[None, :]
    cos = np.cos(ang).astype(np.float32)[:, None, :]
    sin = np.sin(ang).astype(np.float32)[:, None, :]
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1).astype(
        np.float32
    )


class Engine:
    """One loaded model plus its KV cache, worker pool, and tiered store."""

    def __init__(self, cfg: ModelConfig, weights: dict[str, np.ndarray], opts: EngineOptions):
        self.cfg = cfg
        self.opts = opts
        self.tile = (
            opts.tiles if isinstance(opts.tiles, TileConfig) else tile_config_from_spec(opts.tiles)
        )
        rates = opts.rates if opts.rates is not None else [1.0] * opts.threads
        self.profiles = scheduler.measure_rates(opts.threads, override=rates)
        self.pool = scheduler.WorkerPool(self.profiles)
        self.access_counter = AccessCounter() if opts.count_accesses else None

        storage = opts.storage or StorageConfig(
            flash_dir=Path(tempfile.mkdtemp(prefix="tinyforge-flash-"))
        )
        self.store = Store(storage)

        self._check_shapes(weights)
        emb_bf16 = cast(from_f32(weights["embedding"]), ElementType.BF16)
        self.emb_row_bytes = cfg.hidden_size * 2
        self.emb_handle = self.store.put_embedding_table(
            cfg.vocab_size, self.emb_row_bytes, emb_bf16.data, offload=opts.embed_flash
        )

        def packq(name: str, bits: int) -> PackedWeights:
            qt = quantize_weights(weights[name], bits, opts.block_size)
            pw = pack_weights(qt, self.tile)
            self.store.register_dram_bytes(
                int(weights[name].size * quant_bytes_per_element(bits, opts.block_size))
            )
            return pw

        self.layers: list[LayerWeights] = []
        for i in range(cfg.n_layers):
            self.layers.append(
                LayerWeights(
                    attn_norm=weights[f"L{i}.attn_norm"].astype(np.float32),
                    q=packq(f"L{i}.q", opts.layer_bits),
                    k=packq(f"L{i}.k", opts.layer_bits),
                    v=packq(f"L{i}.v", opts.layer_bits),
                    o=packq(f"L{i}.o", opts.layer_bits),
                    mlp_norm=weights[f"L{i}.mlp_norm"].astype(np.float32),
                    gate=packq(f"L{i}.gate", opts.layer_bits),
                    up=packq(f"L{i}.up", opts.layer_bits),
                    down=packq(f"L{i}.down", opts.layer_bits),
                )
            )
        self.final_norm = weights["final_norm"].astype(np.float32)
        self.lm_head = packq("lm_head", opts.lm_head_bits)

        d = cfg.head_dim
        self.kv_record_bytes = cfg.n_kv_heads * (2 * d + 8)
        self._layer_param_bytes = int(
            (2 * cfg.hidden_size**2 + 2 * cfg.kv_dim * cfg.hidden_size + 3 * cfg.hidden_size * cfg.intermediate_size)
            * quant_bytes_per_element(opts.layer_bits, opts.block_size)
        )
        self.adapters: dict[str, LoraAdapter] = {}
        self.active_adapter: str | None = None
        self._tickets: dict[int, object] = {}
        self.kv_len = 0

    # -- plumbing -----------------------------------------------------------

    def _check_shapes(self, weights: dict[str, np.ndarray]) -> None:
        for name, shape in weight_order(self.cfg):
            if name not in weights:
                raise TinyforgeError("bad-model", f"missing tensor {name}")
            if tuple(weights[name].shape) != shape:
                raise TinyforgeError(
                    "bad-shape", f"{name}: {weights[name].shape} != {shape}"
                )

    def reset_cache(self) -> None:
        self.store._kv_dram.clear()
        self.store._kv_lengths.clear()
        self.store._kv_record_bytes.clear()
        self.store._kv_flash_files.clear()
        self._tickets.clear()
        self.kv_len = 0

    def _linear(self, x: np.ndarray, pw: PackedWeights, name: str | None = None) -> np.ndarray:
        """Quantize activations per row, run the tiled GEMM (sharded across
        the pool), and add the active LoRA bypass if one adapts ``name``."""
        codes, scales = quant_activations_rows(x)
        pa = pack_activations(codes, scales, self.tile)
        e = x.shape[0]
        out = np.zeros((e, pw.h), dtype=np.float32)
        t = self.tile
        if self.pool.n_workers <= 1:
            gemm_q(pa, pw, t, counter=self.access_counter, out=out)
        elif e > 1:
            eb = math.ceil(e / t.e_p)
            ranges = self.pool.partition(eb)
            self.pool.parallel_for(
                ranges,
                lambda lo, hi, _w: gemm_q(
                    pa, pw, t, counter=self.access_counter,
                    row_range=(lo * t.e_p, min(hi * t.e_p, e)), out=out,
                ),
            )
        else:
            hb = math.ceil(pw.h / t.h_p)
            ranges = self.pool.partition(hb)
            self.pool.parallel_for(
                ranges,
                lambda lo, hi, _w: gemm_q(
                    pa, pw, t, counter=self.access_counter,
                    col_block_range=(lo, hi), out=out,
                ),
            )
        self.store.add_dram_traffic(
            int(pw.h * pw.l * quant_bytes_per_element(pw.bits, pw.block_size))
        )
        if self.active_adapter is not None and name is not None:
            ad = self.adapters[self.active_adapter]
            if name in ad.maps:
                up, down = ad.maps[name]
                # reassociated order: up @ (down @ x)
                out = out + (x.astype(np.float32) @ down.T.astype(np.float32)) @ up.T.astype(np.float32)
        return out

    def _embed(self, tokens) -> np.ndarray:
        rows = []
        for t in tokens:
            raw = self.store.read_embedding_row(self.emb_handle, int(t))
            rows.append(Tensor((self.cfg.hidden_size,), ElementType.BF16, raw).to_f32())
        return np.stack(rows).astype(np.float32)

    # -- KV cache -----------------------------------------------------------

    def _kv_append(self, layer: int, token_index: int, k: np.ndarray, v: np.ndarray) -> None:
        """k, v: [kv_heads, d] float32 for one token."""
        d = self.cfg.head_dim
        rec = bytearray()
        for g in range(self.cfg.n_kv_heads):
            codes, params = quant_asym(k[g], self.opts.key_bits)
            rec += codes.astype(np.int8).tobytes()
            rec += np.array([params.scale, params.w_min], dtype="<f4").tobytes()
            rec += encode_fp8(v[g]).astype(np.uint8).tobytes()
        self.store.kv_append(layer, token_index, bytes(rec))

    def _parse_kv(self, data: bytes, n_tokens: int) -> KvView:
        d = self.cfg.head_dim
        g = self.cfg.n_kv_heads
        rb = self.kv_record_bytes
        raw = np.frombuffer(data, dtype=np.uint8).reshape(n_tokens, g, rb // g)
        k_codes = raw[:, :, :d].view(np.int8).transpose(1, 0, 2)
        params = raw[:, :, d : d + 8].copy().view("<f4")  # [T, g, 2]
        v_codes = raw[:, :, d + 8 :].transpose(1, 0, 2)
        clip_min = CLIP[self.opts.key_bits][0]
        return KvView(
            k_codes=np.ascontiguousarray(k_codes),
            k_scales=np.ascontiguousarray(params[:, :, 0].T),
            k_mins=np.ascontiguousarray(params[:, :, 1].T),
            v_codes=np.ascontiguousarray(v_codes),
            key_clip_min=clip_min,
        )

    def _read_kv(self, layer: int) -> KvView:
        n = self.store.kv_length(layer)
        ticket = self._tickets.pop(layer, None)
        if ticket is not None:
            hist = self.store.await_prefetch(ticket)
            lo, hi = ticket.token_range
            tail = self.store.kv_read(layer, hi, n) if n > hi else b""
            data = hist + tail
        else:
            data = self.store.kv_read(layer, 0, n)
        return self._parse_kv(data, n)

    # -- forward ------------------------------------------------------------

    def _forward(self, tokens: list[int], positions: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        s = len(tokens)
        x = self._embed(tokens)
        heads, kvh, d = cfg.n_heads, cfg.n_kv_heads, cfg.head_dim
        base = self.kv_len
        for li, lw in enumerate(self.layers):
            attn_in = rms_norm(x, lw.attn_norm)
            q = self._linear(attn_in, lw.q, f"L{li}.q").reshape(s, heads, d)
            k = self._linear(attn_in, lw.k, f"L{li}.k").reshape(s, kvh, d)
            v = self._linear(attn_in, lw.v, f"L{li}.v").reshape(s, kvh, d)
            q = apply_rope(q, positions)
            k = apply_rope(k, positions)
            for t in range(s):
                self._kv_append(li, base + t, k[t], v[t])
            kv = self._read_kv(li)
            att = attention(np.ascontiguousarray(q.transpose(1, 0, 2)), kv, causal=True)
            att = att.transpose(1, 0, 2).reshape(s, cfg.hidden_size)
            x = x + self._linear(att, lw.o, f"L{li}.o")
            mlp_in = rms_norm(x, lw.mlp_norm)
            gate = self._linear(mlp_in, lw.gate, f"L{li}.gate")
            up = self._linear(mlp_in, lw.up, f"L{li}.up")
            # the next layer's flash-resident KV is prefetched here so the
            # current layer's MLP (plus the next qkv projections) hides it
            nxt = li + 1
            if nxt < cfg.n_layers and s == 1:
                n_next = self.store.kv_length(nxt)
                if self.store.kv_flash_tokens(nxt) > 0:
                    self._tickets[nxt] = self.store.prefetch_kv(nxt, (0, n_next))
            self.store.add_compute(self._layer_param_bytes / self.store.cfg.dram_bandwidth)
            x = x + self._linear(silu(gate) * up, lw.down, f"L{li}.down")
        self.kv_len += s
        out = rms_norm(x[-1:], self.final_norm)
        logits = self._linear(out, self.lm_head, "lm_head")
        return logits[0]

    def prefill(self, tokens) -> np.ndarray:
        tokens = [int(t) for t in tokens]
        if not tokens:
            raise TinyforgeError("bad-prompt", "empty prompt")
        if self.kv_len + len(tokens) > self.opts.context_limit:
            raise TinyforgeError("ctx-full", "context limit exceeded")
        for t in tokens:
            if not 0 <= t < self.cfg.vocab_size:
                raise TinyforgeError("bad-token", f"token {t} outside vocab")
        positions = np.arange(self.kv_len, self.kv_len + len(tokens))
        return self._forward(tokens, positions)

    def decode_step(self, token: int) -> np.ndarray:
        token = int(token)
        if self.kv_len + 1 > self.opts.context_limit:
            raise TinyforgeError("ctx-full", "context limit exceeded")
        if not 0 <= token < self.cfg.vocab_size:
            raise TinyforgeError("bad-token", f"token {token} outside vocab")
        return self._forward([token], np.array([self.kv_len]))

    def generate(self, prompt_tokens, max_new: int) -> list[int]:
        """Greedy decoding: prefill the prompt, then argmax one token at a
        time until EOS (when the vocab includes it) or ``max_new``."""
        if max_new < 1:
            raise TinyforgeError("bad-prompt", "max_new must be >= 1")
        self.reset_cache()
        logits = self.prefill(prompt_tokens)
        out = []
        for _ in range(max_new):
            nxt = int(np.argmax(logits))  # ties resolve to the lowest id
            out.append(nxt)
            if nxt == EOS_ID and self.cfg.vocab_size > EOS_ID:
                break
            if len(out) == max_new:
                break
            logits = self.decode_step(nxt)
        return out

    # -- LoRA ---------------------------------------------------------------

    def attach_lora(self, adapter: LoraAdapter, name: str = "default") -> None:
        known = {n: (w.h, w.l) for n, w in self._named_projections()}
        for pname, (up, down) in adapter.maps.items():
            if pname not in known:
                raise TinyforgeError("bad-lora", f"unknown projection {pname}")
            out_dim, in_dim = known[pname]
            if up.shape != (out_dim, adapter.rank) or down.shape != (adapter.rank, in_dim):
                raise TinyforgeError(
                    "bad-lora",
                    f"{pname}: up {up.shape} / down {down.shape} incompatible with "
                    f"[{out_dim}, {in_dim}] rank {adapter.rank}",
                )
        if adapter.rank > self.cfg.hidden_size // 8:
            import warnings

            warnings.warn("LoRA rank is large relative to hidden size", stacklevel=2)
        self.adapters[name] = adapter
        if self.active_adapter is None:
            self.active_adapter = name

    def detach_lora(self, name: str = "default") -> None:
        self.adapters.pop(name, None)
        if self.active_adapter == name:
            self.active_adapter = None

    def set_active_lora(self, name: str | None) -> None:
        if name is not None and name not in self.adapters:
            raise TinyforgeError("bad-lora", f"no adapter named {name}")
        self.active_adapter = name

    def _named_projections(self):
        for i, lw in enumerate(self.layers):
            for pname in ("q", "k", "v", "o", "gate", "up", "down"):
                yield f"L{i}.{pname}", getattr(lw, pname)
        yield "lm_head", self.lm_head

    def close(self) -> None:
        self.pool.close()


# ---------------------------------------------------------------------------
# model directory I/O

def load_weights_dir(model_dir: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    model_dir = Path(model_dir)
    cfg_path = model_dir / "config.json"
    w_path = model_dir / "weights.bin"
    if not cfg_path.exists() or not w_path.exists():
        raise TinyforgeError("bad-model", f"{model_dir} lacks config.json/weights.bin")
    cfg = ModelConfig.from_json(cfg_path.read_text())
    buf = w_path.read_bytes()
    weights = {}
    off = 0
    for name, shape in weight_order(cfg):
        t, off = load_tensor(buf, off)
        if t.shape != shape:
            raise TinyforgeError("bad-shape", f"{name}: stored {t.shape} != {shape}")
        weights[name] = t.to_f32()
    if off != len(buf):
        raise TinyforgeError("bad-model", "trailing bytes in weights.bin")
    return cfg, weights


def load_model(model_dir: str | Path, opts: EngineOptions | None = None) -> Engine:
    cfg, weights = load_weights_dir(model_dir)
    return Engine(cfg, weights, opts or EngineOptions())


def save_lora(path: str | Path, adapter: LoraAdapter) -> None:
    blob = bytearray(b"TFLORA01")
    blob += np.array([adapter.rank, len(adapter.maps)], dtype="<u4").tobytes()
    for name, (up, down) in sorted(adapter.maps.items()):
        nb = name.encode()
        blob += np.array([len(nb)], dtype="<u2").tobytes() + nb
        blob += dump_tensor(from_f32(np.asarray(up, dtype=np.float32)))
        blob += dump_tensor(from_f32(np.asarray(down, dtype=np.float32)))
    Path(path).write_bytes(bytes(blob))


def load_lora(path: str | Path) -> LoraAdapter:
    buf = Path(path).read_bytes()
    if buf[:8] != b"TFLORA01":
        raise TinyforgeError("bad-lora", "bad adapter magic")
    rank, count = np.frombuffer(buf, dtype="<u4", count=2, offset=8)
    off = 16
    maps = {}
    for _ in range(count):
        (nlen,) = np.frombuffer(buf, dtype="<u2", count=1, offset=off)
        off += 2
        name = buf[off : off + nlen].decode()
        off += int(nlen)
        up, off = load_tensor(buf, off)
        down, off = load_tensor(buf, off)
        maps[name] = (up.to_f32(), down.to_f32())
    return LoraAdapter(rank=int(rank), maps=maps)


def weights_hash(model_dir: str | Path) -> str:
    return hashlib.sha256((Path(model_dir) / "weights.bin").read_bytes()).hexdigest()

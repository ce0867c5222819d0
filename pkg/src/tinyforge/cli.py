"""Command-line surface: gen-model, quantize, run, bench, solve-tiles, inspect.

Exit codes: 0 ok, 2 usage, 3 model error, 4 runtime error. TF_THREADS sets
the default thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import (
    fuse_regions,
    move_count,
    region_for_concat,
    region_for_transpose,
)
from .kernels import TILE_PRESETS, count_accesses, solve_tile_sizes, tile_config_from_spec
from .quantize import dump_qtensor, quantize_weights
from .runtime import (
    CONFIG_PRESETS,
    EngineOptions,
    ModelConfig,
    detokenize,
    generate_model,
    load_model,
    load_weights_dir,
    model_size_report,
    tokenize,
    weights_hash,
)
from .store import StorageConfig
from .tensor import TinyforgeError

REPORT_SCHEMA = 1


def _storage_from_args(args, model_dir: Path) -> StorageConfig:
    limit = getattr(args, "kv_dram_limit", None)
    if limit is not None and limit < 0:
        limit = None
    return StorageConfig(
        kv_dram_limit_tokens=limit,
        flash_dir=Path(model_dir) / ".flash",
    )


def _engine_options(args, model_dir: Path) -> EngineOptions:
    rates = None
    if getattr(args, "rates", None):
        rates = [float(r) for r in args.rates.split(",")]
    return EngineOptions(
        tiles=args.tiles,
        threads=args.threads,
        rates=rates,
        storage=_storage_from_args(args, model_dir),
        embed_flash=getattr(args, "embed_flash", "off") == "on",
    )


def cmd_gen_model(args) -> int:
    if args.preset:
        cfg = CONFIG_PRESETS[args.preset]
    else:
        cfg = ModelConfig.from_json(Path(args.config).read_text())
    out = generate_model(cfg, args.seed, args.out)
    print(f"wrote {out} (weights sha256 {weights_hash(out)[:16]})")
    return 0


def cmd_quantize(args) -> int:
    cfg, weights = load_weights_dir(args.model)
    blobs = []
    total_in = total_out = 0
    for name, w in weights.items():
        if w.ndim != 2:
            continue
        if w.shape[1] % args.block:
            continue
        qt = quantize_weights(w, args.bits, args.block)
        blob = dump_qtensor(qt)
        blobs.append(blob)
        total_in += w.nbytes
        total_out += len(blob)
    Path(args.out).write_bytes(b"".join(blobs))
    print(
        f"quantized {len(blobs)} matrices to int{args.bits} block {args.block}: "
        f"{total_in} -> {total_out} bytes ({total_out / total_in:.1%})"
    )
    return 0


def cmd_run(args) -> int:
    if args.max_new < 1:
        raise UsageError("--max-new must be >= 1")
    opts = _engine_options(args, Path(args.model))
    engine = load_model(args.model, opts)
    prompt = tokenize(args.prompt.encode())
    t0 = time.perf_counter()
    logits = engine.prefill(prompt)
    t_prefill = time.perf_counter() - t0
    tokens = []
    t0 = time.perf_counter()
    nxt = int(np.argmax(logits))
    tokens.append(nxt)
    for _ in range(args.max_new - 1):
        logits = engine.decode_step(nxt)
        nxt = int(np.argmax(logits))
        tokens.append(nxt)
    t_decode = time.perf_counter() - t0
    led = engine.store.ledger
    print("tokens:", tokens)
    print("text:", detokenize(tokens))
    print(f"prefill: {len(prompt)} tok in {t_prefill:.3f}s ({len(prompt)/t_prefill:.1f} tok/s)")
    if len(tokens) > 1:
        print(f"decode: {len(tokens)-1} tok in {t_decode:.3f}s ({(len(tokens)-1)/t_decode:.1f} tok/s)")
    print(
        f"simulated ledger: compute {led.compute:.6f}s dram {led.dram_traffic:.6f}s "
        f"flash {led.flash_traffic:.6f}s hidden {led.hidden_by_prefetch:.6f}s"
    )
    engine.close()
    return 0


def cmd_bench(args) -> int:
    opts = _engine_options(args, Path(args.model))
    opts.count_accesses = args.timing
    engine = load_model(args.model, opts)
    rng = np.random.default_rng(0)
    prompt = rng.integers(0, min(256, engine.cfg.vocab_size), size=args.prompt_len).tolist()
    t0 = time.perf_counter()
    logits = engine.prefill(prompt)
    t_prefill = time.perf_counter() - t0
    nxt = int(np.argmax(logits))
    t0 = time.perf_counter()
    for _ in range(args.decode_len):
        logits = engine.decode_step(nxt)
        nxt = int(np.argmax(logits))
    t_decode = time.perf_counter() - t0
    led = engine.store.ledger
    report = {
        "schema_version": REPORT_SCHEMA,
        "tinyforge_version": __version__,
        "prompt_len": args.prompt_len,
        "decode_len": args.decode_len,
        "tiles": args.tiles,
        "threads": args.threads,
        "prefill_tok_per_s": args.prompt_len / t_prefill,
        "decode_tok_per_s": args.decode_len / t_decode,
        "ledger": {
            "compute_s": led.compute,
            "dram_traffic_s": led.dram_traffic,
            "flash_traffic_s": led.flash_traffic,
            "hidden_by_prefetch_s": led.hidden_by_prefetch,
        },
    }
    if args.timing and engine.access_counter is not None:
        report["element_accesses"] = {
            "loads": engine.access_counter.loads,
            "stores": engine.access_counter.stores,
        }
        tile = engine.tile
        h = engine.cfg.hidden_size
        report["access_model_example"] = {
            "shape": [args.prompt_len, h, h],
            "naive": count_accesses(args.prompt_len, h, h, tile).naive,
            "tiled": count_accesses(args.prompt_len, h, h, tile).tiled,
        }
    print(json.dumps(report, indent=2))
    engine.close()
    return 0


def cmd_solve_tiles(args) -> int:
    if args.arch:
        t = TILE_PRESETS[args.arch]
    else:
        if args.R is None or args.iw is None:
            raise UsageError("provide --arch or both --R and --iw")
        t = solve_tile_sizes(args.R, args.iw)
    print(f"e_p={t.e_p} h_p={t.h_p} l_p={t.l_p}")
    return 0


def cmd_inspect(args) -> int:
    cfg = None
    model_dir = Path(args.model)
    cfg_path = model_dir / "config.json"
    if not cfg_path.exists():
        raise TinyforgeError("bad-model", f"no config.json under {model_dir}")
    cfg = ModelConfig.from_json(cfg_path.read_text())
    if args.params:
        rep = model_size_report(cfg)
        print(f"embedding: {rep['embedding_bytes']/1e9:.3g} B ({rep['embedding_params']} params)")
        print(f"layers:    {rep['layers_bytes']/1e9:.3g} B ({rep['layers_params']} params)")
        print(f"lm head:   {rep['lm_head_bytes']/1e9:.3g} B ({rep['lm_head_params']} params)")
        print(f"total:     {rep['total_bytes']/1e9:.3g} B ({rep['total_params']} params)")
        print(f"embedding share: {rep['embedding_share']:.1%}; row read {rep['embedding_row_bytes']} bytes")
    if args.regions:
        # the rearrangements a decode step plans: per-layer head split/merge
        h, d, kvh = cfg.n_heads, cfg.head_dim, cfg.n_kv_heads
        split = region_for_transpose([1 * h, d], (0, 1))
        merge = region_for_transpose([h, 1, d], (1, 0, 2))
        cat = region_for_concat([[kvh, d], [kvh, d]], 0)
        unfused = split + merge + cat
        fused, ok = fuse_regions(split, merge)
        print(f"planned regions (unfused): {len(unfused)}, moves {move_count(unfused)}")
        print(f"head split+merge fused: {len(fused)} region(s), composable={ok}")
        for r in fused:
            print(" ", r)
    if args.kv:
        per_token = cfg.n_kv_heads * (2 * cfg.head_dim + 8)
        print(f"KV record: {per_token} bytes/token/layer "
              f"({cfg.n_kv_heads} kv heads x ({cfg.head_dim} int8 key + 8 param + {cfg.head_dim} fp8 value))")
        print(f"full model: {per_token * cfg.n_layers} bytes/token")
    return 0


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinyforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-model", help="write a deterministic random-weight model")
    mx = g.add_mutually_exclusive_group(required=True)
    mx.add_argument("--config", help="path to a config.json")
    mx.add_argument("--preset", choices=sorted(CONFIG_PRESETS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_model)

    q = sub.add_parser("quantize", help="quantize a model's matrices to a blob")
    q.add_argument("--model", required=True)
    q.add_argument("--bits", type=int, choices=(4, 8), default=4)
    q.add_argument("--block", type=int, default=32)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_quantize)

    def common_run_flags(sp):
        sp.add_argument("--threads", type=int, default=int(os.environ.get("TF_THREADS", "1")))
        sp.add_argument("--rates", help="comma-separated worker rate override")
        sp.add_argument("--tiles", default="arm-i8sdot",
                        help="preset name or solve:R,iw")
        sp.add_argument("--kv-dram-limit", type=int, default=None,
                        help="tokens kept in DRAM before spilling to flash (-1 = unlimited)")
        sp.add_argument("--embed-flash", choices=("on", "off"), default="off")

    r = sub.add_parser("run", help="generate text from a prompt")
    r.add_argument("--model", required=True)
    r.add_argument("--prompt", required=True)
    r.add_argument("--max-new", type=int, default=16)
    common_run_flags(r)
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="prefill/decode throughput report")
    b.add_argument("--model", required=True)
    b.add_argument("--prompt-len", type=int, choices=(64, 256, 1024), default=64)
    b.add_argument("--decode-len", type=int, default=16)
    b.add_argument("--timing", action="store_true")
    common_run_flags(b)
    b.set_defaults(fn=cmd_bench)

    s = sub.add_parser("solve-tiles", help="solve or look up GEMM tile sizes")
    s.add_argument("--R", type=int, help="register budget")
    s.add_argument("--iw", type=int, help="instruction width (l_p)")
    s.add_argument("--arch", choices=sorted(TILE_PRESETS))
    s.set_defaults(fn=cmd_solve_tiles)

    i = sub.add_parser("inspect", help="dump model facts")
    i.add_argument("--model", required=True)
    i.add_argument("--params", action="store_true")
    i.add_argument("--regions", action="store_true")
    i.add_argument("--kv", action="store_true")
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except TinyforgeError as exc:
        model_errors = {"bad-model", "bad-shape", "bad-config", "io-error"}
        print(f"error: {exc}", file=sys.stderr)
        return 3 if exc.code in model_errors else 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

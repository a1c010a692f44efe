"""Command-line entry point: ``sageattn {accuracy,calibrate,bench,gen}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runs
from .attention import AttentionInput
from .synth import DISTRIBUTIONS, SynthSpec, generate
from .tensorio import load_tensor, save_tensor

log = logging.getLogger("sageattn")


def parse_shape(text: str) -> tuple:
    try:
        shape = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected B,H,N,d") from None
    if len(shape) != 4 or min(shape) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected four positive ints B,H,N,d")
    return shape


def _add_synth_args(p, dists=DISTRIBUTIONS):
    p.add_argument("--shape", type=parse_shape, default=(2, 8, 1024, 64), help="B,H,N,d")
    p.add_argument("--dist", choices=dists, default="normal")
    p.add_argument("--bias-scale", type=float, default=10.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--sink-logit", type=float, default=8.0)
    p.add_argument("--v-bias", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--causal", action="store_true")


def _add_block_args(p):
    p.add_argument("--block-q", type=int, default=128)
    p.add_argument("--block-kv", type=int, default=64)


def _spec(args, dist=None, seed=None, shape=None) -> SynthSpec:
    return SynthSpec(dist or args.dist, shape or args.shape, args.seed if seed is None else seed,
                     args.bias_scale, args.noise_scale, args.causal, args.sink_logit, args.v_bias)


def _load_dir(path, causal=False) -> AttentionInput:
    path = Path(path)
    q, k, v = (load_tensor(path / f"{name}.npy") for name in ("q", "k", "v"))
    return AttentionInput(q, k, v, causal)


def _emit(report, out):
    if out:
        runs.write_json(report, out)
        log.info("wrote %s", out)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")


def cmd_accuracy(args):
    if args.input:
        inp = _load_dir(args.input, args.causal)
        source = {"input": str(args.input)}
    else:
        spec = _spec(args)
        inp = generate(spec)
        source = {"synthetic": {**spec.__dict__, "shape": list(spec.shape)}}
    report = runs.run_accuracy(inp, args.variant or ["all"], no_smooth=args.no_smooth,
                               dtype_sweep=args.dtype_sweep, block_q=args.block_q,
                               block_kv=args.block_kv, source=source)
    _emit(report, args.out)
    return 0 if report["sanity"]["passed"] else 1


def cmd_calibrate(args):
    if args.layer:
        layers = []
        for d in args.layer:
            inp = _load_dir(d, args.causal)
            # the batch axis holds the calibration batches
            layers.append([AttentionInput(inp.q[b:b + 1], inp.k[b:b + 1], inp.v[b:b + 1], inp.causal)
                           for b in range(inp.q.shape[0])])
        source = {"layers": [str(d) for d in args.layer]}
    else:
        if args.layers < 1 or args.batches < 1:
            raise SystemExit("calibrate needs --layers >= 1 and --batches >= 1")
        layers = []
        for i in range(args.layers):
            dist = args.dist
            if dist == "mixed":
                dist = "normal" if i % 2 == 0 else "sink"
            layers.append([generate(_spec(args, dist, args.seed + 1000 * i + b))
                           for b in range(args.batches)])
        source = {"synthetic": {"dist": args.dist, "layers": args.layers, "batches": args.batches,
                                "shape": list(args.shape), "seed": args.seed}}
    report = runs.run_calibrate(layers, args.threshold, aggregate=args.aggregate, source=source)
    _emit(report, args.out)
    return 0


def cmd_bench(args):
    report = runs.run_bench(args.shape or [(1, 2, 512, 64)], args.variant or ["all"], args.repeats,
                            seed=args.seed, distribution=args.dist, causal=args.causal,
                            block_q=args.block_q, block_kv=args.block_kv)
    _emit(report, args.out)
    return 0


def cmd_gen(args):
    inp = generate(_spec(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dtype = "<f2" if args.dtype == "f2" else "<f4"
    for name in ("q", "k", "v"):
        save_tensor(getattr(inp, name), out / f"{name}.npy", dtype)
    log.info("wrote q/k/v to %s", out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sageattn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("accuracy", help="compare kernels against the full-precision oracle")
    _add_synth_args(p)
    _add_block_args(p)
    p.add_argument("--input", help="directory with q.npy, k.npy, v.npy (overrides synthetic data)")
    p.add_argument("--variant", action="append", help="t|b|vt|vb|all; repeatable or comma-separated")
    p.add_argument("--no-smooth", action="store_true", help="also run each variant without smoothing K")
    p.add_argument("--dtype-sweep", action="store_true", help="INT8/E4M3/E5M2 grid for Q,K and P~,V")
    p.add_argument("--out")
    p.set_defaults(func=cmd_accuracy)

    p = sub.add_parser("calibrate", help="choose SAGEAttn-vB or SAGEAttn-B per layer")
    _add_synth_args(p, DISTRIBUTIONS + ("mixed",))
    p.set_defaults(shape=(1, 4, 512, 64))
    p.add_argument("--layer", action="append", help="directory with q/k/v.npy; batch axis = calibration batches")
    p.add_argument("--layers", type=int, default=4, help="synthetic layer count")
    p.add_argument("--batches", type=int, default=8, help="synthetic calibration batches per layer")
    p.add_argument("--threshold", type=float, default=runs.DEFAULT_THRESHOLD)
    p.add_argument("--aggregate", choices=("mean", "min"), default="mean")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="desk-scale timing of the emulated kernels")
    p.add_argument("--shape", type=parse_shape, action="append", help="B,H,N,d; repeatable")
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="normal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--causal", action="store_true")
    _add_block_args(p)
    p.add_argument("--variant", action="append")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write synthetic q/k/v tensors as NPY files")
    _add_synth_args(p)
    p.add_argument("--dtype", choices=("f4", "f2"), default="f4")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2

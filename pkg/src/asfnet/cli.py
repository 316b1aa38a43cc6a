"""Command-line entry point: gen, train, eval, predict, trace.

Every subcommand is deterministic given its flags; all randomness
flows from the single --seed flag.  Outputs carry a provenance header
(package version, full flag set).  Invalid flags exit nonzero with a
usage message and leave no partial output files behind.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, geom, net, oracle, propagate, sphharm, train


def _provenance(args: argparse.Namespace) -> list[str]:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return [f"asfnet version: {__version__}", f"config: {cfg}"]


def _parse_radii(spec: str) -> list[float]:
    """start:stop:step (inclusive of both ends) or comma-separated list."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError("radius range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError("radius range needs step > 0 and stop >= start")
        n = int(round((stop - start) / step)) + 1
        return [start + i * step for i in range(n)]
    return [float(p) for p in spec.split(",")]


def _arch_from_args(args: argparse.Namespace) -> net.ArchConfig:
    ablations = set(args.ablation or [])
    return net.ArchConfig(
        pooling=getattr(args, "pooling", "max"),
        input_scale=getattr(args, "input_scale", 1.0),
        use_rbf_delta="no-rbf-delta" not in ablations,
        use_surface_encoder="no-surface-encoder" not in ablations,
    )


def cmd_gen(args: argparse.Namespace) -> int:
    radii = _parse_radii(args.radii)
    oracle.gen_dataset(
        radii,
        seeds=args.seeds,
        noise_sigma=args.noise,
        out_dir=args.out,
        base_seed=args.seed,
        n_points=args.points,
        comments=_provenance(args),
    )
    n = len(radii) * args.seeds
    print(f"wrote {n} examples to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = train.TrainConfig(
        frequency=args.band,
        learning_rate0=args.lr0,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        arch=_arch_from_args(args),
    )
    log_path = args.log or f"{args.out}.log.tsv"
    state_path = args.state or f"{args.out}.state.npz"
    model, split, rows = train.train_model(
        cfg,
        args.data,
        args.out,
        log_path=log_path,
        state_path=state_path,
        resume=args.resume,
        max_epochs=args.max_epochs,
    )
    best_val = min(r[4] for r in rows) if rows else float("nan")
    print(
        f"trained band {args.band} Hz on {len(split.train)} examples; "
        f"best validation loss {best_val:.6g}; checkpoint {args.out}"
    )
    return 0


def _split_examples(data_dir, which: str, seed: int):
    examples = oracle.load_manifest(data_dir)
    if which == "all":
        return examples
    split = train.split_dataset(examples, seed)
    ids = set(getattr(split, {"val": "validation"}.get(which, which)))
    return [ex for ex in examples if ex.id in ids]


def cmd_eval(args: argparse.Namespace) -> int:
    model = net.load_model(args.model)
    examples = _split_examples(args.data, args.split, args.seed)
    if not examples:
        raise ValueError(f"split {args.split!r} is empty")
    row = train.evaluate(model, args.data, examples, args.noise, noise_seed=args.seed)
    train.write_eval_report(args.out, [row], header_lines=_provenance(args))
    print(
        f"band {row['band_hz']} Hz, {row['n_examples']} examples: "
        f"mean error {row['mean_db_error']:.3f} dB (noise {args.noise:g})"
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = net.load_model(args.model)
    cloud = geom.load_cloud(args.cloud)
    coeffs = net.forward(model, cloud) * args.norm_const
    sh = sphharm.ShCoeffs(model.frequency, coeffs)
    sphharm.save_coeffs(args.out_coeffs, sh, comments=_provenance(args))
    if args.out_map:
        thetas, phis = sphharm.default_grid()
        m = sphharm.reconstruct_map(coeffs, thetas, phis)
        sphharm.save_map(args.out_map, sphharm.LatLongMap(thetas, phis, np.abs(m.values)))
    print(f"predicted band {model.frequency} Hz coefficients -> {args.out_coeffs}")
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    scene = propagate.load_scene(args.scene)
    ir = propagate.trace(
        scene, args.rays, args.seed, max_bounces=args.bounces, bin_width=args.bin_width
    )
    propagate.save_ir(args.out, ir, header_lines=_provenance(args))
    totals = " ".join(
        f"{b}Hz={ir.band_total(b):.4g}" for b in sphharm.FREQUENCY_BANDS
    )
    print(f"traced {args.rays} rays -> {args.out} (band totals: {totals})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="asfnet",
        description="Acoustic scattering fields: dataset generation, "
        "training, evaluation, prediction, and ray tracing.",
    )
    p.add_argument("--version", action="version", version=f"asfnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a labeled sphere dataset")
    g.add_argument("--radii", default="0.5:1.0:0.05", help="start:stop:step or comma list, meters")
    g.add_argument("--seeds", type=int, default=20, help="examples per radius")
    g.add_argument("--noise", type=float, default=0.0, help="point jitter sigma, meters")
    g.add_argument("--points", type=int, default=1024, help="points per cloud")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one per-band network")
    t.add_argument("--band", type=int, required=True, choices=sphharm.FREQUENCY_BANDS)
    t.add_argument("--data", required=True, help="dataset directory with manifest.tsv")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log TSV (default: <out>.log.tsv)")
    t.add_argument("--state", help="resume sidecar (default: <out>.state.npz)")
    t.add_argument("--resume", action="store_true", help="continue from the sidecar")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--max-epochs", type=int, help="epochs to run in this invocation")
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr0", type=float, default=1e-3)
    t.add_argument(
        "--pooling",
        choices=["max", "mean"],
        default="max",
        help="global pooling over points",
    )
    t.add_argument(
        "--input-scale",
        type=float,
        default=1.0,
        help="fixed scale applied to the differential coordinates",
    )
    t.add_argument(
        "--ablation",
        action="append",
        choices=["no-rbf-delta", "no-surface-encoder"],
        help="disable a network component (repeatable)",
    )
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-band dB error on a dataset split")
    e.add_argument("--model", required=True, help="checkpoint path")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    e.add_argument("--noise", type=float, default=0.0, help="test-cloud jitter sigma, meters")
    e.add_argument("--out", required=True, help="evaluation report TSV")
    e.add_argument("--seed", type=int, default=0, help="must match the training split seed")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("predict", help="coefficients for one cloud file")
    d.add_argument("--model", required=True)
    d.add_argument("--cloud", required=True, help="plain-text x y z cloud file")
    d.add_argument("--out-coeffs", required=True, help="coefficient file output")
    d.add_argument("--out-map", help="optional lat-long CSV of the reconstruction")
    d.add_argument(
        "--norm-const", type=float, default=1.0, help="undo dataset normalization"
    )
    d.set_defaults(func=cmd_predict)

    r = sub.add_parser("trace", help="energy impulse response for a scene")
    r.add_argument("--scene", required=True, help="scene description file")
    r.add_argument("--rays", type=int, default=10000)
    r.add_argument("--bounces", type=int, default=10)
    r.add_argument("--bin-width", type=float, default=1e-3, help="IR bin width, seconds")
    r.add_argument("--out", required=True, help="impulse-response TSV")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"asfnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

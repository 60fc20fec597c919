"""Command-line interface: dataset generation, training, registration,
evaluation and runtime benchmarking.

All randomness flows from --seed through named per-component substreams, so
every subcommand is reproducible on its own. Errors are printed to stderr
with an `error:` prefix and a non-zero exit code.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__, corrnet, datagen, evalbench, latent_gmm
from .geom3d import load_cloud, save_transform


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = corrnet.TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lr-patience", type=int, default=d.lr_patience)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay)
    p.add_argument("--components", type=int, default=d.n_components)
    p.add_argument(
        "--input-mode", choices=["invariant_features", "raw_xyz"], default=d.input_mode
    )
    p.add_argument("--neighbors", type=int, default=d.neighbors)
    p.add_argument("--centroid-mode", choices=["mixture", "objective"], default=d.centroid_mode)
    p.add_argument("--no-skip-degenerate", action="store_true")


def _config_from_args(args) -> corrnet.TrainConfig:
    return corrnet.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        lr_patience=args.lr_patience,
        lr_decay=args.lr_decay,
        seed=args.seed,
        n_components=args.components,
        input_mode=args.input_mode,
        neighbors=args.neighbors,
        centroid_mode=args.centroid_mode,
        skip_degenerate=not args.no_skip_degenerate,
    )


def _log_config(args) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {resolved}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmalign",
        description="GMM-based rigid point-cloud registration toolkit",
    )
    parser.add_argument("--version", action="version", version=f"gmmalign {__version__} formats 1")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a registration dataset")
    p.add_argument("--protocol", choices=list(datagen.PROTOCOLS), required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the correspondence network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="per-epoch loss CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="register one pair of clouds")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["deepgmr", "em", "icp"], default="deepgmr")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--refine", choices=["icp"], default=None)
    p.add_argument("--refined-out", default=None)
    p.add_argument("--em-components", type=int, default=16)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate a method over a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--method", choices=["deepgmr", "em", "icp", "oracle"], default="deepgmr")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--refine", choices=["icp"], default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-rmse", type=int, default=evalbench.DEFAULT_RMSE_SAMPLES)
    p.add_argument("--tau", type=float, default=evalbench.DEFAULT_RECALL_TAU)
    p.add_argument("--em-components", type=int, default=16)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="runtime-versus-size benchmark")
    p.add_argument("--methods", default="deepgmr,icp", help="comma-separated method ids")
    p.add_argument("--sizes", default="1000,2000,3000,4000,5000")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def _make_register_fn(method, args, points_hint=None):
    """Build (source, target) -> RigidTransform for a method id."""
    if method == "deepgmr":
        if not args.checkpoint:
            raise ValueError("--method deepgmr needs --checkpoint")
        params, meta = corrnet.load_checkpoint(args.checkpoint)
        cfg = corrnet.TrainConfig(**meta["train_config"]) if "train_config" in meta else corrnet.TrainConfig()

        def register(source, target):
            transform, _ = corrnet.register_pair(params, source, target, cfg)
            return transform

        return register
    if method == "em":
        def register(source, target, _args=args):
            rng = np.random.default_rng(np.random.SeedSequence(_args.seed, spawn_key=(7,)))
            gmm = latent_gmm.em_fit(target, _args.em_components, iters=_args.iters, rng=rng)
            return latent_gmm.em_register(source, gmm, iters=_args.iters)

        return register
    if method == "icp":
        return lambda source, target: evalbench.icp_point2point(source, target, iters=args.iters)
    raise ValueError(f"unknown method {method!r}")


def cmd_gen(args) -> int:
    _log_config(args)
    ds = datagen.build_dataset(args.protocol, args.train, args.test, args.points, args.seed)
    datagen.write_dataset(ds, args.out)
    print(f"wrote {len(ds.train)} train and {len(ds.test)} test pairs to {args.out}")
    if args.protocol == "unseen":
        print(f"train families: {', '.join(ds.train_families)}")
        print(f"test families:  {', '.join(ds.test_families)}")
    return 0


def cmd_train(args) -> int:
    _log_config(args)
    ds = datagen.load_dataset(args.data)
    if not ds.train:
        raise ValueError(f"dataset at {args.data} has an empty train split")
    cfg = _config_from_args(args)
    params, history = corrnet.train(ds, cfg)
    meta = {"train_config": cfg.__dict__, "protocol": ds.protocol, "epochs_run": len(history)}
    corrnet.save_checkpoint(args.out, params, meta)
    if args.history:
        with open(args.history, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for row in history:
                w.writerow([row["epoch"], f"{row['train_loss']:.9g}", f"{row['val_loss']:.9g}", row["lr"]])
    best = min(h["val_loss"] for h in history)
    print(f"trained {len(history)} epochs; best validation loss {best:.6g}; checkpoint {args.out}")
    return 0


def cmd_register(args) -> int:
    _log_config(args)
    source = load_cloud(args.source)
    target = load_cloud(args.target)
    register = _make_register_fn(args.method, args)
    transform = register(source, target)
    save_transform(args.out, transform)
    print(f"wrote transform to {args.out}")
    if args.refine == "icp":
        refined = evalbench.refine(transform, source, target, iters=args.iters)
        out = args.refined_out or (str(args.out) + ".refined")
        save_transform(out, refined)
        print(f"wrote refined transform to {out}")
    return 0


def cmd_eval(args) -> int:
    _log_config(args)
    ds = datagen.load_dataset(args.data)
    pairs = getattr(ds, args.split)
    if not pairs:
        raise ValueError(f"split {args.split!r} of {args.data} contains no pairs")
    if args.method == "oracle":
        # injects T = T_gt; sanity mode for the metric plumbing
        truth = iter([p.transform for p in pairs])
        register = lambda source, target: next(truth)
    else:
        register = _make_register_fn(args.method, args)
        if args.refine == "icp":
            base = register
            register = lambda s, t: evalbench.refine(base(s, t), s, t, iters=args.iters)
    result = evalbench.evaluate_method(
        pairs, register, method=args.method, n_rmse=args.n_rmse, seed=args.seed
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    evalbench.write_per_pair_csv(out / "per_pair.csv", [result])
    evalbench.write_cdf_csv(out / "cdf.csv", result)
    print(
        f"{args.method}: pairs={len(pairs)} mean_rmse={result.mean_rmse:.6g} "
        f"mean_rmse_std={result.mean_rmse_std:.6g} "
        f"recall@{args.tau}={result.recall_at(args.tau):.3f}"
    )
    return 0


def cmd_bench(args) -> int:
    _log_config(args)
    sizes = [int(s) for s in str(args.sizes).split(",") if s]
    methods = {}
    for mid in str(args.methods).split(","):
        mid = mid.strip()
        if mid:
            methods[mid] = _make_register_fn(mid, args)
    rows = []
    for mid in methods:
        rows += evalbench.bench_runtime(mid, methods, sizes, repeats=args.repeats, seed=args.seed)
    evalbench.write_bench_csv(args.out, rows)
    for method, n, ms in rows:
        print(f"{method} N={n} {ms:.3f} ms")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

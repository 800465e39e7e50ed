"""Command-line interface.

Verbs: gen-data, mask, calibrate, train, eval, probe, sweep, cost.
Machine-readable results go to --out (JSON or CSV); a short human summary
goes to stdout. Set RVIT_LOG={error,info,debug} for diagnostics. Every verb
is deterministic given its flags; wall-clock timing is opt-in (--timing)
so result files rerun byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import costmodel, harness, masking, synthdata
from .model import PRESETS, ModelConfig, load_checkpoint, save_checkpoint
from .patches import partition

log = logging.getLogger("rvit")


def _setup_logging() -> None:
    level = os.environ.get("RVIT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise SystemExit(f"RVIT_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        print(text)


# -- verbs ----------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = synthdata.SceneSpec(
        height=args.image,
        width=args.image,
        channels=args.channels,
        corr_length=getattr(args, "lambda"),
        n_classes=args.classes,
        seed=args.seed,
    )
    ds = synthdata.generate_dataset(spec, args.count)
    synthdata.write_dataset(ds, args.out, args.task)
    print(
        f"wrote {args.count} {args.task} samples "
        f"({args.image}x{args.image}x{args.channels}, corr length "
        f"{getattr(args, 'lambda'):g}) to {args.out}"
    )
    return 0


def _grid_hw_for(n: int, args) -> tuple[int, int]:
    if args.grid_h and args.grid_w:
        return args.grid_h, args.grid_w
    root = math.isqrt(n)
    return (root, root) if root * root == n else (1, n)


def cmd_mask(args) -> int:
    patch = args.patch
    if args.data:
        ds = synthdata.read_dataset(args.data)
        image = ds.images[args.index].astype(np.float64)
        grid = partition(image, patch)
        n = grid.n_patches
        key = ds.keys[args.index]
        grid_hw = (grid.grid_h, grid.grid_w)
    else:
        if args.n is None:
            raise SystemExit("mask: need --data or --n to know the token count")
        n = args.n
        key = args.key
        grid_hw = _grid_hw_for(n, args)
    if args.strategy == "ms1":
        plan = masking.plan_uniform_random(key, args.ratio, n)
    elif args.strategy == "ms2":
        if not args.data:
            raise SystemExit("mask: ms2 needs --data (similarity is image-based)")
        plan = masking.plan_diversity(masking.similarity_matrix(grid), args.ratio)
    else:
        if not args.data:
            raise SystemExit("mask: ms3 needs --data (similarity is image-based)")
        if args.tau is None:
            raise SystemExit("mask: ms3 needs --tau")
        plan = masking.plan_thresholded(masking.similarity_matrix(grid), args.tau)
    _write_or_print(plan.to_json(), args.out)
    if args.viz:
        viz_path = Path(args.out).with_suffix(".pgm") if args.out else Path("mask.pgm")
        viz_path.write_bytes(masking.mask_to_pgm(plan, grid_hw, patch))
        print(f"mask image: {viz_path}")
    if args.out:
        print(
            f"{args.strategy} keeps {plan.k}/{n} patches "
            f"(retention {plan.k / n:.3f}) -> {args.out}"
        )
    return 0


def cmd_calibrate(args) -> int:
    ds = synthdata.read_dataset(args.data)
    taus = [float(t) for t in args.taus.split(",")]
    grids = [partition(img.astype(np.float64), args.patch) for img in ds.images]
    rows = masking.calibrate_threshold(grids, taus)
    lines = ["tau,mean_retention,n_samples"]
    lines += [f"{t:g},{r:.6f},{n}" for t, r, n in rows]
    _write_or_print("\n".join(lines) + "\n", args.out)
    if args.out:
        for t, r, n in rows:
            print(f"tau={t:g}: mean retention {r:.3f} over {n} samples")
    return 0


def _experiment_from_args(args, ds: synthdata.Dataset) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig()
    if args.config:
        cfg = replace(cfg, **json.loads(Path(args.config).read_text()))
    overrides = {
        "task": args.task,
        "strategy": args.strategy,
        "train_ratio": args.ratio,
        "tau": args.tau,
        "patch_size": args.patch,
        "epochs": args.epochs,
        "batch_size": args.batch,
        "learning_rate": args.lr,
        "seed": args.seed,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return replace(
        cfg,
        image_size=ds.image_hw[0],
        channels=ds.channels,
        n_classes=ds.n_classes,
        corr_length=ds.corr_length,
    )


def cmd_train(args) -> int:
    train_ds = synthdata.read_dataset(args.data)
    cfg = _experiment_from_args(args, train_ds)
    model = harness.train_model(cfg, train_ds)
    save_checkpoint(args.out, model)
    print(f"trained {cfg.task} model ({cfg.strategy}, r={cfg.train_ratio:g}) -> {args.out}")
    if args.eval_data:
        eval_ds = synthdata.read_dataset(args.eval_data)
        name, value = harness.evaluate_model(model, eval_ds)
        print(f"full-input {name}: {value:.4f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    ds = synthdata.read_dataset(args.data)
    name, value = harness.evaluate_model(
        model, ds, args.strategy or "ms1", args.ratio if args.ratio is not None else 1.0, args.tau
    )
    cfg = harness.ExperimentConfig(
        task=model.task,
        strategy=args.strategy or "ms1",
        train_ratio=float("nan"),
        eval_ratio=args.ratio if args.ratio is not None else 1.0,
        tau=args.tau,
        patch_size=model.config.patch_size,
        corr_length=ds.corr_length,
        seed=args.seed or 0,
        image_size=ds.image_hw[0],
        channels=ds.channels,
        n_classes=ds.n_classes,
    )
    report = costmodel.flops(
        model.config, ds.image_hw, cfg.eval_ratio, ds.channels, ds.n_classes, model.task
    )
    row = harness.result_row(
        cfg, name, value, gflops=report.gflops, peak_mem_mb=report.peak_memory_mb
    )
    _write_or_print(harness.rows_to_csv([row]), args.out)
    if args.out:
        print(f"{name} at retention {cfg.eval_ratio:g}: {value:.4f}")
    return 0


def cmd_probe(args) -> int:
    model = load_checkpoint(args.ckpt)
    train_ds = synthdata.read_dataset(args.data)
    eval_ds = synthdata.read_dataset(args.eval_data)
    name, value = harness.linear_probe(
        model,
        train_ds,
        eval_ds,
        epochs=args.epochs if args.epochs is not None else 60,
        learning_rate=args.lr if args.lr is not None else 0.5,
        seed=args.seed or 0,
    )
    print(f"linear probe {name}: {value:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps({"metric": name, "value": value}))
    return 0


def cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    cells = harness.expand_grid(grid)
    rows = harness.run_sweep(cells, jobs=args.jobs, timing=args.timing)
    _write_or_print(harness.rows_to_csv(rows), args.out)
    for agg in harness.aggregate_rows(rows):
        print(
            f"{agg['task']} {agg['strategy']} train_r={agg['train_ratio']} "
            f"eval_r={agg['eval_ratio']} P={agg['patch_size']}: "
            f"{agg['metric_name']} {agg['mean']:.4f} +/- {agg['std']:.4f} (n={agg['n']})"
        )
    return 0


def cmd_cost(args) -> int:
    if args.model:
        config = PRESETS[args.model]
        if args.patch:
            config = replace(config, patch_size=args.patch)
    else:
        config = ModelConfig(
            width=args.dim,
            depth=args.depth,
            heads=args.heads,
            mlp_ratio=args.mlp_ratio,
            patch_size=args.patch or 16,
        )
    payload = costmodel.cost_json(
        config,
        (args.image, args.image),
        args.ratio,
        in_channels=args.channels,
        n_classes=args.classes,
        task=args.task,
    )
    _write_or_print(payload, args.out)
    if args.out:
        ratios = json.loads(payload)["ratios"]
        print(
            f"GFLOPs ratio {ratios['gflops_ratio']:.2f}x, "
            f"memory ratio {ratios['memory_ratio']:.2f}x at retention {args.ratio:g}"
        )
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvit",
        description="Redundancy-aware vision transformer toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--image", type=int, default=64)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--lambda", type=float, default=16.0, dest="lambda")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=["classification", "segmentation"], default="classification")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("mask", help="compute a retention plan")
    p.add_argument("--strategy", choices=list(masking.STRATEGIES), required=True)
    p.add_argument("--key", default="sample")
    p.add_argument("--n", type=int, help="token count (without --data)")
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--tau", type=float)
    p.add_argument("--data", help="dataset directory for image-based strategies")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--grid-h", type=int)
    p.add_argument("--grid-w", type=int)
    p.add_argument("--out")
    p.add_argument("--viz", action="store_true", help="also write a PGM mask image")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("calibrate", help="threshold-to-retention table")
    p.add_argument("--data", required=True)
    p.add_argument("--taus", default="0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.95")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of experiment settings")
    p.add_argument("--task", choices=["classification", "segmentation"])
    p.add_argument("--strategy", choices=list(masking.STRATEGIES))
    p.add_argument("--ratio", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--patch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint at a retention ratio")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=list(masking.STRATEGIES))
    p.add_argument("--ratio", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="linear-probe a frozen checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    p.add_argument("--grid", required=True)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the wall_s column")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("cost", help="analytic FLOPs/memory report")
    p.add_argument("--model", choices=sorted(PRESETS))
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--heads", type=int, default=12)
    p.add_argument("--mlp-ratio", type=float, default=4.0)
    p.add_argument("--patch", type=int)
    p.add_argument("--image", type=int, default=224)
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--classes", type=int, default=1000)
    p.add_argument("--task", choices=["classification", "segmentation"], default="classification")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, harness.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

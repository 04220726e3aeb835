"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from ..errors import ConfigError, DataError, OccFlowError
from ..scene_kit import save_scenes, load_scenes
from .config import apply_overrides, load_config, parse_config_text, preset

log = logging.getLogger("occflow")


def _recipe_from_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read recipe {path}: {exc}") from exc
    entries = parse_config_text(text)
    # bare keys are recipe fields
    entries = {k if "." in k or k == "profile" else f"recipe.{k}": v for k, v in entries.items()}
    cfg = apply_overrides(preset(str(entries.get("profile", "default"))), entries)
    return cfg.recipe


def _load_data(path):
    try:
        return load_scenes(path)
    except OSError as exc:
        raise DataError(f"cannot read scenes {path}: {exc}") from exc


def cmd_generate(args):
    from .data import generate_scenes

    recipe = _recipe_from_file(args.recipe) if args.recipe else preset("default").recipe
    scenes = generate_scenes(recipe, args.count, seed_offset=args.seed_offset, workers=args.workers)
    save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")


def cmd_train(args):
    from .train import train

    cfg = load_config(args.config)
    scenes = _load_data(args.data)
    val = _load_data(args.val) if args.val else None
    res = train(cfg, scenes, val, out_dir=args.out)
    last = res.steps[-1] if res.steps else {}
    print(json.dumps({"steps": len(res.steps), "final": last, "best_val_fg_auc": res.best_fg_auc}))


def cmd_eval(args):
    from .train import METRIC_COLUMNS, evaluate_checkpoint, metric_rows, write_csv
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(args.ckpt)
    report = evaluate_checkpoint(ckpt, _load_data(args.data))
    if args.out:
        write_csv(args.out, METRIC_COLUMNS, metric_rows(report, args.split, ckpt.config.fusion.variant))
    print(json.dumps({"variant": ckpt.config.fusion.variant, **report.headline()}))


def cmd_ablate(args):
    from .train import ablate, markdown_table

    cfg = load_config(args.config)
    train_scenes = _load_data(args.data) if args.data else None
    val_scenes = _load_data(args.val) if args.val else None
    variants = tuple(args.variants.split(","))
    header, rows, _ = ablate(cfg, args.out, train_scenes, val_scenes, variants=variants)
    print(markdown_table(header, rows), end="")


def cmd_plot(args):
    from .plotting import predict_and_plot

    scenes = _load_data(args.data)
    if args.limit:
        scenes = scenes[: args.limit]
    written = predict_and_plot(args.ckpt, scenes, args.out)
    print(f"wrote {len(written)} images to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="occflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic scenes as JSONL")
    g.add_argument("--recipe", help="recipe file (key = value)")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed-offset", type=int, default=0)
    g.add_argument("--workers", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="metric CSV path")
    e.add_argument("--split", default="eval")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train fused and vgg_only variants and compare")
    a.add_argument("--config")
    a.add_argument("--data")
    a.add_argument("--val")
    a.add_argument("--out", default="ablation")
    a.add_argument("--variants", default="vgg_only,fused")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="render prediction overlays")
    pl.add_argument("--ckpt", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--limit", type=int, default=0)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", UserWarning)
    try:
        args.func(args)
    except OccFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Overfit a handful of synthetic scenes and report training-set metrics.

    python scripts/run_overfit.py --config configs/overfit.cfg --out runs/overfit
"""
import argparse
import json
import time
import warnings

from occflow.harness.config import load_config
from occflow.harness.data import encode_scenes, generate_scenes
from occflow.harness.train import METRIC_COLUMNS, evaluate_items, metric_rows, train, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/overfit.cfg")
    ap.add_argument("--out", default=None, help="run directory for CSV logs and checkpoints")
    args = ap.parse_args()
    warnings.simplefilter("ignore", UserWarning)

    cfg = load_config(args.config)
    items = encode_scenes(generate_scenes(cfg.recipe, cfg.data.num_train), cfg)
    start = time.perf_counter()
    res = train(cfg, out_dir=args.out, train_items=items)
    report = evaluate_items(res.model, items, cfg)
    if args.out:
        write_csv(f"{args.out}/train_metrics.csv", METRIC_COLUMNS, metric_rows(report, "train", cfg.fusion.variant))
    summary = {"steps": len(res.steps), "final_loss": res.steps[-1]["total"], "seconds": round(time.perf_counter() - start, 1)}
    summary.update({k: round(v, 4) for k, v in report.headline().items()})
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()

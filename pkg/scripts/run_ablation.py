"""Train fused and vgg_only variants on the same split and print the comparison table.

    python scripts/run_ablation.py --config configs/ablation.cfg --out runs/ablation
"""
import argparse
import warnings

from occflow.harness.config import load_config
from occflow.harness.train import ablate, markdown_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/ablation.cfg")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    warnings.simplefilter("ignore", UserWarning)

    cfg = load_config(args.config)
    header, rows, _ = ablate(cfg, args.out)
    print(markdown_table(header, rows), end="")
    print(f"\nwritten to {args.out}/ablation.csv, ablation.md and metrics.csv")


if __name__ == "__main__":
    main()

"""Print every intermediate tensor shape of one forward pass.

    python scripts/shape_ledger.py            # full-size defaults, B=2
    python scripts/shape_ledger.py --micro    # 64 x 64 grid
"""
import argparse
import time
import warnings

import torch

from occflow.harness.config import ExperimentConfig, micro_config
from occflow.harness.data import batches, encode_scenes, generate_scenes
from occflow.harness.train import build_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--micro", action="store_true")
    ap.add_argument("--batch", type=int, default=2)
    args = ap.parse_args()

    warnings.simplefilter("ignore", UserWarning)
    cfg = micro_config() if args.micro else ExperimentConfig()
    torch.manual_seed(cfg.train.seed)
    torch.set_num_threads(1)
    items = encode_scenes(generate_scenes(cfg.recipe, args.batch), cfg)
    batch = next(batches(items, args.batch))
    model = build_model(cfg).eval()
    start = time.perf_counter()
    with torch.no_grad():
        pred = model(batch["raster"], batch["vectors"], batch["vectors_valid"], keep_features=True)
    print(f"{'input raster':>14}  {list(batch['raster'].shape)}")
    print(f"{'input vectors':>14}  {list(batch['vectors'].shape)}")
    for name, t in pred.features.items():
        print(f"{name:>14}  {list(t.shape)}")
    c5 = pred.features["C5"]
    print(f"{'query tokens':>14}  {c5.shape[2] * c5.shape[3]}")
    print(f"{'flow':>14}  {list(pred.flow.shape)}")
    print(f"forward took {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()

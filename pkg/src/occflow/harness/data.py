"""Scene encoding into model inputs/targets and deterministic batching."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import torch

from ..raster_gt import rasterize_history, render_targets
from ..scene_kit import generate_scene, transform_to_sdc_frame
from ..vectorizer import vectorize_scene

TARGET_KEYS = ("observed", "occluded", "flow", "flow_valid", "current")
INPUT_KEYS = ("raster", "vectors", "vectors_valid")


def encode_scene(scene, cfg) -> dict:
    """World-frame scene -> numpy inputs and targets in the SDC frame."""
    local = transform_to_sdc_frame(scene)
    vs = vectorize_scene(local, cfg.vectors)
    t = render_targets(local, cfg.grid)
    return {
        "raster": rasterize_history(local, cfg.grid),
        "vectors": vs.rows,
        "vectors_valid": vs.rows_valid,
        "observed": t.observed,
        "occluded": t.occluded,
        "flow": t.flow,
        "flow_valid": t.flow_valid,
        "current": t.current,
    }


def _encode_one(args):
    scene, cfg = args
    return encode_scene(scene, cfg)


def encode_scenes(scenes, cfg, workers: int = 0) -> list[dict]:
    # executor.map preserves input order, so the result is worker-count independent
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_encode_one, [(s, cfg) for s in scenes]))
    return [encode_scene(s, cfg) for s in scenes]


def generate_scenes(recipe, count: int, seed_offset: int = 0, workers: int = 0):
    recipes = [replace(recipe, rng_seed=recipe.rng_seed + seed_offset + i) for i in range(count)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(generate_scene, recipes))
    return [generate_scene(r) for r in recipes]


def collate(items: list[dict], dtype=torch.float32) -> dict:
    return {k: torch.from_numpy(np.stack([it[k] for it in items])).to(dtype) for k in items[0]}


def batches(items: list[dict], batch_size: int, order=None, dtype=torch.float32):
    order = np.arange(len(items)) if order is None else order
    for start in range(0, len(order), batch_size):
        yield collate([items[i] for i in order[start : start + batch_size]], dtype)

"""Per-waypoint PNG overlays of predicted occupancy and flow."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from ..metrics import prediction_arrays
from ..raster_gt import save_ofgrid
from ..scene_kit import NUM_WAYPOINTS
from .checkpoint import Checkpoint, load_checkpoint
from .data import batches, encode_scenes

MAP_GRAY = 70
OBSERVED_RGB = np.array([255, 40, 40], dtype=np.float64)
OCCLUDED_RGB = np.array([40, 120, 255], dtype=np.float64)
ARROW_RGB = (255, 220, 0)
ARROW_THRESHOLD = 0.5


def render_waypoint(map_layers, prob_observed, prob_occluded, flow, scale=2, arrow_stride=None):
    """RGB image: map in gray, observed in red, occluded in blue, flow arrows in yellow.

    Arrows run from a cell's backward-flow source to the cell and are drawn only
    where the combined occupancy probability exceeds 0.5.
    """
    H, W = prob_observed.shape
    base = np.full((H, W, 3), 0.0)
    base[np.asarray(map_layers).max(axis=0) > 0] = MAP_GRAY
    po = np.clip(prob_observed, 0, 1)[..., None]
    pc = np.clip(prob_occluded, 0, 1)[..., None]
    rgb = base * (1 - po) + OBSERVED_RGB * po
    rgb = rgb * (1 - pc) + OCCLUDED_RGB * pc
    img = Image.fromarray(np.rint(rgb).astype(np.uint8), "RGB").resize((W * scale, H * scale), Image.NEAREST)

    stride = arrow_stride or max(H // 32, 1)
    occ = np.clip(prob_observed + prob_occluded, 0, 1)
    draw = ImageDraw.Draw(img)
    for r in range(stride // 2, H, stride):
        for c in range(stride // 2, W, stride):
            if occ[r, c] <= ARROW_THRESHOLD:
                continue
            dx, dy = flow[r, c]
            tip = ((c + 0.5) * scale, (r + 0.5) * scale)
            tail = ((c + 0.5 + dx) * scale, (r + 0.5 + dy) * scale)
            draw.line([tail, tip], fill=ARROW_RGB, width=1)
            draw.point([tip], fill=ARROW_RGB)
    return img


def summary_image(frames):
    w, h = frames[0].size
    sheet = Image.new("RGB", (4 * (w // 2), 2 * (h // 2)))
    for i, fr in enumerate(frames):
        sheet.paste(fr.resize((w // 2, h // 2), Image.NEAREST), ((i % 4) * (w // 2), (i // 4) * (h // 2)))
    return sheet


def predict_and_plot(ckpt, scenes, out_dir, expected=None) -> list[Path]:
    from .train import model_from_checkpoint

    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt, expected)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model_from_checkpoint(ckpt)
    items = encode_scenes(scenes, ckpt.config)
    t_hist = ckpt.config.recipe.t_hist
    written = []
    with torch.no_grad():
        for scene, item, batch in zip(scenes, items, batches(items, 1)):
            pred = model(batch["raster"], batch["vectors"], batch["vectors_valid"])
            arrs = prediction_arrays(pred)
            stem = scene.scene_id or "scene"
            logits = torch.stack([pred.logits_observed[0], pred.logits_occluded[0]], dim=1).numpy()
            save_ofgrid(out_dir / f"{stem}_logits.ofgrid", logits, layout="waypoint,field(observed,occluded),row,col", kind="logits")
            probs = np.stack([arrs["prob_observed"][0], arrs["prob_occluded"][0]], axis=1)
            save_ofgrid(out_dir / f"{stem}_probs.ofgrid", probs, layout="waypoint,field(observed,occluded),row,col", kind="probs")
            save_ofgrid(out_dir / f"{stem}_flow.ofgrid", arrs["flow"][0], layout="waypoint,row,col,(dx,dy)", kind="flow")
            frames = []
            for k in range(NUM_WAYPOINTS):
                img = render_waypoint(
                    item["raster"][t_hist:], arrs["prob_observed"][0, k], arrs["prob_occluded"][0, k], arrs["flow"][0, k]
                )
                path = out_dir / f"{stem}_wp{k + 1}.png"
                img.save(path, format="PNG")
                frames.append(img)
                written.append(path)
            path = out_dir / f"{stem}_summary.png"
            summary_image(frames).save(path, format="PNG")
            written.append(path)
    return written

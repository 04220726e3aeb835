"""Occupancy and flow metrics: PR-AUC, Soft IoU, EPE and flow-grounded occupancy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricDomainError, ShapeError
from .scene_kit import NUM_WAYPOINTS

NUM_THRESHOLDS = 100
METRIC_NAMES = (
    "observed_auc",
    "observed_soft_iou",
    "occluded_auc",
    "occluded_soft_iou",
    "fg_auc",
    "fg_soft_iou",
    "epe",
)
TABLE_COLUMNS = (
    "Observed AUC",
    "Observed Soft IoU",
    "Occluded AUC",
    "Occluded Soft IoU",
    "Flow-Grounded AUC",
    "Flow-Grounded Soft IoU",
    "EPE",
)


def _check_pair(p, g):
    p = np.asarray(p, dtype=np.float64).ravel()
    g = np.asarray(g, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise ShapeError(f"prediction/ground-truth sizes differ: {p.size} vs {g.size}")
    if p.size and (np.isnan(p).any() or p.min() < 0 or p.max() > 1):
        raise MetricDomainError("predictions must lie in [0, 1]")
    if g.size and not np.all((g == 0) | (g == 1)):
        raise MetricDomainError("ground truth must be binary")
    return p, g


def soft_iou(p, g) -> float:
    p, g = _check_pair(p, g)
    inter = float(np.dot(p, g))
    denom = float(p.sum()) + float(g.sum()) - inter
    return inter / denom if denom > 0 else 0.0


def pr_curve(p, g, num_thresholds=NUM_THRESHOLDS):
    """Precision and recall at ``num_thresholds`` linear thresholds; a cell is positive iff p > t."""
    p, g = _check_pair(p, g)
    # i / (n - 1) rounds each threshold correctly, unlike i * (1 / (n - 1))
    thresholds = np.arange(num_thresholds) / (num_thresholds - 1)
    pos = np.sort(p[g == 1])
    allp = np.sort(p)
    n_pos = pos.size
    tp = n_pos - np.searchsorted(pos, thresholds, side="right")
    pp = allp.size - np.searchsorted(allp, thresholds, side="right")
    precision = np.where(pp > 0, tp / np.maximum(pp, 1), 1.0)
    recall = tp / n_pos if n_pos else np.zeros_like(thresholds)
    return thresholds, precision, recall


def pr_auc(p, g, num_thresholds=NUM_THRESHOLDS) -> float:
    """Area under the PR curve by trapezoids over recall; 0 when ``g`` has no positives."""
    _, precision, recall = pr_curve(p, g, num_thresholds)
    if not np.any(np.asarray(g) == 1):
        return 0.0
    return float(np.sum((recall[:-1] - recall[1:]) * (precision[:-1] + precision[1:]) / 2.0))


def epe(flow, gt_flow, flow_valid) -> float:
    flow = np.asarray(flow, dtype=np.float64)
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    if flow.shape != gt_flow.shape or flow.shape[:-1] != np.shape(flow_valid):
        raise ShapeError("epe: flow, gt_flow and flow_valid shapes disagree")
    mask = np.asarray(flow_valid) > 0
    if not mask.any():
        return 0.0
    err = np.linalg.norm(flow - gt_flow, axis=-1)
    return float(err[mask].mean())


def warp_occupancy(prev_occ, flow_k):
    """Bilinearly sample ``prev_occ`` at ``cell + flow``; flow is (dx cols, dy rows), zero outside."""
    prev = np.asarray(prev_occ, dtype=np.float64)
    flow = np.asarray(flow_k, dtype=np.float64)
    H, W = prev.shape
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    sr = rows + flow[..., 1]
    sc = cols + flow[..., 0]
    r0 = np.floor(sr)
    c0 = np.floor(sc)
    fr = sr - r0
    fc = sc - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = np.zeros_like(prev)
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            inside = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            w = wr * wc
            vals = np.zeros_like(prev)
            vals[inside] = prev[rr[inside], cc[inside]]
            out += np.where(w != 0, w * vals, 0.0)
    return out


def _np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def prediction_arrays(pred) -> dict:
    """Numpy float64 probabilities and flow from a PredictionOutput or a dict of arrays."""
    if isinstance(pred, dict):
        return {k: _np(pred[k]) for k in ("prob_observed", "prob_occluded", "flow")}
    return {
        "prob_observed": _np(pred.prob_observed),
        "prob_occluded": _np(pred.prob_occluded),
        "flow": _np(pred.flow),
    }


def joint_occupancy(targets, k):
    """GT observed+occluded occupancy at waypoint k, ``[B, H, W]``; k = 0 is the current step."""
    if k == 0:
        return np.clip(_np(targets["current"]), 0.0, 1.0)
    return np.clip(_np(targets["observed"])[:, k - 1] + _np(targets["occluded"])[:, k - 1], 0.0, 1.0)


def flow_grounded(pred, targets, k):
    """Previous GT occupancy warped by predicted flow, gated by predicted occupancy."""
    if not 1 <= k <= NUM_WAYPOINTS:
        raise ValueError(f"waypoint k must lie in [1, {NUM_WAYPOINTS}], got {k}")
    arrs = prediction_arrays(pred)
    prev = joint_occupancy(targets, k - 1)
    flow = arrs["flow"][:, k - 1]
    warped = np.stack([warp_occupancy(prev[b], flow[b]) for b in range(prev.shape[0])])
    occ = np.clip(arrs["prob_observed"][:, k - 1] + arrs["prob_occluded"][:, k - 1], 0.0, 1.0)
    return warped * occ


@dataclass
class MetricReport:
    observed_auc: float
    observed_soft_iou: float
    occluded_auc: float
    occluded_soft_iou: float
    fg_auc: float
    fg_soft_iou: float
    epe: float
    per_waypoint: dict = field(default_factory=dict)

    def headline(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def epe_m(self, spec) -> float:
        return self.epe / spec.pixels_per_meter


def evaluate(pred, targets, spec=None, num_thresholds=NUM_THRESHOLDS) -> MetricReport:
    """Per-waypoint metrics over all batch items, averaged uniformly over waypoints.

    ``pred`` and ``targets`` may be single batches or lists of batches.
    """
    if isinstance(targets, (list, tuple)):
        preds = [prediction_arrays(p) for p in pred]
        arrs = {k: np.concatenate([p[k] for p in preds]) for k in preds[0]}
        targets = {k: np.concatenate([_np(t[k]) for t in targets]) for k in ("observed", "occluded", "flow", "flow_valid", "current")}
    else:
        arrs = prediction_arrays(pred)
    obs, occ = _np(targets["observed"]), _np(targets["occluded"])
    gt_flow, flow_valid = _np(targets["flow"]), _np(targets["flow_valid"])

    per = {name: [] for name in METRIC_NAMES}
    for k in range(1, NUM_WAYPOINTS + 1):
        i = k - 1
        per["observed_auc"].append(pr_auc(arrs["prob_observed"][:, i], obs[:, i], num_thresholds))
        per["observed_soft_iou"].append(soft_iou(arrs["prob_observed"][:, i], obs[:, i]))
        per["occluded_auc"].append(pr_auc(arrs["prob_occluded"][:, i], occ[:, i], num_thresholds))
        per["occluded_soft_iou"].append(soft_iou(arrs["prob_occluded"][:, i], occ[:, i]))
        grounded = flow_grounded(arrs, targets, k)
        gt_joint = joint_occupancy(targets, k)
        per["fg_auc"].append(pr_auc(grounded, gt_joint, num_thresholds))
        per["fg_soft_iou"].append(soft_iou(grounded, gt_joint))
        per["epe"].append(epe(arrs["flow"][:, i], gt_flow[:, i], flow_valid[:, i]))
    headline = {name: float(np.mean(vals)) for name, vals in per.items()}
    return MetricReport(**headline, per_waypoint=per)

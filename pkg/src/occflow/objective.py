"""Weighted occupancy cross-entropy plus flow regression loss."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

FLOW_MASKING = ("gt_occupied", "all_cells")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1000.0
    beta: float = 1000.0
    gamma: float = 1.0
    flow_loss_masking: str = "gt_occupied"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss coefficients must be >= 0")
        if self.flow_loss_masking not in FLOW_MASKING:
            raise ConfigError(f"flow_loss_masking must be one of {FLOW_MASKING}")


@dataclass
class LossBreakdown:
    l_obs: torch.Tensor
    l_occ: torch.Tensor
    l_flow: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("l_obs", "l_occ", "l_flow", "total")}


def _check(a, b, what):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{what}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def occupancy_ce(logits, target):
    """Mean binary cross-entropy on logits (log-sum-exp stable form)."""
    _check(logits, target, "occupancy_ce")
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype), reduction="mean")


def flow_l2(flow, gt_flow, flow_valid=None):
    """Mean squared end-point error over ``flow_valid`` cells; all cells if ``flow_valid`` is None."""
    _check(flow, gt_flow, "flow_l2")
    sq = ((flow - gt_flow.to(flow.dtype)) ** 2).sum(dim=-1)
    if flow_valid is None:
        return sq.mean()
    _check(sq, flow_valid, "flow_l2 mask")
    mask = flow_valid.to(sq.dtype)
    count = mask.sum()
    return (sq * mask).sum() / count.clamp(min=1.0)


def total_loss(pred, targets, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    l_obs = occupancy_ce(pred.logits_observed, targets["observed"])
    l_occ = occupancy_ce(pred.logits_occluded, targets["occluded"])
    mask = targets["flow_valid"] if cfg.flow_loss_masking == "gt_occupied" else None
    l_flow = flow_l2(pred.flow, targets["flow"], mask)
    total = cfg.alpha * l_obs + cfg.beta * l_occ + cfg.gamma * l_flow
    return LossBreakdown(l_obs, l_occ, l_flow, total)

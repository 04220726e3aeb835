"""Raster (VGG-16 layout) and vector (VectorNet) encoders."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

MASK_FILL = -1e9


@dataclass(frozen=True)
class BackboneConfig:
    grid_size: int = 256
    in_channels: int = 14
    vgg_widths: tuple = (64, 128, 256, 512, 512)
    vgg_depths: tuple = (2, 2, 3, 3, 3)
    hidden_dim: int = 512
    vector_dim: int = 128
    local_layers: int = 3
    # geometry columns fed to the local graph; the id column only drives grouping
    vector_features: int = 8

    def __post_init__(self):
        if self.hidden_dim != 4 * self.vector_dim:
            raise ShapeError("hidden_dim must be 4 x vector_dim")
        if self.grid_size % 16:
            raise ShapeError("grid_size must be divisible by 16")
        if self.vector_dim % 2:
            raise ShapeError("vector_dim must be even")


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def masked_attention(q, k, v, key_valid):
    """Scaled dot-product attention over ``[..., L, d]`` tensors.

    ``key_valid`` is ``[B, N]`` and broadcasts over heads. Rows with no valid
    key return zeros; masked keys get exactly zero weight.
    """
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    mask = key_valid.bool()
    while mask.dim() < scores.dim():
        mask = mask.unsqueeze(1)
    scores = scores.masked_fill(~mask, MASK_FILL)
    weights = torch.softmax(scores, dim=-1)
    out = weights @ v
    any_valid = mask.any(dim=-1, keepdim=True).to(out.dtype)
    return out * any_valid


class VGGEncoder(nn.Module):
    """VGG-16 configuration-D conv stages with 1x1 lateral projections.

    Outputs the pre-pool feature of every stage projected to ``hidden_dim``,
    so the strides are 1, 2, 4, 8, 16.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        stages = []
        c_in = config.in_channels
        for width, depth in zip(config.vgg_widths, config.vgg_depths):
            layers = []
            for _ in range(depth):
                layers += [nn.Conv2d(c_in, width, 3, padding=1), nn.ReLU(inplace=True)]
                c_in = width
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        self.laterals = nn.ModuleList(nn.Conv2d(w, config.hidden_dim, 1) for w in config.vgg_widths)
        init_weights(self)

    def forward(self, x):
        g = self.config.grid_size
        if x.dim() != 4 or x.shape[1] != self.config.in_channels or x.shape[2:] != (g, g):
            raise ShapeError(
                f"raster must be [B, {self.config.in_channels}, {g}, {g}], got {list(x.shape)}"
            )
        feats = []
        for i, (stage, lateral) in enumerate(zip(self.stages, self.laterals)):
            if i:
                x = F.max_pool2d(x, 2)
            x = stage(x)
            feats.append(lateral(x))
        return feats


class MLP(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.linear = nn.Linear(c_in, c_out)
        self.norm = nn.LayerNorm(c_out)

    def forward(self, x):
        return F.relu(self.norm(self.linear(x)))


def _element_index(ids, valid, n_max):
    """Flat scatter index ``b * n_max + id``; invalid rows go to a trailing dump slot."""
    B, R = ids.shape
    offsets = torch.arange(B, device=ids.device).unsqueeze(1) * n_max
    dump = torch.full_like(ids, B * n_max)
    return torch.where(valid, ids + offsets, dump).reshape(-1)


def _segment_max(x, index, n_slots):
    """Max of rows of ``x`` [M, C] sharing ``index``; empty slots are zero."""
    out = x.new_zeros(n_slots, x.shape[1])
    return out.scatter_reduce(0, index.unsqueeze(1).expand_as(x), x, reduce="amax", include_self=False)


class LocalGraph(nn.Module):
    def __init__(self, c_in, width, layers):
        super().__init__()
        half = width // 2
        self.layers = nn.ModuleList(MLP(c_in if i == 0 else width, half) for i in range(layers))

    def forward(self, x, index, n_slots):
        for layer in self.layers:
            h = layer(x)
            pooled = _segment_max(h, index, n_slots)
            x = torch.cat([h, pooled[index]], dim=-1)
        return _segment_max(x, index, n_slots)


class GlobalGraph(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)

    def forward(self, x, valid):
        return masked_attention(self.q(x), self.k(x), self.v(x), valid)


class VectorNetEncoder(nn.Module):
    """Local graph per element, one global attention layer, and a x4 expansion."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.local = LocalGraph(config.vector_features, config.vector_dim, config.local_layers)
        self.global_graph = GlobalGraph(config.vector_dim)
        self.expand = MLP(config.vector_dim, config.hidden_dim)
        init_weights(self)

    def forward(self, vectors, valid, n_max=None):
        """``vectors`` [B, R, 9], ``valid`` [B, R] -> (V [B, hidden, N], element mask [B, N])."""
        B, R, _ = vectors.shape
        valid = valid > 0
        ids = vectors[..., 8].round().long()
        if n_max is None:
            n_max = int(ids[valid].max().item()) + 1 if valid.any() else 1
        index = _element_index(ids, valid, n_max)
        n_slots = B * n_max + 1
        x = vectors[..., : self.config.vector_features] * valid.unsqueeze(-1).to(vectors.dtype)
        x = x.reshape(B * R, -1)

        elements = self.local(x, index, n_slots)[:-1].reshape(B, n_max, -1)
        counts = torch.zeros(n_slots, device=vectors.device).index_add_(
            0, index, torch.ones_like(index, dtype=torch.float32)
        )
        elem_valid = counts[:-1].reshape(B, n_max) > 0

        h = self.global_graph(elements, elem_valid)
        h = self.expand(h) * elem_valid.unsqueeze(-1).to(h.dtype)
        return h.transpose(1, 2), elem_valid

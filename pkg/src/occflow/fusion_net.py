"""Cross-attention fusion, FPN-style decoder path and the full predictor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BackboneConfig, VectorNetEncoder, VGGEncoder, init_weights, masked_attention
from .errors import ShapeError
from .scene_kit import NUM_WAYPOINTS

OUTPUT_FIELDS = ("observed_logit", "occluded_logit", "flow_dx", "flow_dy")
VARIANTS = ("fused", "vgg_only")


@dataclass(frozen=True)
class FusionConfig:
    attn_heads: int = 4
    fuse_levels: tuple = (5, 4)
    head_channels: int = 128
    out_channels: int = NUM_WAYPOINTS * len(OUTPUT_FIELDS)
    variant: str = "fused"
    upsample: str = "nearest"
    query_pos_encoding: bool = False
    # initial decoder bias of the occupancy logits; occupied cells are sparse
    occupancy_prior_logit: float = -4.0

    def __post_init__(self):
        if self.out_channels != NUM_WAYPOINTS * len(OUTPUT_FIELDS):
            raise ShapeError("out_channels must be 8 waypoints x 4 outputs")
        if tuple(self.fuse_levels) != (5, 4):
            raise ShapeError("fusion is fixed to the last two stages (5, 4)")
        if self.variant not in VARIANTS:
            raise ShapeError(f"variant must be one of {VARIANTS}")
        if self.upsample not in ("nearest", "bilinear"):
            raise ShapeError("upsample must be 'nearest' or 'bilinear'")


@dataclass
class PredictionOutput:
    logits_observed: torch.Tensor  # [B, 8, H, W]
    logits_occluded: torch.Tensor  # [B, 8, H, W]
    flow: torch.Tensor  # [B, 8, H, W, 2], cells, backward
    features: dict = field(default_factory=dict, repr=False)

    @property
    def prob_observed(self):
        return torch.sigmoid(self.logits_observed)

    @property
    def prob_occluded(self):
        return torch.sigmoid(self.logits_occluded)


def sinusoidal_2d(h, w, dim, dtype=torch.float32):
    """Fixed 2D sine/cosine encoding, ``[h * w, dim]``."""
    quarter = dim // 4
    freqs = torch.exp(-math.log(10000.0) * torch.arange(quarter, dtype=torch.float64) / max(quarter, 1))
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64), indexing="ij")
    ay = ys.reshape(-1, 1) * freqs
    ax = xs.reshape(-1, 1) * freqs
    enc = torch.cat([ay.sin(), ay.cos(), ax.sin(), ax.cos()], dim=1)
    out = torch.zeros(h * w, dim, dtype=torch.float64)
    out[:, : enc.shape[1]] = enc
    return out.to(dtype)


class CrossAttention(nn.Module):
    """Image tokens attend to vector element tokens (multi-head)."""

    def __init__(self, dim, heads, pos_encoding=False):
        super().__init__()
        if dim % heads:
            raise ShapeError("channel dim must be divisible by attn_heads")
        self.dim, self.heads = dim, heads
        self.pos_encoding = pos_encoding
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x):
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dim // self.heads).transpose(1, 2)

    def forward(self, image_feat, V, valid):
        B, C, h, w = image_feat.shape
        if C != self.dim or V.shape[1] != self.dim:
            raise ShapeError(f"channel mismatch: image {C}, vectors {V.shape[1]}, expected {self.dim}")
        tokens = image_feat.flatten(2).transpose(1, 2)  # [B, h*w, C]
        if self.pos_encoding:
            tokens = tokens + sinusoidal_2d(h, w, C, tokens.dtype).to(tokens.device)
        keys = V.transpose(1, 2)  # [B, N, C]
        q, k, v = self._split(self.q(tokens)), self._split(self.k(keys)), self._split(self.v(keys))
        ctx = masked_attention(q, k, v, valid).transpose(1, 2).reshape(B, h * w, C)
        any_valid = valid.bool().any(dim=1).to(ctx.dtype).reshape(B, 1, 1)
        out = self.out(ctx) * any_valid
        return out.transpose(1, 2).reshape(B, C, h, w)


def conv_block(c_in, c_out, final_relu=True):
    layers = [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(inplace=True), nn.Conv2d(c_out, c_out, 3, padding=1)]
    if final_relu:
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class FuseLevel(nn.Module):
    def __init__(self, dim, heads, pos_encoding=False, ablate=False):
        super().__init__()
        self.ablate = ablate
        self.attend = CrossAttention(dim, heads, pos_encoding)
        self.convs = conv_block(2 * dim, dim)

    def forward(self, x, V, valid, return_fused=False):
        if self.ablate:
            fused = torch.zeros_like(x)
        else:
            fused = self.attend(x, V, valid)
        P = self.convs(torch.cat([fused, x], dim=1))
        return (P, fused) if return_fused else P


class FPNUp(nn.Module):
    def __init__(self, dim, mode="nearest"):
        super().__init__()
        self.mode = mode
        self.convs = conv_block(2 * dim, dim)

    def forward(self, higher, lower):
        if tuple(lower.shape[-2:]) != (2 * higher.shape[-2], 2 * higher.shape[-1]):
            raise ShapeError(f"fpn_up needs a 2x spatial relation, got {list(higher.shape)} and {list(lower.shape)}")
        if self.mode == "nearest":
            up = F.interpolate(higher, scale_factor=2, mode="nearest")
        else:
            up = F.interpolate(higher, scale_factor=2, mode="bilinear", align_corners=False)
        return self.convs(torch.cat([up, lower], dim=1))


class OccupancyFlowNet(nn.Module):
    def __init__(self, backbone: BackboneConfig = BackboneConfig(), fusion: FusionConfig = FusionConfig()):
        super().__init__()
        self.backbone_config, self.fusion_config = backbone, fusion
        d = backbone.hidden_dim
        ablate = fusion.variant == "vgg_only"
        self.raster_encoder = VGGEncoder(backbone)
        self.vector_encoder = VectorNetEncoder(backbone)
        self.fuse5 = FuseLevel(d, fusion.attn_heads, fusion.query_pos_encoding, ablate)
        self.fuse4 = FuseLevel(d, fusion.attn_heads, fusion.query_pos_encoding, ablate)
        self.up4, self.up3, self.up2, self.up1 = (FPNUp(d, fusion.upsample) for _ in range(4))
        self.head = conv_block(d, fusion.head_channels, final_relu=False)
        self.decoder = nn.Conv2d(fusion.head_channels, fusion.out_channels, 1)
        for m in (self.fuse5, self.fuse4, self.up4, self.up3, self.up2, self.up1, self.head, self.decoder):
            init_weights(m)
        with torch.no_grad():
            bias = self.decoder.bias.view(NUM_WAYPOINTS, len(OUTPUT_FIELDS))
            bias[:, :2] = fusion.occupancy_prior_logit

    def forward(self, raster, vectors, vectors_valid, keep_features=False):
        C1, C2, C3, C4, C5 = self.raster_encoder(raster)
        B = raster.shape[0]
        if self.fusion_config.variant == "fused":
            V, valid = self.vector_encoder(vectors, vectors_valid)
        else:
            V = raster.new_zeros(B, self.backbone_config.hidden_dim, 1)
            valid = torch.zeros(B, 1, dtype=torch.bool, device=raster.device)
        P5, F5 = self.fuse5(C5, V, valid, return_fused=True)
        U4 = self.up4(P5, C4)
        P4, F4 = self.fuse4(U4, V, valid, return_fused=True)
        U3 = self.up3(P4, C3)
        U2 = self.up2(U3, C2)
        P1 = self.up1(U2, C1)
        head = self.head(P1)
        raw = self.decoder(head)
        H, W = raw.shape[-2:]
        out = raw.reshape(B, NUM_WAYPOINTS, len(OUTPUT_FIELDS), H, W)
        features = {}
        if keep_features:
            features = dict(C1=C1, C2=C2, C3=C3, C4=C4, C5=C5, V=V, F5=F5, P5=P5, U4=U4, F4=F4, P4=P4,
                            U3=U3, U2=U2, P1=P1, head=head, decoder=raw)
        return PredictionOutput(
            logits_observed=out[:, :, 0],
            logits_occluded=out[:, :, 1],
            flow=out[:, :, 2:4].permute(0, 1, 3, 4, 2),
            features=features,
        )

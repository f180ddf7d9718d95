"""Multi-scale refinement of base-layer motion and features into coding contexts.

The full-resolution coder does not estimate its own motion. It starts from
the base layer's decoded motion field and decoder feature, refines both
bottom-up against a feature pyramid of the previously decoded frame, and
fuses the result into one hybrid context per scale.

Every refinement unit ends in a zero-initialized layer, so a freshly
constructed augmentor is an exact pass-through: the motion it emits is the
(rescaled) base motion and the feature is the (upsampled) base feature.
Training only ever adds corrections on top of that identity.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import CodecConfig
from .motion_ops import (SubpixelUp2, group_offset_align, rescale_flow_up2,
                         warp_bilinear)


class ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(x), 0.1))


class FeaturePyramidNet(nn.Module):
    """Strided-conv pyramid over the previous frame's propagated feature.

    Levels are at strides 1, 2, 4 with the three context channel counts.
    """

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(cfg.n1, cfg.n1, 3, padding=1)
        self.res1 = ResBlock(cfg.n1)
        self.conv2 = nn.Conv2d(cfg.n1, cfg.n2, 3, stride=2, padding=1)
        self.res2 = ResBlock(cfg.n2)
        self.conv3 = nn.Conv2d(cfg.n2, cfg.n3, 3, stride=2, padding=1)
        self.res3 = ResBlock(cfg.n3)

    def forward(self, feature):
        l1 = self.res1(F.leaky_relu(self.conv1(feature), 0.1))
        l2 = self.res2(F.leaky_relu(self.conv2(l1), 0.1))
        l3 = self.res3(F.leaky_relu(self.conv3(l2), 0.1))
        return l1, l2, l3


class RefineUnit(nn.Module):
    """Residual predictor: two stride-2 downs, a residual trunk, two subpixel ups.

    The final layer is zero-initialized, so the unit is the zero map at
    construction. Inputs must have spatial dims divisible by 4 so the
    up path restores them exactly.
    """

    def __init__(self, c_in, c_out, c_mid):
        super().__init__()
        self.c_in = c_in
        self.down1 = nn.Conv2d(c_in, c_mid, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(c_mid, c_mid, 3, stride=2, padding=1)
        self.trunk = ResBlock(c_mid)
        self.up1 = SubpixelUp2(c_mid, c_mid)
        self.up2 = SubpixelUp2(c_mid, c_mid)
        self.head = nn.Conv2d(c_mid, c_out, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        if x.shape[1] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError("spatial dims must be divisible by 4")
        h = F.leaky_relu(self.down1(x), 0.1)
        h = F.leaky_relu(self.down2(h), 0.1)
        h = self.trunk(h)
        h = F.leaky_relu(self.up1(h), 0.1)
        h = F.leaky_relu(self.up2(h), 0.1)
        return self.head(h)


class RefineStage(nn.Module):
    """One motion-then-feature update at a single scale.

    The motion update runs first; the feature update warps the temporal
    feature with the already-updated motion. Both updates are residual.
    """

    def __init__(self, channels):
        super().__init__()
        self.motion_unit = RefineUnit(2 * channels + 2, 2, channels)
        self.feature_unit = RefineUnit(2 * channels, channels, channels)

    def forward(self, motion, feature, temporal):
        if feature.shape[-2:] != temporal.shape[-2:] or motion.shape[-2:] != feature.shape[-2:]:
            raise ValueError("stage inputs must share one scale")
        motion = motion + self.motion_unit(torch.cat([temporal, feature, motion], dim=1))
        aligned = warp_bilinear(temporal, motion)
        feature = feature + self.feature_unit(torch.cat([aligned, feature], dim=1))
        return motion, feature


class GroupOffsetHead(nn.Module):
    """Per-group offset fields for full-scale alignment.

    Offsets are the shared flow plus a learned per-group residual; the
    residual layer starts at zero, so alignment begins as a plain warp.
    """

    def __init__(self, channels, groups):
        super().__init__()
        self.groups = groups
        self.conv1 = nn.Conv2d(2 + 2 * channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, 2 * groups, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, flow, feature, temporal):
        res = self.conv2(F.leaky_relu(self.conv1(
            torch.cat([flow, feature, temporal], dim=1)), 0.1))
        return flow.repeat(1, self.groups, 1, 1) + res


class ScaleFuser(nn.Module):
    """Merges the aligned temporal feature with the refined spatial one."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.res = ResBlock(channels)

    def forward(self, aligned, refined):
        return self.res(F.leaky_relu(self.conv(
            torch.cat([aligned, refined], dim=1)), 0.1))


@dataclass
class AugmentResult:
    """Contexts plus the per-scale refined motion and feature that built them."""
    context_full: torch.Tensor
    context_half: torch.Tensor
    context_quarter: torch.Tensor
    motion_full: torch.Tensor
    motion_half: torch.Tensor
    motion_quarter: torch.Tensor
    feature_full: torch.Tensor
    feature_half: torch.Tensor
    feature_quarter: torch.Tensor

    @property
    def contexts(self):
        return self.context_full, self.context_half, self.context_quarter


class ContextAugmentor(nn.Module):
    """Bottom-up co-refinement of base motion and base feature over 3 scales.

    Consumes only decoded quantities, so the encoder and decoder run it
    identically and it costs no bits. Stateless given weights.
    """

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        if cfg.n1 % cfg.oda_groups:
            raise ValueError("n1 must be divisible by oda_groups")
        self.cfg = cfg
        self.pyramid = FeaturePyramidNet(cfg)
        k = cfg.stages_per_scale
        self.stages_quarter = nn.ModuleList(RefineStage(cfg.n3) for _ in range(k))
        self.stages_half = nn.ModuleList(RefineStage(cfg.n2) for _ in range(k))
        self.stages_full = nn.ModuleList(RefineStage(cfg.n1) for _ in range(k))
        self.up_q2h = SubpixelUp2(cfg.n3, cfg.n2)
        self.up_h2f = SubpixelUp2(cfg.n2, cfg.n1)
        self.offset_head = GroupOffsetHead(cfg.n1, cfg.oda_groups)
        self.fuse_full = ScaleFuser(cfg.n1)
        self.fuse_half = ScaleFuser(cfg.n2)
        self.fuse_quarter = ScaleFuser(cfg.n3)

    def forward(self, base_mv, spatial_feature, prev_feature):
        b, _, hq, wq = spatial_feature.shape
        if base_mv.shape != (b, 2, hq, wq):
            raise ValueError(f"base motion shape {tuple(base_mv.shape)} does not "
                             f"match feature grid {(b, 2, hq, wq)}")
        if prev_feature.shape != (b, self.cfg.n1, 4 * hq, 4 * wq):
            raise ValueError("previous feature must be at 4x the base resolution "
                             f"with {self.cfg.n1} channels, got {tuple(prev_feature.shape)}")

        t1, t2, t3 = self.pyramid(prev_feature)

        v, f = base_mv, spatial_feature
        for stage in self.stages_quarter:
            v, f = stage(v, f, t3)
        v3, f3 = v, f

        v, f = rescale_flow_up2(v3), self.up_q2h(f3)
        for stage in self.stages_half:
            v, f = stage(v, f, t2)
        v2, f2 = v, f

        v, f = rescale_flow_up2(v2), self.up_h2f(f2)
        for stage in self.stages_full:
            v, f = stage(v, f, t1)
        v1, f1 = v, f

        a3 = warp_bilinear(t3, v3)
        a2 = warp_bilinear(t2, v2)
        offsets = self.offset_head(v1, f1, t1)
        a1 = group_offset_align(t1, offsets, self.cfg.oda_groups)

        return AugmentResult(
            context_full=self.fuse_full(a1, f1),
            context_half=self.fuse_half(a2, f2),
            context_quarter=self.fuse_quarter(a3, f3),
            motion_full=v1, motion_half=v2, motion_quarter=v3,
            feature_full=f1, feature_half=f2, feature_quarter=f3,
        )

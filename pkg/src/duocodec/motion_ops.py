"""Warping and flow-field primitives shared by both codec layers.

Features are (B, C, H, W) tensors; motion fields are (B, 2, H, W) with
channel 0 the horizontal displacement and channel 1 the vertical one,
in pixels at the field's own scale.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def warp_bilinear(x, flow):
    """Backward warp with bilinear sampling and border clamping.

    Zero flow returns the input exactly. Sampling coordinates are clamped
    to the frame, which replicates the border outward.
    """
    b, c, h, w = x.shape
    if flow.shape != (b, 2, h, w):
        raise ValueError(f"flow shape {tuple(flow.shape)} does not match {(b, 2, h, w)}")
    xs = torch.arange(w, dtype=x.dtype, device=x.device).view(1, 1, 1, w)
    ys = torch.arange(h, dtype=x.dtype, device=x.device).view(1, 1, h, 1)
    px = (xs + flow[:, 0:1]).clamp(0, w - 1)
    py = (ys + flow[:, 1:2]).clamp(0, h - 1)
    x0 = px.floor()
    y0 = py.floor()
    wx = px - x0
    wy = py - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = x.reshape(b, c, h * w)

    def take(iy, ix):
        idx = (iy * w + ix).reshape(b, 1, h * w).expand(b, c, h * w)
        return torch.gather(flat, 2, idx).reshape(b, c, h, w)

    out = (take(y0, x0) * (1 - wy) * (1 - wx)
           + take(y0, x1) * (1 - wy) * wx
           + take(y1, x0) * wy * (1 - wx)
           + take(y1, x1) * wy * wx)
    return out


class SubpixelUp2(nn.Module):
    """2x upsampling by channel expansion and pixel shuffle."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 4 * c_out, kernel_size=3, padding=1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.conv(x))


def rescale_flow_up2(flow):
    """Double a flow field's resolution and displacement magnitudes."""
    up = F.interpolate(flow, scale_factor=2, mode="bilinear", align_corners=False)
    return up * 2.0


def group_offset_align(x, offsets, groups):
    """Warp channel groups with their own offset fields.

    offsets holds 2 channels per group; with groups == 1 this is plain
    warp_bilinear.
    """
    b, c, h, w = x.shape
    if groups < 1:
        raise ValueError("groups must be >= 1")
    if c % groups != 0:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    if offsets.shape != (b, 2 * groups, h, w):
        raise ValueError(f"offsets shape {tuple(offsets.shape)} does not match "
                         f"{(b, 2 * groups, h, w)}")
    if groups == 1:
        return warp_bilinear(x, offsets)
    per = c // groups
    parts = []
    for g in range(groups):
        parts.append(warp_bilinear(x[:, g * per:(g + 1) * per],
                                   offsets[:, 2 * g:2 * g + 2]))
    return torch.cat(parts, dim=1)

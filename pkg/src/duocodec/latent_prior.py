"""Temporal-latent prior guided by the upsampled base latent.

The quantized base latent is upsampled 4x and used to query a queue of the
three most recent decoded full-resolution latents through windowed
cross-attention. The attention windows span the whole 3-deep temporal axis,
so every query token sees the co-located window of all three queue entries.

The residual head is zero-initialized: a fresh network predicts exactly the
upsampled base latent, and training moves the prediction toward the true
latent from there.

Padding discipline: window padding and shifted windows are realized by
translating the window grid and masking the padded keys, and every position
outside the declared valid region is zeroed before each spatial convolution.
Outputs on the valid region are therefore independent of how much padding
surrounds it.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import CodecConfig
from .motion_ops import SubpixelUp2

QUEUE_CAPACITY = 3


@dataclass(frozen=True)
class LatentQueue:
    """Immutable newest-first queue of decoded latents, capacity 3."""

    entries: tuple = ()

    def push(self, latent):
        if self.entries and latent.shape != self.entries[0].shape:
            raise ValueError(f"latent resolution {tuple(latent.shape)} does not match "
                             f"queued {tuple(self.entries[0].shape)}")
        return LatentQueue((latent,) + self.entries[:QUEUE_CAPACITY - 1])

    def __len__(self):
        return len(self.entries)


def _partition(x, window):
    """(B, hp, wp, C) -> (B*nW, window*window, C), row-major window order."""
    b, hp, wp, c = x.shape
    x = x.view(b, hp // window, window, wp // window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, window * window, c)


def _merge(wins, b, hp, wp, window):
    c = wins.shape[-1]
    x = wins.view(b, hp // window, wp // window, window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, hp, wp, c)


class WindowCrossAttention(nn.Module):
    """Multi-head attention of a spatial window onto its 3-deep key stack.

    The relative position bias is indexed by the key's temporal slot and the
    spatial offset between query and key, so the three queue entries are
    distinguishable even though they share one window grid.
    """

    def __init__(self, dim, heads, window):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(
            torch.empty(heads, QUEUE_CAPACITY, 2 * window - 1, 2 * window - 1))
        nn.init.trunc_normal_(self.bias_table, std=0.02)

        coords = torch.stack(torch.meshgrid(
            torch.arange(window), torch.arange(window), indexing="ij"))
        flat = coords.reshape(2, -1)
        rel = flat[:, :, None] - flat[:, None, :]
        idx = (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)
        span = (2 * window - 1) ** 2
        full = torch.cat([idx + t * span for t in range(QUEUE_CAPACITY)], dim=1)
        self.register_buffer("bias_index", full, persistent=False)

    def forward(self, qwin, kvwin, key_valid):
        bw, nq, c = qwin.shape
        nk = kvwin.shape[1]
        hd = c // self.heads
        q = self.q(qwin).view(bw, nq, self.heads, hd).transpose(1, 2)
        kv = self.kv(kvwin).view(bw, nk, 2, self.heads, hd).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        logits = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.bias_table.reshape(self.heads, -1)[:, self.bias_index]
        logits = logits + bias.unsqueeze(0)
        logits = logits.masked_fill(~key_valid[:, None, None, :], float("-inf"))
        attn = torch.softmax(logits, dim=-1)
        # a window wholly inside padding has no keys; its rows are discarded later
        attn = torch.nan_to_num(attn, nan=0.0)
        out = (attn @ v).transpose(1, 2).reshape(bw, nq, c)
        return self.proj(out)


class PriorTransformerLayer(nn.Module):
    """One windowed cross-attention + MLP layer over the query stream.

    A shifted layer translates the window grid by half a window instead of
    cyclically rolling the content, which keeps masked padding exact.
    """

    def __init__(self, dim, heads, window, shifted):
        super().__init__()
        self.window = window
        self.shift = window // 2 if shifted else 0
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = WindowCrossAttention(dim, heads, window)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(),
                                 nn.Linear(2 * dim, dim))

    def forward(self, x, mem, valid):
        b, h, w, _ = x.shape
        m, s = self.window, self.shift
        pad_b = (-(h + s)) % m
        pad_r = (-(w + s)) % m
        xp = F.pad(x, (0, 0, s, pad_r, s, pad_b))
        mp = F.pad(mem, (0, 0, s, pad_r, s, pad_b))
        vp = F.pad(valid, (s, pad_r, s, pad_b))
        hp, wp = xp.shape[1], xp.shape[2]

        qw = _partition(self.norm_q(xp), m)
        mn = self.norm_kv(mp)
        mw = mn.permute(0, 2, 3, 1, 4).reshape(b, hp, wp, -1)
        mw = _partition(mw, m)
        mw = mw.view(mw.shape[0], m * m, QUEUE_CAPACITY, -1)
        mw = mw.transpose(1, 2).reshape(mw.shape[0], QUEUE_CAPACITY * m * m, -1)
        kvalid = _partition(vp.unsqueeze(-1), m).squeeze(-1).repeat(1, QUEUE_CAPACITY)

        out = self.attn(qw, mw, kvalid)
        merged = _merge(out, b, hp, wp, m)[:, s:s + h, s:s + w]
        x = x + merged
        return x + self.mlp(self.norm2(x))


class ResidualAttentionBlock(nn.Module):
    """A chain of attention layers (every second one shifted) plus a conv skip."""

    def __init__(self, dim, heads, window, layers):
        super().__init__()
        self.layers = nn.ModuleList(
            PriorTransformerLayer(dim, heads, window, shifted=(i % 2 == 1))
            for i in range(layers))
        self.conv = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x, mem, valid):
        h = x
        for layer in self.layers:
            h = layer(h, mem, valid)
        h = h * valid.to(h.dtype).unsqueeze(-1)
        h = self.conv(h.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        return x + h


class LatentPriorNet(nn.Module):
    """Predicts the full-resolution latent from the base latent and the queue."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        c, d = cfg.latent_channels, cfg.embed_dim
        self.cfg = cfg
        self.up1 = SubpixelUp2(c, c)
        self.up2 = SubpixelUp2(c, c)
        # Quantized base latents are integer-scale, so default conv gains
        # would launch the prediction an order of magnitude above the latent
        # it predicts; damp the final upsampler so training starts near the
        # right scale instead of unwinding amplified noise.
        with torch.no_grad():
            self.up2.conv.weight.mul_(0.05)
            self.up2.conv.bias.zero_()
        self.in_proj = nn.Linear(c, d)
        self.blocks = nn.ModuleList(
            ResidualAttentionBlock(d, cfg.num_heads, cfg.window, cfg.layers_per_block)
            for _ in range(cfg.rstb_blocks))
        self.head = nn.Conv2d(d, c, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @staticmethod
    def _mask(h, w, vh, vw, device, dtype):
        m = torch.zeros(h, w, device=device, dtype=dtype)
        m[:vh, :vw] = 1
        return m

    def upsample_base(self, y_base, valid_base=None):
        """4x subpixel upsampling of the base latent to the full latent grid."""
        x = y_base
        if valid_base is not None:
            vh, vw = valid_base
            x = x * self._mask(x.shape[2], x.shape[3], vh, vw, x.device, x.dtype)
            x = self.up1(x)
            x = x * self._mask(x.shape[2], x.shape[3], 2 * vh, 2 * vw, x.device, x.dtype)
            x = self.up2(x)
            return x * self._mask(x.shape[2], x.shape[3], 4 * vh, 4 * vw, x.device, x.dtype)
        return self.up2(self.up1(x))

    def forward(self, y_base, queue: LatentQueue, bootstrap=True, valid_base=None):
        if len(queue) == 0 and not bootstrap:
            raise ValueError("latent queue is empty and bootstrap is disabled")
        up = self.upsample_base(y_base, valid_base)
        entries = list(queue.entries)
        for e in entries:
            if e.shape != up.shape:
                raise ValueError(f"queue entry shape {tuple(e.shape)} does not match "
                                 f"upsampled base latent {tuple(up.shape)}")
        while len(entries) < QUEUE_CAPACITY:
            entries.append(up)

        b, _, h, w = up.shape
        if valid_base is None:
            valid = torch.ones(b, h, w, dtype=torch.bool, device=up.device)
        else:
            valid = self._mask(h, w, 4 * valid_base[0], 4 * valid_base[1],
                               up.device, torch.bool).expand(b, h, w)

        x = self.in_proj(up.permute(0, 2, 3, 1))
        mem = torch.stack(entries, dim=1)
        mem = self.in_proj(mem.permute(0, 1, 3, 4, 2))
        for blk in self.blocks:
            x = blk(x, mem, valid)
        x = x * valid.to(x.dtype).unsqueeze(-1)
        res = self.head(x.permute(0, 3, 1, 2))
        return up + res

"""Conditional Laplace entropy model and integer CDF tables for coding.

Rates are measured as the negative log2 mass of the unit interval around each
quantized value. The same Laplace parameters later feed the integer CDF builder
so the coder's actual bits track the estimate.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

SCALE_FLOOR = 0.11
SYMBOL_MIN = -256
SYMBOL_MAX = 255
CDF_TOTAL = 1 << 16


class DistParams(NamedTuple):
    mean: torch.Tensor
    scale: torch.Tensor


class QuantPair(NamedTuple):
    """Training-time quantization: noisy values for rate, rounded for decoding."""
    rate: torch.Tensor
    recon: torch.Tensor


def _round_half_away(y):
    return torch.sign(y) * torch.floor(torch.abs(y) + 0.5)


def quantize(y, mode="eval"):
    if mode == "eval":
        return _round_half_away(y).clamp(SYMBOL_MIN, SYMBOL_MAX)
    if mode == "train":
        noise = torch.empty_like(y).uniform_(-0.5, 0.5)
        ste = y + (_round_half_away(y) - y).detach()
        return QuantPair(rate=y + noise, recon=ste)
    if mode == "identity":
        return QuantPair(rate=y, recon=y)
    raise ValueError(f"unknown quantize mode {mode!r}")


def _log_interval_mass(y, mean, scale):
    """log of the Laplace mass on [y - 0.5, y + 0.5], stable for far tails."""
    t = torch.abs(y - mean)
    b = scale
    # near branch straddles the peak; expm1 keeps precision for wide scales
    near = -0.5 * (torch.expm1(-(t + 0.5) / b) + torch.expm1(-(0.5 - t).clamp(min=0.0) / b))
    log_near = torch.log(near.clamp(min=1e-300))
    log_far = math.log(0.5) - (t - 0.5).clamp(min=0.0) / b + torch.log1p(-torch.exp(-1.0 / b))
    return torch.where(t <= 0.5, log_near, log_far)


def rate_bits(y, params: DistParams):
    """Total estimated bits to code y under the given Laplace parameters."""
    log_mass = _log_interval_mass(y, params.mean, params.scale)
    return -log_mass.sum() / math.log(2.0)


def bits_per_element(y, params: DistParams):
    return -_log_interval_mass(y, params.mean, params.scale) / math.log(2.0)


class ParamPredictor(nn.Module):
    """Fuses the latent prior with the context prior into per-element (mean, scale).

    The mean head is a zero-initialized residual on the latent prior, so at
    initialization the predicted mean equals the prior exactly.
    """

    def __init__(self, channels, hidden=None):
        super().__init__()
        hidden = hidden or channels
        self.fuse = nn.Sequential(
            nn.Conv2d(2 * channels, hidden, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
        )
        self.mean_head = nn.Conv2d(hidden, channels, 3, padding=1)
        nn.init.zeros_(self.mean_head.weight)
        nn.init.zeros_(self.mean_head.bias)
        self.scale_head = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, latent_prior, context_prior):
        h = self.fuse(torch.cat([latent_prior, context_prior], dim=1))
        mean = latent_prior + self.mean_head(h)
        scale = SCALE_FLOOR + torch.nn.functional.softplus(self.scale_head(h))
        return DistParams(mean=mean, scale=scale)


class FactorizedPrior(nn.Module):
    """Static per-channel Laplace parameters for latents without a prediction path."""

    def __init__(self, channels):
        super().__init__()
        self.loc = nn.Parameter(torch.zeros(channels))
        self.raw_scale = nn.Parameter(torch.zeros(channels))

    def forward(self, like):
        b, c, h, w = like.shape
        mean = self.loc.view(1, c, 1, 1).expand(b, c, h, w)
        scale = SCALE_FLOOR + torch.nn.functional.softplus(self.raw_scale)
        scale = scale.view(1, c, 1, 1).expand(b, c, h, w)
        return DistParams(mean=mean, scale=scale)


@dataclass
class CdfTable:
    """Per-element integer CDFs: rows of 513 values from 0 to 65536, step >= 1."""
    table: np.ndarray

    def __post_init__(self):
        self.table = np.ascontiguousarray(self.table, dtype=np.uint32)
        if self.table.ndim != 2 or self.table.shape[1] != SYMBOL_MAX - SYMBOL_MIN + 2:
            raise ValueError("cdf rows must cover the full symbol range")

    def validate(self):
        t = self.table
        if np.any(t[:, 0] != 0):
            raise ValueError("cdf must start at 0")
        if np.any(t[:, -1] != CDF_TOTAL):
            raise ValueError(f"cdf must end at {CDF_TOTAL}")
        # strict unsigned comparison avoids a signed copy of the whole
        # table; chunking keeps the transient boolean small for large tables
        step = max(1, (1 << 23) // t.shape[1]) if t.shape[0] else 1
        for i in range(0, t.shape[0], step):
            chunk = t[i:i + step]
            if np.any(chunk[:, 1:] <= chunk[:, :-1]):
                raise ValueError(
                    "every symbol needs probability of at least 1/65536")

    @property
    def rows(self):
        return self.table.shape[0]

    def start_freq(self, row, symbol):
        s = symbol - SYMBOL_MIN
        start = int(self.table[row, s])
        return start, int(self.table[row, s + 1]) - start

    def to_u16_blob(self):
        """Flat buffer layout: 512 u16 starts per element, top value implicit."""
        return np.ascontiguousarray(self.table[:, :-1].astype(np.uint16))


def _laplace_pmf_rows(mean, scale):
    """Float masses per symbol with the open tails folded into the end bins."""
    n_sym = SYMBOL_MAX - SYMBOL_MIN + 1
    # interior bin edges only; the outermost bins absorb the tails
    edges = np.arange(SYMBOL_MIN, SYMBOL_MAX, dtype=np.float64) + 0.5
    z = (edges[None, :] - mean[:, None]) / scale[:, None]
    half_tail = 0.5 * np.exp(-np.abs(z))
    cdf = np.where(z < 0, half_tail, 1.0 - half_tail)
    pmf = np.empty((mean.shape[0], n_sym), dtype=np.float64)
    pmf[:, 0] = cdf[:, 0]
    pmf[:, 1:-1] = np.diff(cdf, axis=1)
    pmf[:, -1] = 1.0 - cdf[:, -1]
    return np.clip(pmf, 0.0, 1.0)


def _quantize_pmf_rows(pmf):
    f = np.rint(pmf * CDF_TOTAL).astype(np.int64)
    np.clip(f, 1, None, out=f)
    diff = CDF_TOTAL - f.sum(axis=1)
    for i in np.nonzero(diff)[0]:
        d = int(diff[i])
        while d != 0:
            j = int(np.argmax(f[i]))
            step = d if f[i, j] + d >= 1 else 1 - int(f[i, j])
            f[i, j] += step
            d -= step
    return f


def build_cdf(params: DistParams, chunk=16384) -> CdfTable:
    """Quantize Laplace parameters into coder-ready integer CDF rows.

    Deterministic for fixed inputs: pure elementwise float64 math plus
    fixed-order integer fixups, independent of thread count.
    """
    mean = params.mean.detach().cpu().numpy().astype(np.float64).reshape(-1)
    scale = params.scale.detach().cpu().numpy().astype(np.float64).reshape(-1)
    if mean.shape != scale.shape:
        raise ValueError("mean and scale must match")
    n = mean.shape[0]
    n_sym = SYMBOL_MAX - SYMBOL_MIN + 1
    table = np.zeros((n, n_sym + 1), dtype=np.uint32)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        f = _quantize_pmf_rows(_laplace_pmf_rows(mean[lo:hi], scale[lo:hi]))
        table[lo:hi, 1:] = np.cumsum(f, axis=1).astype(np.uint32)
    out = CdfTable(table=table)
    out.validate()
    return out

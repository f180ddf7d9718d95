"""Temporal-only conditional codec at quarter resolution.

Each step compresses a motion field and a frame latent for the quarter-res
frame, and exports three references for the full-resolution layer: the
decoded motion, the decoder's last hidden feature, and the quantized frame
latent. The encoder runs the decoder path on the quantized values it emits,
so encoder and decoder state stay bit-exact over arbitrarily long sequences.

Rate bookkeeping is always relative to FULL-resolution pixels; see base_bpp.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import ResBlock
from .bitstream import rans_decode, rans_encode
from .config import CodecConfig
from .entropy_model import (SCALE_FLOOR, DistParams, FactorizedPrior,
                            build_cdf, quantize, rate_bits)
from .motion_ops import SubpixelUp2, rescale_flow_up2, warp_bilinear

LATENT_STRIDE = 16


@dataclass
class BaseRefs:
    """References exported to the full-resolution layer for one frame."""
    motion: torch.Tensor   # (B, 2, hb, wb) decoded motion at base resolution
    feature: torch.Tensor  # (B, n3, hb, wb) decoder hidden before the recon head
    latent: torch.Tensor   # (B, C_y, hb/16, wb/16) quantized frame latent


@dataclass
class BaseState:
    """Per-sequence decoding state. ref_frame/ref_feature describe frame t-1."""
    ref_frame: torch.Tensor
    ref_feature: torch.Tensor
    frame_index: int = 0


def base_bpp(bits, full_hw):
    """Rate contribution in bits per FULL-resolution pixel."""
    h, w = full_hw
    return bits / float(h * w)


def code_latent(y_hat, params: DistParams) -> bytes:
    """Entropy-code an integer latent under per-element Laplace parameters."""
    flat = y_hat.detach().reshape(-1).to(torch.int64).cpu().numpy()
    cdf = build_cdf(DistParams(params.mean.detach().reshape(-1),
                               params.scale.detach().reshape(-1)))
    return rans_encode(flat, cdf)


def decode_latent(data: bytes, params: DistParams, shape) -> torch.Tensor:
    cdf = build_cdf(DistParams(params.mean.detach().reshape(-1),
                               params.scale.detach().reshape(-1)))
    n = int(np.prod(shape))
    symbols = rans_decode(data, n, cdf)
    return torch.from_numpy(symbols.astype(np.float32)).reshape(shape)


class _FlowLevel(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(8, ch, 3, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(ch, ch, 3, padding=1), nn.LeakyReLU(0.1, inplace=True),
        )
        self.head = nn.Conv2d(ch, 2, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, cur, warped, flow):
        return self.head(self.net(torch.cat([cur, warped, flow], dim=1)))


class PyramidFlowNet(nn.Module):
    """Coarse-to-fine motion estimation over a 3-level image pyramid."""

    LEVELS = 3

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.levels = nn.ModuleList(_FlowLevel(cfg.transform_channels)
                                    for _ in range(self.LEVELS))

    def forward(self, cur, ref):
        if cur.shape != ref.shape:
            raise ValueError("frames must share a resolution")
        pyr = [(cur, ref)]
        for _ in range(self.LEVELS - 1):
            c, r = pyr[-1]
            pyr.append((F.avg_pool2d(c, 2), F.avg_pool2d(r, 2)))
        flow = torch.zeros(cur.shape[0], 2, *pyr[-1][0].shape[-2:],
                           dtype=cur.dtype, device=cur.device)
        for level, (c, r) in zip(self.levels, reversed(pyr)):
            warped = warp_bilinear(r, flow)
            flow = flow + level(c, warped, flow)
            if c.shape[-1] != cur.shape[-1]:
                flow = rescale_flow_up2(flow)
        return flow


class MotionCoder(nn.Module):
    """Flow autoencoder at stride 16 with a static factorized prior."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t, m = cfg.transform_channels, cfg.motion_latent_channels
        self.enc = nn.Sequential(
            nn.Conv2d(2, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, m, 3, stride=2, padding=1),
        )
        self.dec = nn.Sequential(
            SubpixelUp2(m, t), nn.LeakyReLU(0.1, inplace=True),
            SubpixelUp2(t, t), nn.LeakyReLU(0.1, inplace=True),
            SubpixelUp2(t, t), nn.LeakyReLU(0.1, inplace=True),
            SubpixelUp2(t, t), nn.Conv2d(t, 2, 3, padding=1),
        )
        self.prior = FactorizedPrior(cfg.motion_latent_channels)


class ContextNet(nn.Module):
    """Warped-reference temporal context at base resolution."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.conv = nn.Conv2d(cfg.n3, cfg.n3, 3, padding=1)
        self.res = ResBlock(cfg.n3)

    def forward(self, ref_feature, motion):
        aligned = warp_bilinear(ref_feature, motion)
        return self.res(F.leaky_relu(self.conv(aligned), 0.1))


class FrameEncoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.net = nn.Sequential(
            nn.Conv2d(3 + cfg.n3, t, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True), ResBlock(t),
            nn.Conv2d(t, t, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True), ResBlock(t),
            nn.Conv2d(t, t, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, cfg.latent_channels, 3, stride=2, padding=1),
        )

    def forward(self, frame, context):
        return self.net(torch.cat([frame, context], dim=1))


class FrameDecoder(nn.Module):
    """Latent + context -> (hidden feature, reconstruction).

    The hidden feature right before the reconstruction head is both the
    exported reference and the state propagated to the next step.
    """

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.up = nn.Sequential(
            SubpixelUp2(cfg.latent_channels, t), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(t),
            SubpixelUp2(t, t), nn.LeakyReLU(0.1, inplace=True),
            SubpixelUp2(t, t), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(t),
            SubpixelUp2(t, cfg.n3),
        )
        self.fuse = nn.Conv2d(2 * cfg.n3, cfg.n3, 3, padding=1)
        self.res = ResBlock(cfg.n3)
        self.head = nn.Conv2d(cfg.n3, 3, 3, padding=1)

    def forward(self, latent, context):
        h = self.up(latent)
        h = self.res(F.leaky_relu(self.fuse(torch.cat([h, context], dim=1)), 0.1))
        return h, self.head(h)


class ContextPrior(nn.Module):
    """Per-element (mean, scale) for the frame latent, derived from the context."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.trunk = nn.Sequential(
            nn.Conv2d(cfg.n3, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
        )
        self.mean_head = nn.Conv2d(t, cfg.latent_channels, 3, padding=1)
        nn.init.zeros_(self.mean_head.weight)
        nn.init.zeros_(self.mean_head.bias)
        self.scale_head = nn.Conv2d(t, cfg.latent_channels, 3, padding=1)

    def forward(self, context):
        h = self.trunk(context)
        return DistParams(mean=self.mean_head(h),
                          scale=SCALE_FLOOR + F.softplus(self.scale_head(h)))


class BaseCodec(nn.Module):
    """Assembled quarter-resolution codec with a two-substream output."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.flow = PyramidFlowNet(cfg)
        self.motion = MotionCoder(cfg)
        self.context = ContextNet(cfg)
        self.enc = FrameEncoder(cfg)
        self.dec = FrameDecoder(cfg)
        self.frame_prior = ContextPrior(cfg)

    def _check_state(self, state):
        if state is None:
            raise ValueError("base codec state is uninitialized")
        if state.ref_frame.shape[0] != 1:
            raise ValueError("coding steps run one sequence at a time")

    # -- training path ------------------------------------------------------

    def forward_train(self, x_b, state: BaseState, quant_mode="train"):
        """One step with differentiable quantization; returns recon/bits/refs/state."""
        v = self.flow(x_b, state.ref_frame)
        y_m = self.motion.enc(v)
        qm = quantize(y_m, quant_mode)
        bits_m = rate_bits(qm.rate, self.motion.prior(y_m))
        v_hat = self.motion.dec(qm.recon)

        ctx = self.context(state.ref_feature, v_hat)
        y = self.enc(x_b, ctx)
        qf = quantize(y, quant_mode)
        bits_f = rate_bits(qf.rate, self.frame_prior(ctx))
        feat, x_hat = self.dec(qf.recon, ctx)

        refs = BaseRefs(motion=v_hat, feature=feat, latent=qf.recon)
        new_state = BaseState(ref_frame=x_hat, ref_feature=feat,
                              frame_index=state.frame_index + 1)
        return x_hat, refs, bits_m + bits_f, new_state, v

    # -- deterministic coding path -----------------------------------------

    @torch.no_grad()
    def encode_step(self, x_b, state: BaseState):
        """Returns (recon, refs, estimated bits, [motion chunk, frame chunk], state).

        Everything after quantization is the decoder path run on the encoder's
        own quantized values, so the returned state matches decode_step exactly.
        """
        self._check_state(state)
        v = self.flow(x_b, state.ref_frame)
        y_m = quantize(self.motion.enc(v), "eval")
        m_params = self.motion.prior(y_m)
        chunk_m = code_latent(y_m, m_params)
        bits_m = rate_bits(y_m, m_params).item()

        v_hat = self.motion.dec(y_m)
        ctx = self.context(state.ref_feature, v_hat)
        f_params = self.frame_prior(ctx)
        y_f = quantize(self.enc(x_b, ctx), "eval")
        chunk_f = code_latent(y_f, f_params)
        bits_f = rate_bits(y_f, f_params).item()
        feat, x_hat = self.dec(y_f, ctx)

        refs = BaseRefs(motion=v_hat, feature=feat, latent=y_f)
        new_state = BaseState(ref_frame=x_hat, ref_feature=feat,
                              frame_index=state.frame_index + 1)
        return x_hat, refs, bits_m + bits_f, [chunk_m, chunk_f], new_state

    @torch.no_grad()
    def decode_step(self, chunks, state: BaseState):
        self._check_state(state)
        chunk_m, chunk_f = chunks
        hb, wb = state.ref_frame.shape[-2:]
        hl, wl = hb // LATENT_STRIDE, wb // LATENT_STRIDE
        like = state.ref_frame.new_zeros(1, self.cfg.motion_latent_channels, hl, wl)
        m_params = self.motion.prior(like)
        y_m = decode_latent(chunk_m, m_params, like.shape)

        v_hat = self.motion.dec(y_m)
        ctx = self.context(state.ref_feature, v_hat)
        f_params = self.frame_prior(ctx)
        y_f = decode_latent(chunk_f, f_params, f_params.mean.shape)
        feat, x_hat = self.dec(y_f, ctx)

        refs = BaseRefs(motion=v_hat, feature=feat, latent=y_f)
        new_state = BaseState(ref_frame=x_hat, ref_feature=feat,
                              frame_index=state.frame_index + 1)
        return x_hat, refs, new_state

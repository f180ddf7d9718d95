"""Two-layer video codec assembly and sequence coding sessions.

Layer structure per P-frame:
  1. the quarter-res base codec codes motion and a base frame, exporting
     decoded motion, its decoder feature, and its quantized latent;
  2. those references are refined against the previous full-res feature into
     three hybrid contexts;
  3. the full-res latent is coded under a mean/scale model fused from the
     upsampled-base-latent attention prior and a context-derived prior.

Three substreams leave every P-frame: base motion, base frame, full latent.
Intra frames carry a single substream. The decoder rebuilds every reference
from decoded data only, so encode and decode stay bit-exact.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import ContextAugmentor, ResBlock
from .base_codec import (BaseCodec, BaseState, code_latent, decode_latent)
from .bitstream import (FRAME_I, FRAME_P, ContainerHeader, FrameRecord,
                        parse_container, serialize_container)
from .config import LAMBDA_SET, CodecConfig, default_config
from .entropy_model import (FactorizedPrior, ParamPredictor, quantize,
                            rate_bits)
from .latent_prior import LatentPriorNet, LatentQueue
from .motion_ops import SubpixelUp2

WORK_MULTIPLE = 64
DOWN_FACTOR = 4


def pad_frame(x):
    """Replicate-pad a (B, C, H, W) frame so both dims divide 64."""
    h, w = x.shape[-2:]
    return F.pad(x, (0, (-w) % WORK_MULTIPLE, 0, (-h) % WORK_MULTIPLE),
                 mode="replicate")


def down4(x):
    """Antialiased 4x downsample used for the base layer's input and bootstrap."""
    return F.interpolate(x, scale_factor=1 / DOWN_FACTOR, mode="bicubic",
                         align_corners=False, antialias=True)


class IntraCodec(nn.Module):
    """Reference-free coder for the first frame of each group."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.enc = nn.Sequential(
            nn.Conv2d(3, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(t),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(t),
            nn.Conv2d(t, t, 3, stride=2, padding=1), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, cfg.latent_channels, 3, stride=2, padding=1),
        )
        self.up = nn.Sequential(
            SubpixelUp2(cfg.latent_channels, t), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(t),
            SubpixelUp2(t, t), nn.LeakyReLU(0.1, inplace=True),
            SubpixelUp2(t, t), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(t),
            SubpixelUp2(t, cfg.n1),
        )
        self.refine = ResBlock(cfg.n1)
        self.head = nn.Conv2d(cfg.n1, 3, 3, padding=1)
        self.prior = FactorizedPrior(cfg.latent_channels)

    def decode(self, latent):
        feat = self.refine(self.up(latent))
        return feat, self.head(feat)


class ContextualEncoder(nn.Module):
    """Full-res analysis transform conditioned on one context per scale."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.e1 = nn.Conv2d(3 + cfg.n1, t, 3, stride=2, padding=1)
        self.r1 = ResBlock(t)
        self.e2 = nn.Conv2d(t + cfg.n2, t, 3, stride=2, padding=1)
        self.r2 = ResBlock(t)
        self.e3 = nn.Conv2d(t + cfg.n3, t, 3, stride=2, padding=1)
        self.r3 = ResBlock(t)
        self.e4 = nn.Conv2d(t, cfg.latent_channels, 3, stride=2, padding=1)

    def forward(self, x, c1, c2, c3):
        h = self.r1(F.leaky_relu(self.e1(torch.cat([x, c1], dim=1)), 0.1))
        h = self.r2(F.leaky_relu(self.e2(torch.cat([h, c2], dim=1)), 0.1))
        h = self.r3(F.leaky_relu(self.e3(torch.cat([h, c3], dim=1)), 0.1))
        return self.e4(h)


class ContextualDecoder(nn.Module):
    """Synthesis transform; its last hidden layer is the propagated feature."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.d1 = SubpixelUp2(cfg.latent_channels, t)
        self.r1 = ResBlock(t)
        self.d2 = SubpixelUp2(t, t)
        self.f3 = nn.Conv2d(t + cfg.n3, t, 3, padding=1)
        self.r3 = ResBlock(t)
        self.d3 = SubpixelUp2(t, t)
        self.f2 = nn.Conv2d(t + cfg.n2, t, 3, padding=1)
        self.r2 = ResBlock(t)
        self.d4 = SubpixelUp2(t, cfg.n1)
        self.f1 = nn.Conv2d(2 * cfg.n1, cfg.n1, 3, padding=1)
        self.rf = ResBlock(cfg.n1)
        self.head = nn.Conv2d(cfg.n1, 3, 3, padding=1)

    def forward(self, latent, c1, c2, c3):
        h = self.r1(self.d1(latent))
        h = self.d2(h)
        h = self.r3(F.leaky_relu(self.f3(torch.cat([h, c3], dim=1)), 0.1))
        h = self.d3(h)
        h = self.r2(F.leaky_relu(self.f2(torch.cat([h, c2], dim=1)), 0.1))
        h = self.d4(h)
        feat = self.rf(F.leaky_relu(self.f1(torch.cat([h, c1], dim=1)), 0.1))
        return feat, self.head(feat)


class ContextPriorEncoder(nn.Module):
    """Projects the quarter-res context down to the latent grid as a prior."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        t = cfg.transform_channels
        self.net = nn.Sequential(
            nn.Conv2d(cfg.n3, t, 3, stride=2, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(t, cfg.latent_channels, 3, stride=2, padding=1),
        )

    def forward(self, c3):
        return self.net(c3)


@dataclass
class CodecState:
    """Everything carried between frames of one sequence."""
    base: BaseState
    prev_feature: torch.Tensor
    queue: LatentQueue
    frame_index: int = 0


@dataclass
class FrameStats:
    frame_type: int
    bits_base: float    # actual payload bits of the two base substreams
    bits_full: float    # actual payload bits of the full-res substream
    bits_estimated: float

    @property
    def bits_total(self):
        return self.bits_base + self.bits_full


@dataclass
class SequenceStats:
    width: int
    height: int
    frames: List[FrameStats] = field(default_factory=list)

    @property
    def bpp(self):
        total = sum(f.bits_total for f in self.frames)
        return total / (self.width * self.height * max(len(self.frames), 1))

    @property
    def base_bit_fraction(self):
        p = [f for f in self.frames if f.frame_type == FRAME_P]
        if not p:
            return 0.0
        total = sum(f.bits_total for f in p)
        return sum(f.bits_base for f in p) / total


class VideoCodec(nn.Module):
    def __init__(self, cfg: Optional[CodecConfig] = None):
        super().__init__()
        cfg = cfg or default_config()
        self.cfg = cfg
        self.intra = IntraCodec(cfg)
        self.base = BaseCodec(cfg)
        self.augmentor = ContextAugmentor(cfg)
        self.latent_prior = LatentPriorNet(cfg)
        self.ctx_prior = ContextPriorEncoder(cfg)
        self.enc = ContextualEncoder(cfg)
        self.dec = ContextualDecoder(cfg)
        self.params = ParamPredictor(cfg.latent_channels)
        # adapts the decoded intra frame into the base codec's first feature
        self.feat_adaptor = nn.Sequential(
            nn.Conv2d(3, cfg.n3, 3, padding=1), nn.LeakyReLU(0.1, inplace=True),
            ResBlock(cfg.n3))

    # -- shared pieces -------------------------------------------------------

    def _state_from_intra(self, recon, feat, latent, index):
        xb = down4(recon)
        base = BaseState(ref_frame=xb, ref_feature=self.feat_adaptor(xb),
                         frame_index=index)
        return CodecState(base=base, prev_feature=feat,
                          queue=LatentQueue().push(latent), frame_index=index + 1)

    def _p_priors(self, refs, prev_feature, queue):
        aug = self.augmentor(refs.motion, refs.feature, prev_feature)
        prior = self.latent_prior(refs.latent, queue)
        ctx_prior = self.ctx_prior(aug.context_quarter)
        return aug, self.params(prior, ctx_prior)

    # -- deterministic coding ------------------------------------------------

    @torch.no_grad()
    def encode_intra(self, x):
        y = quantize(self.intra.enc(x), "eval")
        prior = self.intra.prior(y)
        chunk = code_latent(y, prior)
        bits = rate_bits(y, prior).item()
        feat, recon = self.intra.decode(y)
        state = self._state_from_intra(recon, feat, y, 0)
        return recon, state, bits, chunk

    @torch.no_grad()
    def decode_intra(self, chunk, padded_hw):
        h, w = padded_hw
        like = torch.zeros(1, self.cfg.latent_channels, h // 16, w // 16)
        prior = self.intra.prior(like)
        y = decode_latent(chunk, prior, like.shape)
        feat, recon = self.intra.decode(y)
        state = self._state_from_intra(recon, feat, y, 0)
        return recon, state

    @torch.no_grad()
    def encode_p(self, x, state: CodecState):
        xb = down4(x)
        xb_hat, refs, bits_b, base_chunks, base_state = self.base.encode_step(
            xb, state.base)
        aug, dist = self._p_priors(refs, state.prev_feature, state.queue)
        y = quantize(self.enc(x, *aug.contexts), "eval")
        chunk_y = code_latent(y, dist)
        bits_y = rate_bits(y, dist).item()
        feat, recon = self.dec(y, *aug.contexts)
        new_state = CodecState(base=base_state, prev_feature=feat,
                               queue=state.queue.push(y),
                               frame_index=state.frame_index + 1)
        return recon, new_state, bits_b, bits_y, base_chunks + [chunk_y]

    @torch.no_grad()
    def decode_p(self, chunks, state: CodecState):
        xb_hat, refs, base_state = self.base.decode_step(chunks[:2], state.base)
        aug, dist = self._p_priors(refs, state.prev_feature, state.queue)
        y = decode_latent(chunks[2], dist, dist.mean.shape)
        feat, recon = self.dec(y, *aug.contexts)
        new_state = CodecState(base=base_state, prev_feature=feat,
                               queue=state.queue.push(y),
                               frame_index=state.frame_index + 1)
        return recon, new_state, xb_hat

    # -- training path -------------------------------------------------------

    def forward_intra_train(self, x, quant_mode="train"):
        y = self.intra.enc(x)
        q = quantize(y, quant_mode)
        bits = rate_bits(q.rate, self.intra.prior(y))
        feat, recon = self.intra.decode(q.recon)
        state = self._state_from_intra(recon, feat, q.recon, 0)
        return recon, state, bits

    def forward_p_train(self, x, state: CodecState, quant_mode="train"):
        xb = down4(x)
        xb_hat, refs, bits_b, base_state, _ = self.base.forward_train(
            xb, state.base, quant_mode)
        aug, dist = self._p_priors(refs, state.prev_feature, state.queue)
        y = self.enc(x, *aug.contexts)
        q = quantize(y, quant_mode)
        bits_y = rate_bits(q.rate, dist)
        feat, recon = self.dec(q.recon, *aug.contexts)
        new_state = CodecState(base=base_state, prev_feature=feat,
                               queue=state.queue.push(q.recon),
                               frame_index=state.frame_index + 1)
        return recon, new_state, bits_b, bits_y, xb_hat, xb


def build_codec(cfg: Optional[CodecConfig] = None, lambda_index: int = 0,
                seed_base: int = 7310) -> VideoCodec:
    """Construct a codec with weights seeded from the lambda index.

    Encoder and decoder built with the same (cfg, lambda_index) get identical
    weights, so streams round-trip even without a trained checkpoint.
    """
    if not 0 <= lambda_index < len(LAMBDA_SET):
        raise ValueError(f"lambda_index must be in [0, {len(LAMBDA_SET)})")
    torch.manual_seed(seed_base + lambda_index)
    codec = VideoCodec(cfg)
    codec.eval()
    return codec


def _is_intra(t, intra_period):
    return t == 0 or (intra_period > 0 and t % intra_period == 0)


def encode_sequence(codec: VideoCodec, frames, intra_period, lambda_index,
                    return_recon=False):
    """Encode (T, 3, H, W) frames in [0, 1] to container bytes plus stats.

    With return_recon=True the encoder's own reconstructions come back as a
    third value, cropped to source dims, for drift checks and quality reports.
    """
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError("frames must be (T, 3, H, W)")
    if intra_period != -1 and intra_period < 1:
        raise ValueError("intra period must be -1 or >= 1")
    t_total, _, height, width = frames.shape
    header = ContainerHeader(width=width, height=height, frame_count=t_total,
                             intra_period=intra_period, lambda_index=lambda_index)
    stats = SequenceStats(width=width, height=height)
    records = []
    recons = []
    state = None
    for t in range(t_total):
        x = pad_frame(frames[t:t + 1])
        if _is_intra(t, intra_period):
            recon, state, bits, chunk = codec.encode_intra(x)
            records.append(FrameRecord(FRAME_I, [chunk]))
            stats.frames.append(FrameStats(FRAME_I, 0.0, len(chunk) * 8, bits))
        else:
            recon, state, bits_b, bits_y, chunks = codec.encode_p(x, state)
            records.append(FrameRecord(FRAME_P, chunks))
            stats.frames.append(FrameStats(
                FRAME_P,
                (len(chunks[0]) + len(chunks[1])) * 8,
                len(chunks[2]) * 8,
                bits_b + bits_y))
        if return_recon:
            recons.append(recon[:, :, :height, :width])
    data = serialize_container(header, records)
    if return_recon:
        return data, stats, torch.cat(recons, dim=0)
    return data, stats


def decode_sequence(codec: VideoCodec, data, base_only=False):
    """Decode container bytes to (T, 3, H, W) frames, cropped to source dims.

    With base_only=True only the first two substreams of each P-frame are
    decoded and frames come back at quarter resolution.
    """
    header, records = parse_container(data)
    ph = header.height + (-header.height) % WORK_MULTIPLE
    pw = header.width + (-header.width) % WORK_MULTIPLE
    out = []
    state = None
    for t, rec in enumerate(records):
        expected_intra = _is_intra(t, header.intra_period)
        if (rec.frame_type == FRAME_I) != expected_intra:
            raise ValueError(f"frame {t} type does not match the intra period")
        if rec.frame_type == FRAME_I:
            recon, state = codec.decode_intra(rec.substreams[0], (ph, pw))
            frame = down4(recon) if base_only else recon
        else:
            if base_only:
                xb_hat, _refs, base_state = codec.base.decode_step(
                    rec.substreams[:2], state.base)
                # keep the full-res chain consistent for later intra resets
                frame = xb_hat
                state = CodecState(base=base_state,
                                   prev_feature=state.prev_feature,
                                   queue=state.queue,
                                   frame_index=state.frame_index + 1)
            else:
                recon, state, _ = codec.decode_p(rec.substreams, state)
                frame = recon
        out.append(frame)
    frames = torch.cat(out, dim=0)
    if base_only:
        bh = -(-header.height // DOWN_FACTOR)
        bw = -(-header.width // DOWN_FACTOR)
        return frames[:, :, :bh, :bw], header
    return frames[:, :, :header.height, :header.width], header

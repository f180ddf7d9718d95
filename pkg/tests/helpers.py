"""Shared test utilities: finite-difference probes and toy model setup."""

import torch

from duocodec.config import toy_config
from duocodec.metrics import psnr_rgb
from duocodec.synthetic import make_clip
from duocodec.video_codec import VideoCodec, pad_frame

FD_STEP = 1e-5


def p_frame_stats(codec, clip):
    """Per-P-frame (psnr, base_bits, full_bits) from the deterministic coder."""
    height, width = clip.shape[-2:]
    padded = pad_frame(clip)
    rows = []
    with torch.no_grad():
        _, state, _, _ = codec.encode_intra(padded[0:1])
        for t in range(1, clip.shape[0]):
            recon, state, bits_b, bits_y, _ = codec.encode_p(padded[t:t + 1], state)
            quality = psnr_rgb(recon[:, :, :height, :width].numpy(),
                               clip[t:t + 1].numpy())
            rows.append((quality, bits_b, bits_y))
    return rows


def make_fd_toy(seed=0, noise=0.05):
    """Double-precision toy codec nudged off the zero-init manifold.

    Zero-initialized heads block gradient flow through downstream paths, so
    finite-difference checks run at a generic point instead.
    """
    torch.manual_seed(seed)
    codec = VideoCodec(toy_config()).double()
    with torch.no_grad():
        for p in codec.parameters():
            p.add_(torch.randn_like(p) * noise)
    clip = make_clip("shift", 2, 64, 64, seed=3).double()
    return codec, clip


def directional_fd(f, named_params, module=None, h=FD_STEP, seed=0):
    """Compare an analytic directional derivative against central differences.

    The direction is a random unit vector over parameters whose top-level
    module matches ``module`` (all parameters when None) and which receive a
    gradient from ``f``. Returns (rel_err, analytic, fd).
    """
    params = [p for _, p in named_params]
    loss = f()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    vs = []
    for (name, p), g in zip(named_params, grads):
        hit = module is None or name.split(".", 1)[0] == module
        if hit and g is not None:
            vs.append(torch.randn(p.shape, generator=gen, dtype=p.dtype))
        else:
            vs.append(torch.zeros_like(p))
    norm = torch.sqrt(sum((v * v).sum() for v in vs))
    if norm == 0:
        raise ValueError(f"no gradient reaches module {module!r}")
    vs = [v / norm for v in vs]
    analytic = sum((g * v).sum() for g, v in zip(grads, vs)
                   if g is not None).item()
    with torch.no_grad():
        for p, v in zip(params, vs):
            p.add_(h * v)
        plus = f().item()
        for p, v in zip(params, vs):
            p.sub_(2 * h * v)
        minus = f().item()
        for p, v in zip(params, vs):
            p.add_(h * v)
    fd = (plus - minus) / (2 * h)
    rel = abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)
    return rel, analytic, fd

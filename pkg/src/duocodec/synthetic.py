"""Deterministic synthetic clips for tests and overfit experiments.

Every clip is an analytic function of (x, y, t) sampled at pixel centers, so
translated content is exact to machine precision at any subpixel velocity.
For "shift" clips the velocity parameter IS the ground-truth backward flow:
warping frame t-1 by `velocity` reproduces frame t exactly (up to border
content that entered the frame).
"""

import numpy as np
import torch

KINDS = ("static", "shift", "mix")


def _texture_coeffs(rng, components, max_freq=0.15):
    amps = rng.uniform(0.4, 1.0, size=(3, components))
    amps *= 0.35 / np.abs(amps).sum(axis=1, keepdims=True)
    freqs = rng.uniform(-max_freq, max_freq, size=(3, components, 2))
    phases = rng.uniform(0, 2 * np.pi, size=(3, components))
    return amps, freqs, phases


def _sample_texture(coeffs, ys, xs):
    amps, freqs, phases = coeffs
    out = np.empty((3,) + ys.shape, dtype=np.float64)
    for c in range(3):
        acc = np.full(ys.shape, 0.5)
        for k in range(amps.shape[1]):
            arg = 2 * np.pi * (freqs[c, k, 0] * ys + freqs[c, k, 1] * xs) + phases[c, k]
            acc += amps[c, k] * np.sin(arg)
        out[c] = acc
    return out


def make_clip(kind, frames, height, width, seed=0, velocity=(1.0, 0.5),
              components=6, max_freq=0.15):
    """Returns a (frames, 3, height, width) float32 tensor in [0, 1].

    max_freq caps the texture's spatial frequencies (cycles/pixel); keep it
    at or below 0.125 when the clip must stay visible after 4x downsampling.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown clip kind {kind!r}")
    if frames < 1 or height < 1 or width < 1:
        raise ValueError("clip dimensions must be positive")
    if not 0 < max_freq <= 0.5:
        raise ValueError("max_freq must be in (0, 0.5]")
    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    out = np.empty((frames, 3, height, width), dtype=np.float64)

    if kind in ("static", "shift"):
        coeffs = _texture_coeffs(rng, components, max_freq)
        vx, vy = (0.0, 0.0) if kind == "static" else velocity
        for t in range(frames):
            out[t] = _sample_texture(coeffs, ys + vy * t, xs + vx * t)
    else:
        background = _texture_coeffs(rng, components, max_freq)
        n_blobs = 3
        blob_coeffs = [_texture_coeffs(rng, components, max_freq)
                       for _ in range(n_blobs)]
        centers = rng.uniform([0.2 * width, 0.2 * height],
                              [0.8 * width, 0.8 * height], size=(n_blobs, 2))
        vels = rng.uniform(-2.0, 2.0, size=(n_blobs, 2))
        sigma = 0.18 * min(height, width)
        bg_vel = rng.uniform(-1.0, 1.0, size=2)
        for t in range(frames):
            frame = _sample_texture(background, ys + bg_vel[1] * t, xs + bg_vel[0] * t)
            for i in range(n_blobs):
                cx = centers[i, 0] - vels[i, 0] * t
                cy = centers[i, 1] - vels[i, 1] * t
                window = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
                blob = _sample_texture(blob_coeffs[i],
                                       ys + vels[i, 1] * t, xs + vels[i, 0] * t)
                frame = frame * (1 - window) + blob * window
            out[t] = frame

    return torch.from_numpy(np.clip(out, 0.0, 1.0)).float()

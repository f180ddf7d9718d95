"""Losses, staged schedule, and checkpointing for the two-layer codec.

Training runs in three stages. The base group (intra codec, base codec, and
the feature adaptor that seeds base references) optimizes its own
rate-distortion objective first; the augmentative group then trains against
full-resolution quality with the base frozen; finally everything fine-tunes
jointly, with base reconstruction quality kept in the objective as a weighted
constraint and the rate term covering both layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch

from .config import CodecConfig
from .video_codec import DOWN_FACTOR, VideoCodec, pad_frame

STAGES = ("base", "augment", "joint")
# top-level submodules whose parameters belong to the base group
BASE_GROUP = ("intra", "base", "feat_adaptor")
CHECKPOINT_VERSION = 1


def hierarchical_weights(t: int, weights: Sequence[float]) -> float:
    """Cyclic per-frame quality weight for frame index ``t``."""
    if t < 0:
        raise ValueError("frame index must be non-negative")
    if not weights:
        raise ValueError("weights must be non-empty")
    return weights[t % len(weights)]


def mse255(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared error on the 0-255 scale used by the objectives."""
    return torch.mean((255.0 * (a - b)) ** 2)


@dataclass
class FrameTerms:
    """Loss ingredients for one coded frame.

    Base-layer fields stay None on intra frames, which have no base stream.
    """

    dist_full: torch.Tensor
    bits_full: torch.Tensor
    dist_base: Optional[torch.Tensor] = None
    bits_base: Optional[torch.Tensor] = None


def rollout(codec: VideoCodec, frames: torch.Tensor,
            quant_mode: str = "train") -> List[FrameTerms]:
    """Code one group (intra + P frames), keeping the autograd graph.

    ``frames`` is an unpadded (T, 3, H, W) clip; distortions are measured on
    the valid region only, with the base layer scored against the downsampled
    source at its own resolution.
    """
    if frames.dim() != 4 or frames.shape[1] != 3:
        raise ValueError("expected frames shaped (T, 3, H, W)")
    if frames.shape[0] < 1:
        raise ValueError("group must contain at least one frame")
    t_total, _, height, width = frames.shape
    hb, wb = -(-height // DOWN_FACTOR), -(-width // DOWN_FACTOR)
    padded = pad_frame(frames)
    terms = []
    recon, state, bits = codec.forward_intra_train(padded[0:1], quant_mode)
    terms.append(FrameTerms(
        dist_full=mse255(recon[..., :height, :width], frames[0:1]),
        bits_full=bits))
    for t in range(1, t_total):
        recon, state, bits_b, bits_y, xb_hat, xb = codec.forward_p_train(
            padded[t:t + 1], state, quant_mode)
        terms.append(FrameTerms(
            dist_full=mse255(recon[..., :height, :width], frames[t:t + 1]),
            bits_full=bits_y,
            dist_base=mse255(xb_hat[..., :hb, :wb], xb[..., :hb, :wb]),
            bits_base=bits_b))
    return terms


def loss_independent(terms: Sequence[FrameTerms], stage: str, lam: float,
                     weights: Sequence[float], pixels: int) -> torch.Tensor:
    """Per-layer rate-distortion objective averaged over the group.

    The base stage scores base-layer distortion and rate on P frames (the
    intra frame, which opens the base chain, contributes its own terms); the
    augment stage scores full-resolution distortion and full-layer rate on
    every frame.
    """
    if stage not in ("base", "augment"):
        raise ValueError(f"stage must be 'base' or 'augment', got {stage!r}")
    if pixels <= 0:
        raise ValueError("pixels must be positive")
    total = 0.0
    for t, ft in enumerate(terms):
        w = hierarchical_weights(t, weights)
        if stage == "base" and ft.dist_base is not None:
            dist, bits = ft.dist_base, ft.bits_base
        else:
            dist, bits = ft.dist_full, ft.bits_full
        total = total + w * lam * dist + bits / pixels
    return total / len(terms)


def loss_joint(terms: Sequence[FrameTerms], lam: float,
               weights: Sequence[float], w_l: float,
               pixels: int) -> torch.Tensor:
    """Joint objective: full quality plus a weighted base-quality constraint,
    paying the total rate of both layers."""
    if w_l < 0:
        raise ValueError("w_l must be non-negative")
    if pixels <= 0:
        raise ValueError("pixels must be positive")
    total = 0.0
    for t, ft in enumerate(terms):
        w = hierarchical_weights(t, weights)
        dist = ft.dist_full
        bits = ft.bits_full
        if ft.dist_base is not None:
            dist = dist + w_l * ft.dist_base
            bits = bits + ft.bits_base
        total = total + w * lam * dist + bits / pixels
    return total / len(terms)


@dataclass
class StepReport:
    """Scalar diagnostics for one optimization step.

    Rates are per-frame bpp over the group's P frames, so
    ``base_bit_fraction`` is the base layer's share of inter-frame bits.
    ``dist_full`` averages over all frames, ``dist_base`` over P frames.
    """

    loss: float
    dist_full: float
    dist_base: float
    bpp_total: float
    bpp_base: float

    @property
    def base_bit_fraction(self) -> float:
        return self.bpp_base / self.bpp_total if self.bpp_total else 0.0


def step_report(terms: Sequence[FrameTerms], loss: torch.Tensor,
                pixels: int) -> StepReport:
    def val(x):
        return float(x.detach()) if torch.is_tensor(x) else float(x)

    p_frames = [ft for ft in terms if ft.dist_base is not None]
    dist_full = sum(val(ft.dist_full) for ft in terms) / len(terms)
    if not p_frames:
        return StepReport(val(loss), dist_full, 0.0, 0.0, 0.0)
    dist_base = sum(val(ft.dist_base) for ft in p_frames) / len(p_frames)
    bits_base = sum(val(ft.bits_base) for ft in p_frames)
    bits_total = bits_base + sum(val(ft.bits_full) for ft in p_frames)
    norm = len(p_frames) * pixels
    return StepReport(val(loss), dist_full, dist_base,
                      bits_total / norm, bits_base / norm)


def stage_trainable(name: str, stage: str) -> bool:
    """Whether a parameter (by dotted name) trains in the given stage."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    in_base = name.split(".", 1)[0] in BASE_GROUP
    if stage == "base":
        return in_base
    if stage == "augment":
        return not in_base
    return True


def apply_stage(codec: VideoCodec, stage: str) -> List[torch.nn.Parameter]:
    """Set requires_grad per the stage's freeze plan; returns trainables."""
    trainable = []
    for name, p in codec.named_parameters():
        keep = stage_trainable(name, stage)
        p.requires_grad_(keep)
        if keep:
            trainable.append(p)
    if not trainable:
        raise ValueError(f"stage {stage!r} leaves nothing trainable")
    return trainable


@dataclass
class StageResult:
    stage: str
    steps: int
    reports: List[StepReport] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        """Mean loss over the last (up to) 10 steps."""
        tail = self.reports[-10:]
        return sum(r.loss for r in tail) / len(tail) if tail else float("nan")


def _dump_bad_batch(path, stage, step, frames, loss):
    if path is None:
        return
    torch.save({"stage": stage, "step": step, "frames": frames.detach(),
                "loss": float(loss.detach())}, path)


def train_stage(codec: VideoCodec, clips: Sequence[torch.Tensor], stage: str,
                lam: float, steps: int, *, weights: Optional[Sequence[float]] = None,
                w_l: float = 0.05, lr: float = 1e-4,
                group_len: Optional[int] = None,
                dump_path: Optional[Union[str, Path]] = None) -> StageResult:
    """Optimize one stage over a cyclic list of clips.

    Frozen parameters are snapshotted up front and verified bit-identical
    after the loop; a non-finite loss halts training, dumps the offending
    batch to ``dump_path`` if given, and raises.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if not clips:
        raise ValueError("clips must be non-empty")
    if weights is None:
        weights = codec.cfg.frame_weights
    if min(weights) <= 0:
        raise ValueError("quality weights must be positive")
    if len(weights) > 1 and max(weights) / min(weights) <= 1:
        raise ValueError("quality weights must vary within the period")
    trainable = apply_stage(codec, stage)
    frozen = {n: p.detach().clone() for n, p in codec.named_parameters()
              if not p.requires_grad}
    opt = torch.optim.Adam(trainable, lr=lr)
    result = StageResult(stage=stage, steps=steps)
    codec.train()
    try:
        for step in range(steps):
            clip = clips[step % len(clips)]
            frames = clip if group_len is None else clip[:group_len]
            pixels = frames.shape[-2] * frames.shape[-1]
            terms = rollout(codec, frames)
            if stage == "joint":
                loss = loss_joint(terms, lam, weights, w_l, pixels)
            else:
                loss = loss_independent(terms, stage, lam, weights, pixels)
            if not torch.isfinite(loss):
                _dump_bad_batch(dump_path, stage, step, frames, loss)
                where = f"; batch dumped to {dump_path}" if dump_path else ""
                raise RuntimeError(
                    f"non-finite loss at {stage} step {step}{where}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            result.reports.append(step_report(terms, loss, pixels))
    finally:
        codec.eval()
    for n, p in codec.named_parameters():
        if n in frozen and not torch.equal(p.detach(), frozen[n]):
            raise RuntimeError(f"frozen parameter {n} changed during {stage}")
    return result


def save_checkpoint(path: Union[str, Path], codec: VideoCodec, stage: str,
                    step: int, lambda_value: float,
                    extra: Optional[Dict] = None) -> None:
    """Write a self-describing checkpoint (config + weights + provenance)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": codec.cfg.to_dict(),
        "stage": stage,
        "step": step,
        "lambda": lambda_value,
        "state_dict": codec.state_dict(),
    }
    if extra:
        payload["extra"] = dict(extra)
    torch.save(payload, path)


def load_checkpoint(path: Union[str, Path]) -> Tuple[VideoCodec, Dict]:
    """Rebuild a codec from a checkpoint; returns (codec, metadata)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    codec = VideoCodec(CodecConfig.from_dict(payload["config"]))
    codec.load_state_dict(payload["state_dict"])
    codec.eval()
    meta = {k: payload[k] for k in ("stage", "step", "lambda")}
    meta.update(payload.get("extra", {}))
    return codec, meta


def train_schedule(clips: Sequence[torch.Tensor], cfg: CodecConfig,
                   lambda_index: int, out_dir: Union[str, Path],
                   steps: Union[int, Dict[str, int]], *, seed: int = 0,
                   w_l: Optional[float] = None, lr: Optional[float] = None,
                   codec: Optional[VideoCodec] = None,
                   stages: Sequence[str] = STAGES) -> Tuple[VideoCodec, Dict]:
    """Run the staged schedule, writing per-stage checkpoints and a manifest.

    ``steps`` is either one count for every stage or a per-stage mapping.
    Pass a ``codec`` (e.g. from a checkpoint) to resume from a later stage.
    """
    for stage in stages:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
    if not 0 <= lambda_index < len(cfg.lambdas):
        raise ValueError(f"lambda_index must be in [0, {len(cfg.lambdas)})")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(steps, int):
        steps = {stage: steps for stage in stages}
    lam = float(cfg.lambdas[lambda_index])
    w_l = cfg.w_l if w_l is None else w_l
    lr = cfg.learning_rate if lr is None else lr
    torch.manual_seed(seed)
    if codec is None:
        codec = VideoCodec(cfg)
    manifest = {
        "config": cfg.to_dict(),
        "lambda_index": lambda_index,
        "lambda": lam,
        "w_l": w_l,
        "learning_rate": lr,
        "seed": seed,
        "stages": [],
    }
    for stage in stages:
        group_len = (cfg.group_len_joint if stage == "joint"
                     else cfg.group_len_independent)
        result = train_stage(
            codec, clips, stage, lam, steps[stage], weights=cfg.frame_weights,
            w_l=w_l, lr=lr, group_len=group_len,
            dump_path=out / f"nan_batch_{stage}.pt")
        ckpt = out / f"{stage}.pt"
        save_checkpoint(ckpt, codec, stage, steps[stage], lam,
                        extra={"lambda_index": lambda_index, "w_l": w_l})
        manifest["stages"].append({
            "stage": stage,
            "steps": steps[stage],
            "group_len": group_len,
            "final_loss": result.final_loss,
            "checkpoint": ckpt.name,
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return codec, manifest

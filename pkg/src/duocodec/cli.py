"""Command-line interface: encode, decode, train, eval, bdrate, verify-info."""

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from . import frame_io
from .bitstream import FRAME_I, BitstreamError, parse_container
from .config import default_config, tiny_config, toy_config
from .info_theory import DiscreteSource, base_entropy, entropy, verify_decomposition
from .metrics import bd_rate, psnr_rgb, read_rd_csv
from .synthetic import make_clip
from .training import STAGES, load_checkpoint, train_schedule
from .video_codec import build_codec, decode_sequence, encode_sequence

PRESETS = {"default": default_config, "tiny": tiny_config, "toy": toy_config}


# -- shared IO helpers --------------------------------------------------------


def _load_frames(path, width=None, height=None, frames=None):
    """RGB frames as a (T, 3, H, W) float tensor in [0, 1].

    A directory is read as numbered PNGs; anything else as planar I420,
    which needs explicit dimensions and a frame count.
    """
    p = Path(path)
    if p.is_dir():
        arrs = frame_io.load_png_dir(p)
        if frames is not None:
            arrs = arrs[:frames]
        stacked = np.stack(arrs)
    else:
        if width is None or height is None or frames is None:
            raise SystemExit(
                "--width, --height and --frames are required for yuv input")
        raw = frame_io.read_yuv420(p, width, height, frames)
        stacked = np.stack([frame_io.yuv_to_rgb_bt601(f) for f in raw])
    return torch.from_numpy(stacked.transpose(0, 3, 1, 2).copy())


def _save_frames(path, frames):
    """Write (T, 3, H, W) frames; .yuv gets I420, anything else a PNG dir."""
    arrs = frames.permute(0, 2, 3, 1).numpy()
    p = Path(path)
    if p.suffix == ".yuv":
        frame_io.write_yuv420(p, [frame_io.rgb_to_yuv_bt601(a) for a in arrs])
    else:
        frame_io.save_png_dir(p, list(arrs))


def _atomic_write(path, data):
    """Write bytes via a same-directory temp file so failures leave no output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _codec_for(lambda_index, checkpoint, preset):
    if checkpoint:
        codec, meta = load_checkpoint(checkpoint)
        got = meta.get("lambda_index")
        if got is not None and lambda_index is not None and got != lambda_index:
            raise SystemExit(
                f"checkpoint was trained for lambda index {got}, "
                f"stream needs {lambda_index}")
        return codec
    if preset not in PRESETS:
        raise SystemExit(f"unknown preset {preset!r}")
    return build_codec(PRESETS[preset](), lambda_index)


# -- commands -----------------------------------------------------------------


def cmd_encode(args):
    frames = _load_frames(args.input, args.width, args.height, args.frames)
    codec = _codec_for(args.lambda_index, args.checkpoint, args.preset)
    data, stats = encode_sequence(codec, frames, args.ip, args.lambda_index)
    pixels = stats.width * stats.height
    for i, fs in enumerate(stats.frames):
        kind = "I" if fs.frame_type == FRAME_I else "P"
        line = f"frame {i:3d} {kind} {fs.bits_total / pixels:8.5f} bpp"
        if kind == "P":
            frac = fs.bits_base / fs.bits_total if fs.bits_total else 0.0
            line += f"  base fraction {frac:.3f}"
        print(line)
    _atomic_write(args.output, data)
    print(f"wrote {len(data)} bytes, {stats.bpp:.5f} bpp, "
          f"base fraction {stats.base_bit_fraction:.3f}")
    return 0


def cmd_decode(args):
    data = Path(args.input).read_bytes()
    try:
        header, _ = parse_container(data)
        codec = _codec_for(header.lambda_index, args.checkpoint, args.preset)
        frames, _ = decode_sequence(codec, data, base_only=args.base_only)
    except BitstreamError as exc:
        raise SystemExit(f"corrupt stream: {exc}")
    _save_frames(args.output, frames)
    t, _, h, w = frames.shape
    print(f"decoded {t} frames at {w}x{h} to {args.output}")
    return 0


def _read_kv_config(path):
    """Flat key=value config; '#' comments and blank lines are skipped."""
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise SystemExit(f"{path}:{ln}: expected key=value, got {s!r}")
        key, value = s.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _train_clips(spec, frames_needed):
    if spec in (None, "synthetic"):
        return [make_clip(kind, frames_needed, 64, 64, seed=i)
                for i, kind in enumerate(("shift", "mix", "static"))]
    clips = []
    for part in spec.split(","):
        arrs = np.stack(frame_io.load_png_dir(part))
        clips.append(torch.from_numpy(arrs.transpose(0, 3, 1, 2).copy()))
    return clips


def cmd_train(args):
    file_cfg = _read_kv_config(args.config) if args.config else {}

    def pick(name, cast, default):
        cli = getattr(args, name)
        if cli is not None:
            return cli
        if name in file_cfg:
            return cast(file_cfg[name])
        return default

    preset = pick("preset", str, "tiny")
    if preset not in PRESETS:
        raise SystemExit(f"unknown preset {preset!r}")
    cfg = PRESETS[preset]()
    stage = pick("stage", str, "all")
    stages = STAGES if stage == "all" else (stage,)
    for s in stages:
        if s not in STAGES:
            raise SystemExit(f"unknown stage {s!r}")
    steps = pick("steps", int, 100)
    lambda_index = pick("lambda_index", int, 0)
    seed = pick("seed", int, 0)
    out = Path(pick("out", str, "runs/train"))
    w_l = pick("w_l", float, None)
    lr = pick("lr", float, None)
    data = pick("data", str, None)

    clips = _train_clips(data, max(cfg.group_len_independent,
                                   cfg.group_len_joint))
    codec = None
    if args.resume:
        codec, meta = load_checkpoint(args.resume)
        print(f"resumed from {args.resume} (stage {meta['stage']})")
    codec, manifest = train_schedule(
        clips, cfg, lambda_index, out, steps, seed=seed, w_l=w_l, lr=lr,
        codec=codec, stages=stages)
    for entry in manifest["stages"]:
        print(f"stage {entry['stage']:8s} {entry['steps']} steps, "
              f"final loss {entry['final_loss']:.4f}")
    print(f"manifest: {out / 'manifest.json'}")
    return 0


def cmd_eval(args):
    recon = _load_frames(args.recon, args.width, args.height, args.frames)
    orig = _load_frames(args.orig, args.width, args.height, args.frames)
    if recon.shape != orig.shape:
        raise SystemExit(
            f"shape mismatch: recon {tuple(recon.shape)} vs "
            f"orig {tuple(orig.shape)}")
    per_frame = [psnr_rgb(r.numpy(), o.numpy())
                 for r, o in zip(recon, orig)]
    mean = float(np.mean(per_frame))
    report = {"count": len(per_frame), "mean_psnr": mean,
              "frames": [round(v, 6) for v in per_frame]}
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2))
    print(f"mean PSNR {mean:.3f} dB over {len(per_frame)} frames")
    return 0


def cmd_bdrate(args):
    tests = {c.dataset: c for c in read_rd_csv(args.test)}
    anchors = {c.dataset: c for c in read_rd_csv(args.anchor)}
    shared = sorted(set(tests) & set(anchors))
    if not shared:
        raise SystemExit("the two files share no datasets")
    for dataset in shared:
        value = bd_rate(tests[dataset], anchors[dataset])
        print(f"{dataset}: {value:+.3f}% "
              f"({tests[dataset].codec} vs {anchors[dataset].codec})")
    return 0


def cmd_verify_info(args):
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        k = int(rng.integers(2, 65))
        pmf = rng.random(k) + 1e-6
        pmf /= pmf.sum()
        dmap = rng.integers(0, int(rng.integers(1, k + 1)), size=k)
        src = DiscreteSource(pmf=pmf, downsample_map=dmap)
        residual = abs(verify_decomposition(src))
        worst = max(worst, residual)
        if base_entropy(src) > entropy(src) + 1e-12:
            raise SystemExit("base entropy exceeded source entropy")
    if worst > 1e-9:
        raise SystemExit(
            f"entropy decomposition residual {worst:.3e} exceeds 1e-9")
    print(f"{args.trials} sources: max |H(X) - H(X_b) - H(X|X_b)| "
          f"= {worst:.3e}")
    return 0


# -- argument wiring ----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="duocodec",
        description="Two-layer neural video codec with a decodable "
                    "low-resolution base stream.")
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="encode frames to a container file")
    enc.add_argument("--input", required=True,
                     help="PNG directory or planar I420 file")
    enc.add_argument("--width", type=int)
    enc.add_argument("--height", type=int)
    enc.add_argument("--frames", type=int)
    enc.add_argument("--ip", type=int, default=32, choices=(32, -1),
                     help="intra period: 32, or -1 for a single leading I")
    enc.add_argument("--lambda-index", type=int, default=0,
                     choices=range(4), dest="lambda_index")
    enc.add_argument("--output", required=True)
    enc.add_argument("--checkpoint", help="trained weights to encode with")
    enc.add_argument("--preset", default="default", choices=sorted(PRESETS))
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="decode a container file")
    dec.add_argument("--input", required=True)
    dec.add_argument("--output", required=True,
                     help=".yuv file or PNG directory")
    dec.add_argument("--base-only", action="store_true",
                     help="decode only the low-resolution base stream")
    dec.add_argument("--checkpoint")
    dec.add_argument("--preset", default="default", choices=sorted(PRESETS))
    dec.set_defaults(func=cmd_decode)

    trn = sub.add_parser("train", help="run the staged training schedule")
    trn.add_argument("--stage", choices=STAGES + ("all",))
    trn.add_argument("--config", help="flat key=value config file")
    trn.add_argument("--preset", choices=sorted(PRESETS))
    trn.add_argument("--steps", type=int)
    trn.add_argument("--lambda-index", type=int, dest="lambda_index",
                     choices=range(4))
    trn.add_argument("--seed", type=int)
    trn.add_argument("--out")
    trn.add_argument("--w-l", type=float, dest="w_l")
    trn.add_argument("--lr", type=float)
    trn.add_argument("--data",
                     help="'synthetic' or comma-separated PNG directories")
    trn.add_argument("--resume", help="checkpoint to continue from")
    trn.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="PSNR report for a reconstruction")
    ev.add_argument("--recon", required=True)
    ev.add_argument("--orig", required=True)
    ev.add_argument("--report", help="write a JSON report here")
    ev.add_argument("--width", type=int)
    ev.add_argument("--height", type=int)
    ev.add_argument("--frames", type=int)
    ev.set_defaults(func=cmd_eval)

    bd = sub.add_parser("bdrate", help="BD-rate between two RD CSV files")
    bd.add_argument("--test", required=True)
    bd.add_argument("--anchor", required=True)
    bd.set_defaults(func=cmd_bdrate)

    vi = sub.add_parser("verify-info",
                        help="entropy decomposition self-check")
    vi.add_argument("--trials", type=int, default=1000)
    vi.add_argument("--seed", type=int, default=0)
    vi.set_defaults(func=cmd_verify_info)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Frame IO: YUV420 files, BT.601 conversion, bicubic rescaling, padding.

Frames are numpy float32 arrays of shape (H, W, 3) with values in [0, 1].
All conversions run in float64 internally and are bit-stable for fixed inputs.
"""

import os
import re
from dataclasses import dataclass

import numpy as np

PAD_MULTIPLE = 64

# Limited range BT.601: Y in [16, 235], Cb/Cr in [16, 240], RGB in [0, 1].
_RGB_TO_YUV = np.array(
    [[65.481, 128.553, 24.966],
     [-37.797, -74.203, 112.0],
     [112.0, -93.786, -18.214]], dtype=np.float64)
_YUV_OFFSET = np.array([16.0, 128.0, 128.0], dtype=np.float64)
_YUV_TO_RGB = np.array(
    [[1.16438356, 0.0, 1.59602679],
     [1.16438356, -0.39176229, -0.81296765],
     [1.16438356, 2.01723214, 0.0]], dtype=np.float64)


@dataclass
class YuvFrame:
    """One 4:2:0 frame; y is (H, W) uint8, u and v are (H/2, W/2) uint8."""
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ValueError("luma dimensions must be even for 4:2:0")
        if self.u.shape != (h // 2, w // 2) or self.v.shape != (h // 2, w // 2):
            raise ValueError("chroma planes must be half the luma size")


@dataclass
class PadSpec:
    orig_h: int
    orig_w: int
    padded_h: int
    padded_w: int


def read_yuv420(path, width, height, num_frames):
    """Read planar I420 frames; errors name the first missing frame index."""
    if width % 2 or height % 2:
        raise ValueError("width and height must be even")
    frame_bytes = width * height * 3 // 2
    size = os.path.getsize(path)
    if size < frame_bytes * num_frames:
        raise ValueError(
            f"yuv file truncated at frame {size // frame_bytes}: "
            f"{size} bytes holds only {size // frame_bytes} of {num_frames} frames")
    frames = []
    uv_w, uv_h = width // 2, height // 2
    with open(path, "rb") as f:
        for _ in range(num_frames):
            buf = f.read(frame_bytes)
            y = np.frombuffer(buf, dtype=np.uint8, count=width * height)
            u = np.frombuffer(buf, dtype=np.uint8, count=uv_w * uv_h,
                              offset=width * height)
            v = np.frombuffer(buf, dtype=np.uint8, count=uv_w * uv_h,
                              offset=width * height + uv_w * uv_h)
            frames.append(YuvFrame(y=y.reshape(height, width).copy(),
                                   u=u.reshape(uv_h, uv_w).copy(),
                                   v=v.reshape(uv_h, uv_w).copy()))
    return frames


def write_yuv420(path, frames):
    with open(path, "wb") as f:
        for fr in frames:
            f.write(fr.y.tobytes())
            f.write(fr.u.tobytes())
            f.write(fr.v.tobytes())


def _bilinear_up2(plane):
    """Upsample a chroma plane 2x; samples are center-sited, borders replicate."""
    hc, wc = plane.shape
    p = plane.astype(np.float64)

    def axis_coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) / 2.0 - 0.5
        f = np.floor(c)
        w = c - f
        i0 = np.clip(f.astype(np.int64), 0, n_in - 1)
        i1 = np.clip(f.astype(np.int64) + 1, 0, n_in - 1)
        return i0, i1, w

    y0, y1, wy = axis_coords(hc * 2, hc)
    x0, x1, wx = axis_coords(wc * 2, wc)
    top = p[y0][:, x0] * (1 - wx) + p[y0][:, x1] * wx
    bot = p[y1][:, x0] * (1 - wx) + p[y1][:, x1] * wx
    return top * (1 - wy[:, None]) + bot * wy[:, None]


def _box_down2(plane):
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def yuv_to_rgb_bt601(frame: YuvFrame) -> np.ndarray:
    y = frame.y.astype(np.float64)
    u = _bilinear_up2(frame.u)
    v = _bilinear_up2(frame.v)
    yuv = np.stack([y, u, v], axis=-1) - _YUV_OFFSET
    rgb = yuv @ _YUV_TO_RGB.T
    return np.clip(rgb / 255.0, 0.0, 1.0).astype(np.float32)


def rgb_to_yuv_bt601(frame: np.ndarray) -> YuvFrame:
    if frame.shape[0] % 2 or frame.shape[1] % 2:
        raise ValueError("4:2:0 output needs even frame dimensions")
    rgb = frame.astype(np.float64)
    yuv = rgb @ _RGB_TO_YUV.T + _YUV_OFFSET
    y = np.clip(np.rint(yuv[..., 0]), 0, 255).astype(np.uint8)
    u = np.clip(np.rint(_box_down2(yuv[..., 1])), 0, 255).astype(np.uint8)
    v = np.clip(np.rint(_box_down2(yuv[..., 2])), 0, 255).astype(np.uint8)
    return YuvFrame(y=y, u=u, v=v)


def _catmull_rom(t):
    # cubic convolution kernel with a = -0.5
    t = np.abs(t)
    out = np.zeros_like(t)
    m1 = t <= 1.0
    m2 = (t > 1.0) & (t < 2.0)
    out[m1] = 1.5 * t[m1] ** 3 - 2.5 * t[m1] ** 2 + 1.0
    out[m2] = -0.5 * (t[m2] ** 3 - 5.0 * t[m2] ** 2 + 8.0 * t[m2] - 4.0)
    return out


def _cubic_taps(factor):
    # output center sits at i*factor + (factor-1)/2 in input coordinates
    off = (factor - 1) / 2.0
    lo = int(np.ceil(off - 2 * factor))
    hi = int(np.floor(off + 2 * factor))
    m = np.arange(lo, hi + 1)
    w = _catmull_rom((m - off) / factor) / factor
    return m, w / w.sum()


def _resample_axis(arr, factor, axis):
    n_in = arr.shape[axis]
    m, w = _cubic_taps(factor)
    idx = np.clip(np.arange(n_in // factor)[:, None] * factor + m[None, :],
                  0, n_in - 1)
    moved = np.moveaxis(arr, axis, 0)
    out = np.tensordot(w, moved[idx], axes=(0, 1))
    return np.moveaxis(out, 0, axis)


def bicubic_downsample(frame: np.ndarray, factor: int) -> np.ndarray:
    """Separable Catmull-Rom downsample by 2 or 4 with replicate borders."""
    if factor not in (2, 4):
        raise ValueError("factor must be 2 or 4")
    h, w = frame.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"dimensions {h}x{w} not divisible by {factor}")
    out = frame.astype(np.float64)
    out = _resample_axis(out, factor, 0)
    out = _resample_axis(out, factor, 1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def pad_to_multiple(frame: np.ndarray, multiple: int = PAD_MULTIPLE):
    """Replicate-pad bottom/right so both dimensions divide `multiple`."""
    h, w = frame.shape[:2]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    spec = PadSpec(orig_h=h, orig_w=w, padded_h=h + ph, padded_w=w + pw)
    if ph == 0 and pw == 0:
        return frame, spec
    widths = ((0, ph), (0, pw)) + ((0, 0),) * (frame.ndim - 2)
    return np.pad(frame, widths, mode="edge"), spec


def crop_to_spec(frame: np.ndarray, spec: PadSpec) -> np.ndarray:
    if frame.shape[:2] != (spec.padded_h, spec.padded_w):
        raise ValueError("frame does not match pad spec")
    return frame[:spec.orig_h, :spec.orig_w]


def _numeric_key(name):
    parts = re.split(r"(\d+)", name)
    return [int(p) if p.isdigit() else p for p in parts]


def load_png_dir(path):
    """Load a directory of PNG frames, sorted by numeric filename order."""
    from PIL import Image
    names = sorted((n for n in os.listdir(path) if n.lower().endswith(".png")),
                   key=_numeric_key)
    if not names:
        raise ValueError(f"no png frames found in {path}")
    frames = []
    for n in names:
        img = Image.open(os.path.join(path, n)).convert("RGB")
        frames.append(np.asarray(img, dtype=np.float32) / 255.0)
    return frames


def save_png_dir(path, frames):
    from PIL import Image
    os.makedirs(path, exist_ok=True)
    for i, fr in enumerate(frames):
        arr = np.clip(np.rint(fr * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(os.path.join(path, f"frame_{i:05d}.png"))

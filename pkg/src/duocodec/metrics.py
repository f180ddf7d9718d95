"""Rate-distortion evaluation: PSNR, BD-rate, flow endpoint error, RD export."""

import csv
import io
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

PSNR_CAP = 99.0


def psnr_rgb(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR on the 0..255 RGB scale, capped at 99 dB for identical inputs."""
    if a.shape != b.shape:
        raise ValueError("frames must have identical shapes")
    diff = (a.astype(np.float64) - b.astype(np.float64)) * 255.0
    mse = float(np.mean(diff * diff))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse))


@dataclass
class RDPoint:
    bpp: float
    psnr: float


@dataclass
class RDCurve:
    codec: str
    dataset: str
    points: List[RDPoint]

    def validate(self):
        if len(self.points) < 4:
            raise ValueError("an RD curve needs at least 4 points")
        pts = sorted(self.points, key=lambda p: p.bpp)
        bpps = [p.bpp for p in pts]
        psnrs = [p.psnr for p in pts]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise ValueError("bpp values must be strictly increasing")
        if any(q2 <= q1 for q1, q2 in zip(psnrs, psnrs[1:])):
            raise ValueError("psnr must increase with rate")
        if any(p.bpp <= 0 for p in pts):
            raise ValueError("bpp values must be positive")
        return pts


def bd_rate(test: RDCurve, anchor: RDCurve) -> float:
    """Average rate difference in percent over the shared quality interval.

    Piecewise-cubic interpolation of log10(rate) as a function of PSNR,
    integrated over the overlapping PSNR range; no extrapolation.
    """
    from scipy.interpolate import PchipInterpolator

    t = test.validate()
    a = anchor.validate()
    tq = np.array([p.psnr for p in t])
    tr = np.log10([p.bpp for p in t])
    aq = np.array([p.psnr for p in a])
    ar = np.log10([p.bpp for p in a])
    lo = max(tq.min(), aq.min())
    hi = min(tq.max(), aq.max())
    if hi <= lo:
        raise ValueError("curves share no quality interval")
    ti = PchipInterpolator(tq, tr)
    ai = PchipInterpolator(aq, ar)
    int_t = ti.integrate(lo, hi)
    int_a = ai.integrate(lo, hi)
    delta = (int_t - int_a) / (hi - lo)
    return float(100.0 * (10.0 ** delta - 1.0))


def aepe(flow: np.ndarray, ref: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Mean endpoint error between flow fields of shape (H, W, 2)."""
    if flow.shape != ref.shape or flow.shape[-1] != 2:
        raise ValueError("flows must share an (H, W, 2) shape")
    err = np.sqrt(((flow.astype(np.float64) - ref.astype(np.float64)) ** 2).sum(-1))
    if mask is not None:
        if mask.shape != err.shape:
            raise ValueError("mask shape must match the flow grid")
        if not mask.any():
            raise ValueError("mask selects no pixels")
        err = err[mask]
    return float(err.mean())


def large_motion_mask(ref: np.ndarray, threshold: float = 15.0) -> np.ndarray:
    """Pixels whose reference displacement exceeds the threshold magnitude."""
    mag = np.sqrt((ref.astype(np.float64) ** 2).sum(-1))
    return mag > threshold


def rd_rows_to_csv(rows) -> str:
    """Rows of (codec, dataset, lambda, bpp, psnr) to deterministic CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["codec", "dataset", "lambda", "bpp", "psnr"])
    for codec, dataset, lam, bpp, psnr in rows:
        w.writerow([codec, dataset, lam, f"{bpp:.6f}", f"{psnr:.6f}"])
    return buf.getvalue()


def read_rd_csv(path) -> List[RDCurve]:
    groups = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            key = (row["codec"], row["dataset"])
            groups.setdefault(key, []).append(
                RDPoint(bpp=float(row["bpp"]), psnr=float(row["psnr"])))
    return [RDCurve(codec=c, dataset=d, points=pts) for (c, d), pts in groups.items()]


def export_rd(curves: List[RDCurve], csv_path, plot_path=None):
    rows = []
    for curve in curves:
        for i, p in enumerate(sorted(curve.points, key=lambda p: p.bpp)):
            rows.append((curve.codec, curve.dataset, i, p.bpp, p.psnr))
    text = rd_rows_to_csv(rows)
    with open(csv_path, "w", newline="") as f:
        f.write(text)
    if plot_path:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6, 4))
        for curve in curves:
            pts = sorted(curve.points, key=lambda p: p.bpp)
            ax.plot([p.bpp for p in pts], [p.psnr for p in pts],
                    marker="o", label=f"{curve.codec}/{curve.dataset}")
        ax.set_xlabel("bpp")
        ax.set_ylabel("PSNR (dB)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
    return text

"""Exact entropy accounting for discrete sources with deterministic downsampling.

For a source X and a deterministic map x -> x_b, the chain rule gives
H(X) = H(X_b) + H(X | X_b) exactly; verify_decomposition measures the residual
by direct enumeration.
"""

from dataclasses import dataclass

import numpy as np

MAX_ALPHABET = 4096


@dataclass
class DiscreteSource:
    """pmf over {0..K-1} plus a deterministic downsample map of the same length."""
    pmf: np.ndarray
    downsample_map: np.ndarray

    def __post_init__(self):
        self.pmf = np.asarray(self.pmf, dtype=np.float64)
        self.downsample_map = np.asarray(self.downsample_map, dtype=np.int64)
        k = self.pmf.shape[0]
        if k < 1 or k > MAX_ALPHABET:
            raise ValueError(f"alphabet size {k} outside [1, {MAX_ALPHABET}]")
        if self.downsample_map.shape != (k,):
            raise ValueError("downsample_map length must match the pmf")
        if np.any(self.pmf < 0):
            raise ValueError("pmf entries must be nonnegative")
        if abs(self.pmf.sum() - 1.0) > 1e-9:
            raise ValueError("pmf must sum to 1")
        if np.any(self.downsample_map < 0):
            raise ValueError("downsample_map values must be nonnegative")

    @classmethod
    def from_kernel(cls, pmf, kernel):
        """Build from a conditional kernel p(x_b | x); rejects stochastic rows."""
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != len(pmf):
            raise ValueError("kernel must be (K, K_b)")
        one_hot = (np.isclose(kernel.max(axis=1), 1.0)
                   & np.isclose(kernel.sum(axis=1), 1.0))
        if not np.all(one_hot):
            raise ValueError("downsampling kernel is not deterministic")
        return cls(pmf=pmf, downsample_map=kernel.argmax(axis=1))


def entropy(source: DiscreteSource) -> float:
    p = source.pmf[source.pmf > 0]
    return float(-(p * np.log2(p)).sum())


def base_pmf(source: DiscreteSource) -> np.ndarray:
    n_b = int(source.downsample_map.max()) + 1
    return np.bincount(source.downsample_map, weights=source.pmf, minlength=n_b)


def base_entropy(source: DiscreteSource) -> float:
    p = base_pmf(source)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def conditional_entropy(source: DiscreteSource) -> float:
    """H(X | X_b) by enumeration; the map is deterministic so p(x, x_b) = p(x)."""
    pb = base_pmf(source)
    total = 0.0
    for x, px in enumerate(source.pmf):
        if px <= 0:
            continue
        cond = px / pb[source.downsample_map[x]]
        total -= px * np.log2(cond)
    return float(total)


def verify_decomposition(source: DiscreteSource) -> float:
    """Residual of H(X) - H(X_b) - H(X|X_b); zero up to float error."""
    return entropy(source) - base_entropy(source) - conditional_entropy(source)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duocodec.info_theory import (DiscreteSource, base_entropy,
                                  conditional_entropy, entropy,
                                  verify_decomposition)


def _joint_oracle(pmf, dmap):
    """H(X), H(X_b), H(X|X_b) from an explicit joint table, summed independently."""
    n_b = int(dmap.max()) + 1
    joint = np.zeros((len(pmf), n_b))
    for x, p in enumerate(pmf):
        joint[x, dmap[x]] = p
    pb = joint.sum(axis=0)
    h_x = -sum(p * math.log2(p) for p in pmf if p > 0)
    h_b = -sum(p * math.log2(p) for p in pb if p > 0)
    h_cond = 0.0
    for x in range(len(pmf)):
        for b in range(n_b):
            p = joint[x, b]
            if p > 0:
                h_cond -= p * math.log2(p / pb[b])
    return h_x, h_b, h_cond


class TestEntropy:
    def test_uniform_256_halved(self):
        pmf = np.full(256, 1 / 256)
        dmap = np.arange(256) // 2
        src = DiscreteSource(pmf=pmf, downsample_map=dmap)
        assert abs(entropy(src) - 8.0) < 1e-12
        assert abs(base_entropy(src) - 7.0) < 1e-12
        assert abs(conditional_entropy(src) - 1.0) < 1e-12
        assert abs(verify_decomposition(src)) < 1e-12

    def test_injective_map_leaves_nothing_conditional(self):
        rng = np.random.default_rng(0)
        pmf = rng.dirichlet(np.ones(64))
        src = DiscreteSource(pmf=pmf, downsample_map=np.arange(64))
        assert abs(conditional_entropy(src)) < 1e-12
        assert abs(entropy(src) - base_entropy(src)) < 1e-12

    def test_constant_map_keeps_everything_conditional(self):
        rng = np.random.default_rng(1)
        pmf = rng.dirichlet(np.ones(32))
        src = DiscreteSource(pmf=pmf, downsample_map=np.zeros(32, dtype=np.int64))
        assert abs(base_entropy(src)) < 1e-12
        assert abs(conditional_entropy(src) - entropy(src)) < 1e-10

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_decomposition_matches_joint_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 300))
        pmf = rng.dirichlet(np.ones(k) * rng.uniform(0.2, 3.0))
        dmap = rng.integers(0, max(1, k // 2), k)
        src = DiscreteSource(pmf=pmf, downsample_map=dmap)
        h_x, h_b, h_cond = _joint_oracle(pmf, dmap)
        assert abs(entropy(src) - h_x) < 1e-9
        assert abs(base_entropy(src) - h_b) < 1e-9
        assert abs(conditional_entropy(src) - h_cond) < 1e-9
        assert abs(verify_decomposition(src)) <= 1e-9

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_downsampling_never_adds_information(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 200))
        pmf = rng.dirichlet(np.ones(k))
        dmap = rng.integers(0, k, k)
        src = DiscreteSource(pmf=pmf, downsample_map=dmap)
        assert base_entropy(src) <= entropy(src) + 1e-12


class TestValidation:
    def test_rejects_bad_pmf(self):
        with pytest.raises(ValueError):
            DiscreteSource(pmf=np.array([0.5, 0.6]), downsample_map=np.zeros(2, np.int64))
        with pytest.raises(ValueError):
            DiscreteSource(pmf=np.array([1.5, -0.5]), downsample_map=np.zeros(2, np.int64))

    def test_rejects_oversized_alphabet(self):
        k = 5000
        with pytest.raises(ValueError):
            DiscreteSource(pmf=np.full(k, 1 / k), downsample_map=np.zeros(k, np.int64))

    def test_rejects_stochastic_kernel(self):
        pmf = np.array([0.5, 0.5])
        with pytest.raises(ValueError, match="deterministic"):
            DiscreteSource.from_kernel(pmf, np.array([[0.5, 0.5], [0.0, 1.0]]))

    def test_accepts_one_hot_kernel(self):
        pmf = np.array([0.25, 0.75])
        src = DiscreteSource.from_kernel(pmf, np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert list(src.downsample_map) == [1, 0]

"""End-to-end acceptance checks, one test per shipped guarantee.

Run with -v for one PASSED/FAILED line per guarantee. Each test states its
tolerance inline and fails with the measured value, so the suite doubles as
a verification report.
"""

import math
import time

import numpy as np
import pytest
import torch

from duocodec.bitstream import parse_container, rans_decode, rans_encode
from duocodec.config import tiny_config
from duocodec.entropy_model import (CDF_TOTAL, CdfTable, DistParams,
                                    SYMBOL_MAX, SYMBOL_MIN, build_cdf)
from duocodec.info_theory import DiscreteSource, verify_decomposition
from duocodec.metrics import RDCurve, RDPoint, aepe, bd_rate
from duocodec.motion_ops import rescale_flow_up2
from duocodec.synthetic import make_clip
from duocodec.training import loss_independent, loss_joint, rollout
from duocodec.video_codec import (VideoCodec, build_codec, decode_sequence,
                                  down4, encode_sequence, pad_frame)

from helpers import directional_fd, make_fd_toy, p_frame_stats


def test_entropy_decomposition_exact_on_random_sources():
    # 1000 random discrete sources with random deterministic coarsenings:
    # total information must split exactly into the coarse part plus the
    # remainder given the coarse part, within 1e-9 bits, in under 10 s.
    rng = np.random.default_rng(0)
    start = time.monotonic()
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 257))
        pmf = rng.dirichlet(np.full(k, 0.5))
        k_b = int(rng.integers(1, k + 1))
        dmap = rng.integers(0, k_b, size=k)
        residual = verify_decomposition(DiscreteSource(pmf, dmap))
        worst = max(worst, abs(residual))
    elapsed = time.monotonic() - start
    assert worst <= 1e-9, f"worst residual {worst:.3e}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"


@pytest.mark.slow
def test_sequence_roundtrip_bit_exact_across_rates_and_drift_free():
    # Decoded frames must equal the encoder's own reconstructions bitwise
    # at every rate point, and stay equal over 96 frames without an intra
    # reset, all within 5 minutes.
    start = time.monotonic()
    clip = make_clip("mix", 9, 64, 64, seed=1)
    for lambda_index in range(4):
        torch.manual_seed(100 + lambda_index)
        codec = build_codec(tiny_config(), lambda_index=lambda_index)
        codec.eval()
        data, _, recons = encode_sequence(codec, clip, 32, lambda_index,
                                          return_recon=True)
        decoded, _ = decode_sequence(codec, data)
        assert torch.equal(decoded, recons), f"rate point {lambda_index}"

    long_clip = make_clip("shift", 96, 64, 64, seed=2)
    torch.manual_seed(104)
    codec = build_codec(tiny_config(), lambda_index=1)
    codec.eval()
    data, _, recons = encode_sequence(codec, long_clip, -1, 1,
                                      return_recon=True)
    decoded, _ = decode_sequence(codec, data)
    assert torch.equal(decoded, recons), "drift over a 96-frame sequence"
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"took {elapsed:.1f}s"


@pytest.mark.slow
def test_container_rate_tracks_model_estimate_per_frame():
    # Actual per-frame container bits (substream payloads plus that frame's
    # framing) must stay within 2% + 32 bytes of the model's estimate on
    # 20 random clips. The 22-byte sequence header is sequence overhead,
    # not frame spend, and is excluded.
    for k in range(20):
        torch.manual_seed(300 + k)
        codec = build_codec(tiny_config(), lambda_index=k % 4)
        codec.eval()
        kind = ("mix", "shift", "static")[k % 3]
        height, width = [(64, 64), (48, 40), (80, 56), (64, 96)][k % 4]
        clip = make_clip(kind, 5, height, width, seed=k, velocity=(1.5, -0.5))
        data, stats = encode_sequence(codec, clip, 32 if k % 2 else -1, k % 4)
        _, records = parse_container(data)
        for t, (frame, record) in enumerate(zip(stats.frames, records)):
            framing = 5 + 4 * len(record.substreams)
            actual = (framing + sum(len(s) for s in record.substreams)) * 8
            estimate = frame.bits_estimated
            allowance = 0.02 * estimate + 32 * 8
            assert abs(actual - estimate) <= allowance, (
                f"clip {k} frame {t}: actual {actual} vs estimate "
                f"{estimate:.1f} (allowance {allowance:.1f})")


@pytest.mark.slow
def test_range_coder_roundtrips_and_uniform_binary_rate():
    # 10^4 random streams must roundtrip exactly, and a balanced binary
    # stream must cost 1.0 +- 0.06 bits per symbol.
    rng = np.random.default_rng(0)
    lengths = rng.integers(0, 64, size=10_000)
    total = int(lengths.sum())
    means = torch.tensor(rng.uniform(-30, 30, size=total))
    scales = torch.tensor(rng.uniform(0.12, 20.0, size=total))
    cdf_all = build_cdf(DistParams(means, scales))
    pos = 0
    for length in lengths:
        length = int(length)
        rows = CdfTable(cdf_all.table[pos:pos + length])
        centers = means[pos:pos + length].numpy()
        symbols = np.clip(np.rint(centers + rng.normal(0.0, 3.0, size=length)),
                          SYMBOL_MIN, SYMBOL_MAX).astype(np.int64)
        assert np.array_equal(rans_decode(rans_encode(symbols, rows),
                                          length, rows), symbols)
        pos += length

    n = 20_000
    # Two equal half-mass symbols; every other symbol keeps the mandatory
    # one-count floor, costing the mains log2(32513/65536) = 1.0113 bits.
    row = np.zeros(SYMBOL_MAX - SYMBOL_MIN + 2, dtype=np.uint32)
    floor_total = row.shape[0] - 3
    half = (CDF_TOTAL - floor_total) // 2
    row[1] = half
    row[2] = 2 * half
    row[3:] = np.arange(floor_total) + 2 * half + 1
    row[-1] = CDF_TOTAL
    table = CdfTable(np.tile(row, (n, 1)))
    bits = rng.integers(0, 2, size=n) + SYMBOL_MIN
    rate = len(rans_encode(bits, table)) * 8 / n
    assert abs(rate - 1.0) <= 0.06, f"binary rate {rate:.4f}"


def test_refinement_and_prior_are_identity_at_initialization():
    # With freshly initialized residual heads the co-refinement must pass
    # base motion through exactly (rescaled across scales) and the latent
    # prediction must equal the plain upsampled base latent.
    torch.manual_seed(1)
    codec = VideoCodec(tiny_config())
    codec.eval()
    clip = make_clip("mix", 2, 64, 64, seed=3)
    padded = pad_frame(clip)
    with torch.no_grad():
        _, state, _, _ = codec.encode_intra(padded[0:1])
        _, refs, _, _, _ = codec.base.encode_step(down4(padded[1:2]),
                                                  state.base)
        augmented = codec.augmentor(refs.motion, refs.feature,
                                    state.prev_feature)
        predicted = codec.latent_prior(refs.latent, state.queue)
        upsampled = codec.latent_prior.upsample_base(refs.latent)
    assert torch.equal(augmented.motion_quarter, refs.motion)
    assert torch.equal(augmented.motion_half,
                       rescale_flow_up2(augmented.motion_quarter))
    assert torch.equal(augmented.motion_full,
                       rescale_flow_up2(augmented.motion_half))
    assert torch.equal(augmented.feature_quarter, refs.feature)
    assert torch.equal(predicted, upsampled)


@pytest.mark.slow
def test_training_loss_gradients_match_finite_differences():
    # Analytic gradients of both training losses must match central finite
    # differences to 1e-3 relative error on a model under 10^4 parameters
    # (noise-free identity quantization). Rate-only modules are probed at
    # lambda 0, where the loss is small enough for differences to resolve.
    lam, weights, pixels = 95.0, (1.0, 1.2, 0.5, 0.9), 64 * 64
    codec, clip = make_fd_toy()
    assert sum(p.numel() for p in codec.parameters()) <= 10_000

    def loss_fn(kind, lam_value):
        def f():
            terms = rollout(codec, clip, quant_mode="identity")
            if kind == "joint":
                return loss_joint(terms, lam_value, weights, 0.05, pixels)
            return loss_independent(terms, kind, lam_value, weights, pixels)
        return f

    named = list(codec.named_parameters())
    for kind in ("base", "augment", "joint"):
        rel, _, _ = directional_fd(loss_fn(kind, lam), named, module=None)
        assert rel <= 1e-3, f"{kind}: rel err {rel:.2e}"
    for module in ("latent_prior", "ctx_prior", "params"):
        rel, _, _ = directional_fd(loss_fn("joint", 0.0), named,
                                   module=module, seed=17)
        assert rel <= 1e-3, f"{module}: rel err {rel:.2e}"


@pytest.mark.slow
def test_joint_overfit_halves_loss_with_periodic_quality(joint_smoke,
                                                         overfit_clip):
    # 200 joint steps on one clip must cut the loss by half, and the
    # per-frame quality must carry the period-4 signature of the frame
    # weights: a dominant positive autocorrelation peak at lag 4 and the
    # best quality on the heavily weighted phase.
    codec, result = joint_smoke
    losses = [r.loss for r in result.reports]
    ratio = np.mean(losses[-10:]) / np.mean(losses[:10])
    assert ratio <= 0.5, f"loss ratio {ratio:.3f}"

    quality = np.array([q for q, _, _ in p_frame_stats(codec, overfit_clip)])
    kernel = np.array([0.5, 1.0, 1.0, 1.0, 0.5]) / 4.0
    seasonal = quality[2:-2] - np.convolve(quality, kernel, "valid")
    autocorr = np.array([np.corrcoef(seasonal[:-k], seasonal[k:])[0, 1]
                         for k in range(1, 7)])
    assert int(autocorr.argmax()) == 3, f"peak at lag {autocorr.argmax() + 1}"
    assert autocorr[3] >= 0.25, f"lag-4 autocorrelation {autocorr[3]:.3f}"

    phase_quality = [quality[[t - 1 for t in range(1, 16) if t % 4 == phase]].mean()
                     for phase in range(4)]
    assert int(np.argmax(phase_quality)) == 1, (
        f"best phase {np.argmax(phase_quality)}, quality {phase_quality}")


@pytest.mark.slow
def test_base_weight_ablation_raises_base_bit_share(ablation_runs,
                                                    overfit_clip):
    # Weighting the base reconstruction in the joint loss must strictly
    # raise the mean share of bits spent on the base substreams, within a
    # 30-minute budget.
    shares = {}
    for w_l, (codec, _) in ablation_runs["runs"].items():
        rows = p_frame_stats(codec, overfit_clip)
        shares[w_l] = float(np.mean([b / (b + y) for _, b, y in rows]))
    assert shares[1.0] > shares[0.0], f"shares {shares}"
    assert ablation_runs["seconds"] < 1800.0, (
        f"ablation took {ablation_runs['seconds']:.0f}s")


def test_bd_rate_identity_and_rate_doubling():
    # Identical curves must give exactly 0.000%; doubling every rate must
    # give +100.0% within 0.1; and the calculator must agree with an
    # independent numerical integration to 1e-4.
    from scipy.interpolate import PchipInterpolator

    def curve(bpps, psnrs):
        return RDCurve(codec="x", dataset="d",
                       points=[RDPoint(bpp=b, psnr=q)
                               for b, q in zip(bpps, psnrs)])

    bpps, psnrs = [0.05, 0.1, 0.2, 0.4], [30.0, 33.0, 36.0, 39.0]
    assert bd_rate(curve(bpps, psnrs), curve(bpps, psnrs)) == 0.0
    doubled = bd_rate(curve([b * 2 for b in bpps], psnrs),
                      curve(bpps, psnrs))
    assert abs(doubled - 100.0) <= 0.1, f"doubled-rate value {doubled:.4f}"

    rng = np.random.default_rng(7)
    for _ in range(5):
        q_a = np.sort(rng.uniform(28, 42, 5)) + np.arange(5) * 1e-3
        r_a = np.sort(rng.uniform(0.01, 1.0, 5))
        q_t = np.sort(rng.uniform(q_a[1], q_a[-2], 4)) + np.arange(4) * 1e-3
        r_t = np.sort(rng.uniform(0.01, 1.0, 4))
        got = bd_rate(curve(list(r_t), list(q_t)), curve(list(r_a), list(q_a)))
        t_interp = PchipInterpolator(q_t, np.log10(r_t))
        a_interp = PchipInterpolator(q_a, np.log10(r_a))
        lo, hi = max(q_t.min(), q_a.min()), min(q_t.max(), q_a.max())
        xs = np.linspace(lo, hi, 200001)
        delta = (np.trapezoid(t_interp(xs), xs)
                 - np.trapezoid(a_interp(xs), xs)) / (hi - lo)
        want = 100.0 * (10.0 ** delta - 1.0)
        assert abs(got - want) <= 1e-4, f"calculator {got} vs oracle {want}"


def test_endpoint_error_known_value_and_loop_oracle():
    # A constant (3, 4) flow against a zero reference is exactly 5.0 px of
    # endpoint error, and the vectorized metric must match an elementwise
    # loop to 1e-6 on random fields, with and without a mask.
    flow = np.zeros((6, 7, 2), dtype=np.float64)
    flow[..., 0], flow[..., 1] = 3.0, 4.0
    assert aepe(flow, np.zeros_like(flow)) == 5.0

    rng = np.random.default_rng(3)
    for use_mask in (False, True):
        estimate = rng.normal(0.0, 2.0, size=(5, 9, 2))
        reference = rng.normal(0.0, 2.0, size=(5, 9, 2))
        mask = rng.integers(0, 2, size=(5, 9)).astype(bool) if use_mask else None
        if mask is not None and not mask.any():
            mask[0, 0] = True
        got = aepe(estimate, reference, mask)
        total, count = 0.0, 0
        for i in range(5):
            for j in range(9):
                if mask is None or mask[i, j]:
                    dx = estimate[i, j, 0] - reference[i, j, 0]
                    dy = estimate[i, j, 1] - reference[i, j, 1]
                    total += math.sqrt(dx * dx + dy * dy)
                    count += 1
        assert abs(got - total / count) <= 1e-6

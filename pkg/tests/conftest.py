"""Session-scoped trained fixtures shared by behavior and acceptance tests.

Every fixture is deterministic: fixed seeds, CPU, one synthetic clip. The
expensive part (two independent stages) runs once; each joint variant
branches from that snapshot and trains only its own joint leg.
"""

import copy
import time

import pytest
import torch

from duocodec.config import tiny_config
from duocodec.synthetic import make_clip
from duocodec.training import train_stage
from duocodec.video_codec import VideoCodec

FIXTURE_LAMBDA = 95.0
INDEPENDENT_LR = 4e-4
# Strong period-4 quality modulation so the short joint run leaves a
# measurable per-frame quality pattern.
SHARP_WEIGHTS = (0.4, 2.0, 0.4, 0.8)


@pytest.fixture(scope="session")
def overfit_clip():
    """16-frame 64x64 clip with global drift plus a locally moving blob."""
    return make_clip("mix", 16, 64, 64, seed=5)


@pytest.fixture(scope="session")
def independent_checkpoint(overfit_clip):
    """State dict and reports after the two independent training stages."""
    torch.manual_seed(42)
    codec = VideoCodec(tiny_config())
    base_result = train_stage(codec, [overfit_clip], "base", FIXTURE_LAMBDA,
                              150, lr=INDEPENDENT_LR, group_len=4)
    augment_result = train_stage(codec, [overfit_clip], "augment",
                                 FIXTURE_LAMBDA, 150, lr=INDEPENDENT_LR,
                                 group_len=4)
    return {"state": copy.deepcopy(codec.state_dict()),
            "base_result": base_result,
            "augment_result": augment_result}


def _branch(checkpoint, seed):
    codec = VideoCodec(tiny_config())
    codec.load_state_dict(copy.deepcopy(checkpoint["state"]))
    torch.manual_seed(seed)
    return codec


@pytest.fixture(scope="session")
def joint_smoke(independent_checkpoint, overfit_clip):
    """(codec, StageResult) for the 200-step joint overfit run.

    The group length covers the whole clip so every step sees all four
    weight phases in order, which keeps the periodic quality pattern
    clean enough to measure after 200 steps.
    """
    codec = _branch(independent_checkpoint, 9)
    result = train_stage(codec, [overfit_clip], "joint", FIXTURE_LAMBDA, 200,
                         lr=7e-4, group_len=16, weights=SHARP_WEIGHTS)
    codec.eval()
    return codec, result


@pytest.fixture(scope="session")
def ablation_runs(independent_checkpoint, overfit_clip):
    """Joint runs at base-distortion weight 0 and 1, plus their wall time."""
    start = time.monotonic()
    runs = {}
    for w_l in (0.0, 1.0):
        codec = _branch(independent_checkpoint, 11)
        result = train_stage(codec, [overfit_clip], "joint", FIXTURE_LAMBDA,
                             150, lr=INDEPENDENT_LR, group_len=8, w_l=w_l)
        codec.eval()
        runs[w_l] = (codec, result)
    return {"runs": runs, "seconds": time.monotonic() - start}

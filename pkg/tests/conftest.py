"""
Pytest configuration file with common fixtures.
"""
import os
import sys

import numpy as np
import pytest

# Add the parent directory to sys.path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import config

# Finiteness assertions on every layer while testing
config.DEBUG_NUMERICS = True

from hmm import fit
from model import Model, ModelConfig, init_model
from pcloud import Frame, Recording


TINY_CONFIG = ModelConfig(
    alignment_size=4,
    mlp_widths=(6, 8),
    tnet_conv_widths=(4,),
    tnet_fc_widths=(4,),
    rnn_units_per_direction=8,
    head_width=8,
    frame_rate=10.0,
    window_seconds=0.3,
    stride_seconds=0.1,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Three-frame windows, stride one, four points per frame."""
    return TINY_CONFIG


@pytest.fixture
def random_model(tiny_config):
    """Untrained float32 model with an HMM that mildly prefers staying in a state."""
    params = init_model(tiny_config, np.random.default_rng(7)).astype(np.float32)
    k = tiny_config.num_classes
    truth = [i // 4 % k for i in range(8 * k)]
    model = Model(config=tiny_config, params=params, seed=7)
    model.hmm = fit(truth, truth, k, alpha=1.0)
    return model


def make_recording(recording_id, n_frames, label, rng, rate=10.0, n_points=5, start=0.0):
    frames = [
        Frame(timestamp=start + i / rate, points=rng.normal(size=(n_points, 3)), label=label)
        for i in range(n_frames)
    ]
    return Recording(recording_id=recording_id, frames=frames)


@pytest.fixture
def recording_factory(rng):
    def factory(recording_id="rec", n_frames=10, label=0, **kwargs):
        return make_recording(recording_id, n_frames, label, rng, **kwargs)
    return factory

"""
Whole-network checks: parameter budget, end-to-end gradients and inference.
"""
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import model as model_lib
import nncore
from errors import ConfigError, ShapeError
from model import ModelConfig


def test_default_parameter_budget():
    config = ModelConfig()
    params = model_lib.init_model(config, np.random.default_rng(0))
    assert params.count() == 76_206
    assert model_lib.parameter_formula(config) == 76_206
    assert 60_000 <= params.count() <= 120_000


def test_wide_recurrent_reading():
    config = replace(ModelConfig(), rnn_units_per_direction=128)
    assert model_lib.parameter_formula(config) == 141_006


def test_end_to_end_gradients(tiny_config):
    rng = np.random.default_rng(5)
    params = model_lib.init_model(tiny_config, rng)
    params.weights["lpn.tnet.out.W"] = rng.normal(scale=0.1, size=params.weights["lpn.tnet.out.W"].shape)
    batch = rng.normal(size=(4, tiny_config.window_frames, tiny_config.alignment_size, 3))
    labels = np.array([0, 1, 2, 4])

    def loss():
        return model_lib.forward_loss(params, tiny_config, batch, labels)[0]

    _, grads, _, _ = model_lib.forward_loss(params, tiny_config, batch, labels)
    assert set(grads) == set(params.weights)
    worst = nncore.grad_check(loss, params.weights, grads, h=1e-6, seed=1, fraction=0.2)
    assert worst < 1e-4


def test_forward_is_deterministic(tiny_config):
    params = model_lib.init_model(tiny_config, np.random.default_rng(0))
    batch = np.random.default_rng(1).normal(size=(3, 3, 4, 3))
    first, _, _ = model_lib.forward(params, tiny_config, batch, training=False)
    second, _, _ = model_lib.forward(params, tiny_config, batch, training=False)
    np.testing.assert_array_equal(first, second)


def test_predict_proba_rows_sum_to_one(tiny_config):
    params = model_lib.as_dtype(model_lib.init_model(tiny_config, np.random.default_rng(0)), np.float32)
    batch = np.random.default_rng(2).normal(size=(70, 3, 4, 3))
    probs = model_lib.predict_proba(params, tiny_config, batch)
    assert probs.shape == (70, tiny_config.num_classes)
    assert probs.dtype == np.float32
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)


def test_predict_proba_empty(tiny_config):
    params = model_lib.init_model(tiny_config, np.random.default_rng(0))
    assert model_lib.predict_proba(params, tiny_config, np.zeros((0, 3, 4, 3))).shape == (0, 5)


def test_predict_proba_ignores_point_order(tiny_config):
    params = model_lib.init_model(tiny_config, np.random.default_rng(0))
    rng = np.random.default_rng(3)
    batch = rng.normal(size=(2, 3, 4, 3))
    shuffled = batch[:, :, rng.permutation(4)]
    np.testing.assert_array_equal(model_lib.predict_proba(params, tiny_config, batch),
                                  model_lib.predict_proba(params, tiny_config, shuffled))


def test_forward_rejects_bad_shape(tiny_config):
    params = model_lib.init_model(tiny_config, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        model_lib.forward(params, tiny_config, np.zeros((2, 3, 4)), training=False)


def test_config_round_trip_through_mapping():
    config = replace(ModelConfig(), mlp_widths=(16, 24), alignment_size=25, frame_rate=30.0)
    assert ModelConfig.from_mapping(config.to_dict()) == config


def test_config_from_raw_strings():
    config = ModelConfig.from_mapping({"mlp_widths": "16, 32", "alignment_size": "25", "unrelated": "x"})
    assert config.mlp_widths == (16, 32)
    assert config.alignment_size == 25


@pytest.mark.parametrize("values", [
    {"class_names": "walking,walking"},
    {"class_names": "walking,eps"},
    {"stride_seconds": "3.0"},
    {"alignment_size": "zero"},
])
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        ModelConfig.from_mapping(values)

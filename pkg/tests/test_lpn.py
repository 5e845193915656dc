import os
import sys
import unittest

import numpy as np
import pytest

# Add parent directory to path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import lpn
import nncore
from errors import ConfigError, ShapeError
from lpn import LPNConfig
from pcloud import AlignedFrame, Segment


class TestEmbedding(unittest.TestCase):
    def setUp(self):
        self.config = LPNConfig(alignment_size=8, mlp_widths=(8, 12), tnet_conv_widths=(6,), tnet_fc_widths=(5,))
        self.rng = np.random.default_rng(0)
        self.params = lpn.init_lpn(self.config, self.rng)
        self.params.weights["lpn.tnet.out.W"] = self.rng.normal(scale=0.1, size=(5, 9))
        for name, value in self.params.buffers.items():
            if name.endswith("running_var"):
                value[:] = self.rng.uniform(0.5, 2.0, size=value.shape)

    def test_initial_transform_is_identity(self):
        params = lpn.init_lpn(self.config, np.random.default_rng(1))
        frame = AlignedFrame(0.0, self.rng.normal(size=(8, 3)))
        transform = lpn.tnet_forward(frame, params, self.config)
        self.assertEqual(transform.shape, (3, 3))
        np.testing.assert_array_equal(transform, np.eye(3))

    def test_permutation_invariance_is_exact(self):
        worst = 0.0
        for _ in range(100):
            points = self.rng.normal(size=(8, 3))
            reference = lpn.embed_frame(AlignedFrame(0.0, points), self.params, self.config)
            for _ in range(10):
                shuffled = points[self.rng.permutation(8)]
                embedding = lpn.embed_frame(AlignedFrame(0.0, shuffled), self.params, self.config)
                worst = max(worst, float(np.max(np.abs(embedding - reference))))
        self.assertEqual(worst, 0.0)

    def test_embedding_shape_and_dtype(self):
        embedding = lpn.embed_frame(AlignedFrame(0.0, self.rng.normal(size=(8, 3))), self.params, self.config)
        self.assertEqual(embedding.shape, (12,))
        self.assertEqual(embedding.dtype, np.float64)

    def test_segment_is_time_distributed(self):
        frames = tuple(AlignedFrame(i, self.rng.normal(size=(8, 3))) for i in range(5))
        embeddings = lpn.embed_segment(Segment(frames), self.params, self.config)
        self.assertEqual(embeddings.shape, (5, 12))
        single = lpn.embed_segment(Segment(frames[:1]), self.params, self.config)
        np.testing.assert_array_equal(single[0], lpn.embed_frame(frames[0], self.params, self.config))

    def test_shuffling_each_frame_keeps_segment_embedding(self):
        frames = tuple(AlignedFrame(i, self.rng.normal(size=(8, 3))) for i in range(4))
        shuffled = tuple(AlignedFrame(f.timestamp, f.points[self.rng.permutation(8)]) for f in frames)
        np.testing.assert_array_equal(
            lpn.embed_segment(Segment(frames), self.params, self.config),
            lpn.embed_segment(Segment(shuffled), self.params, self.config),
        )

    def test_wrong_alignment_size(self):
        with self.assertRaises(ShapeError):
            lpn.embed_frame(AlignedFrame(0.0, np.ones((5, 3))), self.params, self.config)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            lpn.init_lpn(LPNConfig(mlp_widths=()), self.rng)


class TestManualForward(unittest.TestCase):
    """Two points, one per-point layer of width two, straight-line evaluation."""

    def test_matches_hand_computation(self):
        config = LPNConfig(alignment_size=2, mlp_widths=(2,), tnet_conv_widths=(1,), tnet_fc_widths=(1,))
        params = lpn.init_lpn(config, np.random.default_rng(0))
        W = np.array([[1.0, -1.0], [0.5, 2.0], [0.0, 1.0]])
        b = np.array([0.1, -0.2])
        Wg = np.array([[1.0, 0.0], [1.0, 1.0]])
        bg = np.array([0.0, 0.5])
        params.weights["lpn.mlp0.W"], params.weights["lpn.mlp0.b"] = W, b
        params.weights["lpn.gate.W"], params.weights["lpn.gate.b"] = Wg, bg
        points = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, -1.0]])

        scale = 1.0 / np.sqrt(1.0 + nncore.BN_EPS)
        hidden = []
        for point in points:
            row = []
            for j in range(2):
                value = sum(point[i] * W[i, j] for i in range(3)) + b[j]
                row.append(max(value * scale, 0.0))
            hidden.append(row)
        pooled = [max(hidden[0][j], hidden[1][j]) for j in range(2)]
        gate = [max((sum(pooled[i] * Wg[i, j] for i in range(2)) + bg[j]) * scale, 0.0) for j in range(2)]
        expected = [gate[j] * pooled[j] for j in range(2)]

        embedding = lpn.embed_frame(AlignedFrame(0.0, points), params, config)
        np.testing.assert_allclose(embedding, expected, rtol=1e-12)

    def test_max_semantics(self):
        config = LPNConfig(alignment_size=3, mlp_widths=(1,), tnet_conv_widths=(1,), tnet_fc_widths=(1,))
        params = lpn.init_lpn(config, np.random.default_rng(0))
        params.weights["lpn.mlp0.W"] = np.array([[1.0], [0.0], [0.0]])
        params.weights["lpn.mlp0.b"] = np.zeros(1)
        top = [3.0, 0.0, 0.0]
        original = np.array([top, [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        altered = np.array([top, top, [2.0, 0.0, 0.0]])
        _, cache_a, _ = lpn.lpn_forward(original[None], params, config, training=False)
        _, cache_b, _ = lpn.lpn_forward(altered[None], params, config, training=False)
        np.testing.assert_array_equal(cache_a[8], cache_b[8])


def test_lpn_gradients_match_finite_differences():
    config = LPNConfig(alignment_size=5, mlp_widths=(6, 8), tnet_conv_widths=(4,), tnet_fc_widths=(4,))
    rng = np.random.default_rng(11)
    params = lpn.init_lpn(config, rng)
    params.weights["lpn.tnet.out.W"] = rng.normal(scale=0.1, size=(4, 9))
    points = rng.normal(size=(6, 5, 3))
    upstream = rng.normal(size=(6, 8))

    def loss():
        embedding, _, _ = lpn.lpn_forward(points, params, config, training=True)
        return float(np.sum(embedding * upstream))

    _, cache, _ = lpn.lpn_forward(points, params, config, training=True)
    grads = lpn.lpn_backward(upstream, cache)
    assert set(grads) == set(params.weights)
    worst = nncore.grad_check(loss, params.weights, grads, h=1e-6, seed=0, fraction=0.5)
    assert worst < 1e-4


def test_training_mode_reports_running_statistics():
    config = LPNConfig(alignment_size=4, mlp_widths=(4,), tnet_conv_widths=(3,), tnet_fc_widths=(3,))
    params = lpn.init_lpn(config, np.random.default_rng(0))
    _, _, running = lpn.lpn_forward(np.random.default_rng(1).normal(size=(3, 4, 3)), params, config, training=True)
    assert set(running) == {name[:-len(".running_mean")] for name in params.buffers if name.endswith("running_mean")}


@pytest.mark.parametrize("shape", [(4, 3), (2, 4, 2)])
def test_rejects_bad_batch_shape(shape):
    config = LPNConfig(alignment_size=4)
    params = lpn.init_lpn(config, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        lpn.lpn_forward(np.zeros(shape), params, config, training=False)


if __name__ == "__main__":
    unittest.main()

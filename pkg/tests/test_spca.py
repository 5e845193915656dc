import math
import os
import sys
import unittest

import numpy as np

# Add parent directory to path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import spca
from errors import ParameterError
from pcloud import AlignedFrame, Segment, centroid, segment_array
from spca import SPCAParams, SPCARanges


def make_segment(rng, length=4, size=6):
    frames = tuple(AlignedFrame(i / 10, rng.normal(loc=(0.5, 2.0, 1.0), size=(size, 3)), 0) for i in range(length))
    return Segment(frames=frames, label=0)


def pairwise(points):
    flat = points.reshape(-1, points.shape[-1])
    return np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=-1)


class TestRotation(unittest.TestCase):
    def setUp(self):
        self.segment = make_segment(np.random.default_rng(0))
        self.array = segment_array(self.segment)

    def test_zero_angle_is_identity(self):
        np.testing.assert_array_equal(segment_array(spca.rotate_horizontal(self.segment, 0.0)), self.array)

    def test_quarter_turn(self):
        c = centroid(self.segment)
        moved = spca.rotate_points(np.array([[c.x + 1, c.y, 0.7]]), math.pi / 2, (c.x, c.y))
        np.testing.assert_allclose(moved, [[c.x, c.y + 1, 0.7]], atol=1e-12)

    def test_full_turn(self):
        turned = segment_array(spca.rotate_horizontal(self.segment, 2 * math.pi))
        np.testing.assert_allclose(turned, self.array, atol=1e-9)

    def test_isometry_and_heights(self):
        turned = segment_array(spca.rotate_horizontal(self.segment, 1.234))
        np.testing.assert_array_equal(turned[..., 2], self.array[..., 2])
        before, after = pairwise(self.array), pairwise(turned)
        mask = before > 0
        self.assertLess(np.max(np.abs(after[mask] - before[mask]) / before[mask]), 1e-9)

    def test_centroid_fixed(self):
        turned = spca.rotate_horizontal(self.segment, 0.7)
        np.testing.assert_allclose(tuple(centroid(turned)), tuple(centroid(self.segment)), atol=1e-12)


class TestStretch(unittest.TestCase):
    def setUp(self):
        self.segment = make_segment(np.random.default_rng(1))

    def test_unit_factors_are_identity(self):
        out = spca.stretch(self.segment, 1.0, 1.0)
        np.testing.assert_array_equal(segment_array(out), segment_array(self.segment))

    def test_vertical_doubling(self):
        c = centroid(self.segment)
        out = spca.stretch_points(np.array([[c.x, c.y, c.z + 0.5]]), 1.0, 2.0, tuple(c))
        np.testing.assert_allclose(out[0, 2], c.z + 1.0)

    def test_horizontal_distances_scale(self):
        before = segment_array(self.segment)[..., :2]
        after = segment_array(spca.stretch(self.segment, 1.1, 1.0))[..., :2]
        ratio = pairwise(after)[pairwise(before) > 0] / pairwise(before)[pairwise(before) > 0]
        np.testing.assert_allclose(ratio, 1.1, rtol=1e-12)

    def test_origin_mode(self):
        out = spca.stretch(self.segment, 2.0, 1.0, mode=spca.STRETCH_ORIGIN)
        np.testing.assert_allclose(segment_array(out)[..., 0], 2 * segment_array(self.segment)[..., 0])

    def test_invalid_factor(self):
        with self.assertRaises(ParameterError):
            spca.stretch(self.segment, 0.0, 1.0)


class TestPerturb(unittest.TestCase):
    def setUp(self):
        self.segment = make_segment(np.random.default_rng(2))
        self.array = segment_array(self.segment)

    def test_zero_shift(self):
        np.testing.assert_array_equal(segment_array(spca.perturb(self.segment, (0, 0, 0))), self.array)

    def test_translation(self):
        out = segment_array(spca.perturb(self.segment, (0.1, 0.0, 0.0)))
        np.testing.assert_allclose(out[..., 0], self.array[..., 0] + 0.1)
        np.testing.assert_allclose(pairwise(out), pairwise(self.array), atol=1e-12)

    def test_jitter_std(self):
        points = np.zeros((10_000, 3))
        out = spca.perturb_points(points, (0, 0, 0), 0.02, np.random.default_rng(5))
        self.assertLess(abs(out.std() - 0.02), 0.002)


class TestAugment(unittest.TestCase):
    def setUp(self):
        self.segment = make_segment(np.random.default_rng(3))
        self.array = segment_array(self.segment)

    def test_all_off_is_identity(self):
        out = spca.augment(self.segment, spca.identity_params())
        np.testing.assert_array_equal(segment_array(out), self.array)

    def test_half_turn_twice(self):
        params = SPCAParams(theta=math.pi, stretch=False, perturb=False)
        twice = spca.augment(spca.augment(self.segment, params), params)
        np.testing.assert_allclose(segment_array(twice), self.array, atol=1e-9)

    def test_height_rank_preserved(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            params = spca.sample_params(SPCARanges(), rng)
            out = segment_array(spca.augment(self.segment, params))
            np.testing.assert_array_equal(np.argsort(out[..., 2], axis=None), np.argsort(self.array[..., 2], axis=None))

    def test_input_untouched(self):
        copy = self.array.copy()
        spca.augment(self.segment, SPCAParams(theta=1.0, s_h=1.1, s_v=0.9, p=(0.01, 0.02, 0.03)))
        np.testing.assert_array_equal(segment_array(self.segment), copy)

    def test_order_is_rotate_stretch_perturb(self):
        params = SPCAParams(theta=0.5, s_h=1.2, s_v=0.8, p=(0.01, -0.02, 0.03))
        c = centroid(self.segment)
        manual = spca.rotate_points(self.array, 0.5, (c.x, c.y))
        manual = spca.stretch_points(manual, 1.2, 0.8, manual.reshape(-1, 3).mean(axis=0))
        manual = manual + np.array([0.01, -0.02, 0.03])
        np.testing.assert_allclose(segment_array(spca.augment(self.segment, params)), manual, atol=1e-12)

    def test_sampled_params_within_ranges(self):
        ranges = SPCARanges(stretch_min=0.9, stretch_max=1.1, perturb_bound=0.05)
        rng = np.random.default_rng(0)
        for _ in range(100):
            params = spca.sample_params(ranges, rng)
            self.assertTrue(0.0 <= params.theta <= 2 * math.pi)
            self.assertTrue(0.9 <= params.s_h <= 1.1 and 0.9 <= params.s_v <= 1.1)
            self.assertTrue(all(abs(v) <= 0.05 for v in params.p))

    def test_batch_is_reproducible_per_segment(self):
        batch = np.stack([self.array, self.array * 2])
        first = spca.augment_batch(batch, SPCARanges(), seed=9, epoch=3, indices=[10, 11])
        alone = spca.augment_batch(batch[1:], SPCARanges(), seed=9, epoch=3, indices=[11])
        np.testing.assert_array_equal(first[1], alone[0])
        other_epoch = spca.augment_batch(batch, SPCARanges(), seed=9, epoch=4, indices=[10, 11])
        self.assertFalse(np.array_equal(first, other_epoch))
        np.testing.assert_array_equal(batch[0], self.array)


class TestRandomSegments(unittest.TestCase):
    """Invariants over many random segments of varying shape."""

    COUNT = 1000

    def setUp(self):
        rng = np.random.default_rng(2024)
        self.cases = []
        for _ in range(self.COUNT):
            segment = make_segment(rng, length=int(rng.integers(1, 6)), size=int(rng.integers(2, 9)))
            self.cases.append((segment, rng.uniform(0, 2 * math.pi, size=2), rng.uniform(0.5, 1.5, size=2),
                               rng.uniform(-0.2, 0.2, size=3)))

    def test_rotation_is_an_isometry_keeping_heights(self):
        for segment, (a, _), _, _ in self.cases:
            before = segment_array(segment)
            after = segment_array(spca.rotate_horizontal(segment, a))
            np.testing.assert_array_equal(after[..., 2], before[..., 2])
            np.testing.assert_allclose(pairwise(after), pairwise(before), rtol=1e-9, atol=1e-12)

    def test_rotations_compose(self):
        for segment, (a, b), _, _ in self.cases:
            twice = spca.rotate_horizontal(spca.rotate_horizontal(segment, a), b)
            once = spca.rotate_horizontal(segment, a + b)
            np.testing.assert_allclose(segment_array(twice), segment_array(once), atol=1e-9)

    def test_centroid_stretch_keeps_the_centroid(self):
        for segment, _, (s_h, s_v), _ in self.cases:
            out = spca.stretch(segment, s_h, s_v)
            np.testing.assert_allclose(tuple(centroid(out)), tuple(centroid(segment)), atol=1e-9)

    def test_translation_keeps_distances(self):
        for segment, _, _, p in self.cases:
            before = segment_array(segment)
            after = segment_array(spca.perturb(segment, tuple(p)))
            np.testing.assert_allclose(pairwise(after), pairwise(before), atol=1e-12)
            np.testing.assert_allclose(after - before, np.broadcast_to(p, before.shape), atol=1e-12)

    def test_augment_never_touches_its_input(self):
        rng = np.random.default_rng(7)
        for segment, _, _, _ in self.cases:
            copy = segment_array(segment).copy()
            spca.augment(segment, spca.sample_params(SPCARanges(), rng))
            np.testing.assert_array_equal(segment_array(segment), copy)


if __name__ == "__main__":
    unittest.main()

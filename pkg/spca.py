"""
Segment-wise point cloud augmentation.

A training segment is rotated on the horizontal plane about the vertical axis
through its centroid, stretched, then translated. One draw of parameters is
shared by every frame of the segment so the motion inside the window stays
physically consistent. Fresh parameters are drawn for every segment in every
epoch.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import ParameterError
from pcloud import Segment, centroid, segment_array, segment_from_array

logger = logging.getLogger(__name__)

# Spawn-key tag that keeps augmentation draws independent of weight init and shuffling
AUGMENT_STREAM = 1

STRETCH_CENTROID = "centroid"
STRETCH_ORIGIN = "origin"


@dataclass(frozen=True)
class SPCAParams:
    """One concrete augmentation draw."""
    theta: float = 0.0
    s_h: float = 1.0
    s_v: float = 1.0
    p: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotate: bool = True
    stretch: bool = True
    perturb: bool = True
    stretch_mode: str = STRETCH_CENTROID
    jitter_sigma: float = 0.0  # > 0 switches perturbation to per-point Gaussian jitter

    def validate(self) -> None:
        if self.s_h <= 0 or self.s_v <= 0:
            raise ParameterError(f"stretch factors must be positive, got s_h={self.s_h}, s_v={self.s_v}")
        if self.stretch_mode not in (STRETCH_CENTROID, STRETCH_ORIGIN):
            raise ParameterError(f"unknown stretch mode: {self.stretch_mode}")
        if self.jitter_sigma < 0:
            raise ParameterError(f"jitter sigma must be non-negative, got {self.jitter_sigma}")
        if len(self.p) != 3 or not all(math.isfinite(v) for v in self.p):
            raise ParameterError(f"perturbation must be three finite values, got {self.p}")


@dataclass(frozen=True)
class SPCARanges:
    """Sampling ranges for per-epoch augmentation."""
    theta_min: float = 0.0
    theta_max: float = 2 * math.pi
    stretch_min: float = 0.8
    stretch_max: float = 1.2
    perturb_bound: float = 0.05
    rotate: bool = True
    stretch: bool = True
    perturb: bool = True
    stretch_mode: str = STRETCH_CENTROID
    jitter_sigma: float = 0.0

    def validate(self) -> None:
        if not 0 < self.stretch_min <= self.stretch_max:
            raise ParameterError(f"invalid stretch range [{self.stretch_min}, {self.stretch_max}]")
        if self.perturb_bound < 0:
            raise ParameterError(f"perturbation bound must be non-negative, got {self.perturb_bound}")
        if self.theta_max < self.theta_min:
            raise ParameterError("theta_max must not be below theta_min")


def sample_params(ranges: SPCARanges, rng: np.random.Generator) -> SPCAParams:
    """Draw one augmentation from the configured ranges."""
    theta = float(rng.uniform(ranges.theta_min, ranges.theta_max))
    s_h, s_v = (float(v) for v in rng.uniform(ranges.stretch_min, ranges.stretch_max, size=2))
    p = tuple(float(v) for v in rng.uniform(-ranges.perturb_bound, ranges.perturb_bound, size=3))
    return SPCAParams(
        theta=theta, s_h=s_h, s_v=s_v, p=p,
        rotate=ranges.rotate, stretch=ranges.stretch, perturb=ranges.perturb,
        stretch_mode=ranges.stretch_mode, jitter_sigma=ranges.jitter_sigma,
    )


def segment_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Generator for one segment in one epoch, reproducible from (seed, epoch, index)."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(AUGMENT_STREAM, epoch, index))
    return np.random.default_rng(sequence)


# Array-level transforms on (..., 3) point arrays

def rotate_points(points: np.ndarray, theta: float, centre: Sequence[float]) -> np.ndarray:
    out = np.array(points, dtype=np.float64)
    if theta == 0.0:
        return out
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx = points[..., 0] - centre[0]
    dy = points[..., 1] - centre[1]
    out[..., 0] = centre[0] + cos_t * dx - sin_t * dy
    out[..., 1] = centre[1] + sin_t * dx + cos_t * dy
    return out


def stretch_points(points: np.ndarray, s_h: float, s_v: float, centre: Optional[Sequence[float]]) -> np.ndarray:
    if s_h <= 0 or s_v <= 0:
        raise ParameterError(f"stretch factors must be positive, got s_h={s_h}, s_v={s_v}")
    out = np.array(points, dtype=np.float64)
    # unit factors leave their axes bit-for-bit unchanged
    for axes, factor in (((0, 1), s_h), ((2,), s_v)):
        if factor == 1.0:
            continue
        for axis in axes:
            if centre is None:
                out[..., axis] = points[..., axis] * factor
            else:
                out[..., axis] = centre[axis] + (points[..., axis] - centre[axis]) * factor
    return out


def perturb_points(points: np.ndarray, p: Sequence[float], jitter_sigma: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if jitter_sigma > 0:
        if rng is None:
            raise ParameterError("jitter mode needs a random generator")
        return points + rng.normal(0.0, jitter_sigma, size=points.shape)
    return points + np.asarray(p, dtype=np.float64)


def _centre_of(points: np.ndarray) -> np.ndarray:
    return points.reshape(-1, 3).mean(axis=0)


def augment_array(points: np.ndarray, params: SPCAParams, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Apply rotate -> stretch -> perturb to an ``(L, AS, 3)`` array. Returns a new array."""
    params.validate()
    out = np.array(points, dtype=np.float64)
    if params.rotate:
        out = rotate_points(out, params.theta, _centre_of(out))
    if params.stretch:
        centre = _centre_of(out) if params.stretch_mode == STRETCH_CENTROID else None
        out = stretch_points(out, params.s_h, params.s_v, centre)
    if params.perturb:
        out = perturb_points(out, params.p, params.jitter_sigma, rng)
    return out


# Segment-level operations

def rotate_horizontal(segment: Segment, theta: float) -> Segment:
    """Rotate by ``theta`` radians about the vertical axis through the segment centroid."""
    c = centroid(segment)
    return segment_from_array(rotate_points(segment_array(segment), theta, (c.x, c.y)), segment)


def stretch(segment: Segment, s_h: float, s_v: float, mode: str = STRETCH_CENTROID) -> Segment:
    """
    Scale horizontal offsets by ``s_h`` and vertical offsets by ``s_v``.

    The default scales about the segment centroid, which stays put. ``origin``
    mode scales raw coordinates about the radar origin.
    """
    if mode not in (STRETCH_CENTROID, STRETCH_ORIGIN):
        raise ParameterError(f"unknown stretch mode: {mode}")
    centre = tuple(centroid(segment)) if mode == STRETCH_CENTROID else None
    return segment_from_array(stretch_points(segment_array(segment), s_h, s_v, centre), segment)


def perturb(segment: Segment, p: Sequence[float], jitter_sigma: float = 0.0,
            rng: Optional[np.random.Generator] = None) -> Segment:
    """Translate every point by ``p``, or jitter each point independently when ``jitter_sigma > 0``."""
    return segment_from_array(perturb_points(segment_array(segment), p, jitter_sigma, rng), segment)


def augment(segment: Segment, params: SPCAParams, rng: Optional[np.random.Generator] = None) -> Segment:
    """Full SPCA composition on one segment. The input segment is left untouched."""
    return segment_from_array(augment_array(segment_array(segment), params, rng), segment)


def augment_batch(batch: np.ndarray, ranges: SPCARanges, seed: int, epoch: int,
                  indices: Sequence[int]) -> np.ndarray:
    """
    Augment a ``(B, L, AS, 3)`` batch.

    Each row draws its parameters from ``segment_rng(seed, epoch, index)`` so
    the result does not depend on batch composition or worker count.
    """
    ranges.validate()
    out = np.empty_like(batch, dtype=np.float64)
    for row, index in enumerate(indices):
        rng = segment_rng(seed, epoch, int(index))
        params = sample_params(ranges, rng)
        out[row] = augment_array(batch[row], params, rng)
    return out


def identity_params() -> SPCAParams:
    """Parameters with every sub-transform switched off."""
    return replace(SPCAParams(), rotate=False, stretch=False, perturb=False)

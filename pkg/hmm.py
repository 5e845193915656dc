"""
Hidden Markov smoothing of the window-level prediction stream.

Naming follows the original formulation rather than the textbook one:
``A`` is the emission matrix, ``A[y, x] = P(predicted x | true y)``, and
``B`` is the transition matrix, ``B[i, j] = P(state j | previous state i)``.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import NumericalError, ParameterError

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-12


@dataclass
class HMMParams:
    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def num_states(self) -> int:
        return len(self.pi)

    def validate(self) -> None:
        k = self.num_states
        if self.A.shape != (k, k) or self.B.shape != (k, k):
            raise ParameterError(f"HMM matrices must be {k}x{k}, got A {self.A.shape}, B {self.B.shape}")
        for name, array in (("pi", self.pi[None, :]), ("A", self.A), ("B", self.B)):
            if np.any(array <= 0) or not np.all(np.isfinite(array)):
                raise ParameterError(f"HMM {name} must be strictly positive and finite")
            if np.max(np.abs(array.sum(axis=1) - 1.0)) > ROW_TOLERANCE:
                raise ParameterError(f"HMM {name} rows must sum to 1")


def _normalise_rows(counts: np.ndarray) -> np.ndarray:
    return counts / counts.sum(axis=-1, keepdims=True)


def fit_many(pairs: Iterable[Tuple[Sequence[int], Sequence[int]]], num_states: int, alpha: float = 1.0) -> HMMParams:
    """
    Fit from several independent (predicted, true) window sequences.

    Bigrams are only counted inside a sequence, never across two of them.
    """
    if alpha <= 0:
        raise ParameterError(f"Laplace pseudo-count must be positive, got {alpha}")
    start = np.full(num_states, alpha)
    emission = np.full((num_states, num_states), alpha)
    transition = np.full((num_states, num_states), alpha)
    total = 0
    for pred, truth in pairs:
        pred = np.asarray(pred, dtype=np.int64)
        truth = np.asarray(truth, dtype=np.int64)
        if pred.shape != truth.shape:
            raise ParameterError(f"prediction and truth lengths differ: {len(pred)} vs {len(truth)}")
        if len(truth) == 0:
            continue
        for values in (pred, truth):
            if values.min() < 0 or values.max() >= num_states:
                raise ParameterError(f"class ids must lie in [0, {num_states})")
        np.add.at(start, truth, 1)
        np.add.at(emission, (truth, pred), 1)
        np.add.at(transition, (truth[:-1], truth[1:]), 1)
        total += len(truth)
    if total == 0:
        raise ParameterError("cannot fit an HMM on empty input")

    params = HMMParams(pi=start / start.sum(), A=_normalise_rows(emission), B=_normalise_rows(transition))
    logger.debug(f"Fitted HMM over {num_states} states from {total} windows")
    return params


def fit(pred: Sequence[int], truth: Sequence[int], num_states: int, alpha: float = 1.0) -> HMMParams:
    """
    Fit pi, A and B by counting.

    Args:
        pred: Classifier argmax per window
        truth: True class per window
        num_states: K
        alpha: Laplace pseudo-count added to every cell

    Returns:
        Smoothed, row-normalised parameters
    """
    if len(pred) != len(truth):
        raise ParameterError(f"prediction and truth lengths differ: {len(pred)} vs {len(truth)}")
    if len(truth) == 0:
        raise ParameterError("cannot fit an HMM on empty input")
    return fit_many([(pred, truth)], num_states, alpha)


def forward_filter(params: HMMParams, obs: int, alpha_prev: Optional[np.ndarray] = None) -> np.ndarray:
    """One step of the normalised forward recursion. Returns the posterior over states."""
    if not 0 <= obs < params.num_states:
        raise ParameterError(f"observation {obs} outside [0, {params.num_states})")
    prior = params.pi if alpha_prev is None else alpha_prev @ params.B
    unnormalised = prior * params.A[:, obs]
    mass = unnormalised.sum()
    if not mass > 0 or not np.isfinite(mass):
        raise NumericalError("forward filter lost all probability mass")
    return unnormalised / mass


class HMMFilter:
    """Causal filtering state for one stream."""

    def __init__(self, params: HMMParams):
        self.params = params
        self.posterior: Optional[np.ndarray] = None

    def step(self, obs: int) -> np.ndarray:
        self.posterior = forward_filter(self.params, obs, self.posterior)
        return self.posterior

    def reset(self) -> None:
        self.posterior = None


def viterbi(params: HMMParams, obs_seq: Sequence[int]) -> List[int]:
    """Most likely state path, in log space. Ties go to the lower state id."""
    if len(obs_seq) == 0:
        return []
    obs = np.asarray(obs_seq, dtype=np.int64)
    if obs.min() < 0 or obs.max() >= params.num_states:
        raise ParameterError(f"observations must lie in [0, {params.num_states})")
    log_a = np.log(params.A)
    log_b = np.log(params.B)

    score = np.log(params.pi) + log_a[:, obs[0]]
    back = np.zeros((len(obs), params.num_states), dtype=np.int64)
    for t in range(1, len(obs)):
        candidates = score[:, None] + log_b  # previous state on rows
        back[t] = np.argmax(candidates, axis=0)
        score = candidates[back[t], np.arange(params.num_states)] + log_a[:, obs[t]]

    path = [int(np.argmax(score))]
    for t in range(len(obs) - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1]


def path_log_prob(params: HMMParams, states: Sequence[int], obs: Sequence[int]) -> float:
    """Joint log probability of a state path and its observations."""
    if len(states) != len(obs):
        raise ParameterError("state path and observations differ in length")
    if len(states) == 0:
        return 0.0
    total = np.log(params.pi[states[0]]) + np.log(params.A[states[0], obs[0]])
    for t in range(1, len(states)):
        total += np.log(params.B[states[t - 1], states[t]]) + np.log(params.A[states[t], obs[t]])
    return float(total)

"""
Minimal neural-network substrate for the two fixed architectures.

Every layer is a pair of functions in the ``*_forward`` / ``*_backward`` style:
forward returns the output plus a cache, backward takes the upstream gradient
and that cache and returns exact analytic gradients. Feature axes are always
last, so a dense layer applied to ``(N, P, C)`` is the kernel-1 convolution
over points.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple

import numpy as np

import config
from errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def check_finite(name: str, array: np.ndarray) -> None:
    """Raise NumericalError on NaN/Inf when numeric debugging is on."""
    if config.DEBUG_NUMERICS and not np.all(np.isfinite(array)):
        raise NumericalError(f"non-finite values in {name}")


@dataclass
class LayerParams:
    """
    Named parameters of a network.

    ``weights`` are trainable (dense W/b, batch-norm gamma/beta); ``buffers``
    hold batch-norm running statistics. Insertion order is the storage order.
    """
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def add_dense(self, prefix: str, rng: np.random.Generator, fan_in: int, fan_out: int) -> None:
        self.weights[f"{prefix}.W"], self.weights[f"{prefix}.b"] = init_dense(rng, fan_in, fan_out)

    def add_batchnorm(self, prefix: str, width: int) -> None:
        bn = init_batchnorm(width)
        self.weights[f"{prefix}.gamma"] = bn["gamma"]
        self.weights[f"{prefix}.beta"] = bn["beta"]
        self.buffers[f"{prefix}.running_mean"] = bn["running_mean"]
        self.buffers[f"{prefix}.running_var"] = bn["running_var"]

    def dense(self, prefix: str) -> Tuple[np.ndarray, np.ndarray]:
        return self.weights[f"{prefix}.W"], self.weights[f"{prefix}.b"]

    def bn(self, prefix: str) -> Dict[str, np.ndarray]:
        return {
            "gamma": self.weights[f"{prefix}.gamma"],
            "beta": self.weights[f"{prefix}.beta"],
            "running_mean": self.buffers[f"{prefix}.running_mean"],
            "running_var": self.buffers[f"{prefix}.running_var"],
        }

    def count(self) -> int:
        """Number of trainable scalars."""
        return int(sum(array.size for array in self.weights.values()))

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def astype(self, dtype) -> "LayerParams":
        return LayerParams(
            weights={name: np.ascontiguousarray(array, dtype=dtype) for name, array in self.weights.items()},
            buffers={name: np.ascontiguousarray(array, dtype=dtype) for name, array in self.buffers.items()},
        )

    def copy(self) -> "LayerParams":
        return self.astype(self.dtype)

    def merge(self, other: "LayerParams") -> "LayerParams":
        return LayerParams(weights={**self.weights, **other.weights}, buffers={**self.buffers, **other.buffers})

    def subset(self, prefix: str) -> "LayerParams":
        return LayerParams(
            weights={k: v for k, v in self.weights.items() if k.startswith(prefix)},
            buffers={k: v for k, v in self.buffers.items() if k.startswith(prefix)},
        )


def apply_running_stats(params: LayerParams, running: Dict[str, Tuple[np.ndarray, np.ndarray]]) -> None:
    """Store batch-norm running statistics collected during a training forward pass."""
    for prefix, (mean, var) in running.items():
        params.buffers[f"{prefix}.running_mean"] = mean
        params.buffers[f"{prefix}.running_var"] = var


# Initialisation

def init_dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tuple[np.ndarray, np.ndarray]:
    limit = 1 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)


def init_batchnorm(width: int) -> Dict[str, np.ndarray]:
    return {
        "gamma": np.ones(width),
        "beta": np.zeros(width),
        "running_mean": np.zeros(width),
        "running_var": np.ones(width),
    }


# Dense / kernel-1 convolution

def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """y = xW + b over the last axis of ``x``."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, weights {W.shape}, bias {b.shape}")
    y = x @ W + b
    check_finite("dense output", y)
    return y, (x, W)


def dense_backward(grad_y: np.ndarray, cache):
    """Returns (grad_x, grad_W, grad_b)."""
    x, W = cache
    if grad_y.shape[:-1] != x.shape[:-1] or grad_y.shape[-1] != W.shape[1]:
        raise ShapeError(f"dense backward: gradient {grad_y.shape} for input {x.shape}")
    flat_x = x.reshape(-1, W.shape[0])
    flat_g = grad_y.reshape(-1, W.shape[1])
    return grad_y @ W.T, flat_x.T @ flat_g, flat_g.sum(axis=0)


def pointwise_conv_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """Shared per-point MLP layer on ``(N, P, C_in)`` -> ``(N, P, C_out)``."""
    if x.ndim != 3:
        raise ShapeError(f"pointwise conv expects (N, P, C), got {x.shape}")
    return dense_forward(x, W, b)


def pointwise_conv_backward(grad_y: np.ndarray, cache):
    return dense_backward(grad_y, cache)


# Batch normalisation over every axis but the last

def batchnorm_forward(x: np.ndarray, bn: Dict[str, np.ndarray], training: bool,
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """
    Normalise features.

    Training mode uses batch statistics and returns updated running statistics;
    inference mode uses the stored running statistics.

    Returns:
        (y, cache, running) where ``running`` is ``(mean, var)`` in training
        mode and None otherwise
    """
    width = bn["gamma"].shape[0]
    if x.shape[-1] != width:
        raise ShapeError(f"batchnorm: input {x.shape} for {width} features")
    flat = x.reshape(-1, width)

    if training:
        count = flat.shape[0]
        if count < 2:
            raise ShapeError("batchnorm needs at least two samples in training mode")
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        running = (
            momentum * bn["running_mean"] + (1 - momentum) * mean,
            momentum * bn["running_var"] + (1 - momentum) * var,
        )
    else:
        mean, var = bn["running_mean"], bn["running_var"]
        running = None

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    y = x_hat * bn["gamma"] + bn["beta"]
    check_finite("batchnorm output", y)
    return y, (x_hat, inv_std, bn["gamma"], training), running


def batchnorm_backward(grad_y: np.ndarray, cache):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    x_hat, inv_std, gamma, training = cache
    width = gamma.shape[0]
    flat_g = grad_y.reshape(-1, width)
    flat_hat = x_hat.reshape(-1, width)
    grad_gamma = (flat_g * flat_hat).sum(axis=0)
    grad_beta = flat_g.sum(axis=0)

    grad_hat = flat_g * gamma
    if training:
        count = flat_g.shape[0]
        grad_x = (inv_std / count) * (
            count * grad_hat - grad_hat.sum(axis=0) - flat_hat * (grad_hat * flat_hat).sum(axis=0)
        )
    else:
        grad_x = grad_hat * inv_std
    return grad_x.reshape(grad_y.shape), grad_gamma, grad_beta


# Activations

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x


def relu_backward(grad_y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_y * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def sigmoid_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_y * y * (1.0 - y)


def tanh_backward(grad_y: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_y * (1.0 - y * y)


# Max-pool over the point axis

def maxpool_points_forward(x: np.ndarray):
    """Channel-wise max over points: ``(N, P, C)`` -> ``(N, C)``."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool expects (N, P, C), got {x.shape}")
    index = np.argmax(x, axis=1)  # first maximum wins ties
    y = np.take_along_axis(x, index[:, None, :], axis=1)[:, 0, :]
    return y, (index, x.shape)


def maxpool_points_backward(grad_y: np.ndarray, cache) -> np.ndarray:
    index, shape = cache
    grad_x = np.zeros(shape, dtype=grad_y.dtype)
    np.put_along_axis(grad_x, index[:, None, :], grad_y[:, None, :], axis=1)
    return grad_x


# Loss

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, target):
    """
    Mean softmax cross-entropy over a batch.

    Args:
        logits: ``(N, K)`` or ``(K,)``
        target: class ids, ``(N,)`` or a scalar

    Returns:
        (loss, grad_logits) with grad = (softmax - onehot) / N
    """
    single = logits.ndim == 1
    logits2 = logits[None, :] if single else logits
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    n, k = logits2.shape
    if target.shape != (n,) or np.any(target < 0) or np.any(target >= k):
        raise ShapeError(f"targets {target} do not match logits {logits.shape}")

    shifted = logits2 - logits2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, target]))

    grad = softmax(logits2)
    grad[rows, target] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


# Optimiser

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied in place. Returns (params, state)."""
    state.step += 1
    correction1 = 1 - state.beta1 ** state.step
    correction2 = 1 - state.beta2 ** state.step
    for name, grad in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * grad
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * grad * grad
        params[name] -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


# Gradient checking

def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(loss_fn: Callable[[], float], params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
               h: float = 1e-5, seed: int = 0, fraction: float = 0.01, min_samples: int = 50) -> float:
    """
    Compare analytic gradients with central finite differences.

    ``loss_fn`` re-evaluates the loss from ``params``, which are perturbed in
    place and restored. A random ``fraction`` of all scalars is sampled (at
    least ``min_samples``); the choice depends only on ``seed``.

    Returns:
        Largest relative error over the sample
    """
    names = sorted(grads)
    sizes = [params[name].size for name in names]
    offsets = np.cumsum([0] + sizes)
    total = int(offsets[-1])
    count = min(total, max(min_samples, int(math.ceil(fraction * total))))
    picks = np.random.default_rng(seed).choice(total, size=count, replace=False)

    worst = 0.0
    for flat_index in np.sort(picks):
        slot = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        name = names[slot]
        view = params[name].reshape(-1)
        local = int(flat_index - offsets[slot])
        original = view[local]
        view[local] = original + h
        plus = loss_fn()
        view[local] = original - h
        minus = loss_fn()
        view[local] = original
        numeric = (plus - minus) / (2 * h)
        worst = max(worst, relative_error(float(grads[name].reshape(-1)[local]), numeric))
    logger.debug(f"grad_check sampled {count} of {total} scalars, worst relative error {worst:.3e}")
    return worst

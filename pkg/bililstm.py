"""
Bidirectional lightweight LSTM over per-frame embeddings, followed by the
FC(128)+BN+ReLU layer and the activity classification (AC) layer.

The lite cell couples input and forget gates and reuses one gate
pre-activation for the output gate:

    z  = [h, x]
    a  = z W_g + b_g
    f  = sigmoid(a),  i = 1 - f
    c~ = tanh(z W_c + b_c)
    c' = f * c + i * c~
    o  = sigmoid(a + b_o)
    h' = o * tanh(c')

With ``cell="gru"`` the recurrent part is the single-direction GRU from
``gru.py`` instead; the head is the same.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

import gru
import nncore
from errors import ConfigError, ShapeError
from nncore import LayerParams

logger = logging.getLogger(__name__)

DIRECTIONS = ("rnn.fwd", "rnn.bwd")
CELL_LITE_LSTM = "lite-lstm"
CELL_GRU = "gru"
CELLS = (CELL_LITE_LSTM, CELL_GRU)


@dataclass(frozen=True)
class BiLiLSTMConfig:
    input_dim: int = 64
    units_per_direction: int = 80
    head_width: int = 128
    num_classes: int = 5
    cell: str = CELL_LITE_LSTM

    @property
    def feature_width(self) -> int:
        """Width of the recurrent features entering the head."""
        return self.units_per_direction if self.cell == CELL_GRU else 2 * self.units_per_direction

    def validate(self) -> None:
        if self.cell not in CELLS:
            raise ConfigError(f"unknown recurrent cell {self.cell!r}, expected one of {', '.join(CELLS)}")
        if min(self.input_dim, self.units_per_direction, self.head_width) < 1:
            raise ConfigError("recurrent and head widths must be positive")
        if self.num_classes < 2:
            raise ConfigError(f"need at least two classes, got {self.num_classes}")


def init_bililstm(config: BiLiLSTMConfig, rng: np.random.Generator) -> LayerParams:
    config.validate()
    if config.cell == CELL_GRU:
        params = gru.init_gru(rng, config.input_dim, config.units_per_direction)
    else:
        params = LayerParams()
        fan_in = config.units_per_direction + config.input_dim
        for prefix in DIRECTIONS:
            params.add_dense(f"{prefix}.gate", rng, fan_in, config.units_per_direction)
            params.add_dense(f"{prefix}.cand", rng, fan_in, config.units_per_direction)
            params.weights[f"{prefix}.b_o"] = np.zeros(config.units_per_direction)
    params.add_dense("head.fc", rng, config.feature_width, config.head_width)
    params.add_batchnorm("head.fc.bn", config.head_width)
    params.add_dense("head.ac", rng, config.head_width, config.num_classes)
    return params


def parameter_formula(config: BiLiLSTMConfig) -> int:
    """Closed-form trainable scalar count of the recurrent part and the head."""
    h, d = config.units_per_direction, config.input_dim
    if config.cell == CELL_GRU:
        recurrent = gru.parameter_count(d, h)
    else:
        recurrent = 2 * (2 * ((h + d) * h + h) + h)
    head = (config.feature_width * config.head_width + config.head_width) + 2 * config.head_width
    ac = config.head_width * config.num_classes + config.num_classes
    return recurrent + head + ac


def count_parameters(*params: LayerParams) -> int:
    """Exact number of trainable scalars across parameter sets."""
    return sum(p.count() for p in params)


# Lite cell

def cell_forward(x: np.ndarray, h: np.ndarray, c: np.ndarray, params: LayerParams, prefix: str):
    W_g, b_g = params.dense(f"{prefix}.gate")
    W_c, b_c = params.dense(f"{prefix}.cand")
    b_o = params.weights[f"{prefix}.b_o"]
    if x.shape[:-1] != h.shape[:-1] or h.shape != c.shape or W_g.shape[0] != h.shape[-1] + x.shape[-1]:
        raise ShapeError(f"cell: x {x.shape}, h {h.shape}, c {c.shape}, W {W_g.shape}")

    z = np.concatenate([h, x], axis=-1)
    a = z @ W_g + b_g
    f = nncore.sigmoid(a)
    cand = np.tanh(z @ W_c + b_c)
    c_next = f * c + (1.0 - f) * cand
    o = nncore.sigmoid(a + b_o)
    tanh_c = np.tanh(c_next)
    h_next = o * tanh_c
    return h_next, c_next, (z, c, f, cand, o, tanh_c)


def cell_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, params: LayerParams, prefix: str = DIRECTIONS[0]):
    """One recurrence step. Returns (h', c')."""
    h_next, c_next, _ = cell_forward(x, h, c, params, prefix)
    return h_next, c_next


def cell_backward(grad_h: np.ndarray, grad_c: np.ndarray, cache, params: LayerParams, prefix: str,
                  grads: Dict[str, np.ndarray]):
    """Accumulates weight gradients into ``grads``; returns (grad_x, grad_h_prev, grad_c_prev)."""
    z, c_prev, f, cand, o, tanh_c = cache
    W_g, _ = params.dense(f"{prefix}.gate")
    W_c, _ = params.dense(f"{prefix}.cand")
    units = c_prev.shape[-1]

    grad_o_pre = nncore.sigmoid_backward(grad_h * tanh_c, o)
    grad_c = grad_c + nncore.tanh_backward(grad_h * o, tanh_c)
    grad_f = grad_c * (c_prev - cand)
    grad_cand_pre = nncore.tanh_backward(grad_c * (1.0 - f), cand)
    grad_a = nncore.sigmoid_backward(grad_f, f) + grad_o_pre

    grads[f"{prefix}.gate.W"] += z.T @ grad_a
    grads[f"{prefix}.gate.b"] += grad_a.sum(axis=0)
    grads[f"{prefix}.cand.W"] += z.T @ grad_cand_pre
    grads[f"{prefix}.cand.b"] += grad_cand_pre.sum(axis=0)
    grads[f"{prefix}.b_o"] += grad_o_pre.sum(axis=0)

    grad_z = grad_a @ W_g.T + grad_cand_pre @ W_c.T
    return grad_z[:, units:], grad_z[:, :units], grad_c * f


# One direction over a sequence

def direction_forward(xs: np.ndarray, params: LayerParams, prefix: str, reverse: bool):
    """Run one direction over ``(N, L, D)``; returns the final hidden state and per-step caches."""
    n, length, _ = xs.shape
    units = params.weights[f"{prefix}.b_o"].shape[0]
    h = np.zeros((n, units), dtype=xs.dtype)
    c = np.zeros((n, units), dtype=xs.dtype)
    steps = range(length - 1, -1, -1) if reverse else range(length)
    caches: List[Tuple[int, tuple]] = []
    for t in steps:
        h, c, cache = cell_forward(xs[:, t, :], h, c, params, prefix)
        caches.append((t, cache))
    return h, caches


def direction_backward(grad_h: np.ndarray, caches, params: LayerParams, prefix: str, input_shape):
    """Backpropagation through time for one direction."""
    grads = {
        name: np.zeros_like(value)
        for name, value in params.weights.items() if name.startswith(prefix + ".")
    }
    grad_xs = np.zeros(input_shape, dtype=grad_h.dtype)
    grad_c = np.zeros_like(grad_h)
    for t, cache in reversed(caches):
        grad_x, grad_h, grad_c = cell_backward(grad_h, grad_c, cache, params, prefix, grads)
        grad_xs[:, t, :] = grad_x
    return grads, grad_xs


# Bidirectional classifier

def bidir_forward(embeddings: np.ndarray, params: LayerParams, training: bool = False):
    """
    Window logits from a sequence of frame embeddings.

    Args:
        embeddings: ``(N, L, D)`` batch, or a single ``(L, D)`` window
        params: Recurrent and head parameters
        training: Batch statistics for the head BN (needs N >= 2)

    Returns:
        (logits, cache, running statistics); logits are ``(K,)`` for a single
        window and ``(N, K)`` for a batch
    """
    single = embeddings.ndim == 2
    xs = embeddings[None] if single else embeddings
    if xs.ndim != 3 or xs.shape[1] < 1:
        raise ShapeError(f"expected (N, L, D) embeddings, got {embeddings.shape}")

    if gru.uses_gru(params):
        features, rnn_caches = gru.sequence_forward(xs, params)
    else:
        h_fwd, fwd_caches = direction_forward(xs, params, DIRECTIONS[0], reverse=False)
        h_bwd, bwd_caches = direction_forward(xs, params, DIRECTIONS[1], reverse=True)
        features = np.concatenate([h_fwd, h_bwd], axis=-1)
        rnn_caches = (fwd_caches, bwd_caches)

    running = {}
    W, b = params.dense("head.fc")
    hidden, fc_cache = nncore.dense_forward(features, W, b)
    hidden, bn_cache, stats = nncore.batchnorm_forward(hidden, params.bn("head.fc.bn"), training)
    if stats is not None:
        running["head.fc.bn"] = stats
    hidden, relu_cache = nncore.relu_forward(hidden)
    W, b = params.dense("head.ac")
    logits, ac_cache = nncore.dense_forward(hidden, W, b)

    cache = (xs.shape, rnn_caches, fc_cache, bn_cache, relu_cache, ac_cache)
    return (logits[0] if single else logits), cache, running


def bidir_backward(grad_logits: np.ndarray, cache, params: LayerParams):
    """Returns (weight gradients, gradient w.r.t. the ``(N, L, D)`` embeddings)."""
    input_shape, rnn_caches, fc_cache, bn_cache, relu_cache, ac_cache = cache
    grads: Dict[str, np.ndarray] = {}

    grad, grads["head.ac.W"], grads["head.ac.b"] = nncore.dense_backward(grad_logits, ac_cache)
    grad = nncore.relu_backward(grad, relu_cache)
    grad, grads["head.fc.bn.gamma"], grads["head.fc.bn.beta"] = nncore.batchnorm_backward(grad, bn_cache)
    grad, grads["head.fc.W"], grads["head.fc.b"] = nncore.dense_backward(grad, fc_cache)

    if gru.uses_gru(params):
        rnn_grads, grad_xs = gru.sequence_backward(grad, rnn_caches, params, input_shape)
        grads.update(rnn_grads)
        return grads, grad_xs

    fwd_caches, bwd_caches = rnn_caches
    units = grad.shape[-1] // 2
    fwd_grads, grad_x_fwd = direction_backward(grad[:, :units], fwd_caches, params, DIRECTIONS[0], input_shape)
    bwd_grads, grad_x_bwd = direction_backward(grad[:, units:], bwd_caches, params, DIRECTIONS[1], input_shape)
    grads.update(fwd_grads)
    grads.update(bwd_grads)
    return grads, grad_x_fwd + grad_x_bwd


def direction_features(embeddings: np.ndarray, params: LayerParams) -> np.ndarray:
    """Concatenated final hidden states ``[h_fwd, h_bwd]`` for one ``(L, D)`` window."""
    xs = embeddings[None]
    h_fwd, _ = direction_forward(xs, params, DIRECTIONS[0], reverse=False)
    h_bwd, _ = direction_forward(xs, params, DIRECTIONS[1], reverse=True)
    return np.concatenate([h_fwd, h_bwd], axis=-1)[0]


def classify_window(segment, lpn_params: LayerParams, rnn_params: LayerParams, lpn_config) -> np.ndarray:
    """Posterior over activity classes for one segment."""
    import lpn

    embeddings = lpn.embed_segment(segment, lpn_params, lpn_config)
    logits, _, _ = bidir_forward(embeddings, rnn_params, training=False)
    return nncore.softmax(logits)

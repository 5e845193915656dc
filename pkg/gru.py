"""
Single-direction GRU over per-frame embeddings, the baseline recurrent
classifier compared against the lite bidirectional cell.

    z  = [h, x]
    u  = sigmoid(z W_u + b_u)
    r  = sigmoid(z W_r + b_r)
    h~ = tanh([r * h, x] W_c + b_c)
    h' = (1 - u) * h + u * h~

The final hidden state feeds the same FC+BN+ReLU head as the lite cell.
"""
import logging
from typing import Dict, List, Tuple

import numpy as np

import nncore
from errors import ShapeError
from nncore import LayerParams

logger = logging.getLogger(__name__)

PREFIX = "rnn.gru"
GATES = ("update", "reset", "cand")


def init_gru(rng: np.random.Generator, input_dim: int, units: int) -> LayerParams:
    params = LayerParams()
    for gate in GATES:
        params.add_dense(f"{PREFIX}.{gate}", rng, units + input_dim, units)
    return params


def parameter_count(input_dim: int, units: int) -> int:
    return len(GATES) * ((units + input_dim) * units + units)


def uses_gru(params: LayerParams) -> bool:
    return f"{PREFIX}.update.W" in params.weights


def cell_forward(x: np.ndarray, h: np.ndarray, params: LayerParams):
    W_u, b_u = params.dense(f"{PREFIX}.update")
    W_r, b_r = params.dense(f"{PREFIX}.reset")
    W_c, b_c = params.dense(f"{PREFIX}.cand")
    if x.shape[:-1] != h.shape[:-1] or W_u.shape[0] != h.shape[-1] + x.shape[-1]:
        raise ShapeError(f"gru cell: x {x.shape}, h {h.shape}, W {W_u.shape}")

    z = np.concatenate([h, x], axis=-1)
    u = nncore.sigmoid(z @ W_u + b_u)
    r = nncore.sigmoid(z @ W_r + b_r)
    zr = np.concatenate([r * h, x], axis=-1)
    cand = np.tanh(zr @ W_c + b_c)
    h_next = (1.0 - u) * h + u * cand
    return h_next, (z, zr, h, u, r, cand)


def cell_step(x: np.ndarray, h: np.ndarray, params: LayerParams) -> np.ndarray:
    h_next, _ = cell_forward(x, h, params)
    return h_next


def cell_backward(grad_h: np.ndarray, cache, params: LayerParams, grads: Dict[str, np.ndarray]):
    """Accumulates weight gradients into ``grads``; returns (grad_x, grad_h_prev)."""
    z, zr, h, u, r, cand = cache
    W_u, _ = params.dense(f"{PREFIX}.update")
    W_r, _ = params.dense(f"{PREFIX}.reset")
    W_c, _ = params.dense(f"{PREFIX}.cand")
    units = h.shape[-1]

    grad_cand_pre = nncore.tanh_backward(grad_h * u, cand)
    grads[f"{PREFIX}.cand.W"] += zr.T @ grad_cand_pre
    grads[f"{PREFIX}.cand.b"] += grad_cand_pre.sum(axis=0)
    grad_zr = grad_cand_pre @ W_c.T

    grad_u_pre = nncore.sigmoid_backward(grad_h * (cand - h), u)
    grad_r_pre = nncore.sigmoid_backward(grad_zr[:, :units] * h, r)
    for gate, grad_pre in (("update", grad_u_pre), ("reset", grad_r_pre)):
        grads[f"{PREFIX}.{gate}.W"] += z.T @ grad_pre
        grads[f"{PREFIX}.{gate}.b"] += grad_pre.sum(axis=0)
    grad_z = grad_u_pre @ W_u.T + grad_r_pre @ W_r.T

    grad_h_prev = grad_h * (1.0 - u) + grad_zr[:, :units] * r + grad_z[:, :units]
    grad_x = grad_zr[:, units:] + grad_z[:, units:]
    return grad_x, grad_h_prev


def sequence_forward(xs: np.ndarray, params: LayerParams):
    """Run over ``(N, L, D)`` in time order; returns the final hidden state and per-step caches."""
    n, length, _ = xs.shape
    units = params.weights[f"{PREFIX}.update.b"].shape[0]
    h = np.zeros((n, units), dtype=xs.dtype)
    caches: List[Tuple[int, tuple]] = []
    for t in range(length):
        h, cache = cell_forward(xs[:, t, :], h, params)
        caches.append((t, cache))
    return h, caches


def sequence_backward(grad_h: np.ndarray, caches, params: LayerParams, input_shape):
    """Backpropagation through time."""
    grads = {name: np.zeros_like(value) for name, value in params.weights.items() if name.startswith(PREFIX + ".")}
    grad_xs = np.zeros(input_shape, dtype=grad_h.dtype)
    for t, cache in reversed(caches):
        grad_x, grad_h = cell_backward(grad_h, cache, params, grads)
        grad_xs[:, t, :] = grad_x
    return grads, grad_xs

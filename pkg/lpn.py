"""
Light-PointNet frame embedder.

Pipeline per frame: T-Net predicts a 3x3 transform that is applied to every
point, a shared per-point MLP (kernel-1 conv + BN + ReLU) lifts points to D
features, a channel-wise max-pool gives the global feature, and an FC+BN+ReLU
gate computed from that feature multiplies it elementwise.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

import nncore
from errors import ConfigError, ShapeError
from nncore import LayerParams
from pcloud import AlignedFrame, Segment

logger = logging.getLogger(__name__)

PREFIX = "lpn"


@dataclass(frozen=True)
class LPNConfig:
    alignment_size: int = 64
    mlp_widths: Tuple[int, ...] = (32, 64)
    tnet_conv_widths: Tuple[int, ...] = (16, 32)
    tnet_fc_widths: Tuple[int, ...] = (16,)

    @property
    def embed_dim(self) -> int:
        return self.mlp_widths[-1]

    def validate(self) -> None:
        widths = (self.alignment_size,) + self.mlp_widths + self.tnet_conv_widths + self.tnet_fc_widths
        if not self.mlp_widths or not self.tnet_conv_widths:
            raise ConfigError("LPN needs at least one per-point layer in the MLP and the T-Net")
        if any(w < 1 for w in widths):
            raise ConfigError(f"LPN widths must be positive: {widths}")


def init_lpn(config: LPNConfig, rng: np.random.Generator) -> LayerParams:
    """Fresh LPN weights. The T-Net's last layer starts at W=0, b=I so it outputs the identity."""
    config.validate()
    params = LayerParams()
    width = 3
    for i, out in enumerate(config.tnet_conv_widths):
        params.add_dense(f"{PREFIX}.tnet.conv{i}", rng, width, out)
        params.add_batchnorm(f"{PREFIX}.tnet.conv{i}.bn", out)
        width = out
    for i, out in enumerate(config.tnet_fc_widths):
        params.add_dense(f"{PREFIX}.tnet.fc{i}", rng, width, out)
        params.add_batchnorm(f"{PREFIX}.tnet.fc{i}.bn", out)
        width = out
    params.weights[f"{PREFIX}.tnet.out.W"] = np.zeros((width, 9))
    params.weights[f"{PREFIX}.tnet.out.b"] = np.eye(3).reshape(-1).copy()

    width = 3
    for i, out in enumerate(config.mlp_widths):
        params.add_dense(f"{PREFIX}.mlp{i}", rng, width, out)
        params.add_batchnorm(f"{PREFIX}.mlp{i}.bn", out)
        width = out
    params.add_dense(f"{PREFIX}.gate", rng, width, width)
    params.add_batchnorm(f"{PREFIX}.gate.bn", width)
    return params


def _block_forward(h, params: LayerParams, name: str, training: bool, running: Dict):
    """dense/conv -> BN -> ReLU."""
    W, b = params.dense(name)
    h, dense_cache = nncore.dense_forward(h, W, b)
    h, bn_cache, stats = nncore.batchnorm_forward(h, params.bn(f"{name}.bn"), training)
    if stats is not None:
        running[f"{name}.bn"] = stats
    h, relu_cache = nncore.relu_forward(h)
    return h, (name, dense_cache, bn_cache, relu_cache)


def _block_backward(grad, cache, grads: Dict[str, np.ndarray]):
    name, dense_cache, bn_cache, relu_cache = cache
    grad = nncore.relu_backward(grad, relu_cache)
    grad, grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = nncore.batchnorm_backward(grad, bn_cache)
    grad, grads[f"{name}.W"], grads[f"{name}.b"] = nncore.dense_backward(grad, dense_cache)
    return grad


def lpn_forward(points: np.ndarray, params: LayerParams, config: LPNConfig, training: bool):
    """
    Embed a batch of aligned frames.

    Args:
        points: ``(N, AS, 3)`` array
        params: LPN parameters
        config: Layer widths
        training: Batch statistics (True) or running statistics (False)

    Returns:
        (embeddings ``(N, D)``, cache for ``lpn_backward``, running statistics)
    """
    if points.ndim != 3 or points.shape[1:] != (config.alignment_size, 3):
        raise ShapeError(f"LPN expects (N, {config.alignment_size}, 3), got {points.shape}")
    running: Dict = {}

    # T-Net
    h = points
    tnet_caches = []
    for i in range(len(config.tnet_conv_widths)):
        h, cache = _block_forward(h, params, f"{PREFIX}.tnet.conv{i}", training, running)
        tnet_caches.append(cache)
    g, tnet_pool = nncore.maxpool_points_forward(h)
    fc_caches = []
    for i in range(len(config.tnet_fc_widths)):
        g, cache = _block_forward(g, params, f"{PREFIX}.tnet.fc{i}", training, running)
        fc_caches.append(cache)
    W, b = params.dense(f"{PREFIX}.tnet.out")
    flat_transform, out_cache = nncore.dense_forward(g, W, b)
    transform = flat_transform.reshape(-1, 3, 3)

    # Shared per-point MLP on the transformed points
    h = np.matmul(points, transform)
    mlp_caches = []
    for i in range(len(config.mlp_widths)):
        h, cache = _block_forward(h, params, f"{PREFIX}.mlp{i}", training, running)
        mlp_caches.append(cache)
    pooled, pool_cache = nncore.maxpool_points_forward(h)

    # Multiplicative gate
    gate, gate_cache = _block_forward(pooled, params, f"{PREFIX}.gate", training, running)
    embedding = gate * pooled
    nncore.check_finite("LPN embedding", embedding)

    cache = (points, transform, tnet_caches, tnet_pool, fc_caches, out_cache,
             mlp_caches, pool_cache, pooled, gate, gate_cache)
    return embedding, cache, running


def lpn_backward(grad_embedding: np.ndarray, cache) -> Dict[str, np.ndarray]:
    """Gradients of every LPN weight given d(loss)/d(embedding)."""
    (points, transform, tnet_caches, tnet_pool, fc_caches, out_cache,
     mlp_caches, pool_cache, pooled, gate, gate_cache) = cache
    grads: Dict[str, np.ndarray] = {}

    grad_gate = grad_embedding * pooled
    grad_pooled = grad_embedding * gate + _block_backward(grad_gate, gate_cache, grads)

    grad = nncore.maxpool_points_backward(grad_pooled, pool_cache)
    for block in reversed(mlp_caches):
        grad = _block_backward(grad, block, grads)

    # h = points @ transform
    grad_transform = np.matmul(points.transpose(0, 2, 1), grad)
    grad, grads[f"{PREFIX}.tnet.out.W"], grads[f"{PREFIX}.tnet.out.b"] = nncore.dense_backward(
        grad_transform.reshape(-1, 9), out_cache
    )
    for block in reversed(fc_caches):
        grad = _block_backward(grad, block, grads)
    grad = nncore.maxpool_points_backward(grad, tnet_pool)
    for block in reversed(tnet_caches):
        grad = _block_backward(grad, block, grads)
    return grads


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Sort the points of every frame in ``(..., P, 3)`` lexicographically by (x, y, z)."""
    # a fixed point order fixes the reduction order, so any permutation of
    # the same frame produces bit-identical embeddings
    order = np.lexsort((points[..., 2], points[..., 1], points[..., 0]), axis=-1)
    return np.take_along_axis(points, order[..., None], axis=-2)


def tnet_forward(frame: AlignedFrame, params: LayerParams, config: LPNConfig) -> np.ndarray:
    """3x3 input transform the T-Net predicts for one frame (inference mode)."""
    x = canonical_order(np.asarray(frame.points, dtype=params.dtype))[None]
    _, cache, _ = lpn_forward(x, params, config, training=False)
    return cache[1][0]


def embed_frame(frame: AlignedFrame, params: LayerParams, config: LPNConfig) -> np.ndarray:
    """D-dimensional embedding of one aligned frame, invariant to point order."""
    x = canonical_order(np.asarray(frame.points, dtype=params.dtype))[None]
    embedding, _, _ = lpn_forward(x, params, config, training=False)
    return embedding[0]


def embed_segment(segment: Segment, params: LayerParams, config: LPNConfig) -> np.ndarray:
    """Time-distributed embedding: ``(L, D)``, one row per frame, shared weights."""
    return np.stack([embed_frame(frame, params, config) for frame in segment.frames])

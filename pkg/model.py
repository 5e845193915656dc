"""
Full LPN + recurrent classifier: configuration, parameter initialisation and
the batched forward/backward pass used by training and evaluation. The
recurrent part is the lite bidirectional LSTM unless ``recurrent_cell`` is
``gru``.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

import bililstm
import config
import lpn
import nncore
from bililstm import BiLiLSTMConfig
from errors import ConfigError, ShapeError
from hmm import HMMParams
from lpn import LPNConfig
from nncore import LayerParams
from pcloud import seconds_to_frames

logger = logging.getLogger(__name__)

# Trainable weights and batch-norm buffers of the whole network
ModelParams = LayerParams

PREDICT_CHUNK = 64


@dataclass(frozen=True)
class ModelConfig:
    alignment_size: int = config.ALIGNMENT_SIZE_DISC
    mlp_widths: Tuple[int, ...] = (32, 64)
    tnet_conv_widths: Tuple[int, ...] = (16, 32)
    tnet_fc_widths: Tuple[int, ...] = (16,)
    rnn_units_per_direction: int = 80
    recurrent_cell: str = bililstm.CELL_LITE_LSTM
    head_width: int = 128
    class_names: Tuple[str, ...] = config.ACTIVITY_NAMES
    frame_rate: float = 10.0
    window_seconds: float = config.WINDOW_SECONDS
    stride_seconds: float = config.STRIDE_SECONDS

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def blank(self) -> int:
        """Integer id of the blank label."""
        return len(self.class_names)

    @property
    def window_frames(self) -> int:
        return seconds_to_frames(self.window_seconds, self.frame_rate)

    @property
    def stride_frames(self) -> int:
        return seconds_to_frames(self.stride_seconds, self.frame_rate)

    @property
    def lpn(self) -> LPNConfig:
        return LPNConfig(
            alignment_size=self.alignment_size,
            mlp_widths=self.mlp_widths,
            tnet_conv_widths=self.tnet_conv_widths,
            tnet_fc_widths=self.tnet_fc_widths,
        )

    @property
    def rnn(self) -> BiLiLSTMConfig:
        return BiLiLSTMConfig(
            input_dim=self.lpn.embed_dim,
            units_per_direction=self.rnn_units_per_direction,
            head_width=self.head_width,
            num_classes=self.num_classes,
            cell=self.recurrent_cell,
        )

    def validate(self) -> None:
        self.lpn.validate()
        self.rnn.validate()
        if len(set(self.class_names)) != len(self.class_names) or config.BLANK_NAME in self.class_names:
            raise ConfigError(f"class names must be unique and must not use {config.BLANK_NAME!r}")
        if self.stride_seconds > self.window_seconds:
            raise ConfigError("stride must not exceed the window length")
        if self.frame_rate <= 0:
            raise ConfigError(f"frame rate must be positive, got {self.frame_rate}")

    def to_dict(self) -> Dict[str, Any]:
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: Optional["ModelConfig"] = None) -> "ModelConfig":
        """
        Build a config from JSON metadata or raw config-file strings.

        Keys that are not model fields are ignored so one config file can
        carry training and pipeline keys as well.
        """
        result = config.apply_mapping(base or cls(), values)
        result.validate()
        return result


@dataclass
class Model:
    """A trained network together with everything a pipeline needs to run it."""
    config: ModelConfig
    params: ModelParams
    hmm: Optional[HMMParams] = None
    seed: Optional[int] = None

    @property
    def parameter_count(self) -> int:
        return self.params.count()


def init_model(model_config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh float64 weights for the whole network."""
    model_config.validate()
    params = lpn.init_lpn(model_config.lpn, rng).merge(bililstm.init_bililstm(model_config.rnn, rng))
    logger.debug(f"Initialised model with {params.count()} trainable parameters")
    return params


def parameter_formula(model_config: ModelConfig) -> int:
    """Closed-form trainable parameter count of the full network."""
    return lpn.init_lpn(model_config.lpn, np.random.default_rng(0)).count() + bililstm.parameter_formula(
        model_config.rnn
    )


def as_dtype(params: ModelParams, dtype) -> ModelParams:
    return params.astype(dtype)


def forward(params: ModelParams, model_config: ModelConfig, batch: np.ndarray, training: bool):
    """
    Logits for a ``(B, L, AS, 3)`` batch of segments.

    Returns:
        (logits ``(B, K)``, cache for ``backward``, BN running statistics)
    """
    if batch.ndim != 4 or batch.shape[-1] != 3:
        raise ShapeError(f"expected (B, L, AS, 3) segments, got {batch.shape}")
    n, length, size, _ = batch.shape
    embeddings, lpn_cache, running = lpn.lpn_forward(
        batch.reshape(n * length, size, 3), params, model_config.lpn, training
    )
    embeddings = embeddings.reshape(n, length, -1)
    logits, rnn_cache, rnn_running = bililstm.bidir_forward(embeddings, params, training)
    running.update(rnn_running)
    return logits, (lpn_cache, rnn_cache), running


def backward(grad_logits: np.ndarray, cache, params: ModelParams) -> Dict[str, np.ndarray]:
    lpn_cache, rnn_cache = cache
    grads, grad_embeddings = bililstm.bidir_backward(grad_logits, rnn_cache, params)
    grads.update(lpn.lpn_backward(grad_embeddings.reshape(-1, grad_embeddings.shape[-1]), lpn_cache))
    return grads


def forward_loss(params: ModelParams, model_config: ModelConfig, batch: np.ndarray, labels: np.ndarray,
                 training: bool = True):
    """
    Mean cross-entropy of a batch and its exact gradients.

    Returns:
        (loss, gradients keyed like ``params.weights``, running statistics, logits)
    """
    logits, cache, running = forward(params, model_config, batch, training)
    loss, grad_logits = nncore.softmax_xent(logits, labels)
    grads = backward(grad_logits, cache, params)
    return loss, grads, running, logits


def predict_proba(params: ModelParams, model_config: ModelConfig, batch: np.ndarray) -> np.ndarray:
    """Posteriors ``(B, K)`` in inference mode, at the precision of ``params``."""
    if len(batch) == 0:
        return np.zeros((0, model_config.num_classes), dtype=params.dtype)
    batch = lpn.canonical_order(np.asarray(batch, dtype=params.dtype))
    chunks = []
    for start in range(0, len(batch), PREDICT_CHUNK):
        logits, _, _ = forward(params, model_config, batch[start:start + PREDICT_CHUNK], training=False)
        chunks.append(nncore.softmax(logits))
    return np.concatenate(chunks)

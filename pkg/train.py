"""
Supervised training of the LPN + BiLiLSTM classifier on discrete segments,
evaluation on held-out recordings, HMM fitting and the window/alignment sweeps.
"""
import logging
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

import config
import cost_tracking
import hmm
import model as model_lib
import nncore
import spca
from bililstm import CELL_GRU, CELL_LITE_LSTM, BiLiLSTMConfig, bidir_backward, bidir_forward, init_bililstm
from errors import ConfigError, ParameterError
from evaluation import MetricsReport, compute_metrics
from hmm import HMMParams
from model import Model, ModelConfig
from pcloud import Recording, align_recording, alignment_stats, segment_array, window_segments

logger = logging.getLogger(__name__)

SCHEMA_TRAIN_LOG = "mmhar.trainlog/1"
SCHEMA_SWEEP = "mmhar.sweep/1"

# Spawn-key tags; augmentation uses spca.AUGMENT_STREAM
INIT_STREAM = 0
SHUFFLE_STREAM = 2
ALIGN_STREAM = 3
SPLIT_STREAM = 4

SWEEP_WINDOW = "window_size"
SWEEP_ALIGNMENT = "alignment_size"
SWEEP_CELL = "recurrent_cell"
SWEEP_AXES = (SWEEP_WINDOW, SWEEP_ALIGNMENT, SWEEP_CELL)
WINDOW_SWEEP_VALUES = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
ALIGNMENT_SWEEP_VALUES = {"mmact": (5, 10, 15, 20, 25), "disc": (16, 32, 48, 64)}
CELL_SWEEP_VALUES = (CELL_LITE_LSTM, CELL_GRU)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 20
    seed: int = config.DEFAULT_SEED
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    hmm_alpha: float = 1.0
    augment: bool = True
    rotate: bool = True
    stretch: bool = True
    perturb: bool = True
    theta_max: float = 2 * np.pi
    stretch_min: float = 0.8
    stretch_max: float = 1.2
    perturb_bound: float = 0.05
    stretch_mode: str = spca.STRETCH_CENTROID
    jitter_sigma: float = 0.0

    @property
    def spca_ranges(self) -> spca.SPCARanges:
        return spca.SPCARanges(
            theta_max=self.theta_max, stretch_min=self.stretch_min, stretch_max=self.stretch_max,
            perturb_bound=self.perturb_bound, rotate=self.rotate, stretch=self.stretch, perturb=self.perturb,
            stretch_mode=self.stretch_mode, jitter_sigma=self.jitter_sigma,
        )

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2 for batch normalisation")
        if self.train_fraction <= 0 or self.val_fraction < 0 or self.train_fraction + self.val_fraction > 1:
            raise ConfigError(f"invalid split fractions {self.train_fraction}/{self.val_fraction}")
        if self.learning_rate <= 0 or self.lr_decay_every < 1:
            raise ConfigError("learning rate and decay interval must be positive")
        try:
            self.spca_ranges.validate()
        except ParameterError as e:
            raise ConfigError(str(e))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: Optional["TrainConfig"] = None) -> "TrainConfig":
        result = config.apply_mapping(base or cls(), values)
        result.validate()
        return result


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=stream))


def learning_rate_at(train_config: TrainConfig, epoch: int) -> float:
    return train_config.learning_rate * train_config.lr_decay ** (epoch // train_config.lr_decay_every)


# Data preparation

def recording_label(recording: Recording) -> Optional[int]:
    """The single label of a discrete recording, None for mixed or unlabelled ones."""
    labels = {frame.label for frame in recording.frames}
    return labels.pop() if len(labels) == 1 else None


def split_recordings(recordings: Sequence[Recording], fractions: Tuple[float, float] = (0.7, 0.1),
                     seed: int = config.DEFAULT_SEED):
    """
    Train/validation/test split by whole recordings, stratified by recording label.

    Returns:
        (train, validation, test) lists of recordings
    """
    train_fraction, val_fraction = fractions
    groups: Dict[Optional[int], List[Recording]] = defaultdict(list)
    for recording in recordings:
        groups[recording_label(recording)].append(recording)

    rng = _rng(seed, SPLIT_STREAM)
    train, val, test = [], [], []
    for key in sorted(groups, key=lambda k: (k is None, k if k is not None else 0)):
        group = groups[key]
        order = rng.permutation(len(group))
        n_train = max(1, int(round(train_fraction * len(group))))
        n_val = min(int(round(val_fraction * len(group))), len(group) - n_train)
        train += [group[i] for i in order[:n_train]]
        val += [group[i] for i in order[n_train:n_train + n_val]]
        test += [group[i] for i in order[n_train + n_val:]]
    logger.info(f"Split {len(recordings)} recordings into {len(train)}/{len(val)}/{len(test)}")
    return train, val, test


@dataclass
class SegmentSet:
    """Stacked windows ready for batching."""
    points: np.ndarray   # (N, L, AS, 3)
    labels: np.ndarray   # (N,), blank windows included
    recording: np.ndarray  # (N,) index of the source recording

    def __len__(self) -> int:
        return len(self.labels)

    def without_blank(self, blank: int) -> "SegmentSet":
        keep = self.labels != blank
        return SegmentSet(self.points[keep], self.labels[keep], self.recording[keep])


def make_segments(recordings: Sequence[Recording], length: int, stride: int, alignment_size: int,
                  rng: np.random.Generator) -> SegmentSet:
    """Align every frame once, then cut overlapping labelled windows."""
    points, labels, owners = [], [], []
    for index, recording in enumerate(recordings):
        aligned = align_recording(recording.frames, alignment_size, rng)
        for segment in window_segments(aligned, length, stride):
            if segment.label is None:
                continue
            points.append(segment_array(segment))
            labels.append(segment.label)
            owners.append(index)
    if not points:
        return SegmentSet(np.zeros((0, length, alignment_size, 3)), np.zeros(0, dtype=np.int64),
                          np.zeros(0, dtype=np.int64))
    return SegmentSet(np.stack(points), np.array(labels, dtype=np.int64), np.array(owners, dtype=np.int64))


def _segments_for(model_config: ModelConfig, recordings: Sequence[Recording], seed: int) -> SegmentSet:
    with cost_tracking.track(cost_tracking.PHASE_FEATURES):
        return make_segments(recordings, model_config.window_frames, model_config.stride_frames,
                             model_config.alignment_size, _rng(seed, ALIGN_STREAM))


def batch_slices(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Consecutive batches; a trailing batch of one joins the previous one."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


# Training

def train(recordings: Sequence[Recording], model_config: ModelConfig, train_config: TrainConfig,
          val_recordings: Sequence[Recording] = ()) -> Tuple[Model, Dict[str, Any]]:
    """
    Train on ``recordings`` and return the float32 model plus a JSON-ready log.

    Augmentation draws are keyed by (seed, epoch, segment index) and are
    independent of weight initialisation and shuffling.
    """
    model_config.validate()
    train_config.validate()
    segments = _segments_for(model_config, recordings, train_config.seed).without_blank(model_config.blank)
    missing = sorted(set(range(model_config.num_classes)) - set(segments.labels.tolist()))
    if missing:
        names = ", ".join(model_config.class_names[k] for k in missing)
        raise ConfigError(f"classes absent from the training split: {names}")
    if len(segments) < 2:
        raise ConfigError("need at least two training windows")
    val_segments = _segments_for(model_config, val_recordings, train_config.seed).without_blank(model_config.blank)

    params = model_lib.init_model(model_config, _rng(train_config.seed, INIT_STREAM))
    cost_tracking.set_parameter_count(params.count())
    state = nncore.AdamState(lr=train_config.learning_rate)
    ranges = train_config.spca_ranges
    history = []
    logger.info(f"Training on {len(segments)} windows ({len(val_segments)} validation), "
                f"{params.count()} parameters, {train_config.epochs} epochs")

    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        state.lr = learning_rate_at(train_config, epoch)
        order = _rng(train_config.seed, SHUFFLE_STREAM, epoch).permutation(len(segments))
        loss_sum, correct = 0.0, 0
        with cost_tracking.track(cost_tracking.PHASE_TRAIN_EPOCH):
            for batch in batch_slices(order, train_config.batch_size):
                x = segments.points[batch]
                if train_config.augment:
                    x = spca.augment_batch(x, ranges, train_config.seed, epoch, batch)
                y = segments.labels[batch]
                loss, grads, running, logits = model_lib.forward_loss(params, model_config, x, y)
                nncore.adam_step(params.weights, grads, state)
                nncore.apply_running_stats(params, running)
                loss_sum += loss * len(batch)
                correct += int(np.sum(np.argmax(logits, axis=1) == y))

        entry = {
            "epoch": epoch + 1,
            "loss": loss_sum / len(segments),
            "train_accuracy": correct / len(segments),
            "val_accuracy": _accuracy(params, model_config, val_segments),
            "lr": state.lr,
            "seconds": time.perf_counter() - started,
        }
        history.append(entry)
        logger.info(f"Epoch {entry['epoch']}/{train_config.epochs}: loss {entry['loss']:.4f}, "
                    f"train acc {entry['train_accuracy']:.3f}, val acc {entry['val_accuracy']}")

    trained = Model(config=model_config, params=model_lib.as_dtype(params, np.float32), seed=train_config.seed)
    hmm_source = val_recordings if len(val_segments) else recordings
    trained.hmm = fit_hmm_on(trained, hmm_source, train_config.hmm_alpha, train_config.seed)

    log = {
        "schema": SCHEMA_TRAIN_LOG,
        "parameter_count": params.count(),
        "windows": {"train": len(segments), "validation": len(val_segments)},
        "model_config": model_config.to_dict(),
        "train_config": asdict(train_config),
        "epochs": history,
        "cost": cost_tracking.get_session_cost(),
    }
    return trained, log


def _accuracy(params, model_config: ModelConfig, segments: SegmentSet) -> Optional[float]:
    if len(segments) == 0:
        return None
    probs = model_lib.predict_proba(params, model_config, segments.points)
    return float(np.mean(np.argmax(probs, axis=1) == segments.labels))


def train_sequence_classifier(embeddings: np.ndarray, labels: np.ndarray, rnn_config: BiLiLSTMConfig,
                              epochs: int = 200, learning_rate: float = 1e-3, seed: int = config.DEFAULT_SEED):
    """
    Fit only the recurrent classifier on precomputed ``(N, L, D)`` embeddings (full batch).

    Returns:
        (parameters, per-epoch training accuracy)
    """
    params = init_bililstm(rnn_config, _rng(seed, INIT_STREAM))
    state = nncore.AdamState(lr=learning_rate)
    accuracy = []
    for _ in range(epochs):
        logits, cache, running = bidir_forward(embeddings, params, training=True)
        _, grad_logits = nncore.softmax_xent(logits, labels)
        grads, _ = bidir_backward(grad_logits, cache, params)
        nncore.adam_step(params.weights, grads, state)
        nncore.apply_running_stats(params, running)
        accuracy.append(float(np.mean(np.argmax(logits, axis=1) == labels)))
    return params, accuracy


# Evaluation and HMM fitting

def predict_windows(trained: Model, recordings: Sequence[Recording], seed: int) -> Tuple[SegmentSet, np.ndarray]:
    """Windows of ``recordings`` (blank windows included) and the model's argmax per window."""
    segments = _segments_for(trained.config, recordings, seed)
    with cost_tracking.track(cost_tracking.PHASE_TEST):
        probs = model_lib.predict_proba(trained.params, trained.config, segments.points)
    return segments, np.argmax(probs, axis=1) if len(probs) else np.zeros(0, dtype=np.int64)


def evaluate(trained: Model, recordings: Sequence[Recording], seed: int = config.DEFAULT_SEED) -> MetricsReport:
    """Window-level metrics on non-blank windows. Parameters are not touched."""
    segments, predicted = predict_windows(trained, recordings, seed)
    keep = segments.labels != trained.config.blank
    if not np.any(keep):
        raise ParameterError("no labelled windows to evaluate")
    report = compute_metrics(predicted[keep], segments.labels[keep], trained.config.num_classes,
                             trained.config.class_names)
    logger.info(f"Evaluated {int(keep.sum())} windows: accuracy {report.accuracy:.4f}, F1 {report.f1:.4f}")
    return report


def fit_hmm_on(trained: Model, recordings: Sequence[Recording], alpha: float = 1.0,
               seed: int = config.DEFAULT_SEED) -> HMMParams:
    """
    Fit HMM parameters from the model's predictions on labelled recordings.

    Blank windows are removed from each recording's sequence before counting,
    so transitions across a blank gap count as direct transitions.
    """
    segments, predicted = predict_windows(trained, recordings, seed)
    pairs = []
    for index in range(len(recordings)):
        mine = (segments.recording == index) & (segments.labels != trained.config.blank)
        if np.any(mine):
            pairs.append((predicted[mine], segments.labels[mine]))
    params = hmm.fit_many(pairs, trained.config.num_classes, alpha)
    logger.info(f"Fitted HMM on {sum(len(p) for p, _ in pairs)} windows from {len(pairs)} recordings")
    return params


# Sweeps

def sweep(recordings: Sequence[Recording], axis: str, values: Sequence[Any], model_config: ModelConfig,
          train_config: TrainConfig) -> List[Dict[str, Any]]:
    """
    Train and test once per value of ``axis`` on the same recording split.

    Returns:
        One row per value with accuracy metrics, timing and alignment shares
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis: {axis}")
    train_set, val_set, test_set = split_recordings(
        recordings, (train_config.train_fraction, train_config.val_fraction), train_config.seed
    )
    rows = []
    for value in values:
        if axis == SWEEP_WINDOW:
            current = replace(model_config, window_seconds=float(value),
                              stride_seconds=min(model_config.stride_seconds, float(value)))
        elif axis == SWEEP_ALIGNMENT:
            current = replace(model_config, alignment_size=int(value))
        else:
            current = replace(model_config, recurrent_cell=str(value))
            current.validate()
        cost_tracking.reset_session_cost()
        trained, log = train(train_set, current, train_config, val_set)
        report = evaluate(trained, test_set, train_config.seed)
        shares = alignment_stats((f for r in train_set for f in r.frames), current.alignment_size)
        epochs = cost_tracking.phase_stats(cost_tracking.PHASE_TRAIN_EPOCH)
        tests = cost_tracking.phase_stats(cost_tracking.PHASE_TEST)
        rows.append({
            "axis": axis,
            "value": value,
            "accuracy": report.accuracy,
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "parameters": trained.parameter_count,
            "train_windows": log["windows"]["train"],
            "epoch_seconds": epochs["mean_s"] if epochs else 0.0,
            "test_seconds": tests["total_s"] if tests else 0.0,
            "up_share": shares["up"],
            "down_share": shares["down"],
        })
        logger.info(f"Sweep {axis}={value}: accuracy {report.accuracy:.4f}")
    return rows

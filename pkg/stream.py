"""
Real-time continuous pipeline.

Every frame is aligned and embedded once; its embedding goes into a ring
buffer of the last L frames. Every ``stride`` frames (once L frames are
buffered) the window is classified, the argmax goes through the HMM forward
filter, the filtered posterior is blank-gated and the gated label is fed to
the streaming collapse, which emits an Event whenever a run ends.
"""
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Deque, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

import config
import cost_tracking
import lpn
import nncore
from bililstm import bidir_forward
from ctc import CollapseState, Event, LabeledStep, blank_gate, collapse
from errors import ConfigError, StreamError
from evaluation import MetricsReport, compute_metrics, edit_rate, event_edit_distance
from hmm import HMMFilter, viterbi
from model import Model
from pcloud import AlignedFrame, Frame, Recording, align_frame, seconds_to_frames, sentinel_frame, window_label

logger = logging.getLogger(__name__)

__all__ = ["Event", "EmbeddingCache", "Pipeline", "PipelineConfig", "run_batch", "run_batch_many"]

STATUS_WARMING_UP = "warming up"
DECODER_FILTER = "filter"
DECODER_VITERBI = "viterbi"
ALIGN_STREAM = 5
LATENCY_WINDOW = 10_000
SCHEMA_EVENT = "mmhar.event/1"
SCHEMA_STREAM = "mmhar.stream/1"


@dataclass(frozen=True)
class PipelineConfig:
    frame_rate: float = 10.0
    window_seconds: float = config.WINDOW_SECONDS
    stride_seconds: float = config.STRIDE_SECONDS
    alignment_size: int = config.ALIGNMENT_SIZE_DISC
    tau_blank: float = config.TAU_BLANK
    use_hmm: bool = True
    seed: int = config.DEFAULT_SEED

    @property
    def window_frames(self) -> int:
        return seconds_to_frames(self.window_seconds, self.frame_rate)

    @property
    def stride_frames(self) -> int:
        return seconds_to_frames(self.stride_seconds, self.frame_rate)

    @property
    def hop_seconds(self) -> float:
        return self.stride_frames / self.frame_rate

    def validate(self) -> None:
        if self.frame_rate <= 0 or self.window_seconds <= 0 or self.stride_seconds <= 0:
            raise ConfigError("frame rate, window and stride must be positive")
        if self.stride_seconds > self.window_seconds:
            raise ConfigError(f"stride {self.stride_seconds} s exceeds window {self.window_seconds} s")
        if not 0 < self.tau_blank <= 1:
            raise ConfigError(f"blank threshold must lie in (0, 1], got {self.tau_blank}")
        for name, seconds in (("window", self.window_seconds), ("stride", self.stride_seconds)):
            frames = seconds * self.frame_rate
            if abs(frames - round(frames)) > 1e-6:
                logger.warning(f"{name} of {seconds} s is {frames:.2f} frames at {self.frame_rate} Hz; "
                               f"rounded to {seconds_to_frames(seconds, self.frame_rate)}")

    @classmethod
    def from_model(cls, model: Model, values: Optional[Mapping[str, Any]] = None) -> "PipelineConfig":
        """Pipeline defaults taken from the model, overridden by ``values``."""
        base = cls(
            frame_rate=model.config.frame_rate,
            window_seconds=model.config.window_seconds,
            stride_seconds=model.config.stride_seconds,
            alignment_size=model.config.alignment_size,
        )
        result = config.apply_mapping(base, values or {})
        result.validate()
        return result


class EmbeddingCache:
    """Ring buffer of the last L per-frame embeddings with their timestamps and labels."""

    def __init__(self, length: int):
        self.length = length
        self._items: Deque = deque(maxlen=length)

    def push(self, timestamp: float, embedding: np.ndarray, label: Optional[int]) -> None:
        self._items.append((timestamp, embedding, label))

    def __len__(self) -> int:
        return len(self._items)

    @property
    def full(self) -> bool:
        return len(self._items) == self.length

    def array(self) -> np.ndarray:
        return np.stack([item[1] for item in self._items])

    @property
    def timestamps(self) -> List[float]:
        return [item[0] for item in self._items]

    @property
    def labels(self) -> List[Optional[int]]:
        return [item[2] for item in self._items]

    def clear(self) -> None:
        self._items.clear()


@dataclass
class WindowResult:
    """Everything decided for one window."""
    start: float
    end: float
    raw: int
    smoothed: int
    label: int
    confidence: float
    posterior: np.ndarray
    truth: Optional[int] = None


@dataclass
class StepResult:
    """
    Outcome of one frame.

    ``window`` is set only on frames that completed a hop; between hops
    ``status`` and ``posterior`` repeat the most recent hop.
    """
    events: List[Event] = field(default_factory=list)
    status: str = STATUS_WARMING_UP
    window: Optional[WindowResult] = None
    posterior: Optional[np.ndarray] = None


class Pipeline:
    """One live stream. Not thread-safe; model parameters are only read."""

    def __init__(self, model: Model, pipeline_config: PipelineConfig):
        pipeline_config.validate()
        if pipeline_config.alignment_size != model.config.alignment_size:
            raise ConfigError(f"model expects alignment size {model.config.alignment_size}, "
                              f"pipeline uses {pipeline_config.alignment_size}")
        self.model = model
        self.config = pipeline_config
        self.blank = model.config.blank
        self.class_names = model.config.class_names
        self._lpn_config = model.config.lpn
        self._rng = np.random.default_rng(np.random.SeedSequence(pipeline_config.seed, spawn_key=(ALIGN_STREAM,)))
        self.cache = EmbeddingCache(pipeline_config.window_frames)
        self.hmm_filter = HMMFilter(model.hmm) if (pipeline_config.use_hmm and model.hmm is not None) else None
        self.collapse = CollapseState(self.blank)
        self.latencies: Deque[float] = deque(maxlen=LATENCY_WINDOW)
        self.frames = 0
        self.hops = 0
        self.dropped = 0
        self.sentinels = 0
        self._last_aligned: Optional[AlignedFrame] = None
        self._last_timestamp: Optional[float] = None
        self._pending_seconds = 0.0
        self.last_window: Optional[WindowResult] = None
        self._status = STATUS_WARMING_UP
        self._posterior: Optional[np.ndarray] = None

    def label_name(self, label: int) -> str:
        return config.BLANK_NAME if label == self.blank else self.class_names[label]

    def process_frame(self, frame: Frame) -> StepResult:
        """
        Consume one frame.

        Raises:
            StreamError: the timestamp does not follow the previous frame's
        """
        if self._last_timestamp is not None and not frame.timestamp > self._last_timestamp:
            raise StreamError(f"frame at t={frame.timestamp} arrived after t={self._last_timestamp}")
        self._last_timestamp = frame.timestamp
        started = time.perf_counter()

        if len(frame) == 0:
            if self._last_aligned is None:
                self.dropped += 1
                logger.warning(f"Dropped empty frame at t={frame.timestamp} before the first non-empty frame")
                return self._between_hops()
            frame = sentinel_frame(self._last_aligned, frame.timestamp, frame.label)
            self.sentinels += 1
            logger.warning(f"Empty frame at t={frame.timestamp} replaced by a sentinel point")

        aligned = align_frame(frame, self.config.alignment_size, self._rng)
        self._last_aligned = aligned
        self.cache.push(frame.timestamp, lpn.embed_frame(aligned, self.model.params, self._lpn_config), frame.label)
        self.frames += 1
        self._pending_seconds += time.perf_counter() - started

        length, stride = self.config.window_frames, self.config.stride_frames
        if self.frames < length or (self.frames - length) % stride:
            return self._between_hops()
        return self._hop()

    def _between_hops(self) -> StepResult:
        return StepResult(status=self._status, posterior=self._posterior)

    def _hop(self) -> StepResult:
        started = time.perf_counter()
        logits, _, _ = bidir_forward(self.cache.array(), self.model.params, training=False)
        posterior = nncore.softmax(logits)
        raw = int(np.argmax(posterior))
        smoothed_posterior = self.hmm_filter.step(raw) if self.hmm_filter is not None else posterior
        label = blank_gate(smoothed_posterior, self.config.tau_blank)

        timestamps = self.cache.timestamps
        start, end = timestamps[0], timestamps[-1] + 1.0 / self.config.frame_rate
        centre = (start + end) / 2
        half = self.config.hop_seconds / 2
        confidence = float(np.max(smoothed_posterior))
        window = WindowResult(
            start=start, end=end, raw=raw, smoothed=int(np.argmax(smoothed_posterior)), label=label,
            confidence=confidence, posterior=posterior, truth=window_label(self.cache.labels),
        )
        event = self.collapse.push(LabeledStep(label, centre - half, centre + half, confidence))

        self.hops += 1
        latency = self._pending_seconds + time.perf_counter() - started
        self.latencies.append(latency)
        cost_tracking.record_phase(cost_tracking.PHASE_HOP, latency)
        self._pending_seconds = 0.0
        self.last_window = window
        self._status = self.label_name(label)
        self._posterior = smoothed_posterior
        return StepResult(events=[event] if event is not None else [], status=self._status, window=window,
                          posterior=smoothed_posterior)

    def flush(self) -> List[Event]:
        """End of stream: emit the trailing open run."""
        event = self.collapse.flush()
        return [event] if event is not None else []

    def reset(self) -> None:
        self.cache.clear()
        self.collapse = CollapseState(self.blank)
        if self.hmm_filter is not None:
            self.hmm_filter.reset()
        self._last_aligned = None
        self._last_timestamp = None
        self._pending_seconds = 0.0
        self.last_window = None
        self._status = STATUS_WARMING_UP
        self._posterior = None
        self.latencies.clear()
        self.frames = 0
        self.hops = 0
        self.dropped = 0
        self.sentinels = 0

    def latency_stats(self) -> Dict[str, float]:
        if not self.latencies:
            return {"hops": 0}
        values = np.asarray(self.latencies)
        return {
            "hops": self.hops,
            "p50_ms": float(np.percentile(values, 50) * 1000),
            "p99_ms": float(np.percentile(values, 99) * 1000),
            "max_ms": float(values.max() * 1000),
            "budget_ms": self.config.hop_seconds * 1000,
        }

    def summary(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_STREAM,
            "frames": self.frames,
            "dropped_frames": self.dropped,
            "sentinel_frames": self.sentinels,
            "latency": self.latency_stats(),
            "resident_memory_bytes": cost_tracking.sample_memory(),
        }


def event_to_record(event: Event, class_names: Sequence[str]) -> Dict[str, Any]:
    return {
        "schema": SCHEMA_EVENT,
        "label": class_names[event.label],
        "start": round(event.start, 6),
        "end": round(event.end, 6),
        "confidence": round(event.confidence, 6),
    }


# Offline evaluation

@dataclass
class BatchResult:
    events: List[Event]
    windows: List[WindowResult]
    report: Optional[MetricsReport]
    comparison: Dict[str, Any]


def truth_events(frames: Sequence[Frame], rate: float, blank: int) -> List[Event]:
    """Runs of identical non-blank frame labels as events."""
    events: List[Event] = []
    run: List[Frame] = []
    for frame in list(frames) + [None]:
        if run and (frame is None or frame.label != run[0].label):
            if run[0].label is not None and run[0].label != blank:
                events.append(Event(run[0].label, run[0].timestamp, run[-1].timestamp + 1.0 / rate, 1.0, len(run)))
            run = []
        if frame is not None:
            run.append(frame)
    return events


def boundary_errors(predicted: Sequence[Event], truth: Sequence[Event]) -> List[float]:
    """For each true event, the larger start/end offset to the best-overlapping predicted event of its label."""
    errors = []
    for true_event in truth:
        best, best_overlap = None, 0.0
        for event in predicted:
            if event.label != true_event.label:
                continue
            overlap = min(event.end, true_event.end) - max(event.start, true_event.start)
            if overlap > best_overlap:
                best, best_overlap = event, overlap
        if best is not None:
            errors.append(max(abs(best.start - true_event.start), abs(best.end - true_event.end)))
    return errors


def _replay(model: Model, pipeline_config: PipelineConfig, frames: Iterable[Frame]):
    pipeline = Pipeline(model, pipeline_config)
    events, windows = [], []
    for frame in frames:
        result = pipeline.process_frame(frame)
        events.extend(result.events)
        if result.window is not None:
            windows.append(result.window)
    events.extend(pipeline.flush())
    return pipeline, events, windows


def _viterbi_relabel(model: Model, pipeline_config: PipelineConfig, windows: List[WindowResult]):
    """Replace filtered labels by the Viterbi path; the blank gate still uses the filtered confidence."""
    path = viterbi(model.hmm, [w.raw for w in windows])
    blank = model.config.blank
    relabelled, steps = [], []
    half = pipeline_config.hop_seconds / 2
    for window, state in zip(windows, path):
        label = state if window.confidence >= pipeline_config.tau_blank else blank
        relabelled.append(replace(window, smoothed=state, label=label))
        centre = (window.start + window.end) / 2
        steps.append(LabeledStep(label, centre - half, centre + half, window.confidence))
    return relabelled, collapse(steps, blank)


def run_batch(frames: Sequence[Frame], model: Model, pipeline_config: PipelineConfig,
              decoder: str = DECODER_FILTER) -> BatchResult:
    """
    Offline run over one recording's frames, replayed through the live pipeline.

    Window metrics score the blank as its own class; the comparison reports
    raw argmax, HMM-smoothed and HMM+gate accuracy side by side.
    """
    if decoder not in (DECODER_FILTER, DECODER_VITERBI):
        raise ConfigError(f"unknown decoder: {decoder}")
    if not frames:
        return BatchResult(events=[], windows=[], report=None, comparison={})

    _, events, windows = _replay(model, pipeline_config, frames)
    if decoder == DECODER_VITERBI and model.hmm is not None and windows:
        windows, events = _viterbi_relabel(model, pipeline_config, windows)

    blank = model.config.blank
    truth = truth_events(frames, pipeline_config.frame_rate, blank)
    scored = [w for w in windows if w.truth is not None]
    report = None
    comparison: Dict[str, Any] = {"windows": len(scored)}
    if scored:
        names = list(model.config.class_names) + [config.BLANK_NAME]
        truths = [w.truth for w in scored]
        report = compute_metrics([w.label for w in scored], truths, blank + 1, names)
        for key, values in (("raw", [w.raw for w in scored]), ("hmm", [w.smoothed for w in scored]),
                            ("hmm_ctc", [w.label for w in scored])):
            comparison[f"{key}_accuracy"] = float(np.mean(np.asarray(values) == np.asarray(truths)))
        report.edit_distance = event_edit_distance(events, truth)
        report.edit_rate = edit_rate(events, truth)
    errors = boundary_errors(events, truth)
    comparison.update({
        "events": len(events),
        "truth_events": len(truth),
        "edit_distance": event_edit_distance(events, truth),
        "boundary_error_max": max(errors) if errors else None,
        "boundary_error_mean": float(np.mean(errors)) if errors else None,
    })
    return BatchResult(events=events, windows=windows, report=report, comparison=comparison)


def run_batch_many(recordings: Sequence[Recording], model: Model, pipeline_config: PipelineConfig,
                   decoder: str = DECODER_FILTER) -> Dict[str, Any]:
    """``run_batch`` over several recordings with pooled window metrics."""
    blank = model.config.blank
    windows: List[WindowResult] = []
    distance, truth_total, event_total, longest, errors = 0, 0, 0, 0, []
    for recording in recordings:
        result = run_batch(recording.frames, model, pipeline_config, decoder)
        windows += [w for w in result.windows if w.truth is not None]
        truth = truth_events(recording.frames, pipeline_config.frame_rate, blank)
        distance += event_edit_distance(result.events, truth)
        truth_total += len(truth)
        event_total += len(result.events)
        longest += max(len(result.events), len(truth))
        errors += boundary_errors(result.events, truth)
    if not windows:
        return {"schema": SCHEMA_STREAM, "windows": 0}

    truths = np.array([w.truth for w in windows])
    names = list(model.config.class_names) + [config.BLANK_NAME]
    report = compute_metrics([w.label for w in windows], truths, blank + 1, names)
    report.edit_distance = distance
    report.edit_rate = distance / longest if longest else 0.0
    return {
        "schema": SCHEMA_STREAM,
        "decoder": decoder,
        "windows": len(windows),
        "raw_accuracy": float(np.mean(np.array([w.raw for w in windows]) == truths)),
        "hmm_accuracy": float(np.mean(np.array([w.smoothed for w in windows]) == truths)),
        "hmm_ctc_accuracy": float(np.mean(np.array([w.label for w in windows]) == truths)),
        "events": event_total,
        "truth_events": truth_total,
        "boundary_error_max": max(errors) if errors else None,
        "boundary_error_mean": float(np.mean(errors)) if errors else None,
        "metrics": report.to_dict(),
    }

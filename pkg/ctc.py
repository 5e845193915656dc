"""
Blank gating and best-path collapse of window labels into events.

The blank label is the integer ``K`` (one past the last activity id); callers
pass it explicitly as ``blank``.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from errors import ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledStep:
    """One window after gating: a class id or the blank, its time span and confidence."""
    label: int
    start: float
    end: float
    confidence: float = 1.0


@dataclass(frozen=True)
class Event:
    """A collapsed activity occurrence."""
    label: int
    start: float
    end: float
    confidence: float
    windows: int = 1

    @property
    def duration(self) -> float:
        return self.end - self.start


def blank_gate(posterior: np.ndarray, tau: float) -> int:
    """Argmax class when its probability reaches ``tau``, else the blank id ``len(posterior)``."""
    if not 0 < tau <= 1:
        raise ParameterError(f"blank threshold must lie in (0, 1], got {tau}")
    best = int(np.argmax(posterior))
    return best if posterior[best] >= tau else len(posterior)


def collapse_labels(labels: Sequence[int], blank: int) -> List[int]:
    """Merge runs of identical labels and drop blanks, in one pass."""
    out = []
    previous = None
    for label in labels:
        if label != previous and label != blank:
            out.append(label)
        previous = label
    return out


def reference_collapse(labels: Sequence[int], blank: int) -> List[int]:
    """Two-pass collapse: dedupe consecutive runs, then filter blanks."""
    deduped = [label for i, label in enumerate(labels) if i == 0 or label != labels[i - 1]]
    return [label for label in deduped if label != blank]


class CollapseState:
    """Incremental collapse for one stream."""

    def __init__(self, blank: int):
        self.blank = blank
        self._label: Optional[int] = None
        self._start = 0.0
        self._end = 0.0
        self._confidence = 0.0
        self._count = 0

    def _close(self) -> Optional[Event]:
        if self._label is None or self._label == self.blank:
            return None
        return Event(
            label=self._label,
            start=self._start,
            end=self._end,
            confidence=self._confidence / self._count,
            windows=self._count,
        )

    def push(self, step: LabeledStep) -> Optional[Event]:
        """Feed one step; returns the event whose run this step ended, if any."""
        if step.label == self._label:
            self._end = step.end
            self._confidence += step.confidence
            self._count += 1
            return None
        event = self._close()
        self._label = step.label
        self._start = step.start
        self._end = step.end
        self._confidence = step.confidence
        self._count = 1
        return event

    def flush(self) -> Optional[Event]:
        """Close the trailing run at end of stream."""
        event = self._close()
        self._label = None
        self._count = 0
        self._confidence = 0.0
        return event


def collapse_streaming(state: CollapseState, step: LabeledStep) -> Optional[Event]:
    return state.push(step)


def collapse(steps: Sequence[LabeledStep], blank: int) -> List[Event]:
    """Batch collapse of gated steps into events."""
    state = CollapseState(blank)
    events = [event for event in (state.push(step) for step in steps) if event is not None]
    trailing = state.flush()
    if trailing is not None:
        events.append(trailing)
    return events

"""
Window-level classification metrics and event-level edit distance.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import ParameterError

logger = logging.getLogger(__name__)

SCHEMA_METRICS = "mmhar.metrics/1"


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: List[Dict[str, Any]] = field(default_factory=list)
    class_names: Optional[List[str]] = None
    edit_distance: Optional[int] = None
    edit_rate: Optional[float] = None

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> Dict[str, Any]:
        result = {
            "schema": SCHEMA_METRICS,
            "samples": self.total,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
        }
        if self.class_names is not None:
            result["class_names"] = list(self.class_names)
        if self.edit_distance is not None:
            result["edit_distance"] = self.edit_distance
            result["edit_rate"] = self.edit_rate
        return result


def f1_score(precision: float, recall: float) -> float:
    """F1 = 2PR / (P + R), zero when both are zero."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def confusion_matrix(preds: Sequence[int], truths: Sequence[int], num_classes: int) -> np.ndarray:
    """Counts indexed ``[true, predicted]``."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    for name, values in (("predictions", preds), ("truths", truths)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ParameterError(f"{name} must lie in [0, {num_classes})")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (truths, preds), 1)
    return matrix


def metrics_from_confusion(matrix: np.ndarray, class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    """
    Micro accuracy plus macro precision, recall and F1.

    Classes with no true samples are left out of the macro means. Macro F1 is
    computed from the macro precision and recall.
    """
    matrix = np.asarray(matrix, dtype=np.int64)
    total = matrix.sum()
    if total == 0:
        raise ParameterError("cannot compute metrics on zero samples")
    diagonal = np.diag(matrix)
    support = matrix.sum(axis=1)
    predicted = matrix.sum(axis=0)

    per_class = []
    for k in range(len(matrix)):
        precision_k = float(diagonal[k] / predicted[k]) if predicted[k] else 0.0
        recall_k = float(diagonal[k] / support[k]) if support[k] else 0.0
        per_class.append({
            "class": class_names[k] if class_names is not None else k,
            "support": int(support[k]),
            "precision": precision_k,
            "recall": recall_k,
            "f1": f1_score(precision_k, recall_k),
        })

    present = [k for k in range(len(matrix)) if support[k] > 0]
    precision = float(np.mean([per_class[k]["precision"] for k in present]))
    recall = float(np.mean([per_class[k]["recall"] for k in present]))
    return MetricsReport(
        confusion=matrix,
        accuracy=float(diagonal.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        per_class=per_class,
        class_names=list(class_names) if class_names is not None else None,
    )


def compute_metrics(preds: Sequence[int], truths: Sequence[int], num_classes: int,
                    class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    if len(preds) != len(truths):
        raise ParameterError(f"prediction and truth lengths differ: {len(preds)} vs {len(truths)}")
    if len(truths) == 0:
        raise ParameterError("cannot compute metrics on zero samples")
    return metrics_from_confusion(confusion_matrix(preds, truths, num_classes), class_names)


def _labels(sequence) -> List:
    return [getattr(item, "label", item) for item in sequence]


def event_edit_distance(pred, truth) -> int:
    """Levenshtein distance between two label sequences (or sequences of events), unit costs."""
    a, b = _labels(pred), _labels(truth)
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def edit_rate(pred, truth) -> float:
    """Edit distance normalised by the longer of the two sequences, so it stays in [0, 1]."""
    longest = max(len(_labels(pred)), len(_labels(truth)))
    if not longest:
        return 0.0
    return event_edit_distance(pred, truth) / longest


def with_events(report: MetricsReport, pred_events, truth_events) -> MetricsReport:
    report.edit_distance = event_edit_distance(pred_events, truth_events)
    report.edit_rate = edit_rate(pred_events, truth_events)
    return report


def report_to_json(payload: Dict[str, Any], path: Optional[str] = None) -> str:
    """Serialise a report dict; write it to ``path`` when given."""
    text = json.dumps(payload, indent=2, ensure_ascii=False)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        logger.info(f"Wrote report to {path}")
    return text


def table_to_csv(rows: List[Dict[str, Any]], path: Optional[str] = None) -> str:
    """Plot-ready CSV for sweep and comparison tables."""
    text = pd.DataFrame(rows).to_csv(index=False)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"Wrote table with {len(rows)} rows to {path}")
    return text

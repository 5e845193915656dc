"""
Computational cost accounting: wall time per phase (feature extraction,
training epochs, testing, per-hop stream compute) and resident memory.
"""
import logging
import threading
import time
from collections import deque
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

import numpy as np
import psutil

logger = logging.getLogger(__name__)

PHASE_FEATURES = "feature_extraction"
PHASE_TRAIN_EPOCH = "train_epoch"
PHASE_TEST = "test"
PHASE_HOP = "stream_hop"

# Most recent durations kept per phase
MAX_SAMPLES = 100_000

# Session counters, one set per thread
_local = threading.local()


def _session() -> Dict[str, Any]:
    if not hasattr(_local, "session"):
        reset_session_cost()
    return _local.session


def reset_session_cost() -> None:
    """Start a fresh set of counters for the current thread."""
    _local.session = {"phases": {}, "peak_rss_bytes": 0, "parameter_count": None}


def resident_memory() -> int:
    """Resident set size of this process in bytes."""
    return psutil.Process().memory_info().rss


def sample_memory() -> int:
    rss = resident_memory()
    session = _session()
    session["peak_rss_bytes"] = max(session["peak_rss_bytes"], rss)
    return rss


def record_phase(phase: str, seconds: float) -> None:
    durations = _session()["phases"].setdefault(phase, deque(maxlen=MAX_SAMPLES))
    durations.append(seconds)


def set_parameter_count(count: int) -> None:
    _session()["parameter_count"] = count


@contextmanager
def track(phase: str) -> Iterator[None]:
    """Time the enclosed block and add it to ``phase``."""
    start = time.perf_counter()
    try:
        yield
    finally:
        record_phase(phase, time.perf_counter() - start)
        sample_memory()


def phase_stats(phase: str) -> Optional[Dict[str, float]]:
    durations = _session()["phases"].get(phase)
    if not durations:
        return None
    values = np.asarray(durations)
    return {
        "count": int(len(values)),
        "total_s": float(values.sum()),
        "mean_s": float(values.mean()),
        "p50_s": float(np.percentile(values, 50)),
        "p99_s": float(np.percentile(values, 99)),
        "max_s": float(values.max()),
    }


def get_session_cost() -> Dict[str, Any]:
    session = _session()
    return {
        "phases": {phase: phase_stats(phase) for phase in session["phases"]},
        "peak_rss_bytes": session["peak_rss_bytes"],
        "parameter_count": session["parameter_count"],
    }


def format_cost_report() -> str:
    """Human-readable summary of the current session's costs."""
    cost = get_session_cost()
    report = ["===== Computational Cost ====="]
    if cost["parameter_count"] is not None:
        report.append(f"Trainable parameters: {cost['parameter_count']:,}")
    report.append(f"Peak resident memory: {cost['peak_rss_bytes'] / 2**20:.1f} MiB")
    for phase, stats in cost["phases"].items():
        report.append(f"{phase}:")
        report.append(f"  Runs: {stats['count']}  Total: {stats['total_s']:.2f} s  Mean: {stats['mean_s'] * 1000:.1f} ms")
        report.append(f"  p50: {stats['p50_s'] * 1000:.1f} ms  p99: {stats['p99_s'] * 1000:.1f} ms")
    return "\n".join(report)

"""
Frame and segment types plus the hybrid alignment that turns variable-size
radar frames into fixed-size inputs.

Points are stored as float64 ``(n, 3)`` numpy arrays in metres, radar-centred,
z pointing up. Point order inside a frame carries no meaning.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import EmptyFrameError, ParameterError, ShapeError, StreamError

logger = logging.getLogger(__name__)


class Point(NamedTuple):
    x: float
    y: float
    z: float


def _as_points(points) -> np.ndarray:
    array = np.array(points, dtype=np.float64)
    if array.size == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ShapeError(f"points must have shape (n, 3), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ParameterError("point coordinates must be finite")
    return array


@dataclass(frozen=True, eq=False)
class Frame:
    """One radar sweep: a variable number of points and a timestamp."""
    timestamp: float
    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        self.points.flags.writeable = False

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class AlignedFrame:
    """A frame resampled to exactly ``alignment_size`` points."""
    timestamp: float
    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        self.points.flags.writeable = False

    @property
    def alignment_size(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Segment:
    """L consecutive aligned frames; the unit of classification."""
    frames: Tuple[AlignedFrame, ...]
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ShapeError("segment needs at least one frame")
        sizes = {frame.alignment_size for frame in self.frames}
        if len(sizes) != 1:
            raise ShapeError(f"segment frames have mixed alignment sizes: {sorted(sizes)}")

    @property
    def labels(self) -> Tuple[Optional[int], ...]:
        return tuple(frame.label for frame in self.frames)

    @property
    def start(self) -> float:
        return self.frames[0].timestamp

    @property
    def end(self) -> float:
        return self.frames[-1].timestamp

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Recording:
    """An ordered list of frames captured in one session."""
    recording_id: str
    frames: List[Frame] = field(default_factory=list)

    def validate(self) -> None:
        """Raise StreamError if timestamps are not strictly increasing."""
        for previous, current in zip(self.frames, self.frames[1:]):
            if not current.timestamp > previous.timestamp:
                raise StreamError(
                    f"recording {self.recording_id}: timestamp {current.timestamp} "
                    f"does not follow {previous.timestamp}"
                )


def segment_array(segment: Segment) -> np.ndarray:
    """Stack a segment's points into an ``(L, AS, 3)`` array."""
    return np.stack([frame.points for frame in segment.frames])


def segment_from_array(array: np.ndarray, template: Segment) -> Segment:
    """Build a new segment with ``template``'s timestamps and labels and new points."""
    frames = tuple(
        AlignedFrame(timestamp=frame.timestamp, points=points, label=frame.label)
        for frame, points in zip(template.frames, array)
    )
    return Segment(frames=frames, label=template.label)


def alignment_mode(n: int, alignment_size: int) -> str:
    """Which sampling branch ``align_frame`` takes for a frame of ``n`` points."""
    if n < alignment_size:
        return "up"
    if n > alignment_size:
        return "down"
    return "identity"


def align_frame(frame: Frame, alignment_size: int, rng: np.random.Generator) -> AlignedFrame:
    """
    Resample a frame to exactly ``alignment_size`` points.

    Frames with fewer points keep every original point and add uniformly drawn
    replicas; frames with more points keep a uniformly random subset drawn
    without replacement.

    Args:
        frame: Frame with at least one point
        alignment_size: Target point count (AS)
        rng: Seeded generator owned by the caller

    Returns:
        AlignedFrame with the same timestamp and label
    """
    if alignment_size < 1:
        raise ParameterError(f"alignment size must be positive, got {alignment_size}")
    n = len(frame.points)
    if n == 0:
        raise EmptyFrameError(f"frame at t={frame.timestamp} has no points")

    mode = alignment_mode(n, alignment_size)
    if mode == "up":
        extra = rng.integers(0, n, size=alignment_size - n)
        index = np.concatenate([np.arange(n), extra])
    elif mode == "down":
        index = rng.choice(n, size=alignment_size, replace=False)
    else:
        index = np.arange(n)

    return AlignedFrame(timestamp=frame.timestamp, points=frame.points[index], label=frame.label)


def window_count(n_frames: int, length: int, stride: int) -> int:
    """Number of windows ``window_segments`` produces."""
    if n_frames < length:
        return 0
    return (n_frames - length) // stride + 1


def window_label(labels: Iterable[Optional[int]]) -> Optional[int]:
    """
    Majority label of a window.

    Ties go to the lower id. The blank label is encoded as the class count K,
    one past every activity id, so it loses every tie. Unlabelled frames are
    ignored; a window with no labelled frame has no label.
    """
    counts = Counter(label for label in labels if label is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(label for label, count in counts.items() if count == best)


def window_segments(frames: Sequence[AlignedFrame], length: int, stride: int) -> List[Segment]:
    """
    Cut aligned frames into overlapping windows.

    Window i starts at frame ``i * stride``. Inputs shorter than ``length``
    give an empty list.
    """
    if length < 1 or stride < 1:
        raise ParameterError(f"window length and stride must be positive, got {length}, {stride}")
    segments = []
    for i in range(window_count(len(frames), length, stride)):
        start = i * stride
        window = tuple(frames[start:start + length])
        segments.append(Segment(frames=window, label=window_label(f.label for f in window)))
    return segments


def centroid(segment: Segment) -> Point:
    """Arithmetic mean of all L*AS points in a segment."""
    mean = segment_array(segment).reshape(-1, 3).mean(axis=0)
    return Point(float(mean[0]), float(mean[1]), float(mean[2]))


def frame_centroid(points: np.ndarray) -> Point:
    if len(points) == 0:
        raise EmptyFrameError("centroid of an empty frame")
    mean = np.asarray(points).mean(axis=0)
    return Point(float(mean[0]), float(mean[1]), float(mean[2]))


def sentinel_frame(previous: AlignedFrame, timestamp: float, label: Optional[int] = None) -> Frame:
    """Stand-in for an empty frame inside a stream: one point at the previous frame's centroid."""
    return Frame(timestamp=timestamp, points=[list(frame_centroid(previous.points))], label=label)


def alignment_stats(frames: Iterable[Frame], alignment_size: int) -> Dict[str, float]:
    """Share of frames that are up-sampled, down-sampled or left as they are."""
    counts = Counter(alignment_mode(len(frame), alignment_size) for frame in frames if len(frame) > 0)
    total = sum(counts.values())
    stats = {mode: (counts.get(mode, 0) / total if total else 0.0) for mode in ("up", "down", "identity")}
    stats["frames"] = total
    return stats


def seconds_to_frames(seconds: float, rate: float) -> int:
    """Whole number of frames covering ``seconds`` at ``rate`` Hz, rounded to the nearest frame."""
    if seconds <= 0 or rate <= 0:
        raise ParameterError(f"duration and frame rate must be positive, got {seconds} s at {rate} Hz")
    return max(1, int(round(seconds * rate)))


def align_recording(frames: Sequence[Frame], alignment_size: int, rng: np.random.Generator) -> List[AlignedFrame]:
    """
    Align a whole recording in frame order.

    Empty frames before the first non-empty one are dropped; later empty
    frames become a single sentinel point at the previous frame's centroid.
    This matches what the live pipeline does frame by frame.
    """
    aligned: List[AlignedFrame] = []
    for frame in frames:
        if len(frame) == 0:
            if not aligned:
                continue
            frame = sentinel_frame(aligned[-1], frame.timestamp, frame.label)
        aligned.append(align_frame(frame, alignment_size, rng))
    return aligned

"""
Dataset files, the binary model file and the line-delimited live feed.

Canonical dataset CSV, one point per row::

    recording_id,frame_index,timestamp_s,x_m,y_m,z_m,label

A row with empty coordinates stands for a frame without points. Labels are
class names, ``eps`` for the blank, or empty.
"""
import hashlib
import json
import logging
import os
import re
import struct
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

import config
from errors import ConfigError, DatasetError, ModelFileError, ParameterError, ShapeError, StreamError
from hmm import HMMParams
from model import Model, ModelConfig, init_model
from nncore import LayerParams
from pcloud import Frame, Recording, seconds_to_frames, window_count

logger = logging.getLogger(__name__)

COLUMNS = ["recording_id", "frame_index", "timestamp_s", "x_m", "y_m", "z_m", "label"]
COORDINATES = ["x_m", "y_m", "z_m"]

MAGIC = b"MMHAR\0"
FORMAT_VERSION = 1
HEADER = struct.Struct("<HI")  # version, metadata length
DIGEST_SIZE = 32
TENSOR_WEIGHT = "weight"
TENSOR_BUFFER = "buffer"


def default_path(name: str) -> str:
    """Path inside the configured data directory, created on demand."""
    os.makedirs(config.DATA_DIR, exist_ok=True)
    return os.path.join(config.DATA_DIR, name)


# Labels

def label_to_id(label: str, class_names: Sequence[str]) -> Optional[int]:
    label = label.strip()
    if not label:
        return None
    if label == config.BLANK_NAME:
        return len(class_names)
    try:
        return list(class_names).index(label)
    except ValueError:
        raise DatasetError(f"unknown label {label!r}")


def id_to_label(label: Optional[int], class_names: Sequence[str]) -> str:
    if label is None:
        return ""
    if label == len(class_names):
        return config.BLANK_NAME
    return class_names[label]


# Canonical CSV

def _parse_floats(frame: pd.DataFrame, column: str, lines: np.ndarray, allow_blank: bool) -> np.ndarray:
    values = frame[column].to_numpy()
    out = np.empty(len(values), dtype=np.float64)
    for i, raw in enumerate(values):
        raw = raw.strip()
        if not raw and allow_blank:
            out[i] = np.nan
            continue
        try:
            out[i] = float(raw)
        except ValueError:
            raise DatasetError(f"column {column}: cannot parse {raw!r}", line=int(lines[i]))
        if not np.isfinite(out[i]):
            raise DatasetError(f"column {column}: non-finite value {raw!r}", line=int(lines[i]))
    return out


def load_dataset(path: str, class_names: Sequence[str] = config.ACTIVITY_NAMES,
                 allow_empty_frames: bool = False) -> List[Recording]:
    """
    Read a canonical dataset CSV.

    Args:
        path: CSV file with a header row
        class_names: Names mapped to class ids 0..K-1
        allow_empty_frames: Keep coordinate-less rows as empty frames instead of
            rejecting them (stream replay applies its own sentinel policy)

    Returns:
        Recordings in order of first appearance, frames in file order
    """
    if not os.path.exists(path):
        raise DatasetError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DatasetError("file is empty, expected a header row", line=1)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise DatasetError(f"malformed row: {e}", line=int(match.group(1)) if match else None)
    except UnicodeDecodeError as e:
        raise DatasetError(f"not valid UTF-8: {e}")

    # Blank lines come back as all-NaN rows; drop them but keep every row's file line
    blank = frame.isna().all(axis=1).to_numpy()
    lines = np.arange(len(frame))[~blank] + 2
    frame = frame[~blank].reset_index(drop=True).fillna("")
    missing = [column for column in COLUMNS if column not in frame.columns]
    if missing:
        raise DatasetError(f"missing columns: {', '.join(missing)}", line=1)

    timestamps = _parse_floats(frame, "timestamp_s", lines, allow_blank=False)
    coordinates = np.stack([_parse_floats(frame, c, lines, allow_blank=True) for c in COORDINATES], axis=1)
    recording_ids = frame["recording_id"].to_numpy()
    frame_indices = frame["frame_index"].to_numpy()
    raw_labels = frame["label"].to_numpy()

    recordings: Dict[str, Recording] = {}
    # (recording_id) -> (frame_index, timestamp, label, first line, point rows)
    open_frames: Dict[str, List[Any]] = {}

    def close(recording_id: str) -> None:
        index, timestamp, label, line, rows = open_frames.pop(recording_id)
        points = coordinates[rows] if rows else np.zeros((0, 3))
        if len(points) == 0 and not allow_empty_frames:
            raise DatasetError(f"frame {index} has no points", line=line, recording=recording_id)
        frames = recordings[recording_id].frames
        if frames and not timestamp > frames[-1].timestamp:
            raise DatasetError(
                f"timestamp {timestamp} of frame {index} does not follow {frames[-1].timestamp}",
                line=line, recording=recording_id,
            )
        frames.append(Frame(timestamp=timestamp, points=points, label=label))

    for row in range(len(frame)):
        line = int(lines[row])
        recording_id = recording_ids[row].strip()
        if not recording_id:
            raise DatasetError("empty recording_id", line=line)
        try:
            index = int(frame_indices[row])
        except ValueError:
            raise DatasetError(f"frame_index {frame_indices[row]!r} is not an integer", line=line)
        try:
            label = label_to_id(raw_labels[row], class_names)
        except DatasetError as e:
            raise DatasetError(str(e), line=line)
        has_point = not np.isnan(coordinates[row]).any()
        if not has_point and not np.isnan(coordinates[row]).all():
            raise DatasetError("coordinates must be all present or all empty", line=line)

        if recording_id not in recordings:
            recordings[recording_id] = Recording(recording_id=recording_id)
        current = open_frames.get(recording_id)
        if current is not None and current[0] != index:
            if index < current[0]:
                raise DatasetError(f"frame_index {index} after {current[0]}", line=line, recording=recording_id)
            close(recording_id)
            current = None
        if current is None:
            current = open_frames[recording_id] = [index, timestamps[row], label, line, []]
        elif timestamps[row] != current[1] or label != current[2]:
            raise DatasetError("timestamp and label must be the same for every point of a frame",
                               line=line, recording=recording_id)
        if has_point:
            current[4].append(row)

    for recording_id in list(open_frames):
        close(recording_id)

    result = list(recordings.values())
    logger.info(f"Loaded {len(result)} recordings, {sum(len(r.frames) for r in result)} frames from {path}")
    return result


def recordings_to_frame(recordings: Iterable[Recording],
                        class_names: Sequence[str] = config.ACTIVITY_NAMES) -> pd.DataFrame:
    rows = []
    for recording in recordings:
        for index, frame in enumerate(recording.frames):
            label = id_to_label(frame.label, class_names)
            if len(frame) == 0:
                rows.append((recording.recording_id, index, frame.timestamp, None, None, None, label))
            for x, y, z in frame.points.tolist():
                rows.append((recording.recording_id, index, frame.timestamp, x, y, z, label))
    return pd.DataFrame(rows, columns=COLUMNS)


def save_dataset(recordings: Iterable[Recording], path: str,
                 class_names: Sequence[str] = config.ACTIVITY_NAMES) -> None:
    """Write recordings as canonical CSV. Floats use the shortest round-trip representation."""
    table = recordings_to_frame(recordings, class_names)
    table.to_csv(path, index=False, encoding="utf-8", float_format=None)
    logger.info(f"Saved {table['recording_id'].nunique()} recordings ({len(table)} rows) to {path}")


def dataset_stats(recordings: Sequence[Recording], window_seconds: Sequence[float], stride_seconds: float,
                  rate: float, class_names: Sequence[str] = config.ACTIVITY_NAMES) -> List[Dict[str, Any]]:
    """Number of valid windows per window length, overall and per labelled class."""
    stride = seconds_to_frames(stride_seconds, rate)
    rows = []
    for seconds in window_seconds:
        length = seconds_to_frames(seconds, rate)
        row: Dict[str, Any] = {"window_seconds": seconds, "window_frames": length, "windows": 0}
        for name in list(class_names) + [config.BLANK_NAME]:
            row[name] = 0
        for recording in recordings:
            count = window_count(len(recording.frames), length, stride)
            row["windows"] += count
            labels = {frame.label for frame in recording.frames}
            if len(labels) == 1 and None not in labels:
                row[id_to_label(labels.pop(), class_names)] += count
        rows.append(row)
    return rows


# Model file

def _tensor_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def model_to_bytes(model: Model) -> bytes:
    params = model.params
    tensors = [{"name": name, "shape": list(a.shape), "kind": TENSOR_WEIGHT} for name, a in params.weights.items()]
    tensors += [{"name": name, "shape": list(a.shape), "kind": TENSOR_BUFFER} for name, a in params.buffers.items()]
    metadata = {
        "config": model.config.to_dict(),
        "class_names": list(model.config.class_names),
        "parameter_count": params.count(),
        "scalar_count": int(sum(int(np.prod(t["shape"])) for t in tensors)),
        "seed": model.seed,
        "hmm_states": model.hmm.num_states if model.hmm is not None else 0,
        "tensors": tensors,
    }
    meta_bytes = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")

    parts = [MAGIC, HEADER.pack(FORMAT_VERSION, len(meta_bytes)), meta_bytes]
    parts += [_tensor_bytes(a) for a in params.weights.values()]
    parts += [_tensor_bytes(a) for a in params.buffers.values()]
    if model.hmm is not None:
        for array in (model.hmm.pi, model.hmm.A, model.hmm.B):
            parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_model(path: str, model: Model) -> None:
    """Write a model file. Parameters are stored as little-endian float32."""
    data = model_to_bytes(model)
    with open(path, "wb") as f:
        f.write(data)
    logger.info(f"Saved model ({model.parameter_count} parameters, {len(data)} bytes) to {path}")


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self.data = data
        self.offset = offset

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ModelFileError("model file ends early", reason="truncated")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def array(self, shape, dtype: str) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        raw = self.take(count * np.dtype(dtype).itemsize)
        native = np.float32 if dtype == "<f4" else np.float64
        return np.frombuffer(raw, dtype=dtype).astype(native).reshape(shape)


def _tensor_layout(tensors, model_config: ModelConfig) -> List[tuple]:
    """
    Check the tensor table of a model file against the layout ``model_config`` implies.

    Raises:
        ValueError: an entry is malformed or the table does not match the network
    """
    if not isinstance(tensors, list):
        raise ValueError("tensor table is not a list")
    layout = []
    for entry in tensors:
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise ValueError(f"bad tensor entry: {entry!r}")
        kind, shape = entry.get("kind"), entry.get("shape")
        if kind not in (TENSOR_WEIGHT, TENSOR_BUFFER):
            raise ValueError(f"tensor {entry['name']} has unknown kind {kind!r}")
        if not isinstance(shape, list) or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0
                                                  for d in shape):
            raise ValueError(f"tensor {entry['name']} has bad shape {shape!r}")
        layout.append((kind, entry["name"], tuple(shape)))

    expected = init_model(model_config, np.random.default_rng(0))
    wanted = [(TENSOR_WEIGHT, name, a.shape) for name, a in expected.weights.items()]
    wanted += [(TENSOR_BUFFER, name, a.shape) for name, a in expected.buffers.items()]
    if layout != wanted:
        raise ValueError("tensor table does not match the configured network")
    return layout


def model_from_bytes(data: bytes) -> Model:
    prefix = len(MAGIC) + HEADER.size
    if len(data) < prefix + DIGEST_SIZE:
        raise ModelFileError("model file is too short", reason="truncated")
    if data[:len(MAGIC)] != MAGIC:
        raise ModelFileError("not a model file (bad magic)", reason="magic")
    version, meta_length = HEADER.unpack_from(data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version}, expected {FORMAT_VERSION}", reason="version")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFileError("checksum mismatch", reason="checksum")

    reader = _Reader(body, prefix)
    try:
        metadata = json.loads(reader.take(meta_length).decode("utf-8"))
        if not isinstance(metadata, dict) or not isinstance(metadata.get("config"), dict):
            raise ValueError("metadata must be an object holding a config object")
        model_config = ModelConfig.from_mapping(metadata["config"])
        tensors = metadata["tensors"]
        declared_count = int(metadata["parameter_count"])
        hmm_states = int(metadata.get("hmm_states", 0))
        if hmm_states not in (0, model_config.num_classes):
            raise ValueError(f"HMM block has {hmm_states} states, the model has {model_config.num_classes} classes")
        layout = _tensor_layout(tensors, model_config)
    except (ValueError, KeyError, TypeError, AttributeError, ConfigError, ParameterError, ShapeError) as e:
        raise ModelFileError(f"unreadable metadata: {e}", reason="metadata")

    params = LayerParams()
    for kind, name, shape in layout:
        target = params.weights if kind == TENSOR_WEIGHT else params.buffers
        target[name] = reader.array(shape, "<f4")
    if params.count() != declared_count:
        raise ModelFileError(f"declared {declared_count} parameters, found {params.count()}", reason="count")

    hmm = None
    if hmm_states:
        k = hmm_states
        hmm = HMMParams(pi=reader.array((k,), "<f8"), A=reader.array((k, k), "<f8"), B=reader.array((k, k), "<f8"))
    if reader.offset != len(body):
        raise ModelFileError(f"{len(body) - reader.offset} unexpected trailing bytes", reason="count")
    if hmm is not None:
        try:
            hmm.validate()
        except ParameterError as e:
            raise ModelFileError(f"invalid HMM block: {e}", reason="metadata")
    return Model(config=model_config, params=params, hmm=hmm, seed=metadata.get("seed"))


def load_model(path: str) -> Model:
    if not os.path.exists(path):
        raise ModelFileError(f"model file not found: {path}", reason="missing")
    with open(path, "rb") as f:
        data = f.read()
    model = model_from_bytes(data)
    logger.info(f"Loaded model with {model.parameter_count} parameters from {path}")
    return model


# Public 30 Hz dataset text format

RADHAR_KEYS = ("point_id", "x", "y", "z")


def convert_radhar(path: str, recording_id: Optional[str] = None, label: Optional[int] = None,
                   rate: float = 30.0) -> Recording:
    """
    Best-effort reader for the public dataset's text dumps.

    Each point is a ``key: value`` block; ``point_id: 0`` starts a new frame.
    Only xyz are kept. Timestamps are rebuilt from the frame index at ``rate``.
    """
    if not os.path.exists(path):
        raise DatasetError(f"file not found: {path}")
    frames_points: List[List[List[float]]] = []
    point: Dict[str, float] = {}

    def finish_point() -> None:
        if all(key in point for key in ("x", "y", "z")):
            if point.get("point_id", 0) == 0 or not frames_points:
                frames_points.append([])
            frames_points[-1].append([point["x"], point["y"], point["z"]])
        point.clear()

    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if line.startswith("---"):
                finish_point()
                continue
            key, sep, value = line.partition(":")
            key = key.strip()
            if not sep or key not in RADHAR_KEYS:
                continue
            if key == "point_id" and "x" in point:
                finish_point()
            try:
                point[key] = int(value) if key == "point_id" else float(value)
            except ValueError:
                raise DatasetError(f"cannot parse {key} value {value.strip()!r}", line=line_number)
    finish_point()

    recording_id = recording_id or os.path.splitext(os.path.basename(path))[0]
    frames = [Frame(timestamp=i / rate, points=pts, label=label) for i, pts in enumerate(frames_points)]
    logger.info(f"Converted {len(frames)} frames from {path}")
    return Recording(recording_id=recording_id, frames=frames)


def write_radhar(recording: Recording, path: str) -> None:
    """Write frames in the public dataset's text layout (xyz only)."""
    with open(path, "w", encoding="utf-8") as f:
        for frame in recording.frames:
            for point_id, (x, y, z) in enumerate(frame.points.tolist()):
                f.write(f"point_id: {point_id}\nx: {x!r}\ny: {y!r}\nz: {z!r}\n---\n")


# Live feed

def read_feed_line(line: str, class_names: Sequence[str] = config.ACTIVITY_NAMES) -> Optional[Frame]:
    """
    Parse one JSON frame from a line-delimited feed.

    Format: ``{"timestamp": 1.5, "points": [[x, y, z], ...], "label": "walking"}``;
    ``label`` is optional. Blank lines return None.
    """
    line = line.strip()
    if not line:
        return None
    try:
        record = json.loads(line)
        timestamp = float(record["timestamp"])
        points = np.asarray(record.get("points") or [], dtype=np.float64).reshape(-1, 3)
        label = record.get("label")
        label_id = label_to_id(label, class_names) if isinstance(label, str) else None
        return Frame(timestamp=timestamp, points=points, label=label_id)
    except (ValueError, KeyError, TypeError, DatasetError, ParameterError, ShapeError) as e:
        raise StreamError(f"bad feed line: {e}")

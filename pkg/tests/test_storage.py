"""
Dataset CSV, model file, the public text format and the live feed.
"""
import hashlib
import json
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import model as model_lib
import storage
from errors import DatasetError, ModelFileError, StreamError
from pcloud import Frame, Recording

HEADER_LINE = ",".join(storage.COLUMNS) + "\n"


def write_text(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return str(path)


# Dataset CSV

def test_header_only_gives_no_recordings(tmp_path):
    path = write_text(tmp_path / "empty.csv", HEADER_LINE)
    assert storage.load_dataset(path) == []


def test_dataset_round_trip(tmp_path, recording_factory):
    recordings = [recording_factory("a", 4, 0), recording_factory("b", 3, 4, n_points=2)]
    recordings.append(Recording("c", [Frame(0.0, [[1.0, 2.0, 3.0]], 5)]))
    path = str(tmp_path / "data.csv")
    storage.save_dataset(recordings, path)
    loaded = storage.load_dataset(path)

    assert [r.recording_id for r in loaded] == ["a", "b", "c"]
    for original, restored in zip(recordings, loaded):
        assert len(original.frames) == len(restored.frames)
        for fa, fb in zip(original.frames, restored.frames):
            assert fa.timestamp == pytest.approx(fb.timestamp, abs=1e-12)
            assert fa.label == fb.label
            np.testing.assert_allclose(fa.points, fb.points, rtol=1e-12)
    assert loaded[2].frames[0].label == 5


def test_empty_frame_rows(tmp_path):
    recording = Recording("r", [Frame(0.0, [[0.0, 1.0, 1.0]], 2), Frame(0.1, np.zeros((0, 3)), 2)])
    path = str(tmp_path / "gaps.csv")
    storage.save_dataset([recording], path)
    with pytest.raises(DatasetError):
        storage.load_dataset(path)
    loaded = storage.load_dataset(path, allow_empty_frames=True)
    assert [len(frame) for frame in loaded[0].frames] == [1, 0]


def test_corrupted_row_reports_line(tmp_path):
    text = HEADER_LINE + "r,0,0.0,1.0,2.0,3.0,walking\nr,0,0.0,abc,2.0,3.0,walking\n"
    path = write_text(tmp_path / "bad.csv", text)
    with pytest.raises(DatasetError) as excinfo:
        storage.load_dataset(path)
    assert excinfo.value.line == 3
    assert "line 3" in str(excinfo.value)


def test_blank_lines_keep_file_line_numbers(tmp_path):
    text = HEADER_LINE + "r,0,0.0,1.0,2.0,3.0,walking\n\n\nr,1,0.1,1.0,abc,3.0,walking\n"
    path = write_text(tmp_path / "gaps.csv", text)
    with pytest.raises(DatasetError) as excinfo:
        storage.load_dataset(path)
    assert excinfo.value.line == 5

    good = HEADER_LINE + "r,0,0.0,1.0,2.0,3.0,walking\n\nr,1,0.1,1.0,2.0,3.0,walking\n"
    loaded = storage.load_dataset(write_text(tmp_path / "good.csv", good))
    assert len(loaded[0].frames) == 2


@pytest.mark.parametrize("row, line", [
    ("r,0,0.0,1.0,2.0,3.0,jumping\n", 2),
    ("r,0,0.0,1.0,,3.0,walking\n", 2),
    (",0,0.0,1.0,2.0,3.0,walking\n", 2),
])
def test_invalid_rows(tmp_path, row, line):
    path = write_text(tmp_path / "bad.csv", HEADER_LINE + row)
    with pytest.raises(DatasetError) as excinfo:
        storage.load_dataset(path)
    assert excinfo.value.line == line


def test_timestamps_must_increase(tmp_path):
    text = HEADER_LINE + "r,0,1.0,1,2,3,walking\nr,1,0.5,1,2,3,walking\n"
    path = write_text(tmp_path / "order.csv", text)
    with pytest.raises(DatasetError) as excinfo:
        storage.load_dataset(path)
    assert excinfo.value.recording == "r"


def test_missing_dataset_file(tmp_path):
    with pytest.raises(DatasetError):
        storage.load_dataset(str(tmp_path / "nope.csv"))


def test_missing_columns(tmp_path):
    path = write_text(tmp_path / "cols.csv", "recording_id,x_m\nr,1.0\n")
    with pytest.raises(DatasetError):
        storage.load_dataset(path)


def test_dataset_stats(recording_factory):
    rows = storage.dataset_stats([recording_factory("a", 10, 1)], [0.3, 2.0], 0.1, 10.0)
    assert rows[0]["windows"] == 8
    assert rows[0]["falling"] == 8
    assert rows[1]["windows"] == 0


# Model file

def test_model_file_is_byte_stable(tmp_path, random_model):
    first = str(tmp_path / "first.mmhar")
    second = str(tmp_path / "second.mmhar")
    storage.save_model(first, random_model)
    storage.save_model(second, storage.load_model(first))
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_loaded_model_predicts_the_same(tmp_path, random_model, rng):
    path = str(tmp_path / "model.mmhar")
    storage.save_model(path, random_model)
    loaded = storage.load_model(path)
    assert loaded.config == random_model.config
    assert loaded.seed == random_model.seed
    assert loaded.parameter_count == random_model.parameter_count
    np.testing.assert_array_equal(loaded.hmm.B, random_model.hmm.B)

    batch = rng.normal(size=(100, 3, 4, 3)).astype(np.float32)
    np.testing.assert_array_equal(
        model_lib.predict_proba(loaded.params, loaded.config, batch),
        model_lib.predict_proba(random_model.params, random_model.config, batch),
    )


def test_model_without_hmm(random_model):
    random_model.hmm = None
    assert storage.model_from_bytes(storage.model_to_bytes(random_model)).hmm is None


def test_flipped_byte_fails_checksum(random_model):
    data = bytearray(storage.model_to_bytes(random_model))
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(ModelFileError) as excinfo:
        storage.model_from_bytes(bytes(data))
    assert excinfo.value.reason == "checksum"


def test_bad_magic_and_version(random_model):
    data = storage.model_to_bytes(random_model)
    with pytest.raises(ModelFileError) as excinfo:
        storage.model_from_bytes(b"XX" + data[2:])
    assert excinfo.value.reason == "magic"

    offset = len(storage.MAGIC)
    bumped = data[:offset] + storage.HEADER.pack(storage.FORMAT_VERSION + 1, 0)[:2] + data[offset + 2:]
    with pytest.raises(ModelFileError) as excinfo:
        storage.model_from_bytes(bumped)
    assert excinfo.value.reason == "version"


def test_truncated_model_file(random_model):
    with pytest.raises(ModelFileError) as excinfo:
        storage.model_from_bytes(storage.model_to_bytes(random_model)[:20])
    assert excinfo.value.reason == "truncated"


def test_missing_model_file(tmp_path):
    with pytest.raises(ModelFileError) as excinfo:
        storage.load_model(str(tmp_path / "absent.mmhar"))
    assert excinfo.value.reason == "missing"


def resigned(data, edit):
    """Apply ``edit`` to the metadata of a serialised model and fix up length and checksum."""
    prefix = len(storage.MAGIC) + storage.HEADER.size
    version, length = storage.HEADER.unpack_from(data, len(storage.MAGIC))
    metadata = json.loads(data[prefix:prefix + length])
    edit(metadata)
    meta_bytes = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = storage.MAGIC + storage.HEADER.pack(version, len(meta_bytes)) + meta_bytes
    body += data[prefix + length:-storage.DIGEST_SIZE]
    return body + hashlib.sha256(body).digest()


def _drop_kind(metadata):
    del metadata["tensors"][0]["kind"]


def _tensors_not_a_list(metadata):
    metadata["tensors"] = 5


def _negative_shape(metadata):
    metadata["tensors"][0]["shape"] = [-3, 16]


def _float_shape(metadata):
    metadata["tensors"][0]["shape"] = [3.0, 16]


def _unknown_kind(metadata):
    metadata["tensors"][0]["kind"] = "gradient"


def _renamed_tensor(metadata):
    metadata["tensors"][0]["name"] = "lpn.extra.W"


def _swapped_tensors(metadata):
    tensors = metadata["tensors"]
    tensors[0], tensors[1] = tensors[1], tensors[0]


def _entry_not_a_dict(metadata):
    metadata["tensors"][0] = "lpn.tnet.conv0.W"


def _config_not_a_dict(metadata):
    metadata["config"] = [1, 2]


def _wrong_hmm_states(metadata):
    metadata["hmm_states"] = 2


def _metadata_emptied(metadata):
    metadata.clear()


@pytest.mark.parametrize("edit", [
    _drop_kind, _tensors_not_a_list, _negative_shape, _float_shape, _unknown_kind, _renamed_tensor,
    _swapped_tensors, _entry_not_a_dict, _config_not_a_dict, _wrong_hmm_states, _metadata_emptied,
])
def test_forged_metadata_is_a_typed_error(random_model, edit):
    data = resigned(storage.model_to_bytes(random_model), edit)
    with pytest.raises(ModelFileError) as excinfo:
        storage.model_from_bytes(data)
    assert excinfo.value.reason == "metadata"


def test_resigned_unchanged_metadata_still_loads(random_model):
    data = resigned(storage.model_to_bytes(random_model), lambda metadata: None)
    assert storage.model_from_bytes(data).parameter_count == random_model.parameter_count


def test_non_stochastic_hmm_block(random_model):
    random_model.hmm.B = random_model.hmm.B * 2.0
    with pytest.raises(ModelFileError) as excinfo:
        storage.model_from_bytes(storage.model_to_bytes(random_model))
    assert excinfo.value.reason == "metadata"


# Public text format

def test_radhar_round_trip(tmp_path, recording_factory):
    recording = recording_factory("clip", 4, None, n_points=3)
    path = str(tmp_path / "clip.txt")
    storage.write_radhar(recording, path)
    converted = storage.convert_radhar(path, rate=10.0, label=2)
    assert converted.recording_id == "clip"
    assert len(converted.frames) == 4
    for original, restored in zip(recording.frames, converted.frames):
        np.testing.assert_array_equal(original.points, restored.points)
        assert restored.label == 2
    assert [f.timestamp for f in converted.frames] == pytest.approx([0.0, 0.1, 0.2, 0.3])


def test_radhar_ignores_other_keys(tmp_path):
    text = "header:\n  seq: 1\npoint_id: 0\nx: 1.0\ny: 2.0\nz: 0.5\nrange: 3.1\n---\npoint_id: 1\nx: 1.5\ny: 2.5\nz: 0.7\n---\n"
    converted = storage.convert_radhar(write_text(tmp_path / "raw.txt", text))
    assert len(converted.frames) == 1
    np.testing.assert_array_equal(converted.frames[0].points, [[1.0, 2.0, 0.5], [1.5, 2.5, 0.7]])


# Live feed

def test_read_feed_line():
    frame = storage.read_feed_line('{"timestamp": 1.5, "points": [[1, 2, 3], [4, 5, 6]], "label": "lying"}')
    assert frame.timestamp == 1.5
    assert frame.points.shape == (2, 3)
    assert frame.label == 4
    assert storage.read_feed_line("   ") is None
    assert len(storage.read_feed_line('{"timestamp": 2.0, "points": []}')) == 0


@pytest.mark.parametrize("line", ['{"points": []}', "not json", '{"timestamp": 1, "points": [[1, 2]]}',
                                  '{"timestamp": 1, "points": [], "label": "dancing"}'])
def test_bad_feed_lines(line):
    with pytest.raises(StreamError):
        storage.read_feed_line(line)

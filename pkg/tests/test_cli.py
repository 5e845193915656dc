"""
Command-line surface: exit codes, outputs and a small end-to-end run.
"""
import io
import json
import os
import sys

import pandas as pd
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import cli
import storage

TINY_KEYS = """
alignment_size=4
mlp_widths=6,8
tnet_conv_widths=4
tnet_fc_widths=4
rnn_units_per_direction=8
head_width=8
window_seconds=0.3
stride_seconds=0.1
epochs=1
batch_size=16
"""


@pytest.fixture
def model_file(tmp_path, random_model):
    path = str(tmp_path / "model.mmhar")
    storage.save_model(path, random_model)
    return path


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.env"
    path.write_text(TINY_KEYS, encoding="utf-8")
    return str(path)


def test_info(model_file, random_model, capsys):
    assert cli.main(["info", "--model", model_file]) == cli.EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["schema"] == cli.SCHEMA_INFO
    assert payload["parameter_count"] == random_model.parameter_count
    assert payload["has_hmm"] is True


def test_help_exits_cleanly():
    assert cli.main(["--help"]) == cli.EXIT_OK


@pytest.mark.parametrize("argv", [
    ["info", "--bogus"],
    ["dance"],
    [],
    ["eval", "--model", "m.mmhar"],
    ["stats", "--data", "d.csv", "--verbose", "--quiet"],
])
def test_usage_errors(argv):
    assert cli.main(argv) == cli.EXIT_USAGE


def test_unknown_config_key(tmp_path, model_file):
    path = tmp_path / "bad.env"
    path.write_text("alignment_size=4\nlearning_speed=3\n", encoding="utf-8")
    assert cli.main(["info", "--model", model_file, "--config", str(path)]) == cli.EXIT_USAGE


def test_train_needs_model_path(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "d.csv")]) == cli.EXIT_USAGE


def test_missing_data_file(tmp_path, model_file):
    assert cli.main(["eval", "--model", model_file, "--data", str(tmp_path / "absent.csv")]) == cli.EXIT_DATA


def test_missing_or_corrupt_model(tmp_path):
    assert cli.main(["info", "--model", str(tmp_path / "absent.mmhar")]) == cli.EXIT_DATA
    broken = tmp_path / "broken.mmhar"
    broken.write_bytes(b"MMHAR\0garbage")
    assert cli.main(["info", "--model", str(broken)]) == cli.EXIT_DATA


def test_synth_and_stats(tmp_path, capsys):
    data = str(tmp_path / "synth.csv")
    assert cli.main(["synth", "--seconds-per-class", "4", "--seed", "1", "--out", data]) == cli.EXIT_OK
    table = pd.read_csv(data)
    assert list(table.columns) == storage.COLUMNS
    assert set(table["label"]) == {"walking", "falling", "standing", "rising", "lying"}

    assert cli.main(["stats", "--data", data]) == cli.EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["schema"] == cli.SCHEMA_STATS
    assert payload["alignment"]["frames"] > 0


def test_continuous_synth_has_blank_gaps(tmp_path):
    data = str(tmp_path / "cont.csv")
    argv = ["synth", "--kind", "continuous", "--scenarios", "1", "--events", "3", "--out", data]
    assert cli.main(argv) == cli.EXIT_OK
    assert "eps" in set(pd.read_csv(data)["label"])


def test_augment_writes_provenance(tmp_path):
    data = str(tmp_path / "synth.csv")
    out = str(tmp_path / "aug.csv")
    cli.main(["synth", "--seconds-per-class", "3", "--out", data])
    assert cli.main(["augment", "--data", data, "--copies", "2", "--out", out]) == cli.EXIT_OK
    original = storage.load_dataset(data)
    augmented = storage.load_dataset(out)
    assert len(augmented) == 2 * len(original)
    with open(out + ".provenance.json", encoding="utf-8") as f:
        provenance = json.load(f)
    assert provenance["schema"] == cli.SCHEMA_AUGMENT
    assert len(provenance["segments"]) == len(augmented)
    first = original[0].frames[0].points
    copy = augmented[0].frames[0].points
    assert first.shape == copy.shape


def test_augment_needs_out(tmp_path):
    assert cli.main(["augment", "--data", str(tmp_path / "d.csv")]) == cli.EXIT_USAGE


def test_stream_from_stdin(model_file, monkeypatch, capsys):
    lines = [json.dumps({"timestamp": i / 10.0, "points": [[0.1 * i, 1.0, 0.5], [0.0, 1.2, 0.9]]}) for i in range(12)]
    monkeypatch.setattr("sys.stdin", io.StringIO("\n".join(lines) + "\n"))
    assert cli.main(["stream", "--model", model_file]) == cli.EXIT_OK
    records = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]
    for record in records:
        assert record["schema"] == "mmhar.event/1"
        assert record["start"] < record["end"]


def test_stream_rejects_out_of_order_feed(model_file, monkeypatch):
    lines = [json.dumps({"timestamp": t, "points": [[0, 1, 0.5]]}) for t in (0.0, 0.2, 0.1)]
    monkeypatch.setattr("sys.stdin", io.StringIO("\n".join(lines)))
    assert cli.main(["stream", "--model", model_file]) == cli.EXIT_DATA


def test_synth_train_eval_stream(tmp_path, tiny_config_file, capsys):
    data = str(tmp_path / "synth.csv")
    model = str(tmp_path / "tiny.mmhar")
    log = str(tmp_path / "train.json")
    flags = ["--config", tiny_config_file, "--seed", "5"]

    assert cli.main(["synth", "--seconds-per-class", "5", "--out", data] + flags) == cli.EXIT_OK
    assert cli.main(["train", "--data", data, "--model", model, "--out", log, "--quiet"] + flags) == cli.EXIT_OK
    with open(log, encoding="utf-8") as f:
        assert json.load(f)["schema"] == "mmhar.trainlog/1"

    capsys.readouterr()
    assert cli.main(["eval", "--data", data, "--model", model] + flags) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert 0.0 <= report["accuracy"] <= 1.0
    assert len(report["confusion"]) == 5

    assert cli.main(["eval", "--data", data, "--model", model, "--format", "csv"] + flags) == cli.EXIT_OK
    assert "precision" in capsys.readouterr().out.splitlines()[0]

    summary = str(tmp_path / "summary.json")
    events = str(tmp_path / "events.jsonl")
    argv = ["stream", "--data", data, "--model", model, "--out", events, "--summary", summary]
    assert cli.main(argv + flags) == cli.EXIT_OK
    with open(summary, encoding="utf-8") as f:
        runs = json.load(f)["runs"]
    assert len(runs) == len(storage.load_dataset(data))

    refit = str(tmp_path / "refit.mmhar")
    assert cli.main(["fit-hmm", "--data", data, "--model", model, "--out", refit] + flags) == cli.EXIT_OK
    assert storage.load_model(refit).hmm is not None


def test_sweep_over_recurrent_cells(tmp_path, tiny_config_file, capsys):
    data = str(tmp_path / "synth.csv")
    table = str(tmp_path / "cells.csv")
    flags = ["--config", tiny_config_file, "--seed", "5"]
    assert cli.main(["synth", "--seconds-per-class", "20", "--out", data] + flags) == cli.EXIT_OK

    capsys.readouterr()
    argv = ["sweep", "--data", data, "--axis", "recurrent_cell", "--csv", table]
    assert cli.main(argv + flags) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert [row["value"] for row in report["rows"]] == ["lite-lstm", "gru"]
    rows = pd.read_csv(table)
    assert rows["parameters"].iloc[0] > rows["parameters"].iloc[1]


def test_train_with_gru_cell(tmp_path, tiny_config_file):
    data = str(tmp_path / "synth.csv")
    model = str(tmp_path / "gru.mmhar")
    flags = ["--config", tiny_config_file, "--seed", "5", "--recurrent-cell", "gru"]
    assert cli.main(["synth", "--seconds-per-class", "5", "--out", data] + flags) == cli.EXIT_OK
    assert cli.main(["train", "--data", data, "--model", model, "--quiet"] + flags) == cli.EXIT_OK
    assert storage.load_model(model).config.recurrent_cell == "gru"

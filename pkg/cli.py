"""
Command-line entry point: ``mmhar <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data, model-file,
stream or I/O error. Diagnostics go to stderr; data to stdout or ``--out``.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Sequence, TextIO

import numpy as np

import bililstm
import config
import cost_tracking
import spca
import storage
import stream
import synth
import train as trainer
from errors import ConfigError, HarError
from evaluation import report_to_json, table_to_csv
from model import ModelConfig
from pcloud import Frame, Recording, alignment_stats
from stream import Pipeline, PipelineConfig

logger = logging.getLogger(__name__)

SCHEMA_INFO = "mmhar.info/1"
SCHEMA_STATS = "mmhar.stats/1"
SCHEMA_AUGMENT = "mmhar.augment/1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

# Flag name -> config key
FLAG_KEYS = {
    "seed": "seed",
    "window_seconds": "window_seconds",
    "stride_seconds": "stride_seconds",
    "alignment_size": "alignment_size",
    "tau_blank": "tau_blank",
    "recurrent_cell": "recurrent_cell",
}


def _shared_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key=value config file")
    shared.add_argument("--seed", type=int, help=f"random seed (default {config.DEFAULT_SEED})")
    shared.add_argument("--window-seconds", type=float)
    shared.add_argument("--stride-seconds", type=float)
    shared.add_argument("--alignment-size", type=int)
    shared.add_argument("--tau-blank", type=float)
    shared.add_argument("--recurrent-cell", choices=bililstm.CELLS,
                        help=f"recurrent classifier (default {bililstm.CELL_LITE_LSTM})")
    shared.add_argument("--model", help="model file")
    shared.add_argument("--out", help="output path (default stdout)")
    shared.add_argument("--format", choices=("json", "csv"), default="json")
    verbosity = shared.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(prog="mmhar", description="Radar point-cloud activity recognition")
    commands = parser.add_subparsers(dest="command", required=True)

    synth_cmd = commands.add_parser("synth", parents=[shared], help="generate a synthetic dataset CSV")
    synth_cmd.add_argument("--kind", choices=("discrete", "continuous"), default="discrete")
    synth_cmd.add_argument("--profile", choices=(synth.PROFILE_DISC, synth.PROFILE_MMACT), default=synth.PROFILE_DISC)
    synth_cmd.add_argument("--seconds-per-class", type=float, default=60.0)
    synth_cmd.add_argument("--scenarios", type=int, default=4)
    synth_cmd.add_argument("--events", type=int, default=6)

    augment_cmd = commands.add_parser("augment", parents=[shared], help="write SPCA-augmented copies of a dataset")
    augment_cmd.add_argument("--data", required=True)
    augment_cmd.add_argument("--copies", type=int, default=1)

    train_cmd = commands.add_parser("train", parents=[shared], help="train a model on a discrete dataset")
    train_cmd.add_argument("--data", required=True)
    train_cmd.add_argument("--epochs", type=int)

    fit_cmd = commands.add_parser("fit-hmm", parents=[shared], help="refit the HMM block of a model")
    fit_cmd.add_argument("--data", required=True)

    eval_cmd = commands.add_parser("eval", parents=[shared], help="evaluate a model on a dataset")
    eval_cmd.add_argument("--data", required=True)
    eval_cmd.add_argument("--decoder", choices=(stream.DECODER_FILTER, stream.DECODER_VITERBI),
                          default=stream.DECODER_FILTER)
    eval_cmd.add_argument("--continuous", action="store_true", help="score through the streaming pipeline")

    stream_cmd = commands.add_parser("stream", parents=[shared], help="run the live pipeline")
    stream_cmd.add_argument("--data", help="canonical CSV to replay; stdin JSON lines when omitted or '-'")
    stream_cmd.add_argument("--summary", help="write a JSON run summary here")

    sweep_cmd = commands.add_parser("sweep", parents=[shared], help="window, alignment size or recurrent cell sweep")
    sweep_cmd.add_argument("--data", required=True)
    sweep_cmd.add_argument("--axis", choices=trainer.SWEEP_AXES,
                           default=trainer.SWEEP_WINDOW)
    sweep_cmd.add_argument("--values", help="comma-separated values")
    sweep_cmd.add_argument("--csv", help="also write the plot-ready table here")

    commands.add_parser("info", parents=[shared], help="describe a model file")

    stats_cmd = commands.add_parser("stats", parents=[shared], help="window counts and alignment shares")
    stats_cmd.add_argument("--data", required=True)
    stats_cmd.add_argument("--rate", type=float, default=10.0)
    return parser


# Configuration

def gather_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Config file values overlaid with explicit flags. Unknown keys are rejected."""
    values: Dict[str, Any] = dict(config.load_config_file(args.config))
    known = config.field_names(ModelConfig, trainer.TrainConfig, PipelineConfig)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    if getattr(args, "epochs", None) is not None:
        values["epochs"] = args.epochs
    values.setdefault("seed", config.DEFAULT_SEED)
    return values


def _require_model(args: argparse.Namespace) -> str:
    if not args.model:
        raise ConfigError(f"{args.command} needs --model")
    return args.model


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text if text.endswith("\n") else text + "\n")
        logger.info(f"Wrote {out}")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit_report(payload: Dict[str, Any], rows: List[Dict[str, Any]], args: argparse.Namespace) -> None:
    if args.format == "csv":
        _emit(table_to_csv(rows), args.out)
    else:
        _emit(report_to_json(payload), args.out)


def _is_continuous(recordings: Sequence[Recording], blank: int) -> bool:
    for recording in recordings:
        labels = {frame.label for frame in recording.frames}
        if blank in labels or len(labels) > 1:
            return True
    return False


# Subcommands

def cmd_synth(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    seed = int(values["seed"])
    if args.kind == "discrete":
        recordings = synth.gen_discrete_dataset(args.seconds_per_class, profile=args.profile, seed=seed)
    else:
        recordings = synth.gen_continuous_dataset(args.scenarios, args.events, profile=args.profile, seed=seed)
    table = storage.recordings_to_frame(recordings)
    _emit(table.to_csv(index=False), args.out)
    return EXIT_OK


def augment_recording(recording: Recording, params: spca.SPCAParams, rng: np.random.Generator,
                      suffix: str) -> Recording:
    """One augmented copy of a recording; the whole recording is transformed as one segment."""
    sizes = [len(frame) for frame in recording.frames]
    stacked = np.concatenate([frame.points for frame in recording.frames]) if sum(sizes) else np.zeros((0, 3))
    moved = spca.augment_array(stacked, params, rng) if len(stacked) else stacked
    frames, offset = [], 0
    for frame, size in zip(recording.frames, sizes):
        frames.append(Frame(timestamp=frame.timestamp, points=moved[offset:offset + size], label=frame.label))
        offset += size
    return Recording(recording_id=f"{recording.recording_id}-{suffix}", frames=frames)


def cmd_augment(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    if not args.out:
        raise ConfigError("augment needs --out for the dataset and its provenance sidecar")
    train_config = trainer.TrainConfig.from_mapping(values)
    recordings = storage.load_dataset(args.data, allow_empty_frames=True)
    ranges = train_config.spca_ranges
    augmented, provenance = [], []
    for copy in range(args.copies):
        for index, recording in enumerate(recordings):
            rng = spca.segment_rng(train_config.seed, copy, index)
            params = spca.sample_params(ranges, rng)
            result = augment_recording(recording, params, rng, f"aug{copy}")
            augmented.append(result)
            provenance.append({"recording_id": result.recording_id, "source": recording.recording_id,
                               "copy": copy, "index": index, "params": asdict(params)})
    storage.save_dataset(augmented, args.out)
    sidecar = {"schema": SCHEMA_AUGMENT, "seed": train_config.seed, "source": args.data, "segments": provenance}
    report_to_json(sidecar, f"{args.out}.provenance.json")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model_path = _require_model(args)
    model_config = ModelConfig.from_mapping(values)
    train_config = trainer.TrainConfig.from_mapping(values)
    recordings = storage.load_dataset(args.data, model_config.class_names, allow_empty_frames=True)
    train_set, val_set, test_set = trainer.split_recordings(
        recordings, (train_config.train_fraction, train_config.val_fraction), train_config.seed
    )
    cost_tracking.reset_session_cost()
    model, log = trainer.train(train_set, model_config, train_config, val_set)
    if test_set:
        log["test"] = trainer.evaluate(model, test_set, train_config.seed).to_dict()
    storage.save_model(model_path, model)
    logger.info("\n" + cost_tracking.format_cost_report())
    _emit(report_to_json(log), args.out)
    return EXIT_OK


def cmd_fit_hmm(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model_path = _require_model(args)
    model = storage.load_model(model_path)
    train_config = trainer.TrainConfig.from_mapping(values)
    recordings = storage.load_dataset(args.data, model.config.class_names, allow_empty_frames=True)
    model.hmm = trainer.fit_hmm_on(model, recordings, train_config.hmm_alpha, train_config.seed)
    storage.save_model(args.out or model_path, model)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model = storage.load_model(_require_model(args))
    recordings = storage.load_dataset(args.data, model.config.class_names, allow_empty_frames=True)
    seed = int(values["seed"])
    if args.continuous or _is_continuous(recordings, model.config.blank):
        pipeline_config = PipelineConfig.from_model(model, values)
        payload = stream.run_batch_many(recordings, model, pipeline_config, args.decoder)
        rows = [{key: value for key, value in payload.items() if not isinstance(value, dict)}]
    else:
        report = trainer.evaluate(model, recordings, seed)
        payload = report.to_dict()
        rows = report.per_class
    _emit_report(payload, rows, args)
    return EXIT_OK


def _frames_from_stdin(source: TextIO, class_names: Sequence[str]):
    for line in source:
        frame = storage.read_feed_line(line, class_names)
        if frame is not None:
            yield frame


def _run_stream(pipeline: Pipeline, frames, sink: TextIO, recording_id: Optional[str] = None) -> int:
    emitted = 0
    for frame in frames:
        events = pipeline.process_frame(frame).events
        for event in events:
            emitted += _write_event(event, pipeline, sink, recording_id)
    for event in pipeline.flush():
        emitted += _write_event(event, pipeline, sink, recording_id)
    return emitted


def _write_event(event, pipeline: Pipeline, sink: TextIO, recording_id: Optional[str]) -> int:
    record = stream.event_to_record(event, pipeline.class_names)
    if recording_id is not None:
        record["recording_id"] = recording_id
    sink.write(json.dumps(record, ensure_ascii=False) + "\n")
    sink.flush()
    return 1


def cmd_stream(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model = storage.load_model(_require_model(args))
    pipeline_config = PipelineConfig.from_model(model, values)
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    summaries = []
    try:
        if args.data and args.data != "-":
            recordings = storage.load_dataset(args.data, model.config.class_names, allow_empty_frames=True)
            for recording in recordings:
                pipeline = Pipeline(model, pipeline_config)
                events = _run_stream(pipeline, recording.frames, sink, recording.recording_id)
                summaries.append(dict(pipeline.summary(), recording_id=recording.recording_id, events=events))
        else:
            pipeline = Pipeline(model, pipeline_config)
            events = _run_stream(pipeline, _frames_from_stdin(sys.stdin, model.config.class_names), sink)
            summaries.append(dict(pipeline.summary(), events=events))
    finally:
        if args.out:
            sink.close()
    if args.summary:
        report_to_json({"schema": stream.SCHEMA_STREAM, "runs": summaries}, args.summary)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model_config = ModelConfig.from_mapping(values)
    train_config = trainer.TrainConfig.from_mapping(values)
    recordings = storage.load_dataset(args.data, model_config.class_names, allow_empty_frames=True)
    if args.values:
        parts = [v.strip() for v in args.values.split(",") if v.strip()]
        try:
            sweep_values = parts if args.axis == trainer.SWEEP_CELL else [float(v) for v in parts]
        except ValueError:
            raise ConfigError(f"invalid sweep values: {args.values!r}")
    elif args.axis == trainer.SWEEP_CELL:
        sweep_values = list(trainer.CELL_SWEEP_VALUES)
    elif args.axis == trainer.SWEEP_WINDOW:
        sweep_values = list(trainer.WINDOW_SWEEP_VALUES)
    else:
        profile = synth.PROFILE_MMACT if model_config.alignment_size <= config.ALIGNMENT_SIZE_MMACT else synth.PROFILE_DISC
        sweep_values = list(trainer.ALIGNMENT_SWEEP_VALUES[profile])
    rows = trainer.sweep(recordings, args.axis, sweep_values, model_config, train_config)
    if args.csv:
        table_to_csv(rows, args.csv)
    _emit_report({"schema": trainer.SCHEMA_SWEEP, "axis": args.axis, "rows": rows}, rows, args)
    return EXIT_OK


def cmd_info(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model = storage.load_model(_require_model(args))
    payload = {
        "schema": SCHEMA_INFO,
        "parameter_count": model.parameter_count,
        "seed": model.seed,
        "has_hmm": model.hmm is not None,
        "config": model.config.to_dict(),
    }
    _emit(report_to_json(payload), args.out)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, values: Dict[str, Any]) -> int:
    model_config = ModelConfig.from_mapping(values)
    recordings = storage.load_dataset(args.data, model_config.class_names, allow_empty_frames=True)
    rows = storage.dataset_stats(recordings, trainer.WINDOW_SWEEP_VALUES, model_config.stride_seconds, args.rate,
                                 model_config.class_names)
    shares = alignment_stats((f for r in recordings for f in r.frames), model_config.alignment_size)
    payload = {"schema": SCHEMA_STATS, "recordings": len(recordings), "windows": rows, "alignment": shares}
    _emit_report(payload, rows, args)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "augment": cmd_augment,
    "train": cmd_train,
    "fit-hmm": cmd_fit_hmm,
    "eval": cmd_eval,
    "stream": cmd_stream,
    "sweep": cmd_sweep,
    "info": cmd_info,
    "stats": cmd_stats,
}


def _configure_logging(args: argparse.Namespace) -> None:
    level = config.LOG_LEVEL
    if args.verbose:
        level = "DEBUG"
    elif args.quiet:
        level = "WARNING"
    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        level=getattr(logging, str(level).upper(), logging.INFO),
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors; usage errors are 1 here
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    _configure_logging(args)
    try:
        values = gather_config(args)
        return COMMANDS[args.command](args, values)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (HarError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``python3 -m bitetiming COMMAND [flags]``.

Every command reads from and writes to one run directory (``--out``, else
``$SONNET_OUT``, else ``runs/default``)::

    annotations/<session>.csv   validated annotation CSVs      (ingest, synth)
    streams/<session>.csv       per-seat feature streams       (synth)
    features/<session>.csv      streams with bite features     (features)
    windows.npz                 labeled training windows       (windows)
    model.pt                    checkpoint                     (train)
    cv_report.{csv,json}        LOSO results                   (loso)
    ablation.csv                one row per feature mask       (ablate)
    metrics.json                metrics of a model or file     (metrics)
    simulate/                   decision logs and summaries    (simulate)
    stats/                      tables, stats.json, plots      (stats, report)
    config.json                 the resolved configuration of the last run

Settings resolve as command-line flag, then ``--config`` file (JSON or
YAML, flat keys named as in :class:`RunConfig`), then default.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import errors
from .errors import BiteTimingError, ConfigError, UnknownCommand

COMMANDS = ("ingest", "synth", "features", "windows", "train", "loso", "ablate",
            "metrics", "simulate", "stats", "report")
DEFAULT_OUT = "runs/default"

log = logging.getLogger("bitetiming")


@dataclass
class RunConfig:
    out: str = DEFAULT_OUT
    annotations: str | None = None      # file or directory; default <out>/annotations
    features: str | None = None         # stream directory; default <out>/features, else <out>/streams
    audio: str | None = None            # directory of <session>.csv with t_ms,doa_deg,voice_active
    windows: str | None = None          # archive; default <out>/windows.npz
    checkpoint: str | None = None       # default <out>/model.pt
    predictions: str | None = None      # CSV with prediction,label columns (metrics)
    seed: int = 0
    # synthetic data
    sessions: int = 3
    duration_s: float = 300.0
    coupling: str = "co_diner"
    # windows and features
    k_seconds: float = 6.0
    fps: int = 15
    source_fps: int | None = None
    gamma: int = 100
    # model and training
    model: str = "triplet_sonnet"
    learning_rate: float = 1e-4
    batch_size: int = 128
    patience: int = 10
    max_epochs: int = 200
    val_fraction: float = 0.2
    jobs: int = 1
    masks: list = field(default_factory=lambda: ["bite", "speaking", "gaze_head", "body_face"])
    # replay
    strategy: str = "fixed_interval"
    sample_period_s: float = 3.0
    transfer_s: float = 9.0
    fixed_wait_s: float | None = None
    time_rescale_factor: float = 5.0
    threshold: float = 0.5
    seat: int = 1
    # report
    formats: list = field(default_factory=lambda: ["csv", "json", "png"])

    @property
    def run_dir(self) -> Path:
        return Path(self.out)

    def path(self, value, default: str) -> Path:
        return Path(value) if value else self.run_dir / default


def load_config_file(path) -> dict:
    import yaml
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a flat mapping")
    return data


def resolve_config(flags: dict, file_values: dict, env=os.environ) -> RunConfig:
    """flag > file > environment (output dir only) > default."""
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    values = {}
    if env.get("SONNET_OUT"):
        values["out"] = env["SONNET_OUT"]
    values.update(file_values)
    values.update({k: v for k, v in flags.items() if v is not None and k in known})
    try:
        cfg = RunConfig(**values)
        for f in fields(RunConfig):
            v = getattr(cfg, f.name)
            if f.type in ("int", "float") and v is not None and not isinstance(v, (int, float)):
                raise ConfigError(f"{f.name} must be numeric, got {v!r}")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitetiming", description="Social bite-timing toolkit")
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="JSON/YAML file of RunConfig keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default: $SONNET_OUT or runs/default)")
    p.add_argument("--model", help="model variant")
    p.add_argument("--gamma", type=int)
    p.add_argument("--k-seconds", dest="k_seconds", type=float)
    p.add_argument("--fps", type=int)
    p.add_argument("--strategy")
    p.add_argument("--jobs", type=int)
    p.add_argument("--annotations")
    p.add_argument("--features")
    p.add_argument("--audio")
    p.add_argument("--windows")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--sessions", type=int)
    p.add_argument("--duration", dest="duration_s", type=float)
    p.add_argument("--coupling")
    p.add_argument("--source-fps", dest="source_fps", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--masks", nargs="*")
    p.add_argument("--transfer", dest="transfer_s", type=float)
    p.add_argument("--fixed-wait", dest="fixed_wait_s", type=float)
    p.add_argument("--seat", type=int)
    p.add_argument("--formats", nargs="*")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# ---------------------------------------------------------------- helpers

def _annotation_files(src: Path) -> list[Path]:
    if src.is_file():
        return [src]
    if not src.is_dir():
        raise ConfigError(f"annotation path {src} does not exist")
    return sorted(src.glob("*.csv")) + sorted(src.glob("*.eaf"))


def _load_sessions(cfg: RunConfig):
    from .annotations import parse_annotations
    src = cfg.path(cfg.annotations, "annotations")
    files = [f for f in _annotation_files(src) if f.suffix == ".csv"]
    if not files:
        raise ConfigError(f"no annotation CSVs under {src}")
    return [parse_annotations(f) for f in files]


def _stream_dir(cfg: RunConfig) -> Path:
    if cfg.features:
        return Path(cfg.features)
    for name in ("features", "streams"):
        if (cfg.run_dir / name).is_dir():
            return cfg.run_dir / name
    raise ConfigError(f"no feature streams under {cfg.run_dir}")


def _load_streams(cfg: RunConfig, session_id: str, fps: int | None = None):
    from .streams import read_streams
    path = _stream_dir(cfg) / f"{session_id}.csv"
    if not path.exists():
        raise ConfigError(f"missing feature stream {path}")
    return read_streams(path, fps or cfg.fps)


def _model_spec(cfg: RunConfig):
    from .models import ModelSpec, validate_spec
    spec = ModelSpec(variant=cfg.model, gamma=cfg.gamma, k_seconds=cfg.k_seconds, fps=cfg.fps,
                     seed=cfg.seed)
    validate_spec(spec)
    return spec


def _train_config(cfg: RunConfig):
    from .training import TrainConfig
    return TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                       early_stop_patience=cfg.patience, max_epochs=cfg.max_epochs, seed=cfg.seed)


def _windows(cfg: RunConfig):
    from .windows import load_archive
    path = cfg.path(cfg.windows, "windows.npz")
    if not path.exists():
        raise ConfigError(f"missing window archive {path}; run `windows` first")
    return load_archive(path)


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")
    return path


# ---------------------------------------------------------------- commands

def cmd_ingest(cfg: RunConfig) -> dict:
    """Parse annotation CSV/EAF files, validate them, write normalized CSVs."""
    from .annotations import (SessionAnnotations, default_participants, eaf_to_events,
                              parse_annotations, validate_session, write_annotations)
    if not cfg.annotations:
        raise ConfigError("ingest needs --annotations (file or directory)")
    files = _annotation_files(Path(cfg.annotations))
    sessions = [parse_annotations(f) for f in files if f.suffix == ".csv"]
    # ELAN exports: one file per participant, named <session>_<seat>.eaf
    eaf: dict[str, dict[int, list]] = {}
    for f in files:
        if f.suffix == ".eaf":
            sid, _, seat = f.stem.rpartition("_")
            if not sid or seat not in ("1", "2", "3"):
                raise ConfigError(f"EAF file {f.name} must be named <session>_<seat>.eaf")
            eaf.setdefault(sid, {})[int(seat)] = eaf_to_events(f)
    for sid, per_seat in sorted(eaf.items()):
        end = max((e.end_ms for evs in per_seat.values() for e in evs), default=1)
        sessions.append(SessionAnnotations(sid, default_participants(), end, per_seat))
    out = cfg.run_dir / "annotations"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for s in sessions:
        write_annotations(s, out / f"{s.session_id}.csv")
        rep = validate_session(s)
        reports[s.session_id] = [asdict(v) for v in rep.violations]
    _write_json(cfg.run_dir / "validation.json", reports)
    return {"sessions": len(sessions), "violations": sum(map(len, reports.values()))}


def cmd_synth(cfg: RunConfig) -> dict:
    from .annotations import write_annotations
    from .streams import write_streams
    from .synthetic import SyntheticConfig, generate_synthetic_sessions
    sc = SyntheticConfig(seed=cfg.seed, n_sessions=cfg.sessions, duration_s=cfg.duration_s,
                         fps=cfg.fps, coupling=cfg.coupling)
    (cfg.run_dir / "annotations").mkdir(parents=True, exist_ok=True)
    (cfg.run_dir / "streams").mkdir(parents=True, exist_ok=True)
    for ann, streams in generate_synthetic_sessions(sc):
        write_annotations(ann, cfg.run_dir / "annotations" / f"{ann.session_id}.csv")
        write_streams(streams, cfg.run_dir / "streams" / f"{ann.session_id}.csv")
    _write_json(cfg.run_dir / "synthetic_config.json", sc.as_dict())
    return {"sessions": sc.n_sessions}


def _read_audio(path: Path):
    import pandas as pd
    from .features import AudioFrame
    df = pd.read_csv(path)
    return [AudioFrame(int(r.t_ms), float(r.doa_deg), int(r.voice_active))
            for r in df.itertuples(index=False)]


def cmd_features(cfg: RunConfig) -> dict:
    """Downsample streams, fuse audio into speaking status, attach bite features."""
    from .features import attach_bite_features, attach_speaking, downsample_stream
    from .streams import write_streams
    src = Path(cfg.features) if cfg.features else cfg.run_dir / "streams"
    out = cfg.run_dir / "features"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for ann in _load_sessions(cfg):
        from .streams import read_streams
        path = src / f"{ann.session_id}.csv"
        if not path.exists():
            raise ConfigError(f"missing stream file {path}")
        streams = read_streams(path, cfg.source_fps or cfg.fps)
        if cfg.source_fps and cfg.source_fps != cfg.fps:
            streams = {s: downsample_stream(st, cfg.fps) for s, st in streams.items()}
        if cfg.audio:
            audio = Path(cfg.audio) / f"{ann.session_id}.csv"
            streams = attach_speaking(streams, _read_audio(audio), ann.seat_angles, seed=cfg.seed)
        streams = {s: attach_bite_features(st, ann.lift_times(s)) for s, st in streams.items()}
        write_streams(streams, out / f"{ann.session_id}.csv")
        n += 1
    return {"sessions": n}


def cmd_windows(cfg: RunConfig) -> dict:
    from .windows import ExtractionReport, WindowSpec, extract_windows, save_archive
    spec = WindowSpec(k_seconds=cfg.k_seconds, fps=cfg.fps)
    report = ExtractionReport()
    ws = []
    for ann in _load_sessions(cfg):
        ws += extract_windows(_load_streams(cfg, ann.session_id), ann, spec, cfg.gamma, report=report)
    path = save_archive(ws, cfg.path(cfg.windows, "windows.npz"), report,
                        meta={"k_seconds": cfg.k_seconds, "fps": cfg.fps, "gamma": cfg.gamma})
    return {"windows": len(ws), "positives": report.kept["positive"],
            "negatives": report.kept["negative"], "dropped": len(report.dropped), "path": str(path)}


def cmd_train(cfg: RunConfig) -> dict:
    from .models import save_checkpoint
    from .training import split_validation, train
    from .windows import group_by_session
    spec = _model_spec(cfg)
    train_w, val_w = split_validation(group_by_session(_windows(cfg)), cfg.val_fraction)
    model, history = train(spec, train_w, val_w, _train_config(cfg))
    path = cfg.path(cfg.checkpoint, "model.pt")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, path)
    _write_json(cfg.run_dir / "history.json", history)
    return {"checkpoint": str(path), "epochs": len(history["val_loss"]),
            "best_epoch": history["best_epoch"]}


def cmd_loso(cfg: RunConfig) -> dict:
    from .evaluation import loso_evaluate
    from .windows import group_by_session
    rep = loso_evaluate(_model_spec(cfg), group_by_session(_windows(cfg)), _train_config(cfg),
                        cfg.val_fraction, cfg.jobs)
    rep.write(cfg.run_dir)
    return {"folds": len(rep.folds), "nmcc": rep.aggregate.nmcc}


def cmd_ablate(cfg: RunConfig) -> dict:
    from .evaluation import ablation_table, run_ablation
    from .windows import group_by_session
    reports = run_ablation(_model_spec(cfg), group_by_session(_windows(cfg)), cfg.masks,
                           _train_config(cfg), cfg.jobs)
    (cfg.run_dir / "ablation.csv").write_text(ablation_table(reports))
    for label, rep in reports.items():
        rep.write(cfg.run_dir / "ablation", stem=label)
    return {label: rep.aggregate.nmcc for label, rep in reports.items()}


def cmd_metrics(cfg: RunConfig) -> dict:
    from .metrics import compute_metrics
    if cfg.predictions:
        import pandas as pd
        df = pd.read_csv(cfg.predictions)
        if not {"prediction", "label"} <= set(df.columns):
            raise ConfigError("predictions file needs prediction and label columns")
        m = compute_metrics(df["prediction"].to_numpy(), df["label"].to_numpy())
    else:
        from .models import load_checkpoint, predict_scores
        path = cfg.path(cfg.checkpoint, "model.pt")
        if not path.exists():
            raise ConfigError(f"missing checkpoint {path}")
        model = load_checkpoint(path)
        ws = _windows(cfg)
        m = compute_metrics(predict_scores(model, ws) >= cfg.threshold, [w.label for w in ws])
    _write_json(cfg.run_dir / "metrics.json", m.as_dict())
    return m.as_dict()


def cmd_simulate(cfg: RunConfig) -> dict:
    from .simulator import StrategyConfig, run_strategy
    sc = StrategyConfig(strategy=cfg.strategy, sample_period_s=cfg.sample_period_s,
                        window_k_s=cfg.k_seconds, fps=cfg.fps, fixed_wait_s=cfg.fixed_wait_s,
                        time_rescale_factor=cfg.time_rescale_factor, transfer_s=cfg.transfer_s,
                        threshold=cfg.threshold, seat=cfg.seat)
    model = None
    if cfg.strategy == "learned":
        from .models import load_checkpoint
        path = cfg.path(cfg.checkpoint, "model.pt")
        if not path.exists():
            raise errors.MissingModel(f"the learned strategy needs a checkpoint; {path} not found")
        model = load_checkpoint(path)
    out = {}
    for ann in _load_sessions(cfg):
        streams = _load_streams(cfg, ann.session_id) if cfg.strategy == "learned" else None
        dlog = run_strategy(ann, streams, sc, model)
        dlog.write(cfg.run_dir / "simulate")
        out[ann.session_id] = dlog.summary()
    return out


def cmd_stats(cfg: RunConfig) -> dict:
    from .analytics import build_report, emit_report
    rep = build_report(_load_sessions(cfg))
    emit_report(rep, cfg.run_dir / "stats", [f for f in cfg.formats if f != "png"])
    return {"events": rep.total}


def cmd_report(cfg: RunConfig) -> dict:
    """Stats tables and plots, plus a markdown digest of the run's results."""
    from .analytics import build_report, emit_report
    rep = build_report(_load_sessions(cfg))
    paths = emit_report(rep, cfg.run_dir / "stats", cfg.formats)
    lines = ["# Run summary", "", f"Annotated events: {rep.total}", ""]
    for name in ("cv_report.csv", "ablation.csv"):
        p = cfg.run_dir / name
        if p.exists():
            lines += [f"## {name}", "", "```", p.read_text().rstrip(), "```", ""]
    (cfg.run_dir / "summary.md").write_text("\n".join(lines))
    return {"files": [str(p) for p in paths] + [str(cfg.run_dir / "summary.md")]}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def dispatch(command: str, cfg: RunConfig) -> dict:
    if command not in HANDLERS:
        raise UnknownCommand(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.run_dir / "config.json", {"command": command, **asdict(cfg)})
    return HANDLERS[command](cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command not in COMMANDS:
            raise UnknownCommand(f"unknown command {args.command!r}; choose from {', '.join(COMMANDS)}")
        file_values = load_config_file(args.config) if args.config else {}
        cfg = resolve_config(vars(args), file_values)
        result = dispatch(args.command, cfg)
    except (BiteTimingError, ValueError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
        return 2 if isinstance(exc, (UnknownCommand, ConfigError)) else 1
    sys.stdout.write(json.dumps(result, sort_keys=True, default=_jsonable) + "\n")
    return 0


def _jsonable(x):
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    return str(x)

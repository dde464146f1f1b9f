"""Leave-one-session-out cross-validation and feature ablation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import TooFewSessions, UnknownMask
from .metrics import COLUMNS, Metrics, compute_metrics, mean_metrics, metrics_from_confusion
from .models import ModelSpec, predict_scores
from .training import TrainConfig, split_validation, train
from .windows import FEATURE_GROUPS, LabeledWindow, ablate


@dataclass
class FoldResult:
    session_id: str
    metrics: Metrics
    n_test: int
    epochs_run: int = 0
    history: dict = field(default_factory=dict)


@dataclass
class CVReport:
    folds: dict[str, FoldResult]
    label: str = ""

    @property
    def aggregate(self) -> Metrics:
        """Unweighted mean of per-fold metrics."""
        return mean_metrics(f.metrics for f in self.folds.values())

    @property
    def pooled(self) -> Metrics:
        """Metrics of the summed confusion matrix (diagnostic only)."""
        tp = sum(f.metrics.tp for f in self.folds.values())
        fp = sum(f.metrics.fp for f in self.folds.values())
        fn = sum(f.metrics.fn for f in self.folds.values())
        tn = sum(f.metrics.tn for f in self.folds.values())
        return metrics_from_confusion(tp, fp, fn, tn)

    def rows(self) -> list[tuple]:
        out = [(sid, *f.metrics.row()) for sid, f in sorted(self.folds.items())]
        out.append(("mean", *self.aggregate.row()))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("fold", *COLUMNS))
        for row in self.rows():
            w.writerow((row[0], *(repr(float(x)) for x in row[1:])))
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "label": self.label,
            "folds": {sid: {"metrics": f.metrics.as_dict(), "n_test": f.n_test,
                            "epochs_run": f.epochs_run} for sid, f in sorted(self.folds.items())},
            "aggregate": self.aggregate.as_dict(),
            "pooled": self.pooled.as_dict(),
        }, indent=1, sort_keys=True)

    def write(self, out_dir, stem: str = "cv_report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        c = out_dir / f"{stem}.csv"
        j = out_dir / f"{stem}.json"
        c.write_text(self.to_csv())
        j.write_text(self.to_json())
        return c, j


def read_cv_csv(path) -> dict[str, tuple[float, ...]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != COLUMNS:
            raise ValueError(f"unexpected CV report header {header}")
        return {row[0]: tuple(float(x) for x in row[1:]) for row in reader}


def run_fold(spec: ModelSpec, sessions: Mapping[str, Sequence[LabeledWindow]], held_out: str,
             cfg: TrainConfig, val_fraction: float = 0.2) -> FoldResult:
    rest = {sid: list(ws) for sid, ws in sessions.items() if sid != held_out}
    train_w, val_w = split_validation(rest, val_fraction)
    model, history = train(spec, train_w, val_w, cfg)
    test = list(sessions[held_out])
    assert all(w.session_id == held_out for w in test)
    scores = predict_scores(model, test)
    labels = np.array([w.label for w in test])
    return FoldResult(held_out, compute_metrics(scores >= 0.5, labels), len(test),
                      model.metadata.get("epochs_run", 0), history)


def loso_evaluate(spec: ModelSpec, sessions: Mapping[str, Sequence[LabeledWindow]],
                  cfg: TrainConfig = TrainConfig(), val_fraction: float = 0.2,
                  jobs: int = 1, label: str = "") -> CVReport:
    """One fold per session: train on the others, test on the held-out one.

    The early-stopping validation set is the last ``val_fraction`` of every
    training session's windows.
    """
    ids = sorted(sid for sid, ws in sessions.items() if len(ws))
    if len(ids) < 2:
        raise TooFewSessions(f"LOSO needs at least 2 sessions with windows, got {len(ids)}")
    if jobs > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(
            delayed(run_fold)(spec, sessions, sid, cfg, val_fraction) for sid in ids)
    else:
        results = [run_fold(spec, sessions, sid, cfg, val_fraction) for sid in ids]
    return CVReport({r.session_id: r for r in results}, label or spec.variant)


def _mask_groups(mask) -> tuple[str, ...]:
    groups = (mask,) if isinstance(mask, str) else tuple(mask)
    bad = [g for g in groups if g not in FEATURE_GROUPS]
    if bad:
        raise UnknownMask(f"unknown feature mask {bad}; choose from {FEATURE_GROUPS}")
    return groups


def ablation_label(mask) -> str:
    groups = _mask_groups(mask)
    return "full" if not groups else "-" + "-".join(groups)


def ablated_sessions(spec: ModelSpec, sessions: Mapping[str, Sequence[LabeledWindow]], mask):
    groups = _mask_groups(mask)
    keep = tuple(g for g in spec.features if g not in groups)
    sub = {sid: ablate(ws, groups, spec.gamma, spec.features) for sid, ws in sessions.items()}
    return replace(spec, features=keep), sub


def run_ablation(spec: ModelSpec, sessions: Mapping[str, Sequence[LabeledWindow]],
                 feature_masks: Iterable, cfg: TrainConfig = TrainConfig(),
                 jobs: int = 1) -> dict[str, CVReport]:
    """LOSO for the full feature set and for each mask with its columns removed."""
    masks = [()] + [m for m in feature_masks if _mask_groups(m)]
    out = {}
    for m in masks:
        s, sub = ablated_sessions(spec, sessions, m)
        out[ablation_label(m)] = loso_evaluate(s, sub, cfg, jobs=jobs, label=ablation_label(m))
    return out


def ablation_table(reports: Mapping[str, CVReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", *COLUMNS))
    for name, rep in reports.items():
        w.writerow((name, *(repr(float(x)) for x in rep.aggregate.row())))
    return buf.getvalue()

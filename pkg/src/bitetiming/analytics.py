"""Dataset statistics: annotation counts and durations, inter-annotation gaps,
eating-rate curves, and their CSV/JSON/PNG report files.

Conventions: gaps are measured start to start, standard deviations use the
population (N) convention, and neither gaps nor rate bins count across a
disruption.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .annotations import KINDS, VARIABLE_LENGTH_KINDS, AnnotationEvent, SessionAnnotations
from .errors import IOFailure, NoEvents, UnknownKind

ALL = "all"
# rows of the same-kind and kind-transition gap tables
SAME_KIND_GAPS = tuple((k, k) for k in KINDS if k not in ("disruption",))
TRANSITION_GAPS = (
    ("food_entered", "food_lifted"),
    ("food_lifted", "food_to_mouth"),
    ("mouth_open", "food_to_mouth"),
    ("drink_entered", "drink_lifted"),
    ("drink_lifted", "drink_to_mouth"),
    ("napkin_entered", "napkin_lifted"),
    ("napkin_lifted", "napkin_to_mouth"),
)
REPORT_FORMATS = ("csv", "json", "png")


@dataclass(frozen=True)
class Summary:
    """mean ± std (population) over n samples, in seconds."""
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, xs) -> "Summary | None":
        xs = np.asarray(list(xs), dtype=np.float64)
        if len(xs) == 0:
            return None
        return cls(float(xs.mean()), float(xs.std()), int(len(xs)))


@dataclass
class StatsReport:
    counts: dict[tuple[str, str], int] = field(default_factory=dict)
    durations: dict[tuple[str, str], Summary] = field(default_factory=dict)
    gaps: dict[tuple[str, str, str], Summary] = field(default_factory=dict)
    rates: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    normalized_rates: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def kind_counts(self) -> dict[str, int]:
        out = {k: 0 for k in KINDS}
        for (kind, _), n in self.counts.items():
            out[kind] += n
        return out

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _as_list(sessions) -> list[SessionAnnotations]:
    return [sessions] if isinstance(sessions, SessionAnnotations) else list(sessions)


def annotation_stats(sessions) -> StatsReport:
    """Counts by (kind, value) and durations of the variable-length kinds.

    Duration summaries are keyed ``(kind, value)`` plus ``(kind, "all")``.
    """
    counts: Counter = Counter()
    durs: dict[tuple[str, str], list[float]] = defaultdict(list)
    for s in _as_list(sessions):
        for evs in s.events.values():
            for e in evs:
                counts[(e.kind, e.value)] += 1
                if e.kind in VARIABLE_LENGTH_KINDS:
                    durs[(e.kind, e.value)].append(e.duration_ms / 1000)
                    durs[(e.kind, ALL)].append(e.duration_ms / 1000)
    return StatsReport(counts=dict(sorted(counts.items())),
                       durations={k: Summary.of(v) for k, v in sorted(durs.items())})


def _crosses(a_ms: int, b_ms: int, spans) -> bool:
    return any(s < b_ms and e > a_ms for s, e in spans)


def _seat_gaps(evs: Sequence[AnnotationEvent], from_kind: str, to_kind: str,
               value: str | None, spans) -> list[float]:
    out = []
    if from_kind == to_kind:
        xs = [e for e in evs if e.kind == from_kind and (value is None or e.value == value)]
        for a, b in zip(xs, xs[1:]):
            if not _crosses(a.start_ms, b.start_ms, spans):
                out.append((b.start_ms - a.start_ms) / 1000)
        return out
    same_family = from_kind.split("_")[0] == to_kind.split("_")[0]
    pending: list[AnnotationEvent] = []
    for e in evs:
        if e.kind == from_kind:
            pending.append(e)
        elif e.kind == to_kind:
            if value is None or e.value == value:
                cands = [p for p in pending if not same_family or p.value == e.value]
                if cands:
                    p = cands[-1]   # the latest one since the previous to-event
                    if not _crosses(p.start_ms, e.start_ms, spans):
                        out.append((e.start_ms - p.start_ms) / 1000)
            pending.clear()
    return out


def gap_stats(sessions, from_kind: str, to_kind: str, value: str | None = None) -> Summary | None:
    """Start-to-start gap between consecutive ``from_kind`` -> ``to_kind`` events.

    For two different kinds, each ``to_kind`` event is paired with the latest
    ``from_kind`` event since the previous ``to_kind`` event (values must match
    within one object family). Pairs spanning a disruption are skipped.
    Returns None when there is no pair.
    """
    for k in (from_kind, to_kind):
        if k not in KINDS:
            raise UnknownKind(f"unknown annotation kind {k!r}")
    gaps: list[float] = []
    for s in _as_list(sessions):
        spans = s.disruptions()
        for seat in (1, 2, 3):
            gaps += _seat_gaps(s.events[seat], from_kind, to_kind, value, spans)
    return Summary.of(gaps)


def eating_rate(session: SessionAnnotations, normalize: bool = False,
                seat: int | None = None) -> dict[int, np.ndarray]:
    """food_to_mouth events per minute of session time, per seat.

    Events that start inside a disruption are not binned. The normalized
    curve divides each bin by the seat's total, so it sums to 1.
    """
    n_bins = max(1, math.ceil(session.duration_ms / 60000))
    spans = session.disruptions()
    seats = (seat,) if seat is not None else (1, 2, 3)
    out = {}
    for s in seats:
        t = [e.start_ms for e in session.of_kind(s, "food_to_mouth")
             if not any(a <= e.start_ms < b for a, b in spans)]
        if not t:
            continue
        curve = np.bincount(np.minimum(np.asarray(t) // 60000, n_bins - 1), minlength=n_bins)
        curve = curve.astype(np.float64)
        out[s] = curve / curve.sum() if normalize else curve
    if not out:
        raise NoEvents(f"{session.session_id} has no food_to_mouth events"
                       + (f" for seat {seat}" if seat is not None else ""))
    return out


def build_report(sessions, gap_pairs: Iterable[tuple[str, str]] = SAME_KIND_GAPS + TRANSITION_GAPS
                 ) -> StatsReport:
    """Counts, durations, gap tables (overall and by value) and rate curves."""
    sessions = _as_list(sessions)
    rep = annotation_stats(sessions)
    values = sorted({e.value for s in sessions for evs in s.events.values() for e in evs})
    for a, b in gap_pairs:
        for v in (None, *values):
            g = gap_stats(sessions, a, b, v)
            if g is not None:
                rep.gaps[(a, b, v or ALL)] = g
    for s in sessions:
        try:
            raw = eating_rate(s)
        except NoEvents:
            continue
        for seat, curve in raw.items():
            rep.rates[(s.session_id, seat)] = curve
            rep.normalized_rates[(s.session_id, seat)] = curve / curve.sum()
    return rep


# ---------------------------------------------------------------- report files

def _summary_cells(x: Summary | None):
    return ("", "", 0) if x is None else (repr(x.mean), repr(x.std), x.n)


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _rate_rows(rates):
    return [(sid, seat, i, repr(float(v))) for (sid, seat), c in sorted(rates.items())
            for i, v in enumerate(c)]


def _plot_rates(rep: StatsReport, path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, rates, title in ((axes[0], rep.rates, "eating actions per minute"),
                             (axes[1], rep.normalized_rates, "normalized eating rate")):
        for (sid, seat), c in sorted(rates.items()):
            ax.plot(np.arange(len(c)), c, label=f"{sid}/{seat}", lw=1)
        ax.set_xlabel("minute")
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_data(rep: StatsReport) -> dict[str, list[list[float]]]:
    """The series drawn by the rate plot, for checks that ignore pixels."""
    return {"rates": [list(map(float, c)) for _, c in sorted(rep.rates.items())],
            "normalized": [list(map(float, c)) for _, c in sorted(rep.normalized_rates.items())]}


def emit_report(rep: StatsReport, out_dir, formats: Sequence[str] = REPORT_FORMATS) -> list[Path]:
    """Write report files to ``out_dir``.

    csv  : annotation_counts.csv, annotation_durations.csv, gaps.csv,
           eating_rate.csv, eating_rate_normalized.csv
    json : stats.json
    png  : eating_rate.png
    """
    if isinstance(formats, str):
        formats = (formats,)
    bad = [f for f in formats if f not in REPORT_FORMATS]
    if bad:
        raise IOFailure(f"unknown report format(s) {bad}; choose from {REPORT_FORMATS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        if "csv" in formats:
            paths.append(_write_csv(out / "annotation_counts.csv", ("kind", "value", "count"),
                                    [(k, v, n) for (k, v), n in sorted(rep.counts.items())]))
            paths.append(_write_csv(out / "annotation_durations.csv",
                                    ("kind", "value", "mean_s", "std_s", "n"),
                                    [(k, v, *_summary_cells(x)) for (k, v), x in sorted(rep.durations.items())]))
            paths.append(_write_csv(out / "gaps.csv", ("from_kind", "to_kind", "value", "mean_s", "std_s", "n"),
                                    [(a, b, v, *_summary_cells(x)) for (a, b, v), x in rep.gaps.items()]))
            paths.append(_write_csv(out / "eating_rate.csv", ("session_id", "seat", "minute", "rate"),
                                    _rate_rows(rep.rates)))
            paths.append(_write_csv(out / "eating_rate_normalized.csv",
                                    ("session_id", "seat", "minute", "rate"),
                                    _rate_rows(rep.normalized_rates)))
        if "json" in formats:
            p = out / "stats.json"
            p.write_text(json.dumps(report_to_dict(rep), indent=1, sort_keys=True))
            paths.append(p)
        if "png" in formats:
            paths.append(_plot_rates(rep, out / "eating_rate.png"))
    except OSError as exc:
        raise IOFailure(f"could not write report to {out}: {exc}") from exc
    return paths


def report_to_dict(rep: StatsReport) -> dict:
    def summ(x):
        return None if x is None else {"mean": x.mean, "std": x.std, "n": x.n}
    return {
        "counts": [[k, v, n] for (k, v), n in sorted(rep.counts.items())],
        "durations": [[k, v, summ(x)] for (k, v), x in sorted(rep.durations.items())],
        "gaps": [[a, b, v, summ(x)] for (a, b, v), x in rep.gaps.items()],
        **plot_data(rep),
    }


def read_report(out_dir) -> StatsReport:
    """Parse the CSV tables written by :func:`emit_report`."""
    out = Path(out_dir)

    def rows(name):
        with open(out / name, newline="") as fh:
            return list(csv.DictReader(fh))

    def summ(r):
        return None if r["mean_s"] == "" else Summary(float(r["mean_s"]), float(r["std_s"]), int(r["n"]))

    try:
        rep = StatsReport()
        rep.counts = {(r["kind"], r["value"]): int(r["count"]) for r in rows("annotation_counts.csv")}
        rep.durations = {(r["kind"], r["value"]): summ(r) for r in rows("annotation_durations.csv")}
        rep.gaps = {(r["from_kind"], r["to_kind"], r["value"]): summ(r) for r in rows("gaps.csv")}
        for name, target in (("eating_rate.csv", rep.rates),
                             ("eating_rate_normalized.csv", rep.normalized_rates)):
            acc: dict[tuple[str, int], list[float]] = defaultdict(list)
            for r in rows(name):
                acc[(r["session_id"], int(r["seat"]))].append(float(r["rate"]))
            target.update({k: np.asarray(v) for k, v in acc.items()})
    except OSError as exc:
        raise IOFailure(f"could not read report from {out}: {exc}") from exc
    return rep

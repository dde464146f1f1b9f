"""Labeled training windows and the window archive format.

Column layout of the per-window matrices (``n = k_seconds * fps`` rows)::

    U : s, d1..d4, o1..o168, (b_time, b_count) * gamma      -> 173 + 2*gamma
    L : s, d1..d4, o1..o168                                  -> 173
    R : s, d1..d4, o1..o168                                  -> 173

Positives end at a target-user ``food_lifted`` start and cover the ``k``
seconds before it. Negatives are centred on the midpoint between two
consecutive lifts. For target seat ``j`` the left co-diner is the previous
seat in cyclic order and the right co-diner the next one.
"""
from __future__ import annotations

import math

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotations import SessionAnnotations
from .features import compute_bite_features, scale_bite_features
from .streams import N_GAZE, N_KEYPOINTS, FeatureStream

FEATURE_GROUPS = ("speaking", "gaze_head", "body_face", "bite")
ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class WindowSpec:
    k_seconds: float = 6.0
    fps: int = 15
    horizon_note: str = "label = intent (food_lifted) at window end"
    min_gap_to_positive: float = 0.0

    def __post_init__(self):
        n = self.k_seconds * self.fps
        if self.k_seconds <= 0 or self.fps <= 0 or abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError(f"k_seconds * fps must be a positive integer, got {n}")

    @property
    def n_frames(self) -> int:
        return int(round(self.k_seconds * self.fps))

    @property
    def k_ms(self) -> int:
        return int(round(self.k_seconds * 1000))


def left_right(seat: int, n_seats: int = 3) -> tuple[int, int]:
    return ((seat - 2) % n_seats) + 1, (seat % n_seats) + 1


def column_slices(features: Sequence[str] = FEATURE_GROUPS, gamma: int = 1,
                  user: bool = True) -> dict[str, slice]:
    """Where each feature group lives in a window matrix after ablation."""
    widths = {"speaking": 1, "gaze_head": N_GAZE, "body_face": N_KEYPOINTS,
              "bite": 2 * gamma if user else 0}
    out, pos = {}, 0
    for g in FEATURE_GROUPS:
        if g in features and widths[g]:
            out[g] = slice(pos, pos + widths[g])
            pos += widths[g]
    return out


def channel_width(features: Sequence[str] = FEATURE_GROUPS, gamma: int = 1,
                  user: bool = True) -> int:
    sl = column_slices(features, gamma, user)
    return max((s.stop for s in sl.values()), default=0)


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    session_id: str
    seat: int
    anchor_ms: int
    label: int
    U: np.ndarray
    L: np.ndarray
    R: np.ndarray
    kind: str = ""

    @property
    def start_ms(self) -> int:
        return self.anchor_ms


@dataclass
class ExtractionReport:
    kept: Counter = field(default_factory=Counter)
    dropped: list[dict] = field(default_factory=list)

    def drop(self, **info):
        self.dropped.append(info)

    def drop_counts(self) -> Counter:
        return Counter(d["reason"] for d in self.dropped)

    def merge(self, other: "ExtractionReport") -> "ExtractionReport":
        self.kept.update(other.kept)
        self.dropped.extend(other.dropped)
        return self

    def as_dict(self) -> dict:
        return {"kept": dict(self.kept), "dropped": self.dropped,
                "drop_counts": dict(self.drop_counts())}


def candidate_windows(lift_starts: Sequence[int], spec: WindowSpec):
    """(kind, interval_start_ms, interval_end_ms, label) for every candidate.

    Intervals are half-open. Window anchor is the interval end.
    """
    k = spec.k_ms
    out = []
    lifts = sorted(lift_starts)
    for s in lifts:
        out.append(("positive", s - k, s, 1))
    for a, b in zip(lifts, lifts[1:]):
        if b <= a:
            continue
        mid = (a + b) // 2
        out.append(("negative", mid - k // 2, mid - k // 2 + k, 0))
    return out


def _frame_block(t_ms: np.ndarray, kind: str, start: int, end: int, n: int, period: float):
    """Index range of the ``n`` frames for a window, or None if not covered."""
    if kind == "positive":
        stop = int(np.searchsorted(t_ms, end, side="left"))
        first = stop - n
    else:
        first = int(np.searchsorted(t_ms, start, side="left"))
        stop = first + n
    if first < 0 or stop > len(t_ms) or stop <= first:
        return None
    # the block must actually span the interval, within one frame period
    # (timestamps are rounded to whole ms, so the period is rounded up)
    tol = math.ceil(period)
    if t_ms[first] < start - tol or t_ms[stop - 1] >= end or t_ms[first] - start >= tol:
        return None
    if end - t_ms[stop - 1] > tol:
        return None
    return first, stop


def extract_windows(streams: Mapping[int, FeatureStream], annotations: SessionAnnotations,
                    spec: WindowSpec = WindowSpec(), gamma: int = 100,
                    seats: Iterable[int] = (1, 2, 3),
                    report: ExtractionReport | None = None) -> list[LabeledWindow]:
    """Build positive and negative windows for each target seat.

    Windows not covered by the streams, or overlapping a disruption, are
    dropped and listed in ``report``.
    """
    report = report if report is not None else ExtractionReport()
    n = spec.n_frames
    disruptions = annotations.disruptions()
    social = {s: streams[s].social() for s in streams}
    windows: list[LabeledWindow] = []
    for seat in seats:
        st = streams[seat]
        for other in left_right(seat):
            if other not in streams or not np.array_equal(streams[other].t_ms, st.t_ms):
                raise ValueError("all seats of a session need identical frame timestamps")
        if st.fps != spec.fps:
            raise ValueError(f"stream at {st.fps} fps, window spec expects {spec.fps}")
        lifts = annotations.lift_times(seat)
        left, right = left_right(seat)
        for kind, a, b, label in candidate_windows(lifts, spec):
            info = dict(session_id=annotations.session_id, seat=seat, kind=kind, anchor_ms=b)
            if any(a < de and ds < b for ds, de in disruptions):
                report.drop(reason="disruption", **info)
                continue
            if kind == "negative" and spec.min_gap_to_positive > 0:
                gap_ms = spec.min_gap_to_positive * 1000
                if any(min(abs(x - a), abs(x - b)) < gap_ms or a <= x < b for x in lifts):
                    report.drop(reason="near_positive", **info)
                    continue
            block = _frame_block(st.t_ms, kind, a, b, n, st.period_ms)
            if block is None:
                report.drop(reason="insufficient_coverage", **info)
                continue
            i, j = block
            bite = scale_bite_features(compute_bite_features(lifts, st.t_ms[i:j]), gamma)
            U = np.concatenate([social[seat][i:j], bite.astype(np.float32)], axis=1)
            windows.append(LabeledWindow(annotations.session_id, seat, b, label,
                                         U, social[left][i:j], social[right][i:j], kind))
            report.kept[kind] += 1
    return windows


def ablate(windows: Sequence[LabeledWindow], remove: Iterable[str], gamma: int,
           present: Sequence[str] = FEATURE_GROUPS) -> list[LabeledWindow]:
    """Physically drop the columns of the ``remove`` groups from every channel."""
    remove = set(remove)
    unknown = remove - set(FEATURE_GROUPS)
    if unknown:
        from .errors import UnknownMask
        raise UnknownMask(f"unknown feature groups {sorted(unknown)}")
    keep = [g for g in present if g not in remove]
    u_sl = column_slices(present, gamma, user=True)
    c_sl = column_slices(present, gamma, user=False)
    u_idx = np.concatenate([np.arange(u_sl[g].start, u_sl[g].stop) for g in keep if g in u_sl]
                           or [np.zeros(0, int)])
    c_idx = np.concatenate([np.arange(c_sl[g].start, c_sl[g].stop) for g in keep if g in c_sl]
                           or [np.zeros(0, int)])
    return [LabeledWindow(w.session_id, w.seat, w.anchor_ms, w.label,
                          w.U[:, u_idx], w.L[:, c_idx], w.R[:, c_idx], w.kind)
            for w in windows]


def stack(windows: Sequence[LabeledWindow]):
    """Arrays (U, L, R, labels) with a leading window axis."""
    U = np.stack([w.U for w in windows]).astype(np.float32, copy=False)
    L = np.stack([w.L for w in windows]).astype(np.float32, copy=False)
    R = np.stack([w.R for w in windows]).astype(np.float32, copy=False)
    y = np.array([w.label for w in windows], dtype=np.float32)
    return U, L, R, y


def save_archive(windows: Sequence[LabeledWindow], path, report: ExtractionReport | None = None,
                 meta: Mapping | None = None) -> Path:
    """Write windows to ``path`` (.npz) and a JSON manifest next to it.

    The npz holds ``U``, ``L``, ``R`` (float32, window-major), ``label``,
    ``anchor_ms``, ``seat``, ``session_id`` and ``kind``.
    """
    path = Path(path)
    if windows:
        U, L, R, y = stack(windows)
    else:
        U = L = R = np.zeros((0, 0, 0), np.float32)
        y = np.zeros(0, np.float32)
    np.savez(path, U=U, L=L, R=R, label=y.astype(np.int8),
             anchor_ms=np.array([w.anchor_ms for w in windows], np.int64),
             seat=np.array([w.seat for w in windows], np.int8),
             session_id=np.array([w.session_id for w in windows], dtype=str),
             kind=np.array([w.kind for w in windows], dtype=str))
    manifest = {"format_version": ARCHIVE_VERSION, "n_windows": len(windows),
                "meta": dict(meta or {}),
                "extraction": (report or ExtractionReport()).as_dict()}
    path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_archive(path) -> list[LabeledWindow]:
    with np.load(path, allow_pickle=False) as z:
        return [LabeledWindow(str(z["session_id"][i]), int(z["seat"][i]), int(z["anchor_ms"][i]),
                              int(z["label"][i]), z["U"][i], z["L"][i], z["R"][i],
                              str(z["kind"][i]))
                for i in range(len(z["label"]))]


def group_by_session(windows: Iterable[LabeledWindow]) -> dict[str, list[LabeledWindow]]:
    out: dict[str, list[LabeledWindow]] = {}
    for w in windows:
        out.setdefault(w.session_id, []).append(w)
    return dict(sorted(out.items()))

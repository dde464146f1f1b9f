"""Per-seat, per-frame feature streams and their CSV file format.

Column order of the stream file is fixed::

    seat,t_ms,s,d1..d4,o1..o168[,b_time,b_count][,d_valid,o_valid]

Missing pose or gaze detections are stored as zeros; ``d_valid``/``o_valid``
carry the validity mask (1 = detected).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import MalformedRow

N_KEYPOINTS = 168
N_GAZE = 4
SOCIAL_WIDTH = 1 + N_GAZE + N_KEYPOINTS  # s, d, o = 173

STREAM_COLUMNS = (["seat", "t_ms", "s"] + [f"d{i}" for i in range(1, N_GAZE + 1)]
                  + [f"o{i}" for i in range(1, N_KEYPOINTS + 1)])
BITE_COLUMNS = ["b_time", "b_count"]
MASK_COLUMNS = ["d_valid", "o_valid"]


@dataclass(frozen=True)
class FrameFeatures:
    t_ms: int
    o: np.ndarray
    d: np.ndarray
    s: int
    b: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class FeatureStream:
    """Column-oriented frames of one seat. Arrays are read-only."""
    seat: int
    fps: int
    t_ms: np.ndarray            # (n,) int64, strictly increasing
    s: np.ndarray               # (n,) uint8
    d: np.ndarray               # (n, 4) float32
    o: np.ndarray               # (n, 168) float32
    b: np.ndarray | None = None  # (n, 2) float64, target user only
    d_valid: np.ndarray | None = None
    o_valid: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t_ms)
        fix = {
            "t_ms": np.asarray(self.t_ms, dtype=np.int64),
            "s": np.asarray(self.s, dtype=np.uint8),
            "d": np.asarray(self.d, dtype=np.float32).reshape(n, N_GAZE),
            "o": np.asarray(self.o, dtype=np.float32).reshape(n, N_KEYPOINTS),
            "d_valid": (np.ones(n, bool) if self.d_valid is None
                        else np.asarray(self.d_valid, dtype=bool)),
            "o_valid": (np.ones(n, bool) if self.o_valid is None
                        else np.asarray(self.o_valid, dtype=bool)),
        }
        if self.b is not None:
            fix["b"] = np.asarray(self.b, dtype=np.float64).reshape(n, 2)
        for name, arr in fix.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if n and np.any(np.diff(self.t_ms) <= 0):
            raise ValueError(f"seat {self.seat}: frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t_ms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureStream):
            return NotImplemented
        if (self.seat, self.fps) != (other.seat, other.fps):
            return False
        if (self.b is None) != (other.b is None):
            return False
        names = ["t_ms", "s", "d", "o", "d_valid", "o_valid"] + (["b"] if self.b is not None else [])
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in names)

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.fps

    def social(self) -> np.ndarray:
        """(n, 173) matrix in stream column order: s, d1..d4, o1..o168."""
        return np.concatenate([self.s[:, None].astype(np.float32), self.d, self.o], axis=1)

    def frames(self) -> Iterator[FrameFeatures]:
        for i in range(len(self)):
            yield FrameFeatures(int(self.t_ms[i]), self.o[i], self.d[i], int(self.s[i]),
                                None if self.b is None else self.b[i])

    def take(self, idx) -> "FeatureStream":
        return FeatureStream(
            self.seat, self.fps, self.t_ms[idx], self.s[idx], self.d[idx], self.o[idx],
            None if self.b is None else self.b[idx], self.d_valid[idx], self.o_valid[idx])

    def with_fps(self, fps: int, idx) -> "FeatureStream":
        sub = self.take(idx)
        return FeatureStream(sub.seat, fps, sub.t_ms, sub.s, sub.d, sub.o, sub.b,
                             sub.d_valid, sub.o_valid)

    def check_spacing(self) -> bool:
        """True when every frame gap is within one period of the nominal spacing."""
        if len(self) < 2:
            return True
        gaps = np.diff(self.t_ms)
        return bool(np.all(np.abs(gaps - self.period_ms) <= self.period_ms))


def frame_times(n: int, fps: int, t0_ms: int = 0) -> np.ndarray:
    """Integer-millisecond timestamps of ``n`` frames at ``fps``."""
    return t0_ms + np.round(np.arange(n) * (1000.0 / fps)).astype(np.int64)


def write_streams(streams: Mapping[int, FeatureStream], path) -> Path:
    path = Path(path)
    frames = []
    with_b = any(st.b is not None for st in streams.values())
    for seat in sorted(streams):
        st = streams[seat]
        df = pd.DataFrame(st.o, columns=STREAM_COLUMNS[7:])
        df.insert(0, "seat", seat)
        df.insert(1, "t_ms", st.t_ms)
        df.insert(2, "s", st.s)
        for j in range(N_GAZE):
            df.insert(3 + j, f"d{j + 1}", st.d[:, j])
        if with_b:
            b = st.b if st.b is not None else np.full((len(st), 2), np.nan)
            df["b_time"], df["b_count"] = b[:, 0], b[:, 1]
        df["d_valid"] = st.d_valid.astype(np.uint8)
        df["o_valid"] = st.o_valid.astype(np.uint8)
        frames.append(df)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.9g")
    return path


def read_streams(path, fps: int) -> dict[int, FeatureStream]:
    df = pd.read_csv(path)
    missing = [c for c in STREAM_COLUMNS if c not in df.columns]
    if missing:
        raise MalformedRow(1, f"stream file lacks columns {missing[:5]}")
    if list(df.columns[:len(STREAM_COLUMNS)]) != STREAM_COLUMNS:
        raise MalformedRow(1, "stream columns out of the documented order")
    out = {}
    for seat, g in df.groupby("seat", sort=True):
        b = None
        if "b_time" in g.columns and not g["b_time"].isna().all():
            b = g[BITE_COLUMNS].to_numpy(np.float64)
        out[int(seat)] = FeatureStream(
            seat=int(seat), fps=fps,
            t_ms=g["t_ms"].to_numpy(np.int64),
            s=g["s"].to_numpy(np.uint8),
            d=g[STREAM_COLUMNS[3:7]].to_numpy(np.float32),
            o=g[STREAM_COLUMNS[7:]].to_numpy(np.float32),
            b=b,
            d_valid=g["d_valid"].to_numpy(bool) if "d_valid" in g else None,
            o_valid=g["o_valid"].to_numpy(bool) if "o_valid" in g else None,
        )
    return out

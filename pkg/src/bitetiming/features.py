"""Audio/video alignment, speaking status, bite features and frame-rate
standardization."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyStream, NonIntegerDecimation
from .streams import FeatureStream


@dataclass(frozen=True)
class AudioFrame:
    t_ms: int
    doa_deg: float
    voice_active: int

    def __post_init__(self):
        object.__setattr__(self, "doa_deg", float(self.doa_deg) % 360.0)
        object.__setattr__(self, "voice_active", int(bool(self.voice_active)))


def nearest_indices(source_ts, target_ts) -> np.ndarray:
    """Index into sorted ``source_ts`` of the element nearest to each target.

    Ties go to the earlier source element.
    """
    src = np.asarray(source_ts, dtype=np.int64)
    tgt = np.asarray(target_ts, dtype=np.int64)
    right = np.clip(np.searchsorted(src, tgt, side="left"), 0, len(src) - 1)
    left = np.clip(right - 1, 0, len(src) - 1)
    pick_left = np.abs(tgt - src[left]) <= np.abs(src[right] - tgt)
    return np.where(pick_left, left, right)


def align_audio_to_video(audio: Sequence[AudioFrame], video_ts) -> list[AudioFrame]:
    """One audio frame per video frame by nearest timestamp; audio frames may repeat."""
    if len(audio) == 0 or len(video_ts) == 0:
        raise EmptyStream("audio and video streams must be non-empty")
    idx = nearest_indices([a.t_ms for a in audio], video_ts)
    return [audio[i] for i in idx]


def circular_distance(a, b) -> np.ndarray:
    diff = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(diff, 360.0 - diff)


def nearest_seat(angles, seat_angles) -> np.ndarray:
    """0-based index of the circularly nearest seat; ties go to the lower index."""
    dist = circular_distance(np.asarray(angles, dtype=float)[:, None],
                             np.asarray(seat_angles, dtype=float)[None, :])
    return np.argmin(dist, axis=1)  # argmin returns the first minimum


def cluster_doa(doa_deg, n_clusters: int = 3, seed: int = 0, n_init: int = 10):
    """k-means on DOA angles embedded on the unit circle.

    Returns ``(labels, centroid_angles_deg)``. Raises ``DegenerateClustering``
    when there are fewer distinct angles than clusters.
    """
    from sklearn.cluster import KMeans
    from .errors import DegenerateClustering

    doa = np.asarray(doa_deg, dtype=float) % 360.0
    if len(np.unique(doa)) < n_clusters:
        raise DegenerateClustering(
            f"{len(np.unique(doa))} distinct DOA values for {n_clusters} clusters")
    rad = np.deg2rad(doa)
    pts = np.column_stack([np.cos(rad), np.sin(rad)])
    km = KMeans(n_clusters=n_clusters, n_init=n_init, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        labels = km.fit_predict(pts)
    centers = np.rad2deg(np.arctan2(km.cluster_centers_[:, 1], km.cluster_centers_[:, 0])) % 360.0
    return labels, centers


def compute_speaking_status(aligned: Sequence[AudioFrame], seat_angles,
                            seed: int = 0, n_init: int = 10) -> np.ndarray:
    """Per-frame binary speaking status for each seat, shape (n_frames, n_seats).

    Voice-active frames are clustered by direction of arrival (k = number of
    seats); each cluster goes to the seat nearest its centroid. If the DOA
    values cannot support that many clusters, each frame is assigned to its
    own nearest seat instead.
    """
    from .errors import DegenerateClustering

    seat_angles = np.asarray(seat_angles, dtype=float) % 360.0
    if len(np.unique(seat_angles)) != len(seat_angles):
        raise ValueError("seat angles must be distinct")
    n = len(aligned)
    out = np.zeros((n, len(seat_angles)), dtype=np.uint8)
    active = np.array([a.voice_active for a in aligned], dtype=bool)
    if not active.any():
        return out
    doa = np.array([a.doa_deg for a in aligned])[active]
    try:
        labels, centers = cluster_doa(doa, len(seat_angles), seed=seed, n_init=n_init)
        seat_of = nearest_seat(centers, seat_angles)[labels]
    except DegenerateClustering:
        seat_of = nearest_seat(doa, seat_angles)
    out[np.flatnonzero(active), seat_of] = 1
    return out


def energy_vad(samples, frame_len: int, threshold_db: float = -40.0) -> np.ndarray:
    """Energy-threshold voice activity per frame of ``frame_len`` samples.

    A stand-in for a proper VAD; frames above ``threshold_db`` relative to
    full scale are voiced.
    """
    x = np.asarray(samples, dtype=float)
    n = len(x) // frame_len
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    frames = x[: n * frame_len].reshape(n, frame_len)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    db = 20 * np.log10(np.maximum(rms, 1e-12))
    return (db > threshold_db).astype(np.uint8)


def compute_bite_features(food_lifted_times, t_ms):
    """(seconds since the last lift at or before ``t_ms``, lifts so far).

    Vectorized over ``t_ms``: a scalar gives a tuple, an array gives an
    (n, 2) array. Before the first lift the time counts from session start.
    """
    lifts = np.asarray(food_lifted_times, dtype=np.int64)
    t = np.asarray(t_ms, dtype=np.int64)
    count = np.searchsorted(lifts, t, side="right")
    last = np.where(count > 0, lifts[np.maximum(count - 1, 0)] if len(lifts) else 0, 0)
    since = (t - last) / 1000.0
    if t.ndim == 0:
        return float(since), int(count)
    return np.column_stack([since, count.astype(np.float64)])


def scale_bite_features(b, gamma: int) -> np.ndarray:
    """Tile bite features ``gamma`` times along the last axis: (b1, b2, b1, b2, ...)."""
    if int(gamma) != gamma or gamma < 1:
        raise ValueError(f"gamma must be a positive integer, got {gamma}")
    b = np.asarray(b, dtype=np.float64)
    return np.tile(b, (1,) * (b.ndim - 1) + (int(gamma),))


def rescale_time_since_bite(b, factor: float):
    """Divide the time-since-last-bite component by ``factor``; the count is kept."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    b = np.array(b, dtype=np.float64)
    b[..., 0] = b[..., 0] / factor
    return b


def downsample_stream(stream: FeatureStream, target_fps: int = 15) -> FeatureStream:
    """Keep every n-th frame starting at frame 0, where n = source fps / target fps."""
    if target_fps <= 0 or stream.fps % target_fps:
        raise NonIntegerDecimation(f"{stream.fps} fps cannot be decimated to {target_fps} fps")
    step = stream.fps // target_fps
    return stream.with_fps(target_fps, slice(0, None, step))


def attach_speaking(streams: dict[int, FeatureStream], audio: Sequence[AudioFrame],
                    seat_angles, seed: int = 0) -> dict[int, FeatureStream]:
    """Replace each stream's speaking column with DOA+VAD-derived status.

    All streams must share the same video timestamps.
    """
    seats = sorted(streams)
    ts = streams[seats[0]].t_ms
    for s in seats[1:]:
        if not np.array_equal(streams[s].t_ms, ts):
            raise ValueError("streams of one session must share video timestamps")
    status = compute_speaking_status(align_audio_to_video(audio, ts), seat_angles, seed=seed)
    out = {}
    for j, seat in enumerate(seats):
        st = streams[seat]
        out[seat] = FeatureStream(st.seat, st.fps, st.t_ms, status[:, j], st.d, st.o,
                                  st.b, st.d_valid, st.o_valid)
    return out


def attach_bite_features(stream: FeatureStream, food_lifted_times) -> FeatureStream:
    b = compute_bite_features(food_lifted_times, stream.t_ms)
    return FeatureStream(stream.seat, stream.fps, stream.t_ms, stream.s, stream.d, stream.o,
                         b, stream.d_valid, stream.o_valid)

"""Synthetic three-diner sessions with known ground truth.

Each seat eats on its own renewal process (a refractory Poisson process by
default). The ``coupling`` flag decides which signals announce a lift:

``co_diner``
    both co-diners speak during the few seconds before the lift; the lifting
    diner's own pose, gaze and speech carry nothing about it.
``user``
    the lifting diner falls silent, looks down and moves a hand; co-diners
    behave independently of the lift.
``both``
    both cues at once.
``none``
    no cue at all.

Every session is a pure function of ``(config, session index)``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import lfilter

from .annotations import AnnotationEvent, SessionAnnotations, default_participants
from .errors import InvalidConfig
from .streams import N_KEYPOINTS, FeatureStream, frame_times

COUPLINGS = ("co_diner", "user", "both", "none")
GAP_DISTRIBUTIONS = ("refractory_exponential", "log_uniform")
SEAT_UTENSILS = ("fork", "spoon", "chopsticks", "hand")

# keypoint coordinates moved by the user-private reach cue (a wrist/hand block)
HAND_KEYPOINTS = slice(8, 20)


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    n_sessions: int = 1
    duration_s: float = 300.0
    fps: int = 15
    mean_bite_gap_s: float = 30.0
    min_bite_gap_s: float = 12.0
    max_bite_gap_s: float = 240.0       # log_uniform only
    gap_distribution: str = "refractory_exponential"
    coupling: str = "co_diner"
    cue_lead_s: float = 5.0
    chatter_per_min: float = 3.0
    chatter_mean_s: float = 1.2
    chatter_max_s: float = 2.5
    vad_flip_prob: float = 0.0
    keypoint_noise: float = 0.01
    gaze_noise: float = 0.05
    dropout_prob: float = 0.01
    drinks_per_min: float = 0.3
    disruptions_per_session: int = 0
    seat_rotation_deg: float = 0.0
    session_prefix: str = "SYN"

    def __post_init__(self):
        positive = ("n_sessions", "duration_s", "fps", "mean_bite_gap_s", "min_bite_gap_s",
                    "max_bite_gap_s", "cue_lead_s", "chatter_mean_s", "chatter_max_s")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be positive")
        for name in ("chatter_per_min", "keypoint_noise", "gaze_noise", "drinks_per_min",
                     "disruptions_per_session"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        if not 0 <= self.dropout_prob < 1 or not 0 <= self.vad_flip_prob < 1:
            raise InvalidConfig("probabilities must lie in [0, 1)")
        if self.coupling not in COUPLINGS:
            raise InvalidConfig(f"coupling must be one of {COUPLINGS}")
        if self.gap_distribution not in GAP_DISTRIBUTIONS:
            raise InvalidConfig(f"gap_distribution must be one of {GAP_DISTRIBUTIONS}")
        if self.min_bite_gap_s >= self.mean_bite_gap_s:
            raise InvalidConfig("min_bite_gap_s must be below mean_bite_gap_s")
        if self.gap_distribution == "log_uniform" and self.max_bite_gap_s <= self.min_bite_gap_s:
            raise InvalidConfig("max_bite_gap_s must exceed min_bite_gap_s")

    def as_dict(self) -> dict:
        return asdict(self)


def sample_gaps(rng: np.random.Generator, cfg: SyntheticConfig, n: int) -> np.ndarray:
    """Inter-lift gaps in seconds."""
    if cfg.gap_distribution == "log_uniform":
        lo, hi = np.log(cfg.min_bite_gap_s), np.log(cfg.max_bite_gap_s)
        return np.exp(rng.uniform(lo, hi, n))
    return cfg.min_bite_gap_s + rng.exponential(cfg.mean_bite_gap_s - cfg.min_bite_gap_s, n)


def sample_lift_times(rng: np.random.Generator, cfg: SyntheticConfig) -> np.ndarray:
    """Lift start times (ms) for one seat; the first gap is measured from t=0."""
    horizon = cfg.duration_s - 6.0
    times, t = [], 0.0
    while True:
        t += float(sample_gaps(rng, cfg, 1)[0])
        if t >= horizon:
            break
        times.append(t)
    return np.round(np.array(times) * 1000).astype(np.int64)


def _intervals_to_mask(t_ms, spans) -> np.ndarray:
    mask = np.zeros(len(t_ms), dtype=bool)
    for a, b in spans:
        i, j = np.searchsorted(t_ms, [a, b], side="left")
        mask[i:j] = True
    return mask


def _ramp(t_ms, events, lead_ms) -> np.ndarray:
    """0 -> 1 linear ramps over ``[e - lead, e)`` for each event time ``e``."""
    out = np.zeros(len(t_ms))
    for e in events:
        i, j = np.searchsorted(t_ms, [e - lead_ms, e], side="left")
        if j > i:
            out[i:j] = np.maximum(out[i:j], (t_ms[i:j] - (e - lead_ms)) / lead_ms)
    return out


def _food_events(rng, lifts, utensil, end_ms, blocked) -> list[AnnotationEvent]:
    events = []
    prev_end = 0
    for tau in lifts:
        tau = int(tau)
        ent = tau - int(rng.uniform(1000, 8000))
        group = []
        # finger food is often held between bites, so "hand" may lack an entered event
        if ent >= prev_end + 100 and (utensil != "hand" or rng.random() < 0.7):
            group.append(AnnotationEvent("food_entered", utensil, ent, ent + 400))
        group.append(AnnotationEvent("food_lifted", utensil, tau, tau + 400))
        mo = tau + 400 + int(rng.uniform(600, 1800))
        ftm = mo + int(rng.uniform(100, 400))
        ftm_end = ftm + int(rng.uniform(500, 1300))
        mo_end = ftm + int(rng.uniform(300, 1100))
        group.append(AnnotationEvent("mouth_open", "none", mo, mo_end))
        group.append(AnnotationEvent("food_to_mouth", utensil, ftm, ftm_end))
        last = max(e.end_ms for e in group)
        first = min(e.start_ms for e in group)
        if last >= end_ms or any(first < b and a < last for a, b in blocked):
            continue
        events.extend(group)
        prev_end = last
    return events


def _drink_events(rng, rate_per_min, duration_ms, busy, blocked) -> list[AnnotationEvent]:
    n = rng.poisson(rate_per_min * duration_ms / 60000.0)
    starts = np.sort(rng.uniform(0, duration_ms, n)).astype(np.int64)
    events, free_from = [], 0
    for x in starts:
        x = int(x)
        vessel = "cup" if rng.random() < 0.6 else "bottle"
        lift = x + int(rng.uniform(500, 2000))
        dtm = lift + 400 + int(rng.uniform(400, 1100))
        dtm_end = dtm + int(rng.uniform(1500, 3500))
        span = (x, dtm_end)
        if x < free_from or dtm_end >= duration_ms:
            continue
        if any(span[0] < b and a < span[1] for a, b in busy + blocked):
            continue
        events += [AnnotationEvent("drink_entered", vessel, x, x + 400),
                   AnnotationEvent("drink_lifted", vessel, lift, lift + 400),
                   AnnotationEvent("drink_to_mouth", vessel, dtm, dtm_end)]
        free_from = dtm_end + 100
    return events


def generate_synthetic_session(cfg: SyntheticConfig, index: int = 0):
    """One session: ``(SessionAnnotations, {seat: FeatureStream})``."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    duration_ms = int(round(cfg.duration_s * 1000))
    n_frames = int(cfg.duration_s * cfg.fps)
    t = frame_times(n_frames, cfg.fps)
    period = 1000.0 / cfg.fps
    seats = (1, 2, 3)

    disruptions = []
    for _ in range(cfg.disruptions_per_session):
        a = int(rng.uniform(0.1, 0.9) * duration_ms)
        disruptions.append((a, a + int(rng.uniform(5000, 20000))))
    disruptions.sort()

    raw_lifts = {s: sample_lift_times(rng, cfg) for s in seats}
    utensil = {s: SEAT_UTENSILS[rng.integers(len(SEAT_UTENSILS))] for s in seats}
    events: dict[int, list[AnnotationEvent]] = {}
    lifts: dict[int, np.ndarray] = {}
    for s in seats:
        food = _food_events(rng, raw_lifts[s], utensil[s], duration_ms, disruptions)
        lifts[s] = np.array([e.start_ms for e in food if e.kind == "food_lifted"], np.int64)
        busy = [(e.start_ms - 1000, e.end_ms + 1000) for e in food]
        events[s] = food + _drink_events(rng, cfg.drinks_per_min, duration_ms, busy, disruptions)
    for a, b in disruptions:
        events[1].append(AnnotationEvent("disruption", "light_off", a, b))

    # speaking: independent background chatter for everyone
    speaking = {}
    for s in seats:
        n_bursts = rng.poisson(cfg.chatter_per_min * cfg.duration_s / 60.0)
        starts = rng.uniform(0, duration_ms, n_bursts)
        lens = np.minimum(rng.exponential(cfg.chatter_mean_s, n_bursts), cfg.chatter_max_s) * 1000
        speaking[s] = _intervals_to_mask(t, zip(starts, starts + lens))

    lead_ms = cfg.cue_lead_s * 1000
    if cfg.coupling in ("co_diner", "both"):
        for s in seats:
            for other in seats:
                if other == s:
                    continue
                spans = []
                for tau in lifts[s]:
                    a = tau - lead_ms + rng.uniform(-500, 500)
                    b = tau - rng.uniform(0, 300)
                    spans.append((a, b))
                speaking[other] |= _intervals_to_mask(t, spans)
    if cfg.coupling in ("user", "both"):
        for s in seats:
            quiet = _intervals_to_mask(t, [(tau - 6000, tau) for tau in lifts[s]])
            speaking[s] &= ~quiet

    streams = {}
    for s in seats:
        # pose: fixed body layout plus slow AR(1) drift
        base = rng.uniform(0.2, 0.8, N_KEYPOINTS)
        drift = lfilter([1.0], [1.0, -0.95], rng.normal(0, cfg.keypoint_noise, (n_frames, N_KEYPOINTS)),
                        axis=0)
        o = base + drift
        gaze_base = rng.uniform(-0.5, 0.5, 4)
        d = gaze_base + lfilter([1.0], [1.0, -0.9], rng.normal(0, cfg.gaze_noise, (n_frames, 4)), axis=0)
        if cfg.coupling in ("user", "both"):
            reach = _ramp(t, lifts[s], lead_ms)
            o[:, HAND_KEYPOINTS] += 0.3 * reach[:, None]
            look = _ramp(t, lifts[s], lead_ms)
            d[:, 1] -= 1.0 * look   # gaze pitch toward the plate
            d[:, 3] -= 0.6 * look   # head pitch
        sp = speaking[s].astype(np.uint8)
        if cfg.vad_flip_prob:
            sp ^= (rng.random(n_frames) < cfg.vad_flip_prob).astype(np.uint8)
        o_valid = rng.random(n_frames) >= cfg.dropout_prob
        d_valid = rng.random(n_frames) >= cfg.dropout_prob
        o[~o_valid] = 0.0
        d[~d_valid] = 0.0
        streams[s] = FeatureStream(s, cfg.fps, t, sp, d.astype(np.float32), o.astype(np.float32),
                                   None, d_valid, o_valid)

    ann = SessionAnnotations(
        session_id=f"{cfg.session_prefix}{index:03d}",
        participants=default_participants(rotation_deg=cfg.seat_rotation_deg),
        duration_ms=duration_ms,
        events=events,
    )
    return ann, streams


def generate_synthetic_sessions(cfg: SyntheticConfig):
    return [generate_synthetic_session(cfg, i) for i in range(cfg.n_sessions)]

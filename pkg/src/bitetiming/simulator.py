"""Offline replay of the three bite-timing strategies over a session.

Simulated time is kept in integer milliseconds. A trial runs from its start
(session start, or the previous feed's completion) to a feed trigger; the
feed then takes ``transfer_s`` seconds before the next trial begins.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .annotations import SessionAnnotations
from .errors import InvalidConfig, MissingModel, MissingMouthEvents, NonPositiveResult
from .features import rescale_time_since_bite, scale_bite_features
from .models import TrainedModel, predict_scores
from .streams import FeatureStream
from .windows import FEATURE_GROUPS, LabeledWindow, ablate, left_right

STRATEGIES = ("learned", "fixed_interval", "mouth_open")
LOG_SCHEMA_VERSION = 1
DEFAULT_PROMPT = "When ready, look at me and open your mouth"


@dataclass(frozen=True)
class RobotTimingParams:
    human_enter_to_lift_s: float = 9.9
    robot_speed_factor: float = 5.0
    acquisition_to_wait_s: float = 5.0

    def __post_init__(self):
        if min(self.human_enter_to_lift_s, self.robot_speed_factor) <= 0 or self.acquisition_to_wait_s < 0:
            raise InvalidConfig("robot timing parameters must be positive")


def fixed_interval_wait(p: RobotTimingParams = RobotTimingParams()) -> float:
    """Robot wait time: human entered-to-lifted time scaled to robot speed,
    minus the time the robot needs to reach its waiting pose."""
    wait = p.human_enter_to_lift_s * p.robot_speed_factor - p.acquisition_to_wait_s
    if wait <= 0:
        raise NonPositiveResult(f"fixed-interval wait would be {wait} s")
    return wait


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "fixed_interval"
    sample_period_s: float = 3.0
    window_k_s: float = 6.0
    fps: int = 15
    fixed_wait_s: float | None = None
    time_rescale_factor: float = 5.0
    prompt_text: str = DEFAULT_PROMPT
    transfer_s: float = 9.0
    threshold: float = 0.5
    seat: int = 1
    suppress_during_transfer: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"strategy must be one of {STRATEGIES}")
        if self.sample_period_s <= 0 or self.window_k_s <= 0 or self.fps <= 0:
            raise InvalidConfig("periods and fps must be positive")
        if self.sample_period_s > self.window_k_s:
            raise InvalidConfig("sample period may not exceed the window length")
        if self.transfer_s < 0 or self.time_rescale_factor <= 0:
            raise InvalidConfig("transfer must be non-negative and the rescale factor positive")
        if self.fixed_wait_s is not None and self.fixed_wait_s <= 0:
            raise InvalidConfig("fixed wait must be positive")
        if self.seat not in (1, 2, 3):
            raise InvalidConfig("seat must be 1, 2 or 3")

    @property
    def wait_s(self) -> float:
        return self.fixed_wait_s if self.fixed_wait_s is not None else fixed_interval_wait()


@dataclass(frozen=True)
class DecisionEvent:
    t_ms: int
    kind: str               # tick | prompt | feed
    trial: int
    cause: str
    feed_trigger: bool = False
    model_score: float | None = None
    prompt: str | None = None

    def record(self) -> dict:
        d = asdict(self)
        d["t_s"] = self.t_ms / 1000
        d["schema_version"] = LOG_SCHEMA_VERSION
        return d


@dataclass
class DecisionLog:
    session_id: str
    strategy: str
    seat: int
    events: list[DecisionEvent] = field(default_factory=list)
    trial_starts: list[int] = field(default_factory=list)

    def feeds(self) -> list[DecisionEvent]:
        return [e for e in self.events if e.feed_trigger]

    def feed_times_s(self) -> list[float]:
        return [e.t_ms / 1000 for e in self.feeds()]

    def waits_s(self) -> list[float]:
        """Time from each trial's start to its feed trigger."""
        return [(f.t_ms - self.trial_starts[f.trial]) / 1000 for f in self.feeds()]

    def summary(self) -> dict:
        times = [e.t_ms for e in self.feeds()]
        gaps = np.diff(times) / 1000 if len(times) > 1 else np.zeros(0)
        return {"session_id": self.session_id, "strategy": self.strategy, "seat": self.seat,
                "feeds": len(times),
                "mean_inter_feed_s": float(gaps.mean()) if len(gaps) else None,
                "mean_wait_s": float(np.mean(self.waits_s())) if times else None}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.record(), sort_keys=True) + "\n" for e in self.events)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        s = self.summary()
        w = csv.DictWriter(buf, fieldnames=list(s), lineterminator="\n")
        w.writeheader()
        w.writerow(s)
        return buf.getvalue()

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        a = out_dir / f"decisions_{self.session_id}_{self.strategy}.jsonl"
        b = out_dir / f"summary_{self.session_id}_{self.strategy}.csv"
        a.write_text(self.to_jsonl())
        b.write_text(self.summary_csv())
        return a, b


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def replay_bite_features(completions_ms, t_ms, factor: float) -> np.ndarray:
    """Bite features from simulated feed completions, time rescaled by ``factor``."""
    done = np.asarray(completions_ms, dtype=np.int64)
    t = np.asarray(t_ms, dtype=np.int64)
    count = np.searchsorted(done, t, side="right")
    last = np.where(count > 0, done[np.maximum(count - 1, 0)] if len(done) else 0, 0)
    b = np.column_stack([(t - last) / 1000.0, count.astype(np.float64)])
    return rescale_time_since_bite(b, factor)


def _run_fixed(log: DecisionLog, cfg: StrategyConfig, end_ms: int):
    wait = int(round(cfg.wait_s * 1000))
    transfer = int(round(cfg.transfer_s * 1000))
    start, trial = 0, 0
    while start + wait <= end_ms:
        log.trial_starts.append(start)
        t = start + wait
        log.events.append(DecisionEvent(t, "feed", trial, "fixed_interval_elapsed", True))
        start, trial = t + transfer, trial + 1


def _run_mouth_open(log: DecisionLog, cfg: StrategyConfig, ann: SessionAnnotations, end_ms: int):
    opens = [e.start_ms for e in ann.of_kind(cfg.seat, "mouth_open")]
    if not opens:
        raise MissingMouthEvents(f"seat {cfg.seat} of {ann.session_id} has no mouth_open events")
    transfer = int(round(cfg.transfer_s * 1000))
    start, trial = 0, 0
    while start <= end_ms:
        nxt = next((t for t in opens if t >= start), None)
        log.trial_starts.append(start)
        log.events.append(DecisionEvent(start, "prompt", trial, "trial_start", prompt=cfg.prompt_text))
        if nxt is None or nxt > end_ms:
            break
        log.events.append(DecisionEvent(nxt, "feed", trial, "mouth_open", True))
        start, trial = nxt + transfer, trial + 1


def _run_learned(log: DecisionLog, cfg: StrategyConfig, model: TrainedModel,
                 streams: Mapping[int, FeatureStream], ann: SessionAnnotations, end_ms: int):
    spec = model.spec
    seat = cfg.seat
    left, right = left_right(seat)
    st = streams[seat]
    if st.fps != cfg.fps:
        raise InvalidConfig(f"stream at {st.fps} fps, strategy expects {cfg.fps}")
    n = int(round(cfg.window_k_s * cfg.fps))
    if n != spec.n_frames:
        raise InvalidConfig(f"model expects {spec.n_frames} frames per window, replay builds {n}")
    social = {s: streams[s].social() for s in (seat, left, right)}
    period = int(round(cfg.sample_period_s * 1000))
    k_ms = int(round(cfg.window_k_s * 1000))
    transfer = int(round(cfg.transfer_s * 1000))
    completions: list[int] = []
    busy_until, trial = 0, 0
    log.trial_starts.append(0)
    tick = period
    while tick <= end_ms:
        if cfg.suppress_during_transfer and tick < busy_until:
            tick += period
            continue
        stop = int(np.searchsorted(st.t_ms, tick, side="left"))
        if tick < k_ms or stop < n or st.t_ms[stop - n] < tick - k_ms - st.period_ms:
            tick += period  # buffer does not yet hold a full window
            continue
        i = stop - n
        b = replay_bite_features(completions, st.t_ms[i:stop], cfg.time_rescale_factor)
        U = np.concatenate([social[seat][i:stop],
                            scale_bite_features(b, spec.gamma).astype(np.float32)], axis=1)
        w = LabeledWindow(ann.session_id, seat, tick, 0, U, social[left][i:stop], social[right][i:stop])
        drop = [g for g in FEATURE_GROUPS if g not in spec.features]
        if drop:
            w = ablate([w], drop, spec.gamma)[0]
        score = float(predict_scores(model, [w])[0])
        if score >= cfg.threshold:
            log.events.append(DecisionEvent(tick, "feed", trial, "model_score_above_threshold",
                                            True, score))
            done = tick + transfer
            completions.append(done)
            busy_until = done
            trial += 1
            log.trial_starts.append(done)
        else:
            log.events.append(DecisionEvent(tick, "tick", trial, "model_score_below_threshold",
                                            False, score))
        tick += period
    if len(log.trial_starts) > len(log.feeds()):
        log.trial_starts = log.trial_starts[:len(log.feeds()) + 1]


def run_strategy(annotations: SessionAnnotations, streams: Mapping[int, FeatureStream] | None,
                 cfg: StrategyConfig, model: TrainedModel | None = None) -> DecisionLog:
    """Replay one strategy over a session and log every decision."""
    log = DecisionLog(annotations.session_id, cfg.strategy, cfg.seat)
    end_ms = annotations.duration_ms
    if cfg.strategy == "fixed_interval":
        _run_fixed(log, cfg, end_ms)
    elif cfg.strategy == "mouth_open":
        _run_mouth_open(log, cfg, annotations, end_ms)
    else:
        if model is None:
            raise MissingModel("the learned strategy needs a trained model")
        if streams is None:
            raise InvalidConfig("the learned strategy needs feature streams")
        _run_learned(log, cfg, model, streams, annotations, end_ms)
    return log

import json

import numpy as np
import pytest

from bitetiming.annotations import AnnotationEvent as Ev
from bitetiming.errors import InvalidConfig, MissingModel, MissingMouthEvents, NonPositiveResult
from bitetiming.models import ModelSpec, build_model
from bitetiming.simulator import (RobotTimingParams, StrategyConfig, fixed_interval_wait, read_jsonl,
                                  replay_bite_features, run_strategy)
from conftest import make_session


def test_fixed_interval_wait():
    assert fixed_interval_wait(RobotTimingParams(9.9, 5, 5)) == 44.5
    assert fixed_interval_wait(RobotTimingParams(9.9, 1, 0)) == 9.9
    assert fixed_interval_wait(RobotTimingParams(9.9, 2, 3)) == pytest.approx(16.8)
    with pytest.raises(NonPositiveResult):
        fixed_interval_wait(RobotTimingParams(1.0, 1, 5))


def test_fixed_schedule():
    log = run_strategy(make_session({}, 200_000), None,
                       StrategyConfig("fixed_interval", fixed_wait_s=44.5, transfer_s=0))
    assert log.feed_times_s() == [44.5, 89.0, 133.5, 178.0]


def test_fixed_gaps_include_transfer():
    log = run_strategy(make_session({}, 600_000), None, StrategyConfig("fixed_interval"))
    gaps = np.diff(log.feed_times_s())
    assert set(np.round(gaps, 9)) == {53.5}
    assert set(log.waits_s()) == {44.5}


def test_mouth_open_schedule():
    ann = make_session({1: [Ev("mouth_open", "none", 12_000, 13_000),
                            Ev("mouth_open", "none", 80_000, 81_000)]}, 200_000)
    log = run_strategy(ann, None, StrategyConfig("mouth_open"))
    assert log.feed_times_s() == [12.0, 80.0]
    prompts = [e.t_ms for e in log.events if e.kind == "prompt"]
    assert prompts[:2] == [0, 21_000]
    for f in log.feeds():
        assert max(p for p in prompts if p <= f.t_ms) <= f.t_ms
    with pytest.raises(MissingMouthEvents):
        run_strategy(make_session({}, 200_000), None, StrategyConfig("mouth_open"))


def test_learned_needs_model(syn7):
    ann, streams = syn7
    with pytest.raises(MissingModel):
        run_strategy(ann, streams, StrategyConfig("learned"))


def test_learned_always_feed_stub(syn7):
    ann, streams = syn7
    stub = build_model(ModelSpec("always_feed"))
    log = run_strategy(ann, streams, StrategyConfig("learned"), stub)
    feeds = log.feed_times_s()
    assert feeds[0] == 6.0
    # with transfer 9 s and a 3 s cadence, ticks inside a transfer are skipped
    assert feeds[1] == 15.0
    assert all(b > a for a, b in zip(feeds, feeds[1:]))
    assert all(f.model_score >= 0.5 for f in log.feeds())


def test_learned_ticks_respect_buffer(syn7):
    ann, streams = syn7

    class Spy:
        spec = ModelSpec("triplet_sonnet")
    model = build_model(ModelSpec("triplet_sonnet"))
    log = run_strategy(ann, streams, StrategyConfig("learned", threshold=1.1), model)
    ticks = [e.t_ms for e in log.events]
    assert ticks[0] == 6000 and not log.feeds()
    assert np.all(np.diff(ticks) == 3000)


def test_replay_bite_clock():
    b = replay_bite_features([10_000, 40_000], [5_000, 10_000, 45_000], 5.0)
    np.testing.assert_allclose(b, [[1.0, 0], [0.0, 1], [1.0, 2]])


def test_replay_is_byte_identical(syn7, tmp_path):
    ann, streams = syn7
    model = build_model(ModelSpec("couplet_sonnet", seed=4))
    cfg = StrategyConfig("learned", threshold=0.5)
    a = run_strategy(ann, streams, cfg, model).to_jsonl()
    b = run_strategy(ann, streams, cfg, build_model(ModelSpec("couplet_sonnet", seed=4))).to_jsonl()
    assert a == b
    log = run_strategy(ann, streams, cfg, model)
    p, s = log.write(tmp_path)
    recs = read_jsonl(p)
    assert recs and all(r["schema_version"] == 1 for r in recs)
    assert s.read_text().splitlines()[0].startswith("session_id,strategy,seat,feeds")


def test_strategy_config_validation():
    for kw in ({"strategy": "random"}, {"sample_period_s": 7}, {"sample_period_s": 0},
               {"seat": 4}, {"fixed_wait_s": -1}, {"time_rescale_factor": 0}):
        with pytest.raises(InvalidConfig):
            StrategyConfig(**kw)

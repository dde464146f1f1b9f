import json

import numpy as np
import pytest

from bitetiming.analytics import (ALL, Summary, annotation_stats, build_report, eating_rate, emit_report,
                                  gap_stats, plot_data, read_report)
from bitetiming.annotations import AnnotationEvent as Ev
from bitetiming.errors import IOFailure, NoEvents, UnknownKind
from conftest import lift, make_session, to_mouth


@pytest.fixture
def toy():
    # five events on seat 1, hand-computed expectations below
    return make_session({1: [lift(10_000), to_mouth(11_000, dur=800),
                             lift(40_000), to_mouth(41_500, dur=1000), lift(70_000)]}, 180_000)


def test_toy_counts_and_durations(toy):
    rep = annotation_stats(toy)
    assert rep.counts == {("food_lifted", "fork"): 3, ("food_to_mouth", "fork"): 2}
    assert rep.total == 5
    d = rep.durations[("food_to_mouth", ALL)]
    assert d.n == 2
    assert d.mean == pytest.approx(0.9, abs=1e-12)
    assert d.std == pytest.approx(0.1, abs=1e-12)
    assert ("food_lifted", ALL) not in rep.durations


def test_toy_gaps(toy):
    assert gap_stats(toy, "food_lifted", "food_lifted") == Summary(30.0, 0.0, 2)
    g = gap_stats(toy, "food_lifted", "food_to_mouth")
    assert (g.mean, g.std, g.n) == (1.25, 0.25, 2)
    assert gap_stats(toy, "food_lifted", "food_lifted", value="spoon") is None
    with pytest.raises(UnknownKind):
        gap_stats(toy, "food_lifted", "bite")


def test_toy_eating_rate(toy):
    r = eating_rate(toy)
    assert list(r) == [1]
    np.testing.assert_array_equal(r[1], [2, 0, 0])
    np.testing.assert_array_equal(eating_rate(toy, normalize=True)[1], [1, 0, 0])


def test_single_event_has_no_gap():
    s = make_session({2: [lift(5_000)]})
    assert gap_stats(s, "food_lifted", "food_lifted") is None


def test_transition_values_must_match():
    s = make_session({1: [lift(1_000, "spoon"), to_mouth(2_000, "fork")]})
    assert gap_stats(s, "food_lifted", "food_to_mouth") is None


def test_gap_across_disruption_skipped():
    s = make_session({1: [lift(10_000), lift(40_000), lift(70_000)],
                      2: [Ev("disruption", "light_off", 50_000, 55_000)]})
    assert gap_stats(s, "food_lifted", "food_lifted") == Summary(30.0, 0.0, 1)


def test_flat_rate():
    s = make_session({1: [to_mouth(60_000 * i + 5_000) for i in range(10)]}, 600_000)
    np.testing.assert_array_equal(eating_rate(s)[1], np.ones(10))
    np.testing.assert_allclose(eating_rate(s, normalize=True)[1], np.full(10, 0.1))


def test_spike_rate_and_normalization():
    s = make_session({3: [to_mouth(121_000 + 1000 * i) for i in range(7)] + [to_mouth(300_000)]}, 400_000)
    r = eating_rate(s, seat=3)[3]
    np.testing.assert_array_equal(r, [0, 0, 7, 0, 0, 1, 0])
    assert eating_rate(s, normalize=True)[3].sum() == pytest.approx(1.0)


def test_no_events():
    with pytest.raises(NoEvents):
        eating_rate(make_session({1: [lift(1000)]}))
    with pytest.raises(NoEvents):
        eating_rate(make_session({1: [to_mouth(1000)]}), seat=2)


def test_emit_read_round_trip(toy, tmp_path):
    rep = build_report([toy])
    paths = emit_report(rep, tmp_path)
    names = {p.name for p in paths}
    assert {"gaps.csv", "stats.json", "eating_rate.png", "eating_rate.csv"} <= names
    back = read_report(tmp_path)
    assert back.counts == rep.counts
    assert back.durations == rep.durations
    assert set(back.gaps) == set(rep.gaps)
    for k, v in rep.gaps.items():
        if v is None:
            assert back.gaps[k] is None
        else:
            assert back.gaps[k].mean == pytest.approx(v.mean) and back.gaps[k].n == v.n
    assert plot_data(back) == plot_data(rep)
    js = json.loads((tmp_path / "stats.json").read_text())
    assert js["rates"] == [[2.0, 0.0, 0.0]]


def test_emit_is_deterministic(toy, tmp_path):
    rep = build_report([toy])
    emit_report(rep, tmp_path / "a", ("csv", "json"))
    emit_report(rep, tmp_path / "b", ("csv", "json"))
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_emit_bad_format(toy, tmp_path):
    with pytest.raises(IOFailure):
        emit_report(build_report([toy]), tmp_path, ("xlsx",))

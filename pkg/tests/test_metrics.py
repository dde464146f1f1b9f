import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitetiming.errors import EmptyInput, LengthMismatch
from bitetiming.metrics import COLUMNS, compute_metrics, mean_metrics, metrics_from_confusion
from oracles import brute_metrics

binary = st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200)


def test_all_ones_example():
    m = compute_metrics([1, 1, 1, 1], [1, 1, 1, 0])
    assert (m.accuracy, m.precision, m.recall) == (0.75, 0.75, 1.0)
    assert m.f1 == pytest.approx(6 / 7) and m.nmcc == 0.5


def test_perfect_prediction():
    y = [0, 1, 1, 0, 1]
    assert compute_metrics(y, y).row() == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_confusion_example():
    m = metrics_from_confusion(3, 1, 1, 3)
    assert m.mcc == pytest.approx(0.5) and m.nmcc == pytest.approx(0.75)


def test_degenerate_denominators():
    m = compute_metrics([0, 0, 0], [0, 0, 0])
    assert (m.precision, m.recall, m.f1, m.nmcc) == (0.0, 0.0, 0.0, 0.5)
    assert compute_metrics([0, 0], [1, 1]).nmcc == 0.5


def test_errors():
    with pytest.raises(LengthMismatch):
        compute_metrics([1, 0], [1])
    with pytest.raises(EmptyInput):
        compute_metrics([], [])


@settings(max_examples=300, deadline=None)
@given(binary)
def test_matches_brute_force(pairs):
    p, y = map(list, zip(*pairs))
    exp = brute_metrics(p, y)
    got = compute_metrics(p, y).row()
    assert got[:4] == exp[:4]
    assert abs(got[4] - exp[4]) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(binary)
def test_flip_symmetries(pairs):
    p, y = (np.array(v) for v in zip(*pairs))
    m = compute_metrics(p, y).nmcc
    assert compute_metrics(~p, ~y).nmcc == pytest.approx(m, abs=1e-12)
    assert compute_metrics(~p, y).nmcc == pytest.approx(1 - m, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=100).filter(lambda y: 0 < sum(y) < len(y)))
def test_always_feed_is_half(y):
    m = compute_metrics([1] * len(y), y)
    assert m.nmcc == 0.5 and m.recall == 1.0


def test_mean_is_unweighted():
    a, b = compute_metrics([1, 0], [1, 0]), compute_metrics([1, 1, 1, 1], [0, 0, 0, 1])
    m = mean_metrics([a, b])
    for got, x, z in zip(m.row(), a.row(), b.row()):
        assert got == pytest.approx((x + z) / 2)
    assert COLUMNS == ("Acc.", "Prec.", "Rec.", "F1", "nMCC")

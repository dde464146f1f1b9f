import dataclasses

import numpy as np
import pytest
import torch
from torch import nn

from bitetiming.errors import EmptyDataset, InvalidSpec, ShapeMismatch
from bitetiming.models import (ModelSpec, Prediction, as_tensors, build_model, fit_linear_sgd,
                               forward, forward_tcn, load_checkpoint, predict_scores,
                               save_checkpoint)
from bitetiming.training import train_step
from bitetiming.windows import LabeledWindow
from conftest import random_windows

NEURAL = ("triplet_sonnet", "couplet_sonnet", "triplet_tcn", "couplet_tcn")
SMALL = dict(filters=(4, 4, 4), head_widths=(8, 1), tcn_filters=6, tcn_dilations=(1, 2), tcn_stacks=1)


def test_parameter_parity():
    sonnet = build_model(ModelSpec("triplet_sonnet")).n_parameters
    tcn = build_model(ModelSpec("triplet_tcn", tcn_filters=50)).n_parameters
    assert abs(sonnet - tcn) / tcn <= 0.15
    assert build_model(ModelSpec("triplet_tcn")).metadata["tcn_filters"] == 50


@pytest.mark.parametrize("kw", [dict(filters=(0, 8)), dict(variant="lstm"), dict(gamma=0),
                                dict(head_widths=(16, 2)), dict(features=("speaking", "audio")),
                                dict(variant="couplet_sonnet", n_channels=3),
                                dict(interleave=(True,)), dict(k_seconds=0.4)])
def test_invalid_specs(kw):
    with pytest.raises(InvalidSpec):
        build_model(ModelSpec(**kw))


@pytest.mark.parametrize("variant", NEURAL)
def test_scores_in_range_and_deterministic(variant):
    m = build_model(ModelSpec(variant, **SMALL))
    ws = random_windows(5)
    a, b = predict_scores(m, ws), predict_scores(m, ws)
    assert ((a >= 0) & (a <= 1)).all()
    np.testing.assert_array_equal(a, b)
    # batch of one matches the batched row
    for i, w in enumerate(ws):
        assert forward(m, w).score == pytest.approx(a[i], abs=1e-6)


def test_triplet_tcn_input_width():
    m = build_model(ModelSpec("triplet_tcn", gamma=100))
    assert m.module.net.blocks[0].conv1.in_channels == 173 * 3 + 200
    m = build_model(ModelSpec("couplet_tcn", gamma=100))
    assert m.module.net.blocks[0].conv1.in_channels == 173 * 2 + 200


@pytest.mark.parametrize("variant", NEURAL)
def test_zero_final_layer_gives_half(variant):
    m = build_model(ModelSpec(variant, **SMALL))
    last = m.module.net.head[-1]
    nn.init.zeros_(last.weight)
    nn.init.zeros_(last.bias)
    np.testing.assert_array_equal(predict_scores(m, random_windows(4)), 0.5)


def test_always_feed_and_prediction():
    m = build_model(ModelSpec("always_feed"))
    assert (predict_scores(m, random_windows(3)) == 1.0).all()
    assert Prediction.from_score(0.5).decision == 1 and Prediction.from_score(0.4999).decision == 0


def test_shape_mismatch():
    m = build_model(ModelSpec("triplet_sonnet", **SMALL))
    w = random_windows(1, gamma=3)[0]
    with pytest.raises(ShapeMismatch):
        forward(m, w)
    with pytest.raises(InvalidSpec):
        forward_tcn(m, random_windows(1)[0])


@pytest.mark.parametrize("variant", ["couplet_sonnet", "couplet_tcn"])
def test_couplet_ignores_user_social_columns(variant):
    m = build_model(ModelSpec(variant, **SMALL))
    ws = random_windows(20, seed=1)
    r = np.random.default_rng(2)
    pert = [dataclasses.replace(w, U=np.concatenate([r.normal(size=(90, 173)) * 5, w.U[:, 173:]], 1)
                                .astype(np.float32)) for w in ws]
    np.testing.assert_array_equal(predict_scores(m, ws), predict_scores(m, pert))
    # but the bite columns and co-diner columns do matter
    bite = [dataclasses.replace(w, U=w.U + np.r_[np.zeros(173), np.ones(200)].astype(np.float32))
            for w in ws]
    assert not np.array_equal(predict_scores(m, ws), predict_scores(m, bite))


def test_couplet_accepts_missing_user_columns():
    spec = ModelSpec("couplet_sonnet", features=("speaking", "gaze_head", "body_face", "bite"), **SMALL)
    m = build_model(spec)
    assert m.module.channel_inputs(*as_tensors(spec, random_windows(2))[:3])[0].shape[-1] == 173


def test_interleave_mixes_codiner_into_user_channel():
    spec = ModelSpec("triplet_sonnet", **SMALL)
    m = build_model(spec)
    train_step(m, random_windows(8, seed=3))
    U, L, R, _ = as_tensors(spec, random_windows(2, seed=4))
    base = m.module.net.trunk([U, L, R])[0][0]
    moved = m.module.net.trunk([U, L + 0.5, R])[0][0]
    assert (moved - base).abs().max() > 0


def test_without_interleave_channels_stay_separate():
    spec = ModelSpec("triplet_sonnet", interleave=(False, False, False), **SMALL)
    m = build_model(spec)
    U, L, R, _ = as_tensors(spec, random_windows(2, seed=4))
    net = m.module.net
    for a, b in zip(net.trunk([U, L, R]), net.trunk([U, L + 0.5, R])):
        assert torch.equal(a[0], b[0])


def test_channels_do_not_share_weights():
    net = build_model(ModelSpec("triplet_sonnet")).module.net
    w = [blk[0].weight for blk in net.blocks[1]]
    assert w[0].data_ptr() != w[1].data_ptr()
    assert not torch.equal(w[0], w[1])


@pytest.mark.parametrize("variant", ["triplet_tcn", "couplet_tcn"])
def test_tcn_is_causal(variant):
    spec = ModelSpec(variant, **SMALL)
    m = build_model(spec)
    U, L, R, _ = as_tensors(spec, random_windows(2, seed=5))
    net = m.module
    x = torch.cat([U, L, R], 2) if variant == "triplet_tcn" else torch.cat([L, R, net.user_bite(U)], 2)
    tau = 40
    y = x.clone()
    y[:, tau + 1:] = 0
    a, b = net.net.sequence(x), net.net.sequence(y)
    torch.testing.assert_close(a[:, :, :tau + 1], b[:, :, :tau + 1], rtol=0, atol=0)
    assert not torch.equal(a[:, :, tau + 1:], b[:, :, tau + 1:])


def _loss_fn(m, U, L, R, y):
    return nn.BCEWithLogitsLoss()(m.module(U, L, R), y)


def gradient_check(seed=0, step=1e-4, fraction=0.01, min_samples=20):
    """Worst relative error between analytic and central-difference gradients
    over a random sample of parameters of a reduced-width float64 triplet model.

    ReLU and max-pool make the loss piecewise smooth. A sample whose step
    crosses a kink (left and right one-sided slopes disagree) says nothing
    about the gradient code and is redrawn; the number of redraws is returned.
    """
    spec = ModelSpec("triplet_sonnet", filters=(3, 4, 5), head_widths=(6, 1), gamma=2,
                     dtype="float64", seed=seed)
    m = build_model(spec)
    U, L, R, y = as_tensors(spec, random_windows(6, gamma=2, seed=6 + seed))
    net = m.module
    net.train()
    net.zero_grad()
    base = _loss_fn(m, U, L, R, y)
    base.backward()
    f0 = base.item()
    r = np.random.default_rng(seed)
    params = [p for p in net.parameters() if p.requires_grad]
    sizes = np.array([p.numel() for p in params])
    want = max(min_samples, int(sizes.sum() * fraction))
    worst, checked, kinks = 0.0, 0, 0
    while checked < want:
        j = r.choice(len(params), p=sizes / sizes.sum())
        p = params[j]
        i = r.integers(p.numel())
        flat = p.data.view(-1)
        old = flat[i].item()
        with torch.no_grad():
            flat[i] = old + step
            up = _loss_fn(m, U, L, R, y).item()
            flat[i] = old - step
            down = _loss_fn(m, U, L, R, y).item()
            flat[i] = old
        right, left = (up - f0) / step, (f0 - down) / step
        if abs(right - left) > 1e-3 * max(abs(right), abs(left), 1e-6) + 1e-6:
            kinks += 1
            continue
        num = (up - down) / (2 * step)
        ana = p.grad.view(-1)[i].item()
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
        checked += 1
    return worst, checked, kinks


def test_gradients_match_finite_differences():
    worst, checked, kinks = gradient_check()
    assert worst < 1e-3
    assert kinks < checked


def test_checkpoint_round_trip(tmp_path):
    for variant in NEURAL:
        m = build_model(ModelSpec(variant, **SMALL, seed=3))
        train_step(m, random_windows(8, seed=1))
        m.module.fit_normalization(as_tensors(m.spec, random_windows(8, seed=9))[0])
        save_checkpoint(m, tmp_path / f"{variant}.pt")
        back = load_checkpoint(tmp_path / f"{variant}.pt")
        ws = random_windows(4, seed=2)
        np.testing.assert_array_equal(predict_scores(m, ws), predict_scores(back, ws))
        assert back.spec == m.spec


def test_seeded_build_is_reproducible():
    a = build_model(ModelSpec("triplet_sonnet", seed=5)).module.state_dict()
    b = build_model(ModelSpec("triplet_sonnet", seed=5)).module.state_dict()
    c = build_model(ModelSpec("triplet_sonnet", seed=6)).module.state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def _toy(n, separable=True, seed=0):
    r = np.random.default_rng(seed)
    ws = []
    for i in range(n):
        y = i % 2
        U = r.normal(size=(90, 373)).astype(np.float32)
        if separable:
            U[:, 0] += 4 * (2 * y - 1)
        ws.append(LabeledWindow("T", 1, i, y, U, np.zeros((90, 173), np.float32),
                                np.zeros((90, 173), np.float32)))
    return ws


def test_linear_sgd_separable():
    ws = _toy(40)
    m = fit_linear_sgd(ws, ModelSpec("linear_sgd"))
    pred = predict_scores(m, ws) >= 0.5
    assert (pred == np.array([w.label for w in ws])).all()


def test_linear_sgd_single_class_and_empty():
    ws = [dataclasses.replace(w, label=1) for w in _toy(6)]
    m = fit_linear_sgd(ws)
    assert (predict_scores(m, _toy(4, seed=1)) >= 0.5).all()
    with pytest.raises(EmptyDataset):
        fit_linear_sgd([])


def test_linear_sgd_deterministic_but_order_sensitive(tmp_path):
    ws = _toy(60, separable=False)
    a = fit_linear_sgd(ws, ModelSpec("linear_sgd", seed=1))
    b = fit_linear_sgd(ws, ModelSpec("linear_sgd", seed=1))
    np.testing.assert_array_equal(a.linear.coef, b.linear.coef)
    c = fit_linear_sgd(ws[::-1], ModelSpec("linear_sgd", seed=1, sgd_shuffle=False))
    d = fit_linear_sgd(ws, ModelSpec("linear_sgd", seed=1, sgd_shuffle=False))
    assert not np.allclose(c.linear.coef, d.linear.coef)
    save_checkpoint(a, tmp_path / "lin.pt")
    np.testing.assert_array_equal(predict_scores(load_checkpoint(tmp_path / "lin.pt"), ws),
                                  predict_scores(a, ws))

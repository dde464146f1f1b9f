"""Mini-batch training with early stopping on validation loss."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import DivergedLoss, EmptySplit, InvalidConfig
from .models import ModelSpec, TrainedModel, as_tensors, build_model, fit_linear_sgd
from .windows import LabeledWindow

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    early_stop_patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("learning rate, batch size and max_epochs must be positive")
        if self.early_stop_patience < 1:
            raise InvalidConfig("patience must be at least 1")
        if self.optimizer != "adam":
            raise InvalidConfig("only the adam optimizer is supported")

    def as_dict(self) -> dict:
        return asdict(self)


def _epoch_loss(net, loss_fn, tensors, batch_size) -> float:
    U, L, R, y = tensors
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(y), batch_size):
            sl = slice(i, i + batch_size)
            total += loss_fn(net(U[sl], L[sl], R[sl]), y[sl]).item() * len(y[sl])
    return total / len(y)


def train(spec: ModelSpec, train_windows: Sequence[LabeledWindow],
          val_windows: Sequence[LabeledWindow], cfg: TrainConfig = TrainConfig(),
          model: TrainedModel | None = None, fit_normalization: bool = True):
    """Fit ``spec`` and return ``(model, history)``.

    Neural variants use Adam on binary cross-entropy, stop once validation
    loss has not improved for ``cfg.early_stop_patience`` epochs, and keep
    the weights of the best validation epoch. The user's bite columns are
    standardized with training-split statistics unless ``fit_normalization``
    is False.
    """
    if len(train_windows) == 0:
        raise EmptySplit("empty training split")
    if spec.variant == "always_feed":
        return build_model(spec), {"train_loss": [], "val_loss": [], "best_epoch": None}
    if spec.variant == "linear_sgd":
        return fit_linear_sgd(train_windows, spec), {"train_loss": [], "val_loss": [],
                                                      "best_epoch": None}
    if len(val_windows) == 0:
        raise EmptySplit("empty validation split")

    model = model or build_model(spec)
    net = model.module
    tr = as_tensors(spec, train_windows)
    va = as_tensors(spec, val_windows)
    if fit_normalization:
        net.fit_normalization(tr[0])
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()

    history = {"train_loss": [], "val_loss": [], "best_epoch": None, "stopped_early": False}
    best, best_state, since_best = math.inf, None, 0
    n = len(tr[3])
    for epoch in range(cfg.max_epochs):
        net.train()
        order = torch.randperm(n, generator=gen)
        running = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs more than one sample
            opt.zero_grad()
            loss = loss_fn(net(tr[0][idx], tr[1][idx], tr[2][idx]), tr[3][idx])
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite training loss at epoch {epoch + 1}")
            loss.backward()
            opt.step()
            running += loss.item() * len(idx)
        net.eval()
        val = _epoch_loss(net, loss_fn, va, cfg.batch_size)
        if not math.isfinite(val):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch + 1}")
        history["train_loss"].append(running / n)
        history["val_loss"].append(val)
        log.debug("epoch %d train %.4f val %.4f", epoch + 1, running / n, val)
        if val < best:
            best, since_best = val, 0
            best_state = copy.deepcopy(net.state_dict())
            history["best_epoch"] = epoch + 1
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                history["stopped_early"] = True
                break

    net.load_state_dict(best_state)
    net.eval()
    model.metadata.update(epochs_run=len(history["val_loss"]), best_val_loss=best,
                          seed=spec.seed, train_seed=cfg.seed)
    return model, history


def train_step(model: TrainedModel, windows: Sequence[LabeledWindow], lr: float = 1e-4) -> float:
    """One Adam step on ``windows`` as a single batch; returns the loss."""
    net = model.module
    U, L, R, y = as_tensors(model.spec, windows)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    net.train()
    opt.zero_grad()
    loss = nn.BCEWithLogitsLoss()(net(U, L, R), y)
    loss.backward()
    opt.step()
    net.eval()
    return float(loss.item())


def split_validation(sessions: dict[str, list[LabeledWindow]], fraction: float = 0.2):
    """Hold out the last ``fraction`` of each session's windows (by anchor time)."""
    train_w, val_w = [], []
    for sid in sorted(sessions):
        ws = sorted(sessions[sid], key=lambda w: (w.anchor_ms, w.seat, w.label))
        n_val = int(round(len(ws) * fraction))
        if len(ws) >= 2:
            n_val = max(1, n_val)
        cut = len(ws) - n_val
        train_w += ws[:cut]
        val_w += ws[cut:]
    return train_w, val_w

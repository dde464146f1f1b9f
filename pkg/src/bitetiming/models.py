"""Bite-timing classifiers behind one interface.

Variants
--------
``triplet_sonnet`` / ``couplet_sonnet``
    One temporal-convolution channel per diner. After every block each
    channel is concatenated with its adjacent channels' activations, mixed by
    a 1x1 convolution and max-pooled. Channels have separate weights. The
    couplet variant has only the two co-diner channels and appends the
    user's (gamma-tiled) bite features of the last frame to the flattened
    vector before the dense head.
``triplet_tcn`` / ``couplet_tcn``
    A dilated causal TCN over per-timestep concatenated features.
``linear_sgd``
    Hinge-loss linear classifier on flattened windows, fitted by SGD.
``always_feed``
    Constant score 1.
"""
from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import EmptyDataset, InvalidSpec, ShapeMismatch
from .windows import FEATURE_GROUPS, LabeledWindow, channel_width, column_slices, stack

VARIANTS = ("triplet_sonnet", "couplet_sonnet", "triplet_tcn", "couplet_tcn",
            "linear_sgd", "always_feed")
CHECKPOINT_VERSION = 1
THRESHOLD = 0.5


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "triplet_sonnet"
    features: tuple[str, ...] = FEATURE_GROUPS
    gamma: int = 100
    k_seconds: float = 6.0
    fps: int = 15
    n_channels: int | None = None
    filters: tuple[int, ...] = (32, 48, 64)
    kernel_size: int = 5
    interleave: tuple[bool, ...] | None = None   # per block; None = every block
    pool_size: int = 3
    head_widths: tuple[int, ...] = (128, 1)
    tcn_filters: int = 50
    tcn_kernel_size: int = 3
    tcn_dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    tcn_stacks: int = 2
    sgd_alpha: float = 1e-4
    sgd_epochs: int = 20
    sgd_shuffle: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("features", "filters", "head_widths", "tcn_dilations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.interleave is not None:
            object.__setattr__(self, "interleave", tuple(bool(x) for x in self.interleave))

    @property
    def is_couplet(self) -> bool:
        return self.variant.startswith("couplet")

    @property
    def n_frames(self) -> int:
        return int(round(self.k_seconds * self.fps))

    @property
    def user_width(self) -> int:
        return channel_width(self.features, self.gamma, user=True)

    @property
    def codiner_width(self) -> int:
        return channel_width(self.features, self.gamma, user=False)

    @property
    def bite_slice(self) -> slice | None:
        return column_slices(self.features, self.gamma, user=True).get("bite")

    @property
    def social_channels(self) -> int:
        return 2 if self.is_couplet else 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def validate_spec(spec: ModelSpec) -> None:
    if spec.variant not in VARIANTS:
        raise InvalidSpec(f"unknown variant {spec.variant!r}")
    if spec.n_channels is not None and spec.variant.endswith(("sonnet", "tcn")):
        if spec.n_channels != spec.social_channels:
            raise InvalidSpec(f"{spec.variant} needs exactly {spec.social_channels} channels, "
                              f"got {spec.n_channels}")
    bad = set(spec.features) - set(FEATURE_GROUPS)
    if bad:
        raise InvalidSpec(f"unknown feature groups {sorted(bad)}")
    if spec.gamma < 1 or int(spec.gamma) != spec.gamma:
        raise InvalidSpec("gamma must be a positive integer")
    if not spec.filters or any(f <= 0 for f in spec.filters):
        raise InvalidSpec("filter counts must be positive")
    if spec.kernel_size < 1 or spec.pool_size < 1 or spec.tcn_kernel_size < 1:
        raise InvalidSpec("kernel and pool sizes must be positive")
    if spec.tcn_filters <= 0 or spec.tcn_stacks < 1 or any(d < 1 for d in spec.tcn_dilations):
        raise InvalidSpec("TCN filters, stacks and dilations must be positive")
    if len(spec.head_widths) < 1 or spec.head_widths[-1] != 1 or any(w <= 0 for w in spec.head_widths):
        raise InvalidSpec("head widths must be positive and end with a single output unit")
    if spec.interleave is not None and len(spec.interleave) != len(spec.filters):
        raise InvalidSpec("one interleave flag per convolution block")
    if spec.dtype not in ("float32", "float64"):
        raise InvalidSpec("dtype must be float32 or float64")
    if spec.variant.endswith(("sonnet", "tcn")):
        if spec.codiner_width == 0:
            raise InvalidSpec("co-diner channels have no features left")
        if spec.variant == "couplet_tcn" and spec.codiner_width + _bite_width(spec) == 0:
            raise InvalidSpec("no input features")
    t = spec.n_frames
    if spec.variant.endswith("sonnet"):
        for _ in spec.filters:
            t //= spec.pool_size
        if t < 1:
            raise InvalidSpec("window too short for the pooling stages")


def _bite_width(spec: ModelSpec) -> int:
    sl = spec.bite_slice
    return 0 if sl is None else sl.stop - sl.start


def _dense_head(n_in: int, widths: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for w in widths[:-1]:
        layers += [nn.Linear(n_in, w), nn.ReLU()]
        n_in = w
    layers.append(nn.Linear(n_in, widths[-1]))
    return nn.Sequential(*layers)


class SoNNET(nn.Module):
    """Interleaved multi-channel temporal CNN.

    ``forward`` takes one (batch, time, features) tensor per channel, plus an
    optional (batch, n) vector appended before the dense head.
    """

    def __init__(self, in_widths: Sequence[int], filters=(32, 48, 64), kernel_size=5,
                 interleave=None, pool_size=3, n_time=90, n_extra=0, head_widths=(128, 1)):
        super().__init__()
        n = len(in_widths)
        interleave = interleave or (True,) * len(filters)
        self.n_channels = n
        self.interleave = tuple(interleave)
        self.blocks = nn.ModuleList()
        self.mixers = nn.ModuleList()
        widths = list(in_widths)
        t = n_time
        for f, mix in zip(filters, self.interleave):
            self.blocks.append(nn.ModuleList(
                nn.Sequential(nn.Conv1d(w, f, kernel_size, padding=kernel_size // 2),
                              nn.BatchNorm1d(f), nn.ReLU())
                for w in widths))
            if mix and n > 1:
                self.mixers.append(nn.ModuleList(
                    nn.Sequential(nn.Conv1d(f * n, f, 1), nn.BatchNorm1d(f), nn.ReLU())
                    for _ in range(n)))
            else:
                self.mixers.append(None)
            widths = [f] * n
            t //= pool_size
        self.pool = nn.MaxPool1d(pool_size)
        self.n_flat = n * filters[-1] * t
        self.head = _dense_head(self.n_flat + n_extra, head_widths)

    @staticmethod
    def _neighbours(j: int, n: int) -> list[int]:
        # channel j first, then every other channel in cyclic order
        return [j] + [(j + d) % n for d in range(1, n)]

    def trunk(self, xs: Sequence[torch.Tensor]) -> list[list[torch.Tensor]]:
        """Per-block, per-channel activations after interleaving and pooling."""
        hs = [x.transpose(1, 2) for x in xs]
        out = []
        for convs, mixers in zip(self.blocks, self.mixers):
            hs = [conv(h) for conv, h in zip(convs, hs)]
            if mixers is not None:
                n = len(hs)
                hs = [mixers[j](torch.cat([hs[i] for i in self._neighbours(j, n)], dim=1))
                      for j in range(n)]
            hs = [self.pool(h) for h in hs]
            out.append(hs)
        return out

    def forward(self, xs: Sequence[torch.Tensor], extra: torch.Tensor | None = None) -> torch.Tensor:
        hs = self.trunk(xs)[-1]
        z = torch.cat([h.flatten(1) for h in hs], dim=1)
        if extra is not None:
            z = torch.cat([z, extra], dim=1)
        return self.head(z).squeeze(-1)


class CausalConv1d(nn.Conv1d):
    def __init__(self, c_in, c_out, kernel_size, dilation=1):
        super().__init__(c_in, c_out, kernel_size, dilation=dilation)
        self.left_pad = (kernel_size - 1) * dilation

    def forward(self, x):
        return super().forward(nn.functional.pad(x, (self.left_pad, 0)))


class ResidualBlock(nn.Module):
    def __init__(self, c_in, c_out, kernel_size, dilation):
        super().__init__()
        self.conv1 = CausalConv1d(c_in, c_out, kernel_size, dilation)
        self.conv2 = CausalConv1d(c_out, c_out, kernel_size, dilation)
        self.shortcut = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x):
        h = torch.relu(self.conv1(x))
        h = torch.relu(self.conv2(h))
        return torch.relu(self.shortcut(x) + h), h


class TCN(nn.Module):
    """Dilated causal TCN with residual and skip connections; the skip sum at
    the final time step feeds the dense head."""

    def __init__(self, in_width, n_filters=50, kernel_size=3, dilations=(1, 2, 4, 8, 16, 32),
                 stacks=1, head_widths=(128, 1)):
        super().__init__()
        blocks = []
        c = in_width
        for _ in range(stacks):
            for d in dilations:
                blocks.append(ResidualBlock(c, n_filters, kernel_size, d))
                c = n_filters
        self.blocks = nn.ModuleList(blocks)
        self.head = _dense_head(n_filters, head_widths)

    def sequence(self, x: torch.Tensor) -> torch.Tensor:
        """Per-timestep representation, (batch, filters, time)."""
        h = x.transpose(1, 2)
        skip = 0
        for blk in self.blocks:
            h, s = blk(h)
            skip = skip + s
        return torch.relu(skip)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.sequence(x)[:, :, -1]).squeeze(-1)


class BiteTimingNet(nn.Module):
    """Adapts (U, L, R) window tensors to one of the architectures above."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.bite = spec.bite_slice
        nb = _bite_width(spec)
        # bite columns are unbounded (seconds, counts); they are standardized with
        # statistics fitted on the training split. Other features pass through.
        self.register_buffer("bite_shift", torch.zeros(nb))
        self.register_buffer("bite_scale", torch.ones(nb))
        if spec.variant == "triplet_sonnet":
            self.net = SoNNET([spec.user_width, spec.codiner_width, spec.codiner_width],
                              spec.filters, spec.kernel_size, spec.interleave, spec.pool_size,
                              spec.n_frames, 0, spec.head_widths)
        elif spec.variant == "couplet_sonnet":
            self.net = SoNNET([spec.codiner_width, spec.codiner_width], spec.filters,
                              spec.kernel_size, spec.interleave, spec.pool_size, spec.n_frames,
                              nb, spec.head_widths)
        elif spec.variant == "triplet_tcn":
            self.net = TCN(spec.user_width + 2 * spec.codiner_width, spec.tcn_filters,
                           spec.tcn_kernel_size, spec.tcn_dilations, spec.tcn_stacks,
                           spec.head_widths)
        elif spec.variant == "couplet_tcn":
            self.net = TCN(nb + 2 * spec.codiner_width, spec.tcn_filters, spec.tcn_kernel_size,
                           spec.tcn_dilations, spec.tcn_stacks, spec.head_widths)
        else:
            raise InvalidSpec(f"{spec.variant} is not a neural variant")

    def fit_normalization(self, U: torch.Tensor) -> None:
        """Set the bite-column shift/scale to the mean/std of ``U``'s bite columns."""
        if self.bite is None:
            return
        flat = U[..., self.bite].reshape(-1, self.bite.stop - self.bite.start)
        std = flat.std(dim=0, unbiased=False)
        self.bite_shift.copy_(flat.mean(dim=0))
        self.bite_scale.copy_(torch.where(std > 1e-6, std, torch.ones_like(std)))

    def normalize(self, U: torch.Tensor) -> torch.Tensor:
        if self.bite is None:
            return U
        b = (U[..., self.bite] - self.bite_shift) / self.bite_scale
        return torch.cat([U[..., :self.bite.start], b, U[..., self.bite.stop:]], dim=-1)

    def user_bite(self, U: torch.Tensor) -> torch.Tensor:
        if self.bite is None:
            return U[..., :0]
        return U[..., self.bite]

    def channel_inputs(self, U, L, R) -> list[torch.Tensor]:
        if self.spec.variant == "triplet_sonnet":
            return [U, L, R]
        return [L, R]

    def forward(self, U, L, R) -> torch.Tensor:
        """Logits, shape (batch,)."""
        U = self.normalize(U)
        v = self.spec.variant
        if v == "triplet_sonnet":
            return self.net([U, L, R])
        if v == "couplet_sonnet":
            extra = self.user_bite(U)[:, -1, :] if self.bite is not None else None
            return self.net([L, R], extra)
        if v == "triplet_tcn":
            return self.net(torch.cat([U, L, R], dim=2))
        return self.net(torch.cat([L, R, self.user_bite(U)], dim=2))


class LinearSGD:
    """Linear hinge-loss classifier. Scores are the logistic of the margin."""

    def __init__(self, coef: np.ndarray | None = None, intercept: float = 0.0):
        self.coef = coef
        self.intercept = float(intercept)

    def decision(self, X: np.ndarray) -> np.ndarray:
        return X.astype(np.float64) @ self.coef + self.intercept


@dataclass
class Prediction:
    score: float
    decision: int

    @classmethod
    def from_score(cls, score: float) -> "Prediction":
        return cls(float(score), int(score >= THRESHOLD))


@dataclass
class TrainedModel:
    spec: ModelSpec
    module: BiteTimingNet | None = None
    linear: LinearSGD | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        if self.module is not None:
            return count_parameters(self.module)
        if self.linear is not None and self.linear.coef is not None:
            return self.linear.coef.size + 1
        return 0


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def torch_dtype(spec: ModelSpec):
    return torch.float64 if spec.dtype == "float64" else torch.float32


def build_model(spec: ModelSpec) -> TrainedModel:
    """Untrained model realizing ``spec``; weights are seeded by ``spec.seed``."""
    validate_spec(spec)
    meta = {"epochs_run": 0, "best_val_loss": None, "seed": spec.seed}
    if spec.variant.endswith("tcn"):
        meta["tcn_filters"] = spec.tcn_filters
    if spec.variant == "always_feed":
        return TrainedModel(spec, metadata=meta)
    if spec.variant == "linear_sgd":
        return TrainedModel(spec, linear=LinearSGD(), metadata=meta)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.seed)
        module = BiteTimingNet(spec).to(torch_dtype(spec))
    module.eval()
    return TrainedModel(spec, module=module, metadata=meta)


def _check_shapes(spec: ModelSpec, U, L, R):
    n = spec.n_frames
    want = [(n, spec.user_width), (n, spec.codiner_width), (n, spec.codiner_width)]
    for name, arr, (t, f) in zip("ULR", (U, L, R), want):
        if arr.shape[-2:] != (t, f):
            raise ShapeMismatch(f"{name} has shape {tuple(arr.shape[-2:])}, expected {(t, f)}")


def as_tensors(spec: ModelSpec, windows: Sequence[LabeledWindow]):
    U, L, R, y = stack(windows)
    _check_shapes(spec, U, L, R)
    dt = torch_dtype(spec)
    return (torch.from_numpy(U).to(dt), torch.from_numpy(L).to(dt), torch.from_numpy(R).to(dt),
            torch.from_numpy(y).to(dt))


def flatten_windows(windows: Sequence[LabeledWindow]) -> np.ndarray:
    return np.stack([np.concatenate([w.U.ravel(), w.L.ravel(), w.R.ravel()]) for w in windows])


def predict_logits(model: TrainedModel, windows: Sequence[LabeledWindow],
                   batch_size: int = 256) -> np.ndarray:
    spec = model.spec
    if len(windows) == 0:
        return np.zeros(0)
    if spec.variant == "always_feed":
        for w in windows:
            _check_shapes(spec, w.U, w.L, w.R)
        return np.full(len(windows), np.inf)
    if spec.variant == "linear_sgd":
        for w in windows:
            _check_shapes(spec, w.U, w.L, w.R)
        if model.linear.coef is None:
            return np.zeros(len(windows))
        return model.linear.decision(flatten_windows(windows))
    net = model.module
    net.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            U, L, R, _ = as_tensors(spec, windows[i:i + batch_size])
            out.append(net(U, L, R).double().numpy())
    return np.concatenate(out)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def predict_scores(model: TrainedModel, windows: Sequence[LabeledWindow]) -> np.ndarray:
    """Feeding-intent probabilities in [0, 1], one per window."""
    return sigmoid(predict_logits(model, windows))


def forward(model: TrainedModel, window: LabeledWindow) -> Prediction:
    return Prediction.from_score(float(predict_scores(model, [window])[0]))


def forward_tcn(model: TrainedModel, window: LabeledWindow) -> Prediction:
    if not model.spec.variant.endswith("tcn"):
        raise InvalidSpec(f"{model.spec.variant} is not a TCN")
    return forward(model, window)


def fit_linear_sgd(windows: Sequence[LabeledWindow], spec: ModelSpec | None = None) -> TrainedModel:
    """Hinge-loss, L2-regularized linear classifier trained by SGD.

    Deterministic for a fixed seed and data order. With ``sgd_shuffle`` the
    samples are reshuffled each epoch from the seed, so the result still
    depends on the order the windows were given in.
    """
    from sklearn.linear_model import SGDClassifier

    spec = spec or ModelSpec(variant="linear_sgd")
    if spec.variant != "linear_sgd":
        spec = replace(spec, variant="linear_sgd")
    if len(windows) == 0:
        raise EmptyDataset("no training windows")
    model = build_model(spec)
    for w in windows:
        _check_shapes(spec, w.U, w.L, w.R)
    X = flatten_windows(windows)
    y = np.array([w.label for w in windows])
    if len(np.unique(y)) == 1:
        # a single class: constant margin of that sign
        coef = np.zeros(X.shape[1])
        model.linear = LinearSGD(coef, 1.0 if y[0] == 1 else -1.0)
        model.metadata.update(epochs_run=0, constant=int(y[0]))
        return model
    clf = SGDClassifier(loss="hinge", penalty="l2", alpha=spec.sgd_alpha, max_iter=spec.sgd_epochs,
                        tol=None, shuffle=spec.sgd_shuffle, random_state=spec.seed)
    clf.fit(X, y)
    sign = 1.0 if clf.classes_[1] == 1 else -1.0
    model.linear = LinearSGD(sign * clf.coef_[0].astype(np.float64), sign * float(clf.intercept_[0]))
    model.metadata.update(epochs_run=int(clf.n_iter_))
    return model


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: TrainedModel, path) -> None:
    payload = {"format_version": CHECKPOINT_VERSION, "spec": model.spec.to_dict(),
               "metadata": model.metadata}
    if model.module is not None:
        payload["state_dict"] = model.module.state_dict()
    if model.linear is not None and model.linear.coef is not None:
        payload["linear"] = {"coef": torch.from_numpy(model.linear.coef),
                             "intercept": model.linear.intercept}
    torch.save(payload, path)


def load_checkpoint(path) -> TrainedModel:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidSpec(f"unsupported checkpoint version {payload.get('format_version')}")
    spec = ModelSpec.from_dict(payload["spec"])
    model = build_model(spec)
    model.metadata = dict(payload["metadata"])
    if "state_dict" in payload:
        model.module.load_state_dict(payload["state_dict"])
        model.module.eval()
    if "linear" in payload:
        lin = payload["linear"]
        model.linear = LinearSGD(lin["coef"].numpy().astype(np.float64), lin["intercept"])
    return model

import numpy as np
import pytest
import torch

from bitetiming.annotations import AnnotationEvent as Ev, SessionAnnotations, default_participants
from bitetiming.synthetic import SyntheticConfig, generate_synthetic_session

torch.set_num_threads(1)


def make_session(events_by_seat, duration_ms=600_000, sid="T01"):
    return SessionAnnotations(sid, default_participants(), duration_ms, events_by_seat)


def lift(t, value="fork"):
    return Ev("food_lifted", value, t, t + 400)


def to_mouth(t, value="fork", dur=900):
    return Ev("food_to_mouth", value, t, t + dur)


@pytest.fixture(scope="session")
def syn7():
    return generate_synthetic_session(SyntheticConfig(seed=7, n_sessions=1), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_windows(n, gamma=100, n_frames=90, seed=0, features_width=173, session="R00"):
    from bitetiming.windows import LabeledWindow
    r = np.random.default_rng(seed)
    out = []
    for i in range(n):
        U = np.concatenate([r.random((n_frames, features_width)),
                            np.tile(r.random((n_frames, 2)) * [30, 10], gamma)], axis=1)
        out.append(LabeledWindow(session, 1, 1000 * (i + 1), int(r.random() < 0.5),
                                 U.astype(np.float32),
                                 r.random((n_frames, features_width)).astype(np.float32),
                                 r.random((n_frames, features_width)).astype(np.float32)))
    return out


# acceptance outcomes: {criterion number: (status, title, details)}
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, details = ACCEPTANCE[number]
        info = ", ".join(f"{k}={v}" for k, v in details.items())
        terminalreporter.write_line(f"criterion {number:>4}: {status}  {title}  [{info}]")

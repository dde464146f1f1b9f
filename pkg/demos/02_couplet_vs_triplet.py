"""Leave-one-session-out comparison of a couplet and a triplet model.

The labels are tied to cues only the fed user shows, so the couplet model
(which cannot see the user's social signals) should trail the triplet one.
Takes about five minutes on one core.

Run:  python3 demos/02_couplet_vs_triplet.py
"""
from bitetiming.evaluation import loso_evaluate
from bitetiming.models import ModelSpec
from bitetiming.synthetic import SyntheticConfig, generate_synthetic_sessions
from bitetiming.training import TrainConfig
from bitetiming.windows import extract_windows, group_by_session

cfg = SyntheticConfig(seed=1, n_sessions=6, duration_s=480, coupling="user")
ws = []
for ann, streams in generate_synthetic_sessions(cfg):
    ws += extract_windows(streams, ann)
sessions = group_by_session(ws)
print({sid: len(v) for sid, v in sessions.items()})

train_cfg = TrainConfig(learning_rate=1e-3, max_epochs=30)
for variant in ("couplet_sonnet", "triplet_sonnet"):
    rep = loso_evaluate(ModelSpec(variant), sessions, train_cfg)
    print()
    print(variant)
    print(rep.to_csv())

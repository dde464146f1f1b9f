"""Replay a meal under the three feeding strategies and compare feed times.

Run:  python3 demos/03_replay_strategies.py
"""
import numpy as np

from bitetiming.models import ModelSpec
from bitetiming.simulator import RobotTimingParams, StrategyConfig, fixed_interval_wait, run_strategy
from bitetiming.synthetic import SyntheticConfig, generate_synthetic_session
from bitetiming.training import TrainConfig, split_validation, train
from bitetiming.windows import extract_windows, group_by_session

print("fixed wait:", fixed_interval_wait(RobotTimingParams(9.9, 5, 5)), "s")

train_ann, train_streams = generate_synthetic_session(SyntheticConfig(seed=5, duration_s=600), 0)
tr, va = split_validation(group_by_session(extract_windows(train_streams, train_ann)))
model, hist = train(ModelSpec("couplet_sonnet"), tr, va, TrainConfig(learning_rate=1e-3, max_epochs=10))
print("trained for", len(hist["val_loss"]), "epochs; best", hist["best_epoch"])

ann, streams = generate_synthetic_session(SyntheticConfig(seed=6, duration_s=300), 0)
lifts = [e.start_ms / 1000 for e in ann.of_kind(1, "food_lifted")]
print("user lifts (s):", np.round(lifts, 1))
for name in ("fixed_interval", "mouth_open", "learned"):
    log = run_strategy(ann, streams, StrategyConfig(name), model if name == "learned" else None)
    s = log.summary()
    print(f"{name:15s} feeds {s['feeds']:3d}  first {np.round(log.feed_times_s()[:5], 1)}")

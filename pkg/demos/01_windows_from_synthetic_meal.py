"""Generate one synthetic three-person meal and cut it into labeled windows.

Run:  python3 demos/01_windows_from_synthetic_meal.py
"""
import numpy as np

from bitetiming.analytics import annotation_stats, gap_stats
from bitetiming.synthetic import SyntheticConfig, generate_synthetic_session
from bitetiming.windows import column_slices, extract_windows, ExtractionReport

# %% a five minute meal, labels coupled to the co-diners' speaking turns
ann, streams = generate_synthetic_session(SyntheticConfig(seed=3, duration_s=300), 0)
print("session", ann.session_id, "lasting", ann.duration_ms / 1000, "s")
for seat in (1, 2, 3):
    print("  seat", seat, "lifts:", len(ann.of_kind(seat, "food_lifted")))

# %% the annotation tables
rep = annotation_stats(ann)
for (kind, value), n in rep.counts.items():
    print(f"  {kind:16s} {value:16s} {n}")
g = gap_stats(ann, "food_lifted", "food_lifted")
print("lift to lift: %.1f s ± %.1f (n=%d)" % (g.mean, g.std, g.n))

# %% windows: 6 s before each lift (positive), 6 s around each midpoint (negative)
report = ExtractionReport()
ws = extract_windows(streams, ann, report=report)
labels = np.array([w.label for w in ws])
print(len(ws), "windows,", labels.sum(), "positive; dropped:", report.drop_counts())

w = ws[0]
print("user window", w.U.shape, "co-diner windows", w.L.shape, w.R.shape)
for name, sl in column_slices().items():
    print(f"  {name:10s} columns {sl.start}..{sl.stop - 1}")

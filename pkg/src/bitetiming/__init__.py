"""Social bite-timing prediction for robot-assisted feeding.

Annotation and feature-stream data model, training-window construction,
interleaved multi-channel convolutional classifiers and baselines,
leave-one-session-out evaluation, dataset statistics and an offline replay
of bite-timing strategies.
"""
from .annotations import (AnnotationEvent, SessionAnnotations, parse_annotations,
                          serialize_annotations, validate_session, write_annotations)
from .analytics import StatsReport, annotation_stats, eating_rate, emit_report, gap_stats
from .evaluation import CVReport, loso_evaluate, run_ablation
from .features import (compute_bite_features, compute_speaking_status, rescale_time_since_bite,
                       scale_bite_features)
from .metrics import Metrics, compute_metrics
from .models import ModelSpec, TrainedModel, build_model, load_checkpoint, predict_scores, save_checkpoint
from .simulator import RobotTimingParams, StrategyConfig, fixed_interval_wait, run_strategy
from .streams import FeatureStream, read_streams, write_streams
from .synthetic import SyntheticConfig, generate_synthetic_session, generate_synthetic_sessions
from .training import TrainConfig, train
from .windows import LabeledWindow, WindowSpec, extract_windows

__version__ = "0.1.0"

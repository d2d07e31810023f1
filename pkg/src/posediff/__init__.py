"""Skeleton-based video anomaly detection with conditional motion diffusion."""

from .conditioning import STRATEGIES, ConditionalDenoiser, LossWeights, build_model, total_loss
from .denoiser import UNetConfig, UNetDenoiser
from .diffusion import (
    DiffusionConfig,
    VarianceSchedule,
    cosine_schedule,
    forward_diffuse,
    linear_schedule,
    make_schedule,
    reverse_step,
    sample_future,
    smooth_loss,
)
from .errors import (
    ConfigError,
    DomainError,
    NumericError,
    ParseError,
    PosediffError,
    ProtocolError,
    SchemaError,
    ShapeError,
    UndefinedMetricError,
)
from .estimator import MotionDiffusionDetector, WindowTransformer
from .evaluation import EvalConfig, EvalReport, ablate, roc_auc, run_benchmark
from .motion_data import (
    AnomalyInjector,
    MotionWindow,
    PoseDataset,
    PoseTrack,
    Skeleton,
    SplitStrategy,
    SyntheticSpec,
    generate_synthetic,
    load_labels,
    load_manifest,
    load_tracks,
    slide_windows,
)
from .scoring import AggregationStatistic, aggregate, diversity_rF, frame_scores, score_window
from .training import TrainConfig, TrainState, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "STRATEGIES", "AggregationStatistic", "AnomalyInjector", "ConditionalDenoiser", "ConfigError",
    "DiffusionConfig", "DomainError", "EvalConfig", "EvalReport", "LossWeights", "MotionDiffusionDetector",
    "MotionWindow", "NumericError", "ParseError", "PoseDataset", "PoseTrack", "PosediffError", "ProtocolError",
    "SchemaError", "ShapeError", "Skeleton", "SplitStrategy", "SyntheticSpec", "TrainConfig", "TrainState",
    "UNetConfig", "UNetDenoiser", "UndefinedMetricError", "VarianceSchedule", "WindowTransformer", "ablate",
    "aggregate", "build_model", "cosine_schedule", "diversity_rF", "fit", "forward_diffuse", "frame_scores",
    "generate_synthetic", "linear_schedule", "load_checkpoint", "load_labels", "load_manifest", "load_tracks",
    "make_schedule", "reverse_step", "roc_auc", "run_benchmark", "sample_future", "save_checkpoint",
    "score_window", "slide_windows", "smooth_loss", "total_loss",
]

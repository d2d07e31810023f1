"""Scikit-learn style wrappers around training and scoring."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .conditioning import LossWeights
from .diffusion import DiffusionConfig
from .errors import ConfigError, UndefinedMetricError
from .evaluation import align_labels, roc_auc
from .motion_data import SplitStrategy
from .scoring import AnomalyScoreSeries, AggregationStatistic, generate, window_frame_scores
from .training import TrainConfig, fit, training_windows
from .validation import check_dataset, check_fraction, check_positive_int
from .windows import build_window_set


class WindowTransformer(TransformerMixin, BaseEstimator):
    """Pose tracks -> normalized ``(W, N, J, 2)`` windows plus target masks.

    ``transform`` returns a :class:`~posediff.windows.WindowSet`; use
    ``.poses`` and ``.masks`` for the raw arrays.
    """

    def __init__(self, window=6, k=3, stride=1, split="forecasting", split_seed=0, normalization="condition"):
        self.window = window
        self.k = k
        self.stride = stride
        self.split = split
        self.split_seed = split_seed
        self.normalization = normalization

    def fit(self, X, y=None):
        check_positive_int(self.window, "window", 2)
        check_positive_int(self.k, "k")
        if self.k >= self.window:
            raise ConfigError("k must be smaller than window")
        self.skeleton_ = check_dataset(X).skeleton
        return self

    def transform(self, X):
        check_is_fitted(self, "skeleton_")
        ds = check_dataset(X, skeleton=self.skeleton_)
        return build_window_set(ds.tracks, ds.skeleton, self.window, self.k, self.stride,
                                SplitStrategy(self.split, self.split_seed), self.normalization)


class MotionDiffusionDetector(OutlierMixin, BaseEstimator):
    """One-class pose anomaly detector based on conditional motion diffusion.

    ``fit`` trains on normal tracks only.  Frame anomaly scores grow with how
    badly ``n_generations`` sampled futures reconstruct the observed ones,
    aggregated per window by ``statistic`` (``"min"``, ``"median"``,
    ``"q0.25"``, ...).

    Following scikit-learn, ``score_samples`` and ``decision_function`` are
    *higher for more normal* frames and ``predict`` returns +1 / -1.  Use
    :meth:`frame_scores` for the raw anomaly scores.  ``contamination`` sets
    the training-score quantile used as the ``predict`` threshold; with
    ``None`` the threshold is skipped and ``predict`` is unavailable.
    """

    def __init__(self, strategy="ae_embedding", epochs=36, lr=1e-4, lr_decay=0.98, batch_size=256,
                 window=6, k=3, split="forecasting", schedule="cosine", n_steps=10, smooth_weight=1.0,
                 rec_weight=1.0, n_generations=50, statistic="min", contamination=0.05, dtype="float32",
                 random_state=0):
        self.strategy = strategy
        self.epochs = epochs
        self.lr = lr
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.window = window
        self.k = k
        self.split = split
        self.schedule = schedule
        self.n_steps = n_steps
        self.smooth_weight = smooth_weight
        self.rec_weight = rec_weight
        self.n_generations = n_generations
        self.statistic = statistic
        self.contamination = contamination
        self.dtype = dtype
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return replace(
            TrainConfig(),
            epochs=check_positive_int(self.epochs, "epochs", 0), lr=float(self.lr), lr_decay=float(self.lr_decay),
            batch_size=check_positive_int(self.batch_size, "batch_size"), window=self.window, k=self.k,
            split=self.split, strategy=self.strategy, dtype=self.dtype, seed=int(self.random_state),
            diffusion=DiffusionConfig(schedule=self.schedule, T=check_positive_int(self.n_steps, "n_steps")),
            loss_weights=LossWeights(self.smooth_weight, self.rec_weight),
        )

    def fit(self, X, y=None):
        """Train on normal data.  ``y`` (frame labels) is only checked: any 1 is refused."""
        check_positive_int(self.n_generations, "n_generations")
        AggregationStatistic.parse(self.statistic)
        ds = check_dataset(X, y)
        cfg = self._train_config()
        self.state_ = fit(cfg, ds)
        self.n_joints_ = ds.skeleton.n_joints
        self.loss_curve_ = list(self.state_.epoch_losses)
        self.offset_ = None
        if self.contamination is not None:
            c = check_fraction(self.contamination, "contamination", open_low=True)
            ws = training_windows(ds, cfg)
            errors = generate(self.state_, ws, self.n_generations, int(self.random_state) + 1)
            s = window_frame_scores(errors, ws, self.statistic).scores
            self.offset_ = float(-np.quantile(s, 1.0 - c))
        return self

    def frame_scores(self, X) -> AnomalyScoreSeries:
        """Per-frame anomaly scores (higher = more anomalous)."""
        check_is_fitted(self, "state_")
        ds = check_dataset(X)
        ws = self.state_.windows(ds.tracks)
        errors = generate(self.state_, ws, self.n_generations, int(self.random_state))
        frames = list(ds.labels) if ds.labels else None
        return window_frame_scores(errors, ws, self.statistic, frames=frames)

    def score_samples(self, X) -> np.ndarray:
        """Negated frame anomaly scores, ordered by ``(scene_id, frame_index)``."""
        return -self.frame_scores(X).scores

    def decision_function(self, X) -> np.ndarray:
        if getattr(self, "offset_", None) is None:
            raise ConfigError("decision threshold unavailable: fit with a contamination value")
        return self.score_samples(X) - self.offset_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) < 0, -1, 1)

    def score(self, X, y=None) -> float:
        """Frame-level ROC-AUC against the labels of ``X`` (or ``y``)."""
        ds = check_dataset(X, y)
        if not ds.labels:
            raise UndefinedMetricError("scoring needs frame labels")
        series = self.frame_scores(ds)
        s, lab, _ = align_labels(series, ds.labels)
        return roc_auc(s, lab)

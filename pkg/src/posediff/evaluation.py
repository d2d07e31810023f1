"""ROC-AUC, aggregation sweeps, conditioning/proxy-task ablations and reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ._serialize import fingerprint, to_dict
from .errors import ConfigError, UndefinedMetricError
from .motion_data import PoseDataset
from .scoring import (
    AggregationStatistic,
    AnomalyScoreSeries,
    diversity_rF,
    error_histograms,
    generate,
    window_frame_scores,
    window_labels,
)
from .training import TrainConfig, TrainState, check_compatible, fit

logger = logging.getLogger(__name__)

TIE_HANDLING = "half-credit (Mann-Whitney U)"


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve from the rank-sum statistic; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ConfigError("scores and labels must have the same length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both normal and anomalous frames")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def align_labels(series: AnomalyScoreSeries, labels: dict[tuple[str, int], int]):
    """``(scores, labels, n_unlabelled)`` over the labelled frames of ``series``."""
    s, y = [], []
    n_unlab = 0
    for scene, f, v in zip(series.scene_ids, series.frame_indices, series.scores):
        lab = labels.get((scene, int(f)))
        if lab is None:
            n_unlab += 1
            continue
        s.append(v)
        y.append(lab)
    return np.asarray(s), np.asarray(y, dtype=np.int64), n_unlab


def series_auc(series: AnomalyScoreSeries, labels: dict[tuple[str, int], int]) -> float:
    s, y, _ = align_labels(series, labels)
    return roc_auc(s, y)


@dataclass(frozen=True)
class EvalConfig:
    """Sweep grid and defaults.  ``statistics`` accepts ``min``, ``max``,
    ``mean``, ``median`` and quantiles written ``q0.25``."""

    statistics: tuple = ("min",)
    ms: tuple = (50,)
    default_statistic: str = "min"
    default_m: int = 50
    chunk_size: int = 4096
    histogram_bins: int = 50

    def __post_init__(self):
        for s in self.statistics:
            AggregationStatistic.parse(s)
        AggregationStatistic.parse(self.default_statistic)
        if not self.ms or min(self.ms) < 1 or self.default_m < 1:
            raise ConfigError("number of generations must be >= 1")

    @property
    def pool_size(self) -> int:
        return max(max(self.ms), self.default_m)


@dataclass
class EvalReport:
    auc: float
    statistic: str
    m: int
    table: list = field(default_factory=list)
    per_scene_auc: dict = field(default_factory=dict)
    rF: dict = field(default_factory=dict)
    n_frames: int = 0
    n_unlabelled_excluded: int = 0
    n_windows: int = 0
    config_fingerprint: str = ""
    config: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    tie_handling: str = TIE_HANDLING
    quantile_method: str = "linear (type 7)"
    normalization: str = "condition"
    score_space: str = "normalized"
    averaging: str = "micro (all frames pooled)"

    def to_dict(self) -> dict:
        return to_dict(self)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def write_table(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "m", "auc"])
            for r in self.table:
                w.writerow([r["statistic"], r["m"], repr(r["auc"])])


@dataclass
class BenchmarkArtifacts:
    """Intermediate results kept alongside a report for export."""

    errors: np.ndarray
    window_labels: np.ndarray
    series: AnomalyScoreSeries
    histograms: dict | None = None


def run_benchmark(state: TrainState, dataset: PoseDataset, cfg: EvalConfig = EvalConfig(), seed: int = 0,
                  with_artifacts: bool = False):
    """Score every window once with a shared pool of generations and sweep the grid.

    Row ``(stat, m)`` of the table aggregates the first ``m`` generations of
    the pool, so curves over ``m`` are nested.
    """
    t0 = time.perf_counter()
    check_compatible(state, dataset.skeleton)
    if not dataset.labels:
        raise UndefinedMetricError("benchmark needs frame labels")
    ws = state.windows(dataset.tracks)
    errors = generate(state, ws, cfg.pool_size, seed, cfg.chunk_size)
    frames = list(dataset.labels)
    table = []
    for st in cfg.statistics:
        for m in cfg.ms:
            series = window_frame_scores(errors, ws, st, m, frames)
            table.append({"statistic": AggregationStatistic.parse(st).name, "m": int(m),
                          "auc": series_auc(series, dataset.labels)})
    default = window_frame_scores(errors, ws, cfg.default_statistic, cfg.default_m, frames)
    s, y, n_unlab = align_labels(default, dataset.labels)
    auc = roc_auc(s, y)
    per_scene = {}
    for scene in sorted(set(default.scene_ids)):
        sel = [i for i, sc in enumerate(default.scene_ids) if sc == scene]
        ys = [dataset.labels.get((scene, int(default.frame_indices[i]))) for i in sel]
        keep = [(default.scores[i], v) for i, v in zip(sel, ys) if v is not None]
        if keep and 0 < sum(v for _, v in keep) < len(keep):
            per_scene[scene] = roc_auc([a for a, _ in keep], [b for _, b in keep])
    wl = window_labels(ws, dataset.labels)
    rf = diversity_rF(errors[:, :cfg.default_m], axis=1)
    rf_summary = {
        "normal_mean": _nanmean(rf[wl == 0]),
        "anomalous_mean": _nanmean(rf[wl == 1]),
    }
    report = EvalReport(
        auc=auc, statistic=AggregationStatistic.parse(cfg.default_statistic).name, m=cfg.default_m,
        table=table, per_scene_auc=per_scene, rF=rf_summary, n_frames=len(s),
        n_unlabelled_excluded=n_unlab, n_windows=len(ws),
        config_fingerprint=fingerprint({"train": state.config, "eval": cfg, "seed": seed}),
        config={"train": to_dict(state.config), "eval": to_dict(cfg), "seed": seed},
        runtime_s=time.perf_counter() - t0, normalization=state.config.normalization,
    )
    if with_artifacts:
        hist = error_histograms(errors[:, :cfg.default_m], wl, cfg.histogram_bins)
        return report, BenchmarkArtifacts(errors, wl, default, hist)
    return report


def _nanmean(a):
    a = np.asarray(a, dtype=np.float64)
    a = a[np.isfinite(a)]
    return float(a.mean()) if a.size else None


@dataclass
class AblationCell:
    strategy: str
    task: str
    report: EvalReport


def ablate(
    base: TrainConfig,
    train_data: PoseDataset,
    test_data: PoseDataset,
    strategies: Sequence[str] = ("input_concat", "e2e_embedding", "ae_embedding"),
    tasks: Sequence[str] = ("forecasting",),
    eval_cfg: EvalConfig = EvalConfig(),
    seed: int = 0,
) -> list[AblationCell]:
    """Train and evaluate one model per (strategy, proxy task) cell."""
    cells = []
    for task in tasks:
        for strat in strategies:
            cfg = replace(base, strategy=strat, split=task)
            logger.info("ablation cell strategy=%s task=%s", strat, task)
            state = fit(cfg, train_data)
            rep = run_benchmark(state, test_data, eval_cfg, seed)
            cells.append(AblationCell(strat, task, rep))
    return cells


def write_ablation_table(cells: Sequence[AblationCell], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "task", "statistic", "m", "auc", "config_fingerprint"])
        for c in cells:
            w.writerow([c.strategy, c.task, c.report.statistic, c.report.m, repr(c.report.auc),
                        c.report.config_fingerprint])

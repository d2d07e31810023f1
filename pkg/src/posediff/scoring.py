"""Multimodal future generation and aggregation of reconstruction errors.

For each window the trained model generates ``m`` futures.  Generation
``i`` of a window draws its noise from a Philox stream keyed on
``(seed, window_key, i)``, so the first ``m`` generations of a pool of
``M > m`` are exactly the generations of an ``m``-sized run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .conditioning import split_past_target
from .diffusion import draw_sampling_noise, sample_future, smooth_loss
from .errors import ConfigError, DomainError
from .motion_data import MotionWindow, normalize_window
from .windows import WindowSet

STAT_KINDS = ("min", "max", "mean", "median", "quantile")
QUANTILE_METHOD = "linear"


@dataclass(frozen=True)
class AggregationStatistic:
    kind: str = "min"
    q: float | None = None

    def __post_init__(self):
        if self.kind not in STAT_KINDS:
            raise ConfigError(f"unknown statistic {self.kind!r}; expected one of {STAT_KINDS}")
        if self.kind == "quantile":
            if self.q is None or not 0.0 < float(self.q) < 1.0:
                raise ConfigError(f"quantile level must lie in (0, 1), got {self.q}")

    @classmethod
    def parse(cls, text: str | "AggregationStatistic") -> "AggregationStatistic":
        """``"min"``, ``"median"``, ``"q0.25"`` or ``"quantile:0.25"``."""
        if isinstance(text, AggregationStatistic):
            return text
        s = str(text).strip().lower()
        if s.startswith("quantile:"):
            return cls("quantile", float(s.split(":", 1)[1]))
        if s.startswith("q") and s[1:2].isdigit() or s.startswith("q."):
            return cls("quantile", float(s[1:]))
        return cls(s)

    @property
    def name(self) -> str:
        return f"q{self.q:g}" if self.kind == "quantile" else self.kind


def aggregate(scores, stat: AggregationStatistic | str = "min", axis: int | None = None):
    """Reduce per-generation scores; quantiles interpolate linearly between order statistics."""
    stat = AggregationStatistic.parse(stat)
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or (axis is not None and s.shape[axis] == 0):
        raise DomainError("cannot aggregate an empty score set")
    if stat.kind == "min":
        out = s.min(axis=axis)
    elif stat.kind == "max":
        out = s.max(axis=axis)
    elif stat.kind == "mean":
        out = s.mean(axis=axis)
    elif stat.kind == "median":
        out = np.median(s, axis=axis)
    else:
        out = np.quantile(s, stat.q, axis=axis, method=QUANTILE_METHOD)
        # interpolation rounding must not leave the [min, max] hull
        out = np.clip(out, s.min(axis=axis), s.max(axis=axis))
    return float(out) if np.ndim(out) == 0 else out


def diversity_rF(scores, axis: int | None = None):
    """``mean / min`` of the generation scores; NaN where the minimum is zero."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DomainError("diversity needs at least one score")
    mn = s.min(axis=axis)
    mean = s.mean(axis=axis)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(mn > 0, mean / np.where(mn > 0, mn, 1.0), np.nan)
        # mean/min can round just below 1 for nearly constant sets
        r = np.where(np.isnan(r), r, np.maximum(r, 1.0))
    return float(r) if np.ndim(r) == 0 else r


@dataclass
class GenerationSet:
    """``m`` generated futures of one window and their reconstruction errors."""

    window_id: str
    scene_id: str
    actor_id: str
    target_frames: np.ndarray
    futures: np.ndarray
    scores: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if len(self.scores) < 1 or len(self.scores) != len(self.futures):
            raise ConfigError("a generation set needs m >= 1 futures with one score each")

    @property
    def m(self) -> int:
        return len(self.scores)

    def aggregate(self, stat="min") -> float:
        return aggregate(self.scores, stat)


def generation_errors_from_futures(target, futures, norm: str = "mae"):
    """``s_i = smooth_loss(mean |X - Z_i|)`` for futures ``(..., m, F, J, c)``."""
    target = np.asarray(target, dtype=np.float64)
    futures = np.asarray(futures, dtype=np.float64)
    r = np.abs(futures - target[..., None, :, :, :])
    if norm == "mse":
        r = r * r
    return smooth_loss(r.mean(axis=(-3, -2, -1)))


def _noise_block(seed, keys, gens, shape, T, dtype):
    """Stacked per-(window, generation) noise: ``(T, len(keys) * len(gens), *shape)``."""
    parts = [draw_sampling_noise((int(seed), int(k) & 0xFFFFFFFF, int(g)), shape, T, dtype)
             for k in keys for g in gens]
    return torch.stack(parts, dim=1)


def generate(state, ws: WindowSet, m: int, seed: int = 0, chunk_size: int = 4096,
             return_futures: bool = False):
    """Generate ``m`` futures per window; returns errors ``(W, m)`` (and futures).

    Errors compare generated and true target frames in normalized coordinates.
    """
    if m < 1:
        raise ConfigError("number of generations m must be >= 1")
    model = state.model
    model.eval()
    dtype = next(model.parameters()).dtype
    sched = state.schedule
    W = len(ws)
    keys = ws.keys()
    n_target = int(ws.masks[0].sum()) if W else 0
    shape = (n_target,) + ws.poses.shape[2:]
    errors = np.zeros((W, m))
    futures = np.zeros((W, m) + shape) if return_futures else None
    per_chunk = max(1, chunk_size // m)
    for s in range(0, W, per_chunk):
        idx = np.arange(s, min(W, s + per_chunk))
        x = torch.from_numpy(ws.poses[idx]).to(dtype)
        mask = torch.from_numpy(ws.masks[idx])
        past, target = split_past_target(x, mask)
        with torch.no_grad():
            cond = model.condition(past)
        B = len(idx)
        cond_rep = cond.repeat_interleave(m, dim=0)
        mask_rep = mask.repeat_interleave(m, dim=0)
        noise = _noise_block(seed, keys[idx], range(m), shape, sched.T, dtype)

        def eps_fn(x_t, t):
            tt = torch.full((x_t.shape[0],), t, dtype=torch.long)
            return model.predict(x_t, tt, cond_rep, mask_rep)

        z = sample_future(eps_fn, (B * m,) + shape, sched, noise=noise, dtype=dtype)
        z = z.reshape((B, m) + shape).double().numpy()
        errors[idx] = generation_errors_from_futures(target.double().numpy(), z, state.config.residual_norm)
        if return_futures:
            futures[idx] = z
    return (errors, futures) if return_futures else errors


def score_window(state, window: MotionWindow, m: int = 50, seed: int = 0) -> GenerationSet:
    """Normalize ``window`` like training did and score ``m`` generated futures."""
    if m < 1:
        raise ConfigError("number of generations m must be >= 1")
    cfg = state.config
    nw, rec = normalize_window(window, cfg.normalization, state.skeleton.root_joints)
    ws = WindowSet(nw.poses[None], nw.mask[None], nw.frame_indices[None], [window.scene_id],
                   [window.actor_id], np.asarray([rec.center]), np.asarray([rec.scale]),
                   np.asarray([rec.degenerate]), cfg.normalization)
    errors, futures = generate(state, ws, m, seed, return_futures=True)
    return GenerationSet(window.window_id, window.scene_id, window.actor_id, window.target_frames,
                         futures[0], errors[0], seed)


@dataclass
class AnomalyScoreSeries:
    """Per-frame anomaly scores keyed by ``(scene_id, frame_index)``."""

    scene_ids: list
    frame_indices: np.ndarray
    scores: np.ndarray
    n_actors: np.ndarray
    n_windows: np.ndarray
    no_actor: np.ndarray
    statistic: str = "min"
    quantile_method: str = QUANTILE_METHOD

    def __len__(self) -> int:
        return len(self.scores)

    def as_dict(self) -> dict[tuple[str, int], float]:
        return {(s, int(f)): float(v) for s, f, v in zip(self.scene_ids, self.frame_indices, self.scores)}

    def records(self) -> list[dict]:
        return [
            {"scene_id": s, "frame_index": int(f), "score": float(v), "n_actors": int(n)}
            for s, f, v, n in zip(self.scene_ids, self.frame_indices, self.scores, self.n_actors)
        ]

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["scene_id", "frame_index", "score", "n_actors"])
            w.writeheader()
            for r in self.records():
                w.writerow({**r, "score": repr(r["score"])})


def frame_scores_from_arrays(
    window_scores,
    scene_ids: Sequence[str],
    actor_ids: Sequence[str],
    target_frames: Sequence[Sequence[int]],
    frames: Iterable[tuple[str, int]] | None = None,
    statistic: str = "min",
) -> AnomalyScoreSeries:
    """Spread window scores onto frames: mean over covering windows per actor, max over actors.

    ``frames`` lists the evaluation frames; frames no actor covers get the
    minimum score of the series and ``no_actor=True``.  Without ``frames``
    only covered frames are returned.
    """
    acc: dict[tuple[str, str, int], list] = {}
    for v, s, a, tf in zip(np.asarray(window_scores, dtype=np.float64), scene_ids, actor_ids, target_frames):
        for f in tf:
            e = acc.setdefault((s, a, int(f)), [0.0, 0])
            e[0] += v
            e[1] += 1
    per_frame: dict[tuple[str, int], list] = {}
    for (s, a, f), (tot, n) in acc.items():
        e = per_frame.setdefault((s, f), [-math.inf, 0, 0])
        e[0] = max(e[0], tot / n)
        e[1] += 1
        e[2] += n
    keys = sorted(set(per_frame) | set(frames or ()))
    covered = [per_frame[k][0] for k in keys if k in per_frame]
    floor = min(covered) if covered else 0.0
    scores = np.array([per_frame[k][0] if k in per_frame else floor for k in keys], dtype=np.float64)
    n_act = np.array([per_frame[k][1] if k in per_frame else 0 for k in keys], dtype=np.int64)
    n_win = np.array([per_frame[k][2] if k in per_frame else 0 for k in keys], dtype=np.int64)
    return AnomalyScoreSeries(
        [k[0] for k in keys], np.array([k[1] for k in keys], dtype=np.int64), scores, n_act, n_win,
        n_act == 0, statistic,
    )


def frame_scores(sets: Sequence[GenerationSet], stat="min",
                 frames: Iterable[tuple[str, int]] | None = None) -> AnomalyScoreSeries:
    stat = AggregationStatistic.parse(stat)
    return frame_scores_from_arrays(
        [g.aggregate(stat) for g in sets], [g.scene_id for g in sets], [g.actor_id for g in sets],
        [g.target_frames for g in sets], frames, stat.name,
    )


def window_frame_scores(errors, ws: WindowSet, stat="min", m: int | None = None,
                        frames=None) -> AnomalyScoreSeries:
    """Aggregate the first ``m`` columns of ``errors`` and map them to frames."""
    stat = AggregationStatistic.parse(stat)
    e = np.asarray(errors)
    if m is not None:
        if m < 1 or m > e.shape[1]:
            raise ConfigError(f"m={m} outside the generated pool of {e.shape[1]}")
        e = e[:, :m]
    agg = aggregate(e, stat, axis=1)
    targets = [f[mk] for f, mk in zip(ws.frame_indices, ws.masks)]
    return frame_scores_from_arrays(agg, ws.scene_ids, ws.actor_ids, targets, frames, stat.name)


def window_labels(ws: WindowSet, labels: dict[tuple[str, int], int]) -> np.ndarray:
    """1 where any target frame of the window is labelled anomalous."""
    return np.array([
        int(any(labels.get((s, int(f)), 0) == 1 for f in fr[mk]))
        for s, fr, mk in zip(ws.scene_ids, ws.frame_indices, ws.masks)
    ], dtype=np.int64)


def error_histograms(errors, win_labels, bins: int = 50) -> dict:
    """Histogram of all per-generation errors, split by window label."""
    e = np.asarray(errors, dtype=np.float64)
    lab = np.asarray(win_labels)
    edges = np.histogram_bin_edges(e, bins=bins)
    normal, _ = np.histogram(e[lab == 0].ravel(), bins=edges)
    anom, _ = np.histogram(e[lab == 1].ravel(), bins=edges)
    return {
        "bin_edges": edges.tolist(),
        "normal": normal.tolist(),
        "anomalous": anom.tolist(),
        "n_generations": int(e.shape[1]) if e.ndim == 2 else 1,
    }

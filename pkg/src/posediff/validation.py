"""Input checks for the estimator API and the command line."""

from __future__ import annotations

import numbers
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError, ShapeError
from .motion_data import PoseDataset, PoseTrack, Skeleton, load_manifest, load_tracks


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name: str, open_low: bool = False) -> float:
    v = float(value)
    if not np.isfinite(v) or v > 1 or v < 0 or (open_low and v == 0):
        raise ConfigError(f"{name} must lie in {'(0' if open_low else '[0'}, 1], got {value!r}")
    return v


def check_poses(poses, n_joints: int | None = None, allow_nan: bool = False) -> np.ndarray:
    """Return ``poses`` as a float64 ``(F, J, 2)`` array."""
    a = np.asarray(poses, dtype=np.float64)
    if a.ndim != 3 or a.shape[-1] != 2:
        raise ShapeError(f"poses must have shape (frames, joints, 2), got {a.shape}")
    if n_joints is not None and a.shape[1] != n_joints:
        raise SchemaError(f"expected {n_joints} joints, got {a.shape[1]}")
    if not allow_nan and not np.isfinite(a).all():
        raise SchemaError("poses contain non-finite coordinates")
    return a


def check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise SchemaError("labels must be 0 (normal) or 1 (anomalous)")
    if not np.isfinite(s).all():
        raise SchemaError("scores must be finite")
    return s, y.astype(np.int64)


def check_dataset(X, labels=None, skeleton: Skeleton | None = None) -> PoseDataset:
    """Coerce ``X`` to a :class:`PoseDataset`.

    Accepts a dataset, a list of tracks, a bare ``(F, J, 2)`` pose array
    (one actor, frames 0..F-1), a manifest path or an NDJSON track file.
    """
    if isinstance(X, PoseDataset):
        if labels is not None:
            return PoseDataset(X.tracks, dict(labels), X.skeleton)
        return X
    if isinstance(X, (str, Path)):
        p = Path(X)
        if p.suffix in (".yaml", ".yml"):
            ds = load_manifest(p)
            return ds if labels is None else PoseDataset(ds.tracks, dict(labels), ds.skeleton)
        X = load_tracks(p, skeleton)
    if isinstance(X, PoseTrack):
        X = [X]
    if isinstance(X, np.ndarray) or (isinstance(X, (list, tuple)) and X and not isinstance(X[0], PoseTrack)):
        a = check_poses(X)
        skeleton = skeleton or Skeleton.default_for(a.shape[1])
        X = [PoseTrack("scene000", "0", np.arange(len(a)), a, skeleton)]
    tracks = list(X)
    if not tracks:
        raise SchemaError("no pose tracks given")
    if not all(isinstance(t, PoseTrack) for t in tracks):
        raise SchemaError("expected PoseTrack objects")
    skeleton = skeleton or tracks[0].skeleton
    for t in tracks:
        if t.joints.shape[1] != skeleton.n_joints:
            raise SchemaError(f"track {t.key} has {t.joints.shape[1]} joints, expected {skeleton.n_joints}")
    return PoseDataset(tracks, None if labels is None else dict(labels), skeleton)

"""Pose-track ingestion, windowing, normalization and synthetic motion.

Poses are stored per track as a ``(F, J, 2)`` float array; the skeleton
topology lives in a shared :class:`Skeleton`.  File formats:

* pose-track file: one JSON record per line,
  ``{"scene_id", "actor_id", "frame_index", "joints": [[x, y], ...],
  "confidence": [...]}`` (``confidence`` optional);
* frame-label file: one JSON record per line,
  ``{"scene_id", "frame_index", "label"}`` with ``label`` in ``{0, 1}``;
* dataset manifest (YAML or JSON): ``joint_count``, ``edges``,
  ``root_joints``, ``tracks`` and ``labels`` paths.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ParseError, SchemaError, ShapeError

logger = logging.getLogger(__name__)

COCO17_EDGES = (
    (0, 1), (0, 2), (1, 3), (2, 4),
    (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
)
COCO17_ROOT = (11, 12)

CONFIDENCE_FLOOR = 0.1
SPLIT_KINDS = ("forecasting", "in_between", "random_imputation")
NORMALIZATION_MODES = ("condition", "none")


@dataclass(frozen=True)
class Skeleton:
    """Joint count, limb edges and the joints averaged to locate the root."""

    n_joints: int = 17
    edges: tuple = COCO17_EDGES
    root_joints: tuple = COCO17_ROOT

    def __post_init__(self):
        if self.n_joints < 1:
            raise SchemaError("skeleton needs at least one joint")
        edges = tuple(tuple(int(v) for v in e) for e in self.edges)
        for i, j in edges:
            if not (0 <= i < self.n_joints and 0 <= j < self.n_joints):
                raise SchemaError(f"edge ({i}, {j}) out of range for {self.n_joints} joints")
            if i == j:
                raise SchemaError(f"self-loop edge ({i}, {i}) not allowed in adjacency")
        roots = tuple(int(r) for r in self.root_joints)
        if any(not 0 <= r < self.n_joints for r in roots):
            raise SchemaError("root joint index out of range")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "root_joints", roots)

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_joints, self.n_joints), dtype=np.float64)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    @classmethod
    def coco17(cls) -> "Skeleton":
        return cls()

    @classmethod
    def chain(cls, n_joints: int) -> "Skeleton":
        edges = tuple((i, i + 1) for i in range(n_joints - 1))
        return cls(n_joints=n_joints, edges=edges, root_joints=(0,))

    @classmethod
    def default_for(cls, n_joints: int) -> "Skeleton":
        return cls.coco17() if n_joints == 17 else cls.chain(n_joints)

    def to_dict(self) -> dict:
        return {
            "joint_count": self.n_joints,
            "edges": [list(e) for e in self.edges],
            "root_joints": list(self.root_joints),
        }


@dataclass(frozen=True)
class PoseGraph:
    """A single pose: joint coordinates plus the symmetric adjacency."""

    joints: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        a = np.asarray(self.adjacency)
        if j.ndim != 2 or a.shape != (j.shape[0], j.shape[0]):
            raise ShapeError("joints must be (J, c) and adjacency (J, J)")
        if not np.all(np.isfinite(j)):
            raise SchemaError("joint coordinates must be finite")
        if not np.array_equal(a, a.T) or np.any(np.diag(a) != 0):
            raise SchemaError("adjacency must be symmetric with zero diagonal")


@dataclass
class PoseTrack:
    """Time series of poses for one actor in one scene."""

    scene_id: str
    actor_id: str
    frame_indices: np.ndarray
    joints: np.ndarray
    skeleton: Skeleton = field(default_factory=Skeleton)
    confidence: np.ndarray | None = None
    missing: np.ndarray | None = None

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[2] != 2:
            raise ShapeError(f"track joints must be (F, J, 2), got {self.joints.shape}")
        if self.joints.shape[0] != len(self.frame_indices):
            raise ShapeError("one pose per frame index required")
        if self.joints.shape[1] != self.skeleton.n_joints:
            raise SchemaError(
                f"track {self.scene_id}/{self.actor_id} has {self.joints.shape[1]} joints, "
                f"skeleton declares {self.skeleton.n_joints}"
            )
        if np.any(np.diff(self.frame_indices) <= 0):
            raise SchemaError("frame_index must be strictly increasing within a track")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
            if self.confidence.shape != self.joints.shape[:2]:
                raise ShapeError("confidence must be (F, J)")
        if self.missing is None:
            self.missing = np.zeros(self.joints.shape[:2], dtype=bool)

    def __len__(self) -> int:
        return len(self.frame_indices)

    @property
    def key(self) -> tuple[str, str]:
        return (self.scene_id, self.actor_id)

    @property
    def gaps(self) -> list[tuple[int, int]]:
        """(last frame before, first frame after) for each break in frame_index."""
        d = np.flatnonzero(np.diff(self.frame_indices) > 1)
        return [(int(self.frame_indices[i]), int(self.frame_indices[i + 1])) for i in d]

    def pose(self, i: int) -> PoseGraph:
        return PoseGraph(self.joints[i], self.skeleton.adjacency)

    def contiguous_runs(self) -> list[tuple[int, int]]:
        """Half-open position ranges [start, stop) of gap-free frame runs."""
        if len(self) == 0:
            return []
        breaks = np.flatnonzero(np.diff(self.frame_indices) > 1) + 1
        starts = np.concatenate([[0], breaks])
        stops = np.concatenate([breaks, [len(self)]])
        return [(int(a), int(b)) for a, b in zip(starts, stops)]


@dataclass(frozen=True)
class SplitStrategy:
    """Which frames of a window are corrupted (the proxy task)."""

    kind: str = "forecasting"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ConfigError(f"unknown split strategy {self.kind!r}; expected one of {SPLIT_KINDS}")

    def mask(self, n: int, k: int, key: int = 0) -> np.ndarray:
        """Boolean target mask of length ``n`` with exactly ``n - k`` true entries."""
        if not (n >= 2 and 1 <= k < n):
            raise ConfigError(f"need N >= 2 and 1 <= k < N, got N={n}, k={k}")
        n_target = n - k
        mask = np.zeros(n, dtype=bool)
        if self.kind == "forecasting":
            mask[k:] = True
        elif self.kind == "in_between":
            if n_target > n - 2:
                raise ConfigError("in_between needs at least one clean frame at each end")
            start = (n - n_target) // 2
            mask[start:start + n_target] = True
        else:
            rng = np.random.default_rng([self.seed, key])
            mask[rng.choice(n, size=n_target, replace=False)] = True
        return mask


@dataclass
class MotionWindow:
    """N contiguous poses of a track plus the corruption mask."""

    scene_id: str
    actor_id: str
    frame_indices: np.ndarray
    poses: np.ndarray
    mask: np.ndarray
    split_k: int

    def __post_init__(self):
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        n = len(self.frame_indices)
        if self.poses.shape[0] != n or self.mask.shape != (n,):
            raise ShapeError("poses, mask and frame_indices must share the window length")
        if int((~self.mask).sum()) != self.split_k:
            raise SchemaError("mask must hold exactly split_k conditioning frames")

    @property
    def track_ref(self) -> tuple[str, str]:
        return (self.scene_id, self.actor_id)

    @property
    def window_id(self) -> str:
        return f"{self.scene_id}/{self.actor_id}/{int(self.frame_indices[0])}"

    @property
    def past(self) -> np.ndarray:
        return self.poses[~self.mask]

    @property
    def target(self) -> np.ndarray:
        return self.poses[self.mask]

    @property
    def target_frames(self) -> np.ndarray:
        return self.frame_indices[self.mask]


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map ``(x - center) / scale`` applied to a whole window."""

    center: tuple[float, float]
    scale: float
    mode: str = "condition"
    degenerate: bool = False

    def apply(self, poses: np.ndarray) -> np.ndarray:
        return (np.asarray(poses, dtype=np.float64) - np.asarray(self.center)) / self.scale

    def invert(self, poses: np.ndarray) -> np.ndarray:
        return np.asarray(poses, dtype=np.float64) * self.scale + np.asarray(self.center)


def normalize_window(
    w: MotionWindow,
    mode: str = "condition",
    root_joints: Sequence[int] | None = COCO17_ROOT,
) -> tuple[MotionWindow, NormalizationRecord]:
    """Center on the conditioning frames' mean root and scale by their bbox diagonal.

    The same transform is applied to conditioning and target frames.  With
    ``mode="none"`` the identity record is returned.
    """
    if mode not in NORMALIZATION_MODES:
        raise ConfigError(f"unknown normalization mode {mode!r}")
    if not np.all(np.isfinite(w.poses)):
        raise SchemaError("window coordinates must be finite")
    if mode == "none":
        rec = NormalizationRecord((0.0, 0.0), 1.0, mode="none")
    else:
        past = w.poses[~w.mask]
        roots = list(root_joints) if root_joints else list(range(past.shape[1]))
        center = past[:, roots, :].reshape(-1, past.shape[-1]).mean(axis=0)
        flat = past.reshape(-1, past.shape[-1])
        diag = float(np.linalg.norm(flat.max(axis=0) - flat.min(axis=0)))
        degenerate = not diag > 1e-12
        if degenerate:
            logger.warning("degenerate bounding box in window %s; using unit scale", w.window_id)
            diag = 1.0
        rec = NormalizationRecord((float(center[0]), float(center[1])), diag, "condition", degenerate)
    out = MotionWindow(w.scene_id, w.actor_id, w.frame_indices.copy(), rec.apply(w.poses), w.mask.copy(), w.split_k)
    return out, rec


def window_key(scene_id: str, actor_id: str, start_frame: int) -> int:
    """Stable 32-bit integer id of a window, used to key RNG streams."""
    return zlib.crc32(f"{scene_id}\x1f{actor_id}\x1f{int(start_frame)}".encode())


def slide_windows(
    t: PoseTrack,
    N: int = 6,
    stride: int = 1,
    strategy: SplitStrategy | None = None,
    k: int = 3,
) -> list[MotionWindow]:
    """Cut a track into contiguous windows of ``N`` frames.

    Windows never span a gap in ``frame_index``; windows in which some joint
    is missing in at least half the frames are dropped.
    """
    strategy = strategy or SplitStrategy()
    if N < 2 or not 1 <= k < N:
        raise ConfigError(f"need N >= 2 and 1 <= k < N, got N={N}, k={k}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    out = []
    for a, b in t.contiguous_runs():
        for s in range(a, b - N + 1, stride):
            miss = t.missing[s:s + N]
            if np.any(miss.sum(axis=0) * 2 >= N):
                continue
            frames = t.frame_indices[s:s + N]
            mask = strategy.mask(N, k, key=window_key(t.scene_id, t.actor_id, frames[0]))
            out.append(MotionWindow(t.scene_id, t.actor_id, frames, t.joints[s:s + N].copy(), mask, k))
    return out


def interpolate_missing(joints: np.ndarray, frames: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Linearly interpolate invalid joints over frame index, per joint and coordinate."""
    out = joints.copy()
    for j in range(joints.shape[1]):
        ok = valid[:, j]
        if ok.all() or not ok.any():
            continue
        for c in range(joints.shape[2]):
            out[~ok, j, c] = np.interp(frames[~ok], frames[ok], joints[ok, j, c])
    return out


# ---------------------------------------------------------------- file I/O


def _group_records(records, skeleton, confidence_floor, path):
    groups: dict[tuple[str, str], list] = {}
    for rec in records:
        groups.setdefault((rec[0], rec[1]), []).append(rec[2:])
    tracks = []
    for (scene, actor), rows in sorted(groups.items()):
        rows.sort(key=lambda r: r[0])
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        if np.any(np.diff(frames) == 0):
            raise SchemaError(f"{path}: duplicate frame_index in track {scene}/{actor}")
        joints = np.stack([r[1] for r in rows])
        conf = None
        missing = None
        if any(r[2] is not None for r in rows):
            conf = np.stack([r[2] if r[2] is not None else np.ones(skeleton.n_joints) for r in rows])
            valid = conf >= confidence_floor
            missing = ~valid
            joints = interpolate_missing(joints, frames, valid)
        tracks.append(PoseTrack(scene, actor, frames, joints, skeleton, conf, missing))
    return tracks


def load_tracks(
    path: str | Path,
    skeleton: Skeleton | None = None,
    confidence_floor: float = CONFIDENCE_FLOOR,
) -> list[PoseTrack]:
    """Read a newline-delimited pose-track file.

    Tracks are grouped by ``(scene_id, actor_id)`` and sorted by frame.  Joints
    whose confidence is below ``confidence_floor`` are flagged in
    ``PoseTrack.missing`` and linearly interpolated from temporal neighbours.
    """
    path = Path(path)
    records = []
    n_joints = skeleton.n_joints if skeleton is not None else None
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                scene, actor = str(d["scene_id"]), str(d["actor_id"])
                frame = int(d["frame_index"])
                joints = np.asarray(d["joints"], dtype=np.float64)
                conf = d.get("confidence")
                conf = None if conf is None else np.asarray(conf, dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed pose record ({exc})", path, lineno) from None
            if joints.ndim != 2 or joints.shape[1] != 2:
                raise ParseError("joints must be a list of [x, y] pairs", path, lineno)
            if n_joints is None:
                n_joints = joints.shape[0]
            if joints.shape[0] != n_joints:
                raise SchemaError(f"{path}:{lineno}: expected {n_joints} joints, got {joints.shape[0]}")
            if conf is not None and conf.shape != (n_joints,):
                raise SchemaError(f"{path}:{lineno}: confidence must have {n_joints} entries")
            if not np.all(np.isfinite(joints)):
                raise ParseError("non-finite joint coordinate", path, lineno)
            records.append((scene, actor, frame, joints, conf))
    if skeleton is None:
        skeleton = Skeleton.default_for(n_joints or 17)
    return _group_records(records, skeleton, confidence_floor, path)


def write_tracks(tracks: Iterable[PoseTrack], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for t in tracks:
            for i, f in enumerate(t.frame_indices):
                rec = {
                    "scene_id": t.scene_id,
                    "actor_id": t.actor_id,
                    "frame_index": int(f),
                    "joints": t.joints[i].tolist(),
                }
                if t.confidence is not None:
                    rec["confidence"] = t.confidence[i].tolist()
                fh.write(json.dumps(rec) + "\n")


def load_labels(path: str | Path) -> dict[tuple[str, int], int]:
    path = Path(path)
    labels = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                key = (str(d["scene_id"]), int(d["frame_index"]))
                label = int(d["label"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed label record ({exc})", path, lineno) from None
            if label not in (0, 1):
                raise ParseError(f"label must be 0 or 1, got {label}", path, lineno)
            labels[key] = label
    return labels


def write_labels(labels: dict[tuple[str, int], int], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for (scene, frame), lab in sorted(labels.items()):
            fh.write(json.dumps({"scene_id": scene, "frame_index": int(frame), "label": int(lab)}) + "\n")


@dataclass
class PoseDataset:
    """Tracks, optional frame labels and the shared skeleton."""

    tracks: list[PoseTrack]
    labels: dict[tuple[str, int], int] | None = None
    skeleton: Skeleton = field(default_factory=Skeleton)

    @property
    def has_anomalies(self) -> bool:
        return bool(self.labels) and any(v == 1 for v in self.labels.values())

    def anomalous_frames(self) -> set[tuple[str, int]]:
        return {k for k, v in (self.labels or {}).items() if v == 1}


def load_manifest(path: str | Path) -> PoseDataset:
    """Load a dataset from a YAML/JSON manifest; relative paths resolve next to it."""
    path = Path(path)
    try:
        m = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"manifest does not parse: {exc}", path) from None
    if not isinstance(m, dict) or "tracks" not in m:
        raise SchemaError(f"{path}: manifest must be a mapping with a 'tracks' entry")
    n = int(m.get("joint_count", 17))
    default = Skeleton.default_for(n)
    skeleton = Skeleton(
        n_joints=n,
        edges=tuple(tuple(e) for e in m.get("edges", default.edges)),
        root_joints=tuple(m.get("root_joints", default.root_joints)),
    )
    base = path.parent
    tracks = load_tracks(base / m["tracks"], skeleton, float(m.get("confidence_floor", CONFIDENCE_FLOOR)))
    labels = load_labels(base / m["labels"]) if m.get("labels") else None
    return PoseDataset(tracks, labels, skeleton)


def write_manifest(path: str | Path, skeleton: Skeleton, tracks_file: str, labels_file: str | None) -> None:
    d = skeleton.to_dict()
    d["tracks"] = tracks_file
    if labels_file:
        d["labels"] = labels_file
    Path(path).write_text(yaml.safe_dump(d, sort_keys=True))


def read_tracked_person_json(path: str | Path, scene_id: str | None = None,
                             skeleton: Skeleton | None = None) -> list[PoseTrack]:
    """Adapter for per-clip tracked-person JSON skeleton annotations.

    Layout: ``{person_id: {frame_id: {"keypoints": [x0, y0, c0, x1, ...]}}}``,
    the AlphaPose-style export distributed with UBnormal-style benchmarks.
    The scene id defaults to the file stem up to the first ``_alphapose``.
    """
    path = Path(path)
    skeleton = skeleton or Skeleton.coco17()
    scene_id = scene_id or path.stem.split("_alphapose")[0]
    data = json.loads(path.read_text())
    records = []
    for person, frames in data.items():
        for frame, d in frames.items():
            kp = np.asarray(d["keypoints"], dtype=np.float64).reshape(-1, 3)
            if kp.shape[0] != skeleton.n_joints:
                raise SchemaError(f"{path}: person {person} frame {frame} has {kp.shape[0]} joints")
            records.append((scene_id, str(person), int(frame), kp[:, :2], kp[:, 2]))
    return _group_records(records, skeleton, CONFIDENCE_FLOOR, path)


def read_frame_label_array(path: str | Path, scene_id: str | None = None) -> dict[tuple[str, int], int]:
    """Per-clip ``.npy`` vector of 0/1 frame labels -> label mapping."""
    path = Path(path)
    scene_id = scene_id or path.stem
    arr = np.load(path)
    return {(scene_id, i): int(v) for i, v in enumerate(np.asarray(arr).ravel())}


# ------------------------------------------------------- synthetic motion

INJECTOR_KINDS = ("freeze", "teleport", "reverse", "speed_burst")


@dataclass(frozen=True)
class AnomalyInjector:
    kind: str
    rate: float
    magnitude: float = 1.0

    def __post_init__(self):
        if self.kind not in INJECTOR_KINDS:
            raise ConfigError(f"unknown injector {self.kind!r}; expected one of {INJECTOR_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"injector rate must lie in [0, 1], got {self.rate}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Harmonic-gait generator settings.

    ``amplitude`` is the limb swing in body heights, ``frequency`` is in
    cycles per frame, ``step_noise`` is the per-joint jitter in body heights.
    """

    n_actors: int = 8
    n_frames: int = 240
    joint_count: int = 17
    amplitude: float = 0.15
    frequency: float = 0.04
    phase_jitter: float = 0.3
    step_noise: float = 0.003
    injectors: tuple = ()
    segment_length: int = 12
    actors_per_scene: int = 1
    seed: int = 0

    def __post_init__(self):
        inj = tuple(i if isinstance(i, AnomalyInjector) else AnomalyInjector(**i) for i in self.injectors)
        object.__setattr__(self, "injectors", inj)
        if self.n_actors < 1 or self.n_frames < 1 or self.joint_count < 1:
            raise ConfigError("n_actors, n_frames and joint_count must be positive")
        if self.segment_length < 1 or self.actors_per_scene < 1:
            raise ConfigError("segment_length and actors_per_scene must be positive")


# Standing pose in body heights, y up: nose, eyes, ears, shoulders, elbows,
# wrists, hips, knees, ankles (left before right).
_COCO_TEMPLATE = np.array([
    [0.0, 0.93], [-0.03, 0.95], [0.03, 0.95], [-0.06, 0.93], [0.06, 0.93],
    [-0.12, 0.80], [0.12, 0.80], [-0.15, 0.62], [0.15, 0.62], [-0.16, 0.45], [0.16, 0.45],
    [-0.08, 0.50], [0.08, 0.50], [-0.09, 0.27], [0.09, 0.27], [-0.09, 0.03], [0.09, 0.03],
])
# Horizontal swing gain and phase offset (radians) per joint.
_COCO_SWING = np.array([0, 0, 0, 0, 0, 0, 0, -0.5, 0.5, -1.0, 1.0, 0, 0, 0.8, -0.8, 1.6, -1.6])
_COCO_SWING_PHASE = np.array([0, 0, 0, 0, 0, 0, 0, 0, 0, 0.2, 0.2, 0, 0, 0, 0, 0.4, 0.4])


class _Gait:
    """Closed-form gait of one actor; ``pose(t)`` accepts fractional time."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        J = spec.joint_count
        if J == 17:
            self.template = _COCO_TEMPLATE.copy()
            self.swing = _COCO_SWING.copy()
            self.swing_phase = _COCO_SWING_PHASE.copy()
        else:
            self.template = np.stack([rng.uniform(-0.15, 0.15, J), np.linspace(1.0, 0.0, J)], axis=1)
            self.swing = rng.uniform(-1.0, 1.0, J)
            self.swing_phase = rng.uniform(0, 0.5, J)
        self.height = rng.uniform(80.0, 120.0)
        self.origin = np.array([rng.uniform(100.0, 500.0), rng.uniform(150.0, 400.0)])
        self.direction = rng.choice([-1.0, 1.0])
        self.freq = spec.frequency * rng.uniform(0.8, 1.2)
        self.phase0 = rng.uniform(0, 2 * np.pi)
        self.amp = spec.amplitude * rng.uniform(0.8, 1.2)
        self.jitter = spec.phase_jitter
        self.jitter_period = rng.uniform(40.0, 80.0)
        # forward speed tied to stride so feet roughly stay planted
        self.speed = self.direction * 4.0 * self.amp * self.freq * self.height

    def phase(self, t):
        return 2 * np.pi * self.freq * t + self.phase0 + self.jitter * np.sin(2 * np.pi * t / self.jitter_period)

    def pose(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        ph = self.phase(t)[:, None]
        dx = self.direction * self.amp * self.swing[None, :] * np.sin(ph + self.swing_phase[None, :])
        bob = 0.02 * np.abs(np.sin(ph))
        x = self.template[None, :, 0] + dx
        y = self.template[None, :, 1] + bob
        pose = np.stack([x, y], axis=-1) * self.height
        # image coordinates: y grows downward
        pose[..., 1] *= -1
        pose[..., 0] += self.origin[0] + self.speed * t[:, None]
        pose[..., 1] += self.origin[1]
        return pose


def plan_injections(spec: SyntheticSpec, rng: np.random.Generator) -> list[tuple[AnomalyInjector, int]]:
    """Draw (injector, start_frame) segments for one actor.

    Frames are split into blocks of ``segment_length``; each injector takes a
    Binomial(n_free_blocks, rate) number of unused blocks.  Block 0 is never
    used so every segment has a normal history.
    """
    L = spec.segment_length
    n_blocks = spec.n_frames // L
    free = list(range(1, n_blocks))
    plan = []
    for inj in spec.injectors:
        if inj.kind == "reverse":
            cand = [b for b in free if b * L >= L + 1]
        else:
            cand = list(free)
        n = int(rng.binomial(len(cand), inj.rate)) if cand else 0
        chosen = sorted(int(b) for b in rng.choice(cand, size=n, replace=False)) if n else []
        for b in chosen:
            free.remove(b)
            plan.append((inj, b * L))
    return plan


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[PoseTrack], dict[tuple[str, int], int]]:
    """Generate harmonic-gait tracks with labelled anomaly segments.

    Returns the tracks and a ``(scene_id, frame_index) -> label`` mapping that
    covers every frame of every scene.
    """
    skeleton = Skeleton.default_for(spec.joint_count)
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_actors)
    tracks = []
    labels: dict[tuple[str, int], int] = {}
    frames = np.arange(spec.n_frames)
    for a, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        gait = _Gait(spec, rng)
        times = frames.astype(np.float64)
        offsets = np.zeros((spec.n_frames, 2))
        abnormal = np.zeros(spec.n_frames, dtype=bool)
        for inj, s in plan_injections(spec, rng):
            seg = np.arange(s, min(s + spec.segment_length, spec.n_frames))
            j = seg - s
            if inj.kind == "freeze":
                times[seg] = s - 1
            elif inj.kind == "reverse":
                times[seg] = s - 2 - j * inj.magnitude
            elif inj.kind == "speed_burst":
                times[seg] = s + j * max(inj.magnitude, 1.0)
            else:
                ang = rng.uniform(0, 2 * np.pi)
                offsets[seg] = inj.magnitude * gait.height * np.array([np.cos(ang), np.sin(ang)])
            abnormal[seg] = True
        joints = gait.pose(times) + offsets[:, None, :]
        joints += rng.normal(0.0, spec.step_noise * gait.height, size=joints.shape)
        scene = f"scene{a // spec.actors_per_scene:03d}"
        tracks.append(PoseTrack(scene, f"actor{a:03d}", frames.copy(), joints, skeleton))
        for f in frames:
            key = (scene, int(f))
            labels[key] = max(labels.get(key, 0), int(abnormal[f]))
    return tracks, labels

"""Stacked, normalized window arrays shared by training and scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion_data import (
    PoseTrack,
    Skeleton,
    SplitStrategy,
    normalize_window,
    slide_windows,
    window_key,
)


@dataclass
class WindowSet:
    """All windows of a dataset in normalized coordinates.

    ``poses`` is ``(W, N, J, 2)``; ``centers``/``scales`` invert the
    per-window normalization.
    """

    poses: np.ndarray
    masks: np.ndarray
    frame_indices: np.ndarray
    scene_ids: list
    actor_ids: list
    centers: np.ndarray
    scales: np.ndarray
    degenerate: np.ndarray
    normalization: str = "condition"

    def __len__(self) -> int:
        return len(self.poses)

    def keys(self) -> np.ndarray:
        """Stable integer id of each window (seeds its sampling noise)."""
        return np.array(
            [window_key(s, a, f[0]) for s, a, f in zip(self.scene_ids, self.actor_ids, self.frame_indices)],
            dtype=np.int64,
        )

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(
            self.poses[idx], self.masks[idx], self.frame_indices[idx],
            [self.scene_ids[i] for i in idx], [self.actor_ids[i] for i in idx],
            self.centers[idx], self.scales[idx], self.degenerate[idx], self.normalization,
        )


def build_window_set(
    tracks: list[PoseTrack],
    skeleton: Skeleton,
    window: int = 6,
    k: int = 3,
    stride: int = 1,
    strategy: SplitStrategy | None = None,
    normalization: str = "condition",
) -> WindowSet:
    strategy = strategy or SplitStrategy()
    J = skeleton.n_joints
    poses, masks, frames, scenes, actors, centers, scales, degen = [], [], [], [], [], [], [], []
    for tr in tracks:
        for w in slide_windows(tr, window, stride, strategy, k):
            nw, rec = normalize_window(w, normalization, skeleton.root_joints)
            poses.append(nw.poses)
            masks.append(nw.mask)
            frames.append(nw.frame_indices)
            scenes.append(w.scene_id)
            actors.append(w.actor_id)
            centers.append(rec.center)
            scales.append(rec.scale)
            degen.append(rec.degenerate)
    if not poses:
        return WindowSet(
            np.zeros((0, window, J, 2)), np.zeros((0, window), bool), np.zeros((0, window), np.int64),
            [], [], np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool), normalization,
        )
    return WindowSet(
        np.stack(poses), np.stack(masks), np.stack(frames), scenes, actors,
        np.asarray(centers, dtype=np.float64), np.asarray(scales, dtype=np.float64),
        np.asarray(degen, dtype=bool), normalization,
    )

"""Training loop, optimizer handling and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ._serialize import from_dict, to_dict
from .conditioning import (
    STRATEGIES,
    ConditionalDenoiser,
    LossWeights,
    build_model,
    check_strategy,
    rec_loss,
    split_past_target,
    total_loss,
)
from .denoiser import UNetConfig, param_count
from .diffusion import DiffusionConfig, VarianceSchedule, disp_loss, forward_diffuse
from .errors import CheckpointVersionError, ConfigError, NumericError, ProtocolError, SchemaError
from .motion_data import PoseDataset, Skeleton, SplitStrategy
from .windows import WindowSet, build_window_set

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"POSEDIFF"
CHECKPOINT_VERSION = 1
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    ``lr_decay`` is the per-epoch multiplicative learning-rate factor.
    ``early_stop_patience`` (epochs) stops once the epoch-mean loss has not
    improved by a relative ``early_stop_rel_tol`` for that many epochs.
    """

    epochs: int = 36
    lr: float = 1e-4
    lr_decay: float = 0.98
    batch_size: int = 256
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    strategy: str = "ae_embedding"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    window: int = 6
    k: int = 3
    stride: int = 1
    split: str = "forecasting"
    split_seed: int = 0
    normalization: str = "condition"
    enc_width: int = 16
    residual_norm: str = "mae"
    early_stop_patience: int | None = None
    early_stop_rel_tol: float = 0.01
    dtype: str = "float32"

    def __post_init__(self):
        check_strategy(self.strategy)
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        SplitStrategy(self.split, self.split_seed)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("lr must be >= 0 and lr_decay in (0, 1]")
        if not (self.window >= 2 and 1 <= self.k < self.window):
            raise ConfigError(f"need window >= 2 and 1 <= k < window, got {self.window}, {self.k}")
        if self.residual_norm not in ("mae", "mse"):
            raise ConfigError(f"unknown residual norm {self.residual_norm!r}")

    @property
    def split_strategy(self) -> SplitStrategy:
        return SplitStrategy(self.split, self.split_seed)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


@dataclass
class TrainState:
    config: TrainConfig
    skeleton: Skeleton
    model: ConditionalDenoiser
    optimizer: torch.optim.Adam
    schedule: VarianceSchedule
    generator: torch.Generator
    shuffle_rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    history: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)

    @property
    def strategy(self) -> str:
        return self.config.strategy

    def windows(self, tracks) -> WindowSet:
        """Window ``tracks`` exactly as training did."""
        c = self.config
        return build_window_set(tracks, self.skeleton, c.window, c.k, c.stride, c.split_strategy, c.normalization)


def new_state(config: TrainConfig, skeleton: Skeleton) -> TrainState:
    ucfg = config.unet.with_data(skeleton.n_joints, config.window - config.k, skeleton.edges, config.diffusion.T)
    model = build_model(config.strategy, ucfg, config.window, config.k, config.enc_width, config.seed)
    model.to(config.torch_dtype)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=tuple(config.adam_betas), eps=config.adam_eps)
    gen = torch.Generator().manual_seed(int(config.seed) + 1)
    rng = np.random.default_rng([int(config.seed), 2])
    logger.info("model has %d trainable parameters", param_count(model))
    return TrainState(config, skeleton, model, opt, config.diffusion.build(), gen, rng)


def compute_loss(model: ConditionalDenoiser, x, mask, t, eps, sched: VarianceSchedule,
                 weights: LossWeights = LossWeights(), norm: str = "mae"):
    """``(total, smooth, rec)`` for a window batch with given timesteps and noise.

    ``rec`` is ``None`` unless the strategy is ``ae_embedding``.
    """
    past, target = split_past_target(x, mask)
    x_t = forward_diffuse(target, t, eps, sched)
    cond = model.condition(past)
    eps_hat = model.predict(x_t, t, cond, mask)
    l_smooth = disp_loss(eps, eps_hat, norm, batch_dims=1).mean()
    l_rec = rec_loss(model.decoder, cond, past) if model.strategy == "ae_embedding" else None
    return total_loss(l_smooth, l_rec, weights), l_smooth, l_rec


def train_step(state: TrainState, x: torch.Tensor, mask: torch.Tensor) -> dict:
    """One optimizer update on a batch of normalized windows."""
    cfg = state.config
    B = x.shape[0]
    t = torch.randint(1, state.schedule.T + 1, (B,), generator=state.generator)
    n_target = int(mask[0].sum())
    eps = torch.randn((B, n_target) + tuple(x.shape[2:]), generator=state.generator, dtype=x.dtype)
    state.model.train()
    loss, l_smooth, l_rec = compute_loss(state.model, x, mask, t, eps, state.schedule,
                                         cfg.loss_weights, cfg.residual_norm)
    if not bool(torch.isfinite(loss)):
        raise NumericError(f"non-finite loss at step {state.step} (t={t.tolist()})")
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.step += 1
    rec = {
        "step": state.step,
        "epoch": state.epoch,
        "loss": float(loss.detach()),
        "loss_smooth": float(l_smooth.detach()),
        "loss_rec": None if l_rec is None else float(l_rec.detach()),
        "lr": state.optimizer.param_groups[0]["lr"],
    }
    state.history.append(rec)
    return rec


def check_occ(dataset: PoseDataset) -> None:
    """Refuse training data that carries any anomalous frame label."""
    bad = dataset.anomalous_frames()
    if bad:
        ex = sorted(bad)[:3]
        raise ProtocolError(
            f"training data contains {len(bad)} anomalous-labelled frames (e.g. {ex}); "
            "training must use normal data only"
        )


def training_windows(dataset: PoseDataset, config: TrainConfig) -> WindowSet:
    check_occ(dataset)
    ws = build_window_set(dataset.tracks, dataset.skeleton, config.window, config.k, config.stride,
                          config.split_strategy, config.normalization)
    bad = dataset.anomalous_frames()
    for s, f in zip(ws.scene_ids, ws.frame_indices):
        if any((s, int(i)) in bad for i in f):
            raise ProtocolError(f"window in {s} overlaps an anomalous frame")
    return ws


def fit(
    config: TrainConfig,
    dataset: PoseDataset,
    out_dir: str | Path | None = None,
    state: TrainState | None = None,
    callback: Callable[[dict], None] | None = None,
    max_epochs: int | None = None,
) -> TrainState:
    """Train on normal data; ``state`` resumes a previous run.

    Rewrites ``out_dir/checkpoint.bin`` after every epoch when ``out_dir`` is
    given.  ``max_epochs`` caps the number of epochs
    run in this call without changing the schedule.
    """
    ws = training_windows(dataset, config)
    if len(ws) == 0:
        raise SchemaError("no training windows: tracks are shorter than the window size")
    if state is None:
        state = new_state(config, dataset.skeleton)
    elif state.skeleton.n_joints != dataset.skeleton.n_joints:
        raise SchemaError("resumed state and dataset disagree on the joint count")
    x_all = torch.from_numpy(ws.poses).to(config.torch_dtype)
    m_all = torch.from_numpy(ws.masks)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    stop = config.epochs if max_epochs is None else min(config.epochs, state.epoch + max_epochs)
    while state.epoch < stop:
        lr = config.lr * config.lr_decay ** state.epoch
        for g in state.optimizer.param_groups:
            g["lr"] = lr
        perm = state.shuffle_rng.permutation(len(ws))
        losses = []
        for s in range(0, len(perm), config.batch_size):
            idx = torch.from_numpy(perm[s:s + config.batch_size])
            rec = train_step(state, x_all[idx], m_all[idx])
            losses.append(rec["loss"])
            if callback is not None:
                callback(rec)
        state.epoch_losses.append(float(np.mean(losses)))
        state.epoch += 1
        if out_dir is not None:
            save_checkpoint(state, out_dir / "checkpoint.bin")
        if _plateaued(state.epoch_losses, config):
            logger.info("loss plateau after epoch %d; stopping", state.epoch)
            break
    return state


def _plateaued(losses, config: TrainConfig) -> bool:
    p = config.early_stop_patience
    if not p or len(losses) <= p:
        return False
    best_before = min(losses[:-p])
    return min(losses[-p:]) > best_before * (1 - config.early_stop_rel_tol)


# ------------------------------------------------------------ checkpoints


def _tensor_entries(state: TrainState) -> dict[str, np.ndarray]:
    out = {}
    for name, t in state.model.state_dict().items():
        out[f"model/{name}"] = t.detach().cpu().numpy()
    for idx, st in state.optimizer.state_dict()["state"].items():
        for key, v in st.items():
            out[f"optim/{idx}/{key}"] = torch.as_tensor(v).detach().cpu().numpy()
    out["rng/torch"] = state.generator.get_state().numpy()
    return out


def save_checkpoint(state: TrainState, path: str | Path, created: float | None = None) -> Path:
    """Write a self-describing checkpoint: magic, header length, JSON header, raw tensors."""
    path = Path(path)
    tensors = _tensor_entries(state)
    index, blobs, offset = [], [], 0
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name])
        b = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
        index.append({"name": name, "dtype": a.dtype.str.lstrip("<>|="), "shape": list(a.shape),
                      "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    groups = state.optimizer.state_dict()["param_groups"]
    header = {
        "format": "posediff-checkpoint",
        "version": CHECKPOINT_VERSION,
        "created": time.time() if created is None else created,
        "config": to_dict(state.config),
        "skeleton": state.skeleton.to_dict(),
        "schedule": state.schedule.to_dict(),
        "strategy": state.config.strategy,
        "normalization": state.config.normalization,
        "param_count": param_count(state.model),
        "epoch": state.epoch,
        "step": state.step,
        "history": state.history,
        "epoch_losses": state.epoch_losses,
        "shuffle_rng": state.shuffle_rng.bit_generator.state,
        "optimizer_groups": [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()} for g in groups],
        "tensors": index,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)
    return path


def read_checkpoint_raw(path: str | Path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise SchemaError(f"{path} is not a posediff checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    return header, data[16 + n:]


def load_checkpoint(path: str | Path) -> TrainState:
    header, blob = read_checkpoint_raw(path)
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {header.get('version')} is incompatible with {CHECKPOINT_VERSION}"
        )
    config = from_dict(TrainConfig, header["config"])
    sk = header["skeleton"]
    skeleton = Skeleton(sk["joint_count"], tuple(tuple(e) for e in sk["edges"]), tuple(sk["root_joints"]))
    state = new_state(config, skeleton)
    arrays = {}
    for e in header["tensors"]:
        a = np.frombuffer(blob, dtype=np.dtype("<" + e["dtype"]) if e["dtype"][0] in "fiu" else e["dtype"],
                          count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).copy()
    state.model.load_state_dict({k[6:]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model/")})
    opt_state: dict = {}
    for k, v in arrays.items():
        if k.startswith("optim/"):
            _, idx, key = k.split("/")
            opt_state.setdefault(int(idx), {})[key] = torch.from_numpy(v)
    groups = header["optimizer_groups"]
    for g in groups:
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
    state.optimizer.load_state_dict({"state": opt_state, "param_groups": groups})
    state.generator.set_state(torch.from_numpy(arrays["rng/torch"]))
    state.shuffle_rng.bit_generator.state = header["shuffle_rng"]
    state.epoch = header["epoch"]
    state.step = header["step"]
    state.history = header["history"]
    state.epoch_losses = header["epoch_losses"]
    if not np.allclose(state.schedule.betas, header["schedule"]["betas"], rtol=0, atol=0):
        raise SchemaError("stored schedule does not match the one rebuilt from the config")
    return state


def check_compatible(state: TrainState, skeleton: Skeleton, strategy: str | None = None) -> None:
    """Refuse scoring data or settings that disagree with the checkpoint."""
    if skeleton.n_joints != state.skeleton.n_joints:
        raise SchemaError(
            f"dataset has {skeleton.n_joints} joints but the checkpoint was trained on {state.skeleton.n_joints}"
        )
    if strategy is not None and strategy != state.strategy:
        raise SchemaError(f"strategy {strategy!r} does not match checkpoint strategy {state.strategy!r}")


__all__ = [
    "STRATEGIES", "TrainConfig", "TrainState", "check_compatible", "check_occ", "compute_loss", "fit",
    "load_checkpoint", "new_state", "read_checkpoint_raw", "save_checkpoint", "train_step", "training_windows",
]

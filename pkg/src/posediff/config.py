"""Experiment configuration file (YAML or JSON) and override handling."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ._serialize import from_dict, to_dict
from .errors import ConfigError, ParseError
from .evaluation import EvalConfig
from .motion_data import SyntheticSpec
from .training import TrainConfig

ENV_OUTPUT_DIR = "POSEDIFF_OUTPUT_DIR"
ENV_WORKERS = "POSEDIFF_WORKERS"

DEFAULT_TEST_INJECTORS = (
    {"kind": "freeze", "rate": 0.08, "magnitude": 1.0},
    {"kind": "teleport", "rate": 0.05, "magnitude": 0.3},
    {"kind": "reverse", "rate": 0.05, "magnitude": 1.0},
    {"kind": "speed_burst", "rate": 0.05, "magnitude": 3.0},
)


@dataclass(frozen=True)
class DataConfig:
    """Dataset manifests; synthetic specs are used by ``synth`` and when a manifest is unset."""

    train_manifest: str | None = None
    test_manifest: str | None = None
    synthetic_train: SyntheticSpec | None = field(
        default_factory=lambda: SyntheticSpec(n_actors=12, n_frames=200, seed=100))
    synthetic_test: SyntheticSpec | None = field(
        default_factory=lambda: SyntheticSpec(n_actors=8, n_frames=200, seed=200, injectors=DEFAULT_TEST_INJECTORS))


@dataclass(frozen=True)
class AblationConfig:
    strategies: tuple = ("input_concat", "e2e_embedding", "ae_embedding")
    tasks: tuple = ("forecasting", "in_between", "random_imputation")


@dataclass(frozen=True)
class ExperimentConfig:
    """A full run.  ``seed`` overrides ``train.seed`` and seeds generation at scoring."""

    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    workers: int = 1

    def resolved_train(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)


CONFIG_DOCS = {
    "seed": "master seed: training init/noise and generation noise",
    "output_dir": "directory for data, checkpoints, metrics and reports (env POSEDIFF_OUTPUT_DIR)",
    "workers": "CPU threads used by torch (env POSEDIFF_WORKERS)",
    "data.train_manifest": "manifest of the normal-only training set (default: synthetic)",
    "data.test_manifest": "manifest of the labelled test set (default: synthetic)",
    "data.synthetic_train.*": "SyntheticSpec for synthetic training data",
    "data.synthetic_test.*": "SyntheticSpec for synthetic test data (with injectors)",
    "data.synthetic_*.n_actors / n_frames / joint_count": "size of the generated set",
    "data.synthetic_*.amplitude / frequency / phase_jitter / step_noise": "gait shape (body heights, cycles/frame)",
    "data.synthetic_*.injectors": "list of {kind: freeze|teleport|reverse|speed_burst, rate, magnitude}",
    "data.synthetic_*.segment_length / actors_per_scene / seed": "anomaly segment size, scene grouping, seed",
    "train.epochs": "training epochs (36)",
    "train.lr / lr_decay": "Adam learning rate and per-epoch exponential decay factor",
    "train.batch_size": "windows per optimizer step",
    "train.adam_betas / adam_eps": "Adam moment decay rates and epsilon",
    "train.strategy": "input_concat | e2e_embedding | ae_embedding",
    "train.loss_weights.smooth / rec": "weights of the displacement and reconstruction losses",
    "train.diffusion.schedule / T": "cosine | linear schedule and number of steps (10)",
    "train.diffusion.beta_start / beta_end / cosine_s": "linear endpoints and cosine offset",
    "train.unet.channels": "symmetric channel ladder, e.g. [2, 32, 64, 32, 2]",
    "train.unet.cond_dim / layers_per_level / activation": "conditioning width, depth per level, nonlinearity",
    "train.unet.hard_mask / self_loops / timestep_embedding": "adjacency masking, self loops, sinusoidal|learned",
    "train.window / k / stride": "window length N, clean frames k, window stride",
    "train.split / split_seed": "forecasting | in_between | random_imputation and its seed",
    "train.normalization": "condition | none",
    "train.enc_width": "hidden width of the past-motion encoder/decoder",
    "train.residual_norm": "mae | mse residual reduction before smoothing",
    "train.early_stop_patience / early_stop_rel_tol": "stop after a loss plateau of that many epochs",
    "train.dtype": "float32 | float64",
    "eval.statistics / ms": "aggregation statistics (min, max, mean, median, q0.25, ...) x generation counts",
    "eval.default_statistic / default_m": "the headline cell of the report",
    "eval.chunk_size / histogram_bins": "sampling batch size, histogram export bins",
    "ablation.strategies / tasks": "matrix run by the ablate command",
}


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a config file, apply ``key.path=value`` overrides and env overrides."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ParseError(f"config does not parse: {exc}", path) from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, val = ov.split("=", 1)
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-mapping key {p!r}")
        node[parts[-1]] = yaml.safe_load(val)
    if os.environ.get(ENV_OUTPUT_DIR):
        raw["output_dir"] = os.environ[ENV_OUTPUT_DIR]
    if os.environ.get(ENV_WORKERS):
        raw["workers"] = int(os.environ[ENV_WORKERS])
    return from_dict(ExperimentConfig, raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def config_keys(cls=ExperimentConfig, prefix="") -> list[str]:
    keys = []
    for f in dataclasses.fields(cls):
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            keys += config_keys(type(default), prefix + f.name + ".")
        else:
            keys.append(prefix + f.name)
    return keys

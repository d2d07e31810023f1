"""Space-time separable graph-convolution U-Net that predicts the displacement map.

Tensors are laid out ``(batch, frames, joints, channels)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericError, ShapeError
from .motion_data import COCO17_EDGES

ACTIVATIONS = {"silu": nn.SiLU, "relu": nn.ReLU, "tanh": nn.Tanh, "gelu": nn.GELU}


@dataclass(frozen=True)
class UNetConfig:
    """U-Net shape.  ``channels`` is the full ladder, e.g. ``(2, 32, 64, 32, 2)``."""

    channels: tuple = (2, 32, 64, 32, 2)
    n_joints: int = 17
    n_frames: int = 3
    cond_dim: int = 64
    layers_per_level: int = 1
    activation: str = "silu"
    hard_mask: bool = False
    self_loops: bool = True
    timestep_embedding: str = "sinusoidal"
    T: int = 10
    edges: tuple = COCO17_EDGES

    def __post_init__(self):
        ch = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        if len(ch) < 3 or len(ch) % 2 == 0:
            raise ConfigError(f"channel ladder needs an odd length >= 3, got {ch}")
        if ch != ch[::-1]:
            raise ConfigError(f"channel ladder must be symmetric, got {ch}")
        if min(ch) < 1 or self.n_joints < 1 or self.n_frames < 1 or self.cond_dim < 1:
            raise ConfigError("widths, joint count and frame count must be positive")
        if self.layers_per_level < 1:
            raise ConfigError("layers_per_level must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.timestep_embedding not in ("sinusoidal", "learned"):
            raise ConfigError(f"unknown timestep embedding {self.timestep_embedding!r}")
        if self.timestep_embedding == "sinusoidal" and self.cond_dim % 2:
            raise ConfigError("sinusoidal embedding needs an even cond_dim")

    @property
    def coord_dim(self) -> int:
        return self.channels[0]

    @property
    def depth(self) -> int:
        return len(self.channels) // 2

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_joints, self.n_joints))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def with_data(self, n_joints: int, n_frames: int, edges, T: int) -> "UNetConfig":
        return replace(self, n_joints=n_joints, n_frames=n_frames, edges=tuple(edges), T=T)


def normalized_adjacency(adj: np.ndarray, self_loops: bool = True) -> np.ndarray:
    a = adj + np.eye(len(adj)) if self_loops else adj.copy()
    deg = a.sum(axis=1)
    deg[deg == 0] = 1.0
    d = 1.0 / np.sqrt(deg)
    return d[:, None] * a * d[None, :]


def _uniform(gen, shape, bound):
    return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound


class STSGCNLayer(nn.Module):
    """Temporal mixing over frames, spatial mixing over joints, channel projection."""

    def __init__(self, c_in, c_out, n_frames, adjacency, activation="silu",
                 hard_mask=False, self_loops=True, final=False, cond_dim=None):
        super().__init__()
        J = adjacency.shape[0]
        self.c_in, self.c_out = c_in, c_out
        self.spatial = nn.Parameter(torch.as_tensor(normalized_adjacency(adjacency, self_loops)))
        self.temporal = nn.Parameter(torch.eye(n_frames, dtype=torch.float64))
        self.weight = nn.Parameter(torch.zeros(c_in, c_out, dtype=torch.float64))
        self.bias = nn.Parameter(torch.zeros(c_out, dtype=torch.float64))
        mask = adjacency + (np.eye(J) if self_loops else 0)
        self.register_buffer("spatial_mask", torch.as_tensor((mask > 0).astype(np.float64)))
        self.hard_mask = hard_mask
        self.act = None if final else ACTIVATIONS[activation]()
        self.cond_proj = nn.Linear(cond_dim, c_in, dtype=torch.float64) if cond_dim else None

    def reset_parameters(self, gen: torch.Generator):
        with torch.no_grad():
            self.weight.copy_(_uniform(gen, self.weight.shape, 1 / math.sqrt(self.c_in)))
            self.bias.zero_()
            n = self.temporal.shape[0]
            self.temporal.copy_(torch.eye(n, dtype=torch.float64) + _uniform(gen, (n, n), 0.1))
            if self.cond_proj is not None:
                d = self.cond_proj.in_features
                self.cond_proj.weight.copy_(_uniform(gen, self.cond_proj.weight.shape, 1 / math.sqrt(d)))
                self.cond_proj.bias.zero_()

    def spatial_weights(self) -> torch.Tensor:
        return self.spatial * self.spatial_mask if self.hard_mask else self.spatial

    def forward(self, x, cond=None):
        if self.cond_proj is not None and cond is not None:
            x = x + self.cond_proj(cond)[:, None, None, :]
        B, F, J, _ = x.shape
        # temporal then spatial mixing == one (F*J, F*J) Kronecker-factored matrix
        mix = torch.kron(self.temporal, self.spatial_weights())
        x = x.reshape(B, F * J, self.c_in)
        if self.c_out < self.c_in:
            x = mix @ (x @ self.weight)
        else:
            x = (mix @ x) @ self.weight
        x = (x + self.bias).reshape(B, F, J, self.c_out)
        return x if self.act is None else self.act(x)


class TimestepEmbedding(nn.Module):
    """Sinusoidal code of ``t`` (or a learned table) followed by a two-layer MLP."""

    def __init__(self, dim, T, kind="sinusoidal"):
        super().__init__()
        self.dim, self.kind = dim, kind
        self.table = nn.Embedding(T + 1, dim, dtype=torch.float64) if kind == "learned" else None
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim, dtype=torch.float64), nn.SiLU(), nn.Linear(dim, dim, dtype=torch.float64)
        )

    def encode(self, t: torch.Tensor) -> torch.Tensor:
        if self.table is not None:
            return self.table(t)
        half = self.dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
        ang = t.to(torch.float64)[:, None] * freqs[None, :]
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        w = self.mlp[0].weight
        return self.mlp(self.encode(t).to(w.dtype))

    def reset_parameters(self, gen):
        with torch.no_grad():
            for lin in (self.mlp[0], self.mlp[2]):
                lin.weight.copy_(_uniform(gen, lin.weight.shape, 1 / math.sqrt(lin.in_features)))
                lin.bias.zero_()
            if self.table is not None:
                self.table.weight.copy_(torch.randn(self.table.weight.shape, generator=gen, dtype=torch.float64))


class UNetDenoiser(nn.Module):
    """Predicts the displacement map of the corrupted frames.

    Every layer receives the projected conditioning signal (timestep
    embedding plus optional motion embedding).  Decoder levels after the
    bottleneck add the output of their specular encoder level, and the
    network input is added to the output.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        adj = cfg.adjacency()
        ch, L = cfg.channels, cfg.depth

        def layer(ci, co, final=False):
            return STSGCNLayer(ci, co, cfg.n_frames, adj, cfg.activation, cfg.hard_mask,
                               cfg.self_loops, final=final, cond_dim=cfg.cond_dim)

        self.encoder = nn.ModuleList()
        for i in range(L):
            lv = [layer(ch[i], ch[i + 1])]
            lv += [layer(ch[i + 1], ch[i + 1]) for _ in range(cfg.layers_per_level - 1)]
            self.encoder.append(nn.ModuleList(lv))
        self.decoder = nn.ModuleList()
        for j in range(L):
            ci, co = ch[L + j], ch[L + j + 1]
            lv = [layer(ci, ci) for _ in range(cfg.layers_per_level - 1)]
            lv.append(layer(ci, co, final=(j == L - 1)))
            self.decoder.append(nn.ModuleList(lv))
        self.time_embed = TimestepEmbedding(cfg.cond_dim, cfg.T, cfg.timestep_embedding)

    def reset_parameters(self, gen):
        self.time_embed.reset_parameters(gen)
        for lv in list(self.encoder) + list(self.decoder):
            for l in lv:
                l.reset_parameters(gen)

    def forward(self, x, t, h=None):
        cfg = self.cfg
        if x.ndim != 4 or tuple(x.shape[1:]) != (cfg.n_frames, cfg.n_joints, cfg.coord_dim):
            raise ShapeError(
                f"expected (B, {cfg.n_frames}, {cfg.n_joints}, {cfg.coord_dim}), got {tuple(x.shape)}"
            )
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        cond = self.time_embed(t)
        if h is not None:
            cond = cond + h
        out = self._run(x, cond)
        if not bool(torch.isfinite(out).all()):
            # rerun layer by layer only to name the culprit
            self._run(x, cond, check=True)
            raise NumericError("non-finite denoiser output")
        return out

    def _run(self, x, cond, check=False):
        x_in = x
        skips = []
        for i, lv in enumerate(self.encoder):
            for j, l in enumerate(lv):
                x = l(x, cond)
                if check:
                    self._checked(x, f"encoder[{i}][{j}]")
            skips.append(x)
        L = self.cfg.depth
        for i, lv in enumerate(self.decoder):
            if i > 0:
                x = x + skips[L - 1 - i]
            for j, l in enumerate(lv):
                x = l(x, cond)
                if check:
                    self._checked(x, f"decoder[{i}][{j}]")
        # outermost specular pair: network input to network output
        return x + x_in

    @staticmethod
    def _checked(x, name):
        if not bool(torch.isfinite(x).all()):
            raise NumericError(f"non-finite activation in layer {name}")
        return x


def init_params(cfg: UNetConfig, seed: int = 0) -> UNetDenoiser:
    """Build a denoiser with fan-in scaled uniform weights drawn from ``seed``."""
    model = UNetDenoiser(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    model.reset_parameters(gen)
    return model


def param_count(cfg_or_model) -> int:
    model = cfg_or_model if isinstance(cfg_or_model, nn.Module) else UNetDenoiser(cfg_or_model)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)

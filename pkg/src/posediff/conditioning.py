"""Past-motion conditioning strategies and the total loss.

* ``input_concat``: clean past frames are placed next to the corrupted
  target frames and the denoiser sees the whole window.
* ``e2e_embedding``: an STS-GCN encoder maps the past to a vector ``h``
  trained only through the displacement loss.
* ``ae_embedding``: as above, plus a decoder reconstructing the past from
  ``h`` (auxiliary squared-error loss).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
from torch import nn

from .denoiser import STSGCNLayer, UNetConfig, UNetDenoiser, _uniform
from .errors import ConfigError, ShapeError

STRATEGIES = ("input_concat", "e2e_embedding", "ae_embedding")


def check_strategy(kind: str) -> str:
    if kind not in STRATEGIES:
        raise ConfigError(f"unknown conditioning strategy {kind!r}; expected one of {STRATEGIES}")
    return kind


@dataclass(frozen=True)
class LossWeights:
    smooth: float = 1.0
    rec: float = 1.0

    def __post_init__(self):
        for v in (self.smooth, self.rec):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"loss weights must lie in [0, 1], got {v}")


class MotionEncoder(nn.Module):
    """Two STS-GCN layers over the past frames, flattened into ``h``."""

    def __init__(self, n_frames, adjacency, coord_dim=2, width=16, cond_dim=64, activation="silu"):
        super().__init__()
        J = adjacency.shape[0]
        self.layers = nn.ModuleList([
            STSGCNLayer(coord_dim, width, n_frames, adjacency, activation),
            STSGCNLayer(width, width, n_frames, adjacency, activation),
        ])
        self.proj = nn.Linear(n_frames * J * width, cond_dim, dtype=torch.float64)

    def reset_parameters(self, gen):
        for l in self.layers:
            l.reset_parameters(gen)
        with torch.no_grad():
            self.proj.weight.copy_(_uniform(gen, self.proj.weight.shape, 1 / math.sqrt(self.proj.in_features)))
            self.proj.bias.zero_()

    def forward(self, past):
        x = past
        for l in self.layers:
            x = l(x)
        return self.proj(x.flatten(1))


class MotionDecoder(nn.Module):
    """Mirror of :class:`MotionEncoder`: ``h`` back to the past frames."""

    def __init__(self, n_frames, adjacency, coord_dim=2, width=16, cond_dim=64, activation="silu"):
        super().__init__()
        J = adjacency.shape[0]
        self.shape = (n_frames, J, width)
        self.proj = nn.Linear(cond_dim, n_frames * J * width, dtype=torch.float64)
        self.act = nn.SiLU()
        self.layers = nn.ModuleList([
            STSGCNLayer(width, width, n_frames, adjacency, activation),
            STSGCNLayer(width, coord_dim, n_frames, adjacency, activation, final=True),
        ])

    def reset_parameters(self, gen):
        with torch.no_grad():
            self.proj.weight.copy_(_uniform(gen, self.proj.weight.shape, 1 / math.sqrt(self.proj.in_features)))
            self.proj.bias.zero_()
        for l in self.layers:
            l.reset_parameters(gen)

    def forward(self, h):
        x = self.act(self.proj(h)).reshape(h.shape[0], *self.shape)
        for l in self.layers:
            x = l(x)
        return x


class ConditionalDenoiser(nn.Module):
    """Denoiser plus the strategy-specific conditioning path."""

    def __init__(self, strategy: str, unet_cfg: UNetConfig, window: int, k: int, enc_width: int = 16):
        super().__init__()
        self.strategy = check_strategy(strategy)
        self.window, self.k = window, k
        n_target = window - k
        frames = window if strategy == "input_concat" else n_target
        self.unet_cfg = replace(unet_cfg, n_frames=frames)
        self.unet = UNetDenoiser(self.unet_cfg)
        adj = self.unet_cfg.adjacency()
        c, d = self.unet_cfg.coord_dim, self.unet_cfg.cond_dim
        self.encoder = None
        self.decoder = None
        if strategy != "input_concat":
            self.encoder = MotionEncoder(k, adj, c, enc_width, d, self.unet_cfg.activation)
        if strategy == "ae_embedding":
            self.decoder = MotionDecoder(k, adj, c, enc_width, d, self.unet_cfg.activation)

    def reset_parameters(self, gen):
        self.unet.reset_parameters(gen)
        if self.encoder is not None:
            self.encoder.reset_parameters(gen)
        if self.decoder is not None:
            self.decoder.reset_parameters(gen)

    def condition(self, past):
        return make_condition(self.strategy, past, self.encoder)

    def predict(self, x_t_target, t, cond, mask):
        """Predicted displacement of the target frames, ``(B, N - k, J, c)``."""
        B = x_t_target.shape[0]
        if self.strategy == "input_concat":
            full = concat_input(cond, x_t_target, mask)
            out = self.unet(full, t)
            return out[mask].reshape(B, -1, *out.shape[2:])
        return self.unet(x_t_target, t, cond)


def concat_input(past, x_t_target, mask):
    """Interleave clean past and corrupted target frames back into window order."""
    B = x_t_target.shape[0]
    mask = torch.as_tensor(mask)
    if mask.ndim == 1:
        mask = mask.expand(B, -1)
    full = torch.empty((B, mask.shape[1]) + tuple(x_t_target.shape[2:]), dtype=x_t_target.dtype)
    full[~mask] = past.reshape(-1, *past.shape[2:]).to(x_t_target.dtype)
    full[mask] = x_t_target.reshape(-1, *x_t_target.shape[2:])
    return full


def make_condition(strategy: str, past, encoder: MotionEncoder | None = None):
    """Raw past frames for ``input_concat``, otherwise ``h = E(past)``."""
    check_strategy(strategy)
    if strategy == "input_concat":
        return past
    if encoder is None:
        raise ConfigError(f"strategy {strategy!r} needs encoder parameters")
    return encoder(past)


def rec_loss(decoder: MotionDecoder | None, h, past):
    """Mean squared error between ``D(h)`` and the true past frames."""
    if decoder is None:
        raise ConfigError("rec_loss is only defined for the ae_embedding strategy")
    rec = decoder(h)
    if rec.shape != past.shape:
        raise ShapeError(f"decoded {tuple(rec.shape)} vs past {tuple(past.shape)}")
    return ((rec - past) ** 2).mean()


def total_loss(l_smooth, l_rec=None, w: LossWeights = LossWeights()):
    """``w.smooth * l_smooth + w.rec * l_rec``; just ``l_smooth`` without a reconstruction term."""
    if l_rec is None:
        return l_smooth
    return w.smooth * l_smooth + w.rec * l_rec


def build_model(strategy: str, unet_cfg: UNetConfig, window: int, k: int,
                enc_width: int = 16, seed: int = 0) -> ConditionalDenoiser:
    model = ConditionalDenoiser(strategy, unet_cfg, window, k, enc_width)
    model.reset_parameters(torch.Generator().manual_seed(int(seed)))
    return model


def split_past_target(x_full, mask):
    """``(past, target)`` views of a ``(B, N, J, c)`` batch under a ``(B, N)`` mask."""
    B = x_full.shape[0]
    past = x_full[~mask].reshape(B, -1, *x_full.shape[2:])
    target = x_full[mask].reshape(B, -1, *x_full.shape[2:])
    return past, target

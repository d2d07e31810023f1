"""Variance schedules, forward corruption, reverse sampling and the losses.

Functions here accept numpy arrays or torch tensors interchangeably; the
schedule itself is kept in float64 numpy.  Timesteps are 1-based:
``t`` ranges over ``1..T`` and ``alpha_bars[t - 1]`` is the cumulative
product up to step ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import ConfigError, DomainError, NumericError, ShapeError

COSINE_BETA_MAX = 0.999


@dataclass(frozen=True)
class VarianceSchedule:
    kind: str
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 1:
            raise ConfigError("schedule needs at least one step")
        if not np.all((b > 0) & (b < 1)):
            raise ConfigError("all betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def check_t(self, t) -> None:
        tt = np.asarray(t.detach().cpu() if torch.is_tensor(t) else t)
        if tt.size == 0 or tt.min() < 1 or tt.max() > self.T:
            raise DomainError(f"timestep must lie in [1, {self.T}], got {tt.min() if tt.size else t}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "betas": self.betas.tolist()}


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> VarianceSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return VarianceSchedule("linear", np.array([beta_start]))
    return VarianceSchedule("linear", np.linspace(beta_start, beta_end, T, dtype=np.float64))


def cosine_schedule(T: int, s: float = 0.008) -> VarianceSchedule:
    """Cosine schedule: alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2).

    Betas are ``1 - alpha_bar(t) / alpha_bar(t - 1)`` capped at 0.999.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    if not s > 0:
        raise ConfigError("cosine offset s must be positive")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
    abar = f / f[0]
    betas = 1.0 - abar[1:] / abar[:-1]
    return VarianceSchedule("cosine", np.clip(betas, 0.0, COSINE_BETA_MAX))


def make_schedule(kind: str, T: int, beta_start: float = 1e-4, beta_end: float = 2e-2,
                  cosine_s: float = 0.008) -> VarianceSchedule:
    if kind == "linear":
        return linear_schedule(T, beta_start, beta_end)
    if kind == "cosine":
        return cosine_schedule(T, cosine_s)
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _coef(values: np.ndarray, t, like):
    """Per-sample coefficient ``values[t - 1]`` broadcastable against ``like``."""
    if isinstance(t, (int, np.integer)):
        return float(values[int(t) - 1])
    idx = np.asarray(t.detach().cpu() if torch.is_tensor(t) else t, dtype=np.int64) - 1
    c = values[idx]
    shape = c.shape + (1,) * (like.ndim - c.ndim)
    if torch.is_tensor(like):
        return torch.as_tensor(c.reshape(shape), dtype=like.dtype, device=like.device)
    return c.reshape(shape)


def forward_diffuse(x0, t, eps, sched: VarianceSchedule):
    """Closed-form corruption ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``.

    ``t`` is an int or a per-sample vector along the leading axis.
    """
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ")
    sched.check_t(t)
    ab = sched.alpha_bars
    return _coef(np.sqrt(ab), t, x0) * x0 + _coef(np.sqrt(1.0 - ab), t, x0) * eps


def forward_step(x_prev, t: int, noise, sched: VarianceSchedule):
    """One Markov step ``sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise``."""
    sched.check_t(t)
    b = sched.betas[t - 1]
    return math.sqrt(1.0 - b) * x_prev + math.sqrt(b) * noise


def corrupt_window(x_full, mask, t, eps, sched: VarianceSchedule):
    """Corrupt the masked frames of a ``(B, N, J, c)`` window batch.

    ``eps`` holds the target frames only, ``(B, N - k, J, c)``.  Conditioning
    frames are copied through untouched.
    """
    out = x_full.clone() if torch.is_tensor(x_full) else np.array(x_full, copy=True)
    B = x_full.shape[0]
    target = x_full[mask].reshape(B, -1, *x_full.shape[2:])
    out[mask] = forward_diffuse(target, t, eps, sched).reshape(-1, *x_full.shape[2:])
    return out


@dataclass
class MomentReport:
    t: int
    n_draws: int
    stepwise_mean: np.ndarray
    stepwise_var: np.ndarray
    closed_mean: np.ndarray
    closed_var: float
    max_mean_dev: float
    max_var_dev: float
    mean_se: float
    var_se: float

    def within_tolerance(self, n_se: float = 3.0) -> bool:
        return self.max_mean_dev < n_se * self.mean_se and self.max_var_dev < n_se * self.var_se


def iterated_forward_equivalence_check(x0: np.ndarray, t: int, sched: VarianceSchedule,
                                       n_draws: int = 10_000, seed: int = 0) -> MomentReport:
    """Compose the single-step chain ``t`` times and compare its moments to the closed form.

    Standard errors are taken from the closed-form distribution:
    ``sqrt(v / n)`` for the mean and ``v * sqrt(2 / (n - 1))`` for the variance.
    """
    sched.check_t(t)
    rng = np.random.Generator(np.random.Philox(seed))
    x0 = np.asarray(x0, dtype=np.float64)
    x = np.broadcast_to(x0, (n_draws,) + x0.shape).copy()
    for s in range(1, t + 1):
        x = forward_step(x, s, rng.standard_normal(x.shape), sched)
    ab = sched.alpha_bars[t - 1]
    mean_cf = math.sqrt(ab) * x0
    var_cf = 1.0 - ab
    m = x.mean(axis=0)
    v = x.var(axis=0, ddof=1)
    return MomentReport(
        t=t, n_draws=n_draws, stepwise_mean=m, stepwise_var=v, closed_mean=mean_cf, closed_var=var_cf,
        max_mean_dev=float(np.max(np.abs(m - mean_cf))),
        max_var_dev=float(np.max(np.abs(v - var_cf))),
        mean_se=math.sqrt(var_cf / n_draws),
        var_se=var_cf * math.sqrt(2.0 / (n_draws - 1)),
    )


def smooth_loss(d):
    """``0.5 d^2`` below 1, ``d - 0.5`` above; defined for ``d >= 0``."""
    if torch.is_tensor(d):
        if bool((d < 0).any()):
            raise DomainError("smooth_loss is defined for nonnegative input only")
        return torch.where(d < 1.0, 0.5 * d * d, d - 0.5)
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError("smooth_loss is defined for nonnegative input only")
    out = np.where(arr < 1.0, 0.5 * arr * arr, arr - 0.5)
    return float(out) if out.ndim == 0 else out


def residual_norm(a, b, norm: str = "mae", batch_dims: int = 0):
    """Mean absolute (or squared) residual, reduced over all but ``batch_dims`` leading axes."""
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"shapes {tuple(a.shape)} and {tuple(b.shape)} differ")
    r = a - b
    r = r.abs() if torch.is_tensor(r) else np.abs(r)
    if norm == "mse":
        r = r * r
    elif norm != "mae":
        raise ConfigError(f"unknown residual norm {norm!r}")
    axes = tuple(range(batch_dims, r.ndim))
    if torch.is_tensor(r):
        return r.mean(dim=axes) if axes else r
    return r.mean(axis=axes) if axes else r


def disp_loss(eps_true, eps_pred, norm: str = "mae", batch_dims: int = 0):
    """Smoothed displacement loss of one residual (or a batch of them)."""
    return smooth_loss(residual_norm(eps_true, eps_pred, norm, batch_dims))


def reverse_step(x_t, t: int, eps_hat, z, sched: VarianceSchedule):
    """``(x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sqrt(beta_t) z``."""
    sched.check_t(t)
    if tuple(x_t.shape) != tuple(eps_hat.shape):
        raise ShapeError("x_t and eps_hat shapes differ")
    b = sched.betas[t - 1]
    ab = sched.alpha_bars[t - 1]
    out = (x_t - (b / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(1.0 - b)
    if z is not None:
        out = out + math.sqrt(b) * z
    return out


def draw_sampling_noise(seed, shape, T: int, dtype=torch.float64) -> torch.Tensor:
    """Noise for one generation: slot 0 starts the chain, slot ``i`` is ``z`` at step ``T - i + 1``.

    ``seed`` may be an int or a sequence of ints (entropy for a Philox stream).
    The final step is noise-free, so ``T`` slots cover the whole chain.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    noise = rng.standard_normal((T,) + tuple(shape))
    return torch.from_numpy(noise).to(dtype)


def sample_future(
    eps_fn: Callable,
    shape,
    sched: VarianceSchedule,
    seed=None,
    noise: torch.Tensor | None = None,
    dtype=torch.float64,
) -> torch.Tensor:
    """Run the reverse chain from ``t = T`` down to 1.

    ``eps_fn(x_t, t)`` returns the predicted displacement for target frames of
    ``shape``.  Noise comes from ``noise`` (``(T, *shape)``, slot layout as in
    :func:`draw_sampling_noise`) or is drawn from ``seed``.  The last step adds
    no noise.
    """
    T = sched.T
    if noise is None:
        if seed is None:
            raise ConfigError("sample_future needs a seed or explicit noise")
        noise = draw_sampling_noise(seed, shape, T, dtype)
    if tuple(noise.shape) != (T,) + tuple(shape):
        raise ShapeError(f"noise must be {(T,) + tuple(shape)}, got {tuple(noise.shape)}")
    x = noise[0].to(dtype)
    with torch.no_grad():
        for i, t in enumerate(range(T, 0, -1)):
            try:
                eps_hat = eps_fn(x, t)
            except NumericError as exc:
                raise NumericError(f"at t={t}: {exc}") from None
            if not bool(torch.isfinite(eps_hat).all()):
                raise NumericError(f"non-finite denoiser output at t={t}")
            z = noise[i + 1].to(dtype) if t > 1 else None
            x = reverse_step(x, t, eps_hat, z, sched)
    return x


@dataclass(frozen=True)
class DiffusionConfig:
    """Schedule hyperparameters; ``beta_start``/``beta_end`` apply to the linear kind."""

    schedule: str = "cosine"
    T: int = 10
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    cosine_s: float = 0.008

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.schedule not in ("linear", "cosine"):
            raise ConfigError(f"unknown schedule kind {self.schedule!r}")

    def build(self) -> VarianceSchedule:
        return make_schedule(self.schedule, self.T, self.beta_start, self.beta_end, self.cosine_s)

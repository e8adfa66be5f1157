"""Stochastic and deterministic samplers for the backward probability-flow ODE.

Each step optionally "churns" the state to a higher noise level ``t_hat``
(adding both noise and the extra mean-reversion term), evaluates the denoiser
once on the whole temporal stack, and takes an Euler step of the ODE per time
point. The result is the temporal mean of the final states.

A denoiser is any callable ``denoiser(x_tilde_seq, t, mu_seq, cond) -> D``
returning a single slice ``(..., 1, C, H, W)``; see
:class:`emrdm.precondition.Preconditioned` and
:class:`emrdm.networks.GaussianOracle`.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import DiffusionState, ode_rhs
from .errors import ConfigError, NumericError
from .schedule import Schedule, k_of_t, make_sigma_grid, sigma_of_t


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 5
    s_churn: float = 1.0
    s_tmin: float = 0.0
    s_tmax: float = 100.0
    s_noise: float = 1.0
    sigma_min: float = 0.001
    sigma_max: float = 100.0
    rho: float = 7.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.s_churn < 0:
            raise ConfigError(f"s_churn must be >= 0, got {self.s_churn}")
        if not self.s_noise > 0:
            raise ConfigError(f"s_noise must be > 0, got {self.s_noise}")
        if not 0 <= self.s_tmin <= self.s_tmax:
            raise ConfigError(f"need 0 <= s_tmin <= s_tmax, got {self.s_tmin}, {self.s_tmax}")

    @property
    def deterministic(self) -> bool:
        return self.s_churn == 0

    def grid(self):
        """Step times ``t_0 = sigma_max > ... > t_N = sigma_min`` (``N + 1`` values)."""
        return make_sigma_grid(self.sigma_min, self.sigma_max, self.n_steps + 1, self.rho)

    def to_dict(self):
        return asdict(self)


def init_states(mu_seq, sched: Schedule, cfg: SamplerConfig, rng):
    """Noisy start ``x_0^l = k(t_max) mu^l + sigma_max eps^l`` with independent ``eps^l``."""
    mu_seq = np.asarray(mu_seq, dtype=float)
    t_max = cfg.sigma_max
    eps = rng.standard_normal(mu_seq.shape)
    return k_of_t(sched, t_max) * mu_seq + sigma_of_t(sched, t_max) * eps


def gamma(cfg: SamplerConfig, t_i: float) -> float:
    if cfg.s_tmin <= t_i <= cfg.s_tmax:
        return cfg.s_churn / cfg.n_steps
    return 0.0


def churn(x, mu_seq, sched: Schedule, cfg: SamplerConfig, t_i: float, rng, gamma_i=None):
    """Lift ``x`` from ``t_i`` to ``t_hat = (1 + gamma_i) t_i``.

    Returns ``(x_hat, t_hat)``. No random numbers are drawn when
    ``gamma_i == 0``.
    """
    g = gamma(cfg, t_i) if gamma_i is None else gamma_i
    if g == 0:
        return x, t_i
    t_hat = (1.0 + g) * t_i
    radicand = sigma_of_t(sched, t_hat) ** 2 - sigma_of_t(sched, t_i) ** 2
    if radicand < 0:
        raise NumericError(f"churn radicand {radicand} < 0 at t={t_i}")
    eps = rng.standard_normal(np.shape(x))
    x_hat = x + (k_of_t(sched, t_hat) - k_of_t(sched, t_i)) * mu_seq + np.sqrt(radicand) * cfg.s_noise * eps
    return x_hat, t_hat


def sample(denoiser, mu_seq, sched: Schedule, cfg: SamplerConfig, cond=None, trace=None, x_init=None):
    """Restore one image (or a batch) from its corrupted temporal stack.

    ``mu_seq`` has shape ``(..., L, C, H, W)``; the result has ``L = 1``.
    ``trace``, if a list, receives one record per step. ``x_init`` replaces the
    random initial state.
    """
    mu_seq = np.asarray(mu_seq, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    t = cfg.grid().values
    x = init_states(mu_seq, sched, cfg, rng) if x_init is None else np.array(x_init, dtype=float)
    for i in range(cfg.n_steps):
        x_hat, t_hat = churn(x, mu_seq, sched, cfg, t[i], rng)
        D = np.asarray(denoiser(x_hat, t_hat, mu_seq, cond), dtype=float)
        slope = ode_rhs(DiffusionState(x_hat, t_hat, mu_seq), D, sched)
        x = x_hat + (t[i + 1] - t_hat) * slope
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sampler state at step {i} (t={t[i]:.6g}, t_hat={t_hat:.6g})")
        if trace is not None:
            trace.append({"step": i, "t": t[i], "t_hat": t_hat, "mean_abs_x": float(np.mean(np.abs(x)))})
    return x.mean(axis=-4, keepdims=True) if x.ndim >= 4 else x


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "t", "t_hat", "mean_abs_x"])
        writer.writeheader()
        writer.writerows(trace)

"""Forward perturbation, forward-SDE simulation and the backward ODE.

Images carry a temporal axis at position ``-4``: an ``ImageBatch`` is an array
of shape ``(..., L, C, H, W)``. Targets and denoiser outputs keep that axis with
``L = 1`` so that they broadcast against the temporal stack. Scalars are valid
inputs as well, which keeps the closed-form checks on the production path.

All functions here use plain arithmetic, so they accept numpy arrays and torch
tensors alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, ShapeError
from .schedule import (
    Schedule,
    drift_diffusion,
    k_of_t,
    s_dot,
    s_of_t,
    sigma_dot,
    sigma_of_t,
)


@dataclass
class DiffusionState:
    """Noisy sequence ``x_tilde`` at diffusion time ``t`` with its corrupted images ``mu``."""

    x_tilde: object
    t: float
    mu: object

    def __post_init__(self):
        _broadcast_shape(self.x_tilde, self.mu)


def _shape(a):
    return tuple(np.shape(a)) if not hasattr(a, "shape") else tuple(a.shape)


def _broadcast_shape(*arrays):
    try:
        return np.broadcast_shapes(*(_shape(a) for a in arrays))
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {[ _shape(a) for a in arrays]}") from exc


def _positive_t(t):
    if np.any(np.asarray(t, dtype=float) <= 0):
        raise DomainError(f"t must be positive here (sigma appears in a denominator), got {t}")


def perturb(x0, mu, sched: Schedule, t, noise=None, rng=None):
    """Sample ``x_tilde^l(t) = x0 + k(t) mu^l + sigma(t) eps^l``.

    ``noise`` may be passed explicitly (any array broadcastable to the output);
    otherwise independent standard normals are drawn per time point from
    ``rng`` (a numpy Generator or an integer seed).
    """
    shape = _broadcast_shape(x0, mu)
    k = k_of_t(sched, t)
    sigma = sigma_of_t(sched, t)
    if noise is None:
        rng = np.random.default_rng(rng)
        noise = rng.standard_normal(shape)
    else:
        _broadcast_shape(noise, np.empty(shape))
    return x0 + k * mu + sigma * noise


def kernel_moments(x0, mu, sched: Schedule, t, space="tilde"):
    """Mean and standard deviation of the perturbation kernel.

    ``space='tilde'`` gives the law of ``x_tilde(t)``; ``space='x'`` the law of
    ``x(t) = s(t) x_tilde(t)``.
    """
    mean = x0 + k_of_t(sched, t) * mu
    std = sigma_of_t(sched, t)
    if space == "x":
        s = s_of_t(sched, t)
        return s * mean, s * std
    if space != "tilde":
        raise ValueError(f"space must be 'tilde' or 'x', got {space!r}")
    return mean, std


def simulate_forward_sde(x0, mu, sched: Schedule, t_end, steps, seed=None, n_paths=None, diffusion=True):
    """Euler-Maruyama integration of ``dx = f(t)(x - mu) dt + g(t) dw``.

    Works in x-space and returns ``x(t_end)``. With ``n_paths`` a leading path
    axis is added. ``diffusion=False`` zeroes ``g`` and integrates the mean ODE.
    This is a verification oracle, not a production path.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not t_end > 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    rng = np.random.default_rng(seed)
    shape = _broadcast_shape(x0, mu)
    if n_paths is not None:
        shape = (int(n_paths),) + shape
    x = np.broadcast_to(np.asarray(x0, dtype=float), shape).copy()
    mu = np.asarray(mu, dtype=float)
    dt = t_end / steps
    sqrt_dt = np.sqrt(dt)
    for n in range(steps):
        f, g = drift_diffusion(sched, n * dt)
        x += f * (x - mu) * dt
        if diffusion:
            x += g * sqrt_dt * rng.standard_normal(shape)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at step {n} (t={n * dt:.6g})")
    return x


def ode_rhs(state: DiffusionState, denoised, sched: Schedule):
    """Right-hand side of the backward probability-flow ODE in x_tilde-space.

    ``-(s'/s^2) mu - (sigma'/sigma) (D + k mu - x_tilde)``, evaluated per time
    point with one shared denoiser estimate ``D``.
    """
    t = state.t
    _positive_t(t)
    s = s_of_t(sched, t)
    k = k_of_t(sched, t)
    mu, x = state.mu, state.x_tilde
    _broadcast_shape(x, denoised)
    return -(s_dot(sched, t) / s**2) * mu - (sigma_dot(sched, t) / sigma_of_t(sched, t)) * (denoised + k * mu - x)


def score_from_denoiser(x_tilde, denoised, mu, sched: Schedule, t):
    """Score of ``x_tilde(t)`` recovered from a denoiser output."""
    _positive_t(t)
    sigma = sigma_of_t(sched, t)
    return (denoised + k_of_t(sched, t) * mu - x_tilde) / sigma**2

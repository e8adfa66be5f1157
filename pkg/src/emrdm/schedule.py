"""Diffusion schedules s(t), sigma(t) and the sampler's noise-level grid.

Two schedule kinds are supported:

* mean-reverting: ``s(t) = 1 / (1 + alpha t)``, ``sigma(t) = t``
* generative: ``s(t) = 1``, ``sigma(t) = t`` (the plain EDM process)

Because ``sigma(t) = t`` for both, diffusion time and noise level are used
interchangeably throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

MEAN_REVERTING = "mean_reverting"
GENERATIVE = "generative"


@dataclass(frozen=True)
class Schedule:
    alpha: float = 3.0
    kind: str = MEAN_REVERTING

    def __post_init__(self):
        if self.kind not in (MEAN_REVERTING, GENERATIVE):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == MEAN_REVERTING and not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")

    @classmethod
    def generative(cls) -> "Schedule":
        return cls(alpha=0.0, kind=GENERATIVE)

    @property
    def rate(self) -> float:
        """Effective mean-reversion rate (0 for the generative kind)."""
        return self.alpha if self.kind == MEAN_REVERTING else 0.0


def _check_t(t, strict=False):
    t_arr = np.asarray(t, dtype=float)
    if strict and np.any(t_arr <= 0):
        raise DomainError(f"t must be positive, got {t}")
    if np.any(t_arr < 0) or np.any(~np.isfinite(t_arr)):
        raise DomainError(f"t must be finite and non-negative, got {t}")


def s_of_t(sched: Schedule, t):
    _check_t(t)
    return 1.0 / (1.0 + sched.rate * t)


def s_dot(sched: Schedule, t):
    _check_t(t)
    return -sched.rate / (1.0 + sched.rate * t) ** 2


def k_of_t(sched: Schedule, t):
    """Mean-reversion ratio (1 - s)/s, which reduces to alpha * t."""
    _check_t(t)
    return sched.rate * t


def sigma_of_t(sched: Schedule, t):
    _check_t(t)
    return t


def sigma_dot(sched: Schedule, t):
    _check_t(t)
    return 1.0 if np.ndim(t) == 0 else np.ones_like(np.asarray(t, dtype=float))


def drift_diffusion(sched: Schedule, t):
    """Return ``(f, g)`` of the forward SDE ``dx = f (x - mu) dt + g dw``.

    ``f = s'/s`` and ``g = s sqrt(2 sigma' sigma)``. At ``t = 0`` the
    diffusion coefficient is its limit 0; negative ``t`` is rejected.
    """
    _check_t(t)
    s = s_of_t(sched, t)
    f = s_dot(sched, t) / s
    g = s * np.sqrt(2.0 * sigma_dot(sched, t) * sigma_of_t(sched, t))
    if np.ndim(g) == 0:
        g = float(g)
    return f, g


@dataclass(frozen=True)
class SigmaGrid:
    values: tuple
    rho: float

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def make_sigma_grid(sigma_min: float, sigma_max: float, N: int, rho: float = 7.0) -> SigmaGrid:
    """Power-interpolated noise levels from ``sigma_max`` down to ``sigma_min``.

    ``values[i] = (smax^(1/rho) + i/(N-1) (smin^(1/rho) - smax^(1/rho)))^rho``,
    stored in sampling (descending) order.
    """
    if int(N) != N or N < 2:
        raise ConfigError(f"grid needs N >= 2 points, got {N}")
    if not (sigma_min > 0 and sigma_max > 0):
        raise ConfigError("sigma_min and sigma_max must be positive")
    if sigma_min >= sigma_max:
        raise ConfigError(f"sigma_min ({sigma_min}) must be below sigma_max ({sigma_max})")
    if not rho > 0:
        raise ConfigError(f"rho must be positive, got {rho}")
    N = int(N)
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    ramp = np.arange(N) / (N - 1)
    values = (hi + ramp * (lo - hi)) ** rho
    # pin the endpoints against round-off in the power
    values[0], values[-1] = sigma_max, sigma_min
    values = np.clip(values, sigma_min, sigma_max)
    if np.any(np.diff(values) >= 0):
        raise ConfigError("grid is not strictly decreasing; increase spacing or lower N")
    return SigmaGrid(values=tuple(float(v) for v in values), rho=float(rho))

"""Noise-dependent input/output scalings that wrap a raw network into a denoiser.

With ``k = k(t)``, ``sigma = sigma(t)`` and the dataset statistics
``sigma_data`` (targets), ``sigma_mu`` (corrupted images) and ``sigma_cov``
(their covariance)::

    c_in    = 1 / sqrt(sd^2 + k^2 smu^2 + sigma^2 + 2 k scov)
    c_skip  = (sd^2 + k scov) / (sd^2 + k^2 smu^2 + sigma^2/L + 2 k scov)
    c_out   = sqrt((k^2 smu^2 sd^2 + sigma^2/L sd^2 - k^2 scov^2)
                   / (sd^2 + k^2 smu^2 + sigma^2/L + 2 k scov))
    c_noise = ln(sigma) / 4

and the denoiser is ``D = mean_l(c_skip x^l) + c_out F({c_in x^l}, c_noise, cond)``.
Setting ``sigma_mu = sigma_cov = 0`` recovers the EDM preconditioning.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .schedule import Schedule, k_of_t, sigma_of_t


@dataclass(frozen=True)
class PreconditionParams:
    sigma_data: float = 1.0
    sigma_mu: float = 1.0
    sigma_cov: float = 0.9
    L: int = 1

    def __post_init__(self):
        if not self.sigma_data > 0:
            raise ConfigError(f"sigma_data must be positive, got {self.sigma_data}")
        if self.sigma_mu < 0:
            raise ConfigError(f"sigma_mu must be non-negative, got {self.sigma_mu}")
        if abs(self.sigma_cov) > self.sigma_data * self.sigma_mu * (1 + 1e-12):
            raise ConfigError(
                f"|sigma_cov| = {abs(self.sigma_cov)} exceeds sigma_data*sigma_mu = "
                f"{self.sigma_data * self.sigma_mu}"
            )
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"L must be a positive integer, got {self.L}")

    def to_dict(self):
        return asdict(self)

    def check_grid(self, sched: Schedule, sigmas) -> None:
        """Reject configurations whose ``c_out^2`` is not positive on ``sigmas``."""
        sigmas = np.asarray(sigmas, dtype=float)
        radicand = _c_out_sq(self, k_of_t(sched, sigmas), sigmas)
        bad = ~(radicand > 0)
        if np.any(bad):
            raise ConfigError(
                f"degenerate preconditioning: c_out^2 <= 0 at sigma={sigmas[bad][0]:.6g}; "
                "sigma_cov is too close to sigma_data*sigma_mu"
            )


class Coefficients(NamedTuple):
    c_in: object
    c_skip: object
    c_out: object
    c_noise: object


def _denominator(p, k, sigma):
    sd2 = p.sigma_data**2
    return sd2 + k**2 * p.sigma_mu**2 + sigma**2 / p.L + 2 * k * p.sigma_cov


def _c_out_sq(p, k, sigma):
    sd2 = p.sigma_data**2
    num = k**2 * p.sigma_mu**2 * sd2 + sigma**2 / p.L * sd2 - k**2 * p.sigma_cov**2
    return num / _denominator(p, k, sigma)


def coefficients_at(p: PreconditionParams, k, sigma) -> Coefficients:
    """Coefficients for an explicit mean-reversion ratio ``k`` and noise level ``sigma``."""
    sd2 = p.sigma_data**2
    c_in = 1.0 / np.sqrt(sd2 + k**2 * p.sigma_mu**2 + sigma**2 + 2 * k * p.sigma_cov)
    c_skip = (sd2 + k * p.sigma_cov) / _denominator(p, k, sigma)
    c_out_sq = _c_out_sq(p, k, sigma)
    if np.any(c_out_sq < 0):
        raise DomainError(f"negative c_out^2 ({np.min(c_out_sq):.3g}) at k={k}, sigma={sigma}")
    c_out = np.sqrt(c_out_sq)
    c_noise = np.log(sigma) / 4
    if np.ndim(c_in) == 0:
        return Coefficients(float(c_in), float(c_skip), float(c_out), float(c_noise))
    return Coefficients(c_in, c_skip, c_out, c_noise)


def coefficients(p: PreconditionParams, sched: Schedule, t) -> Coefficients:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise DomainError(f"preconditioning needs t > 0 (ln sigma), got {t}")
    if t_arr.ndim == 0:
        t_arr = float(t_arr)
    return coefficients_at(p, k_of_t(sched, t_arr), sigma_of_t(sched, t_arr))


def loss_weight(p: PreconditionParams, sched: Schedule, t):
    """``lambda(sigma) = 1 / c_out(sigma)^2``."""
    c_out = coefficients(p, sched, t).c_out
    if np.any(np.asarray(c_out) == 0):
        raise ConfigError(f"c_out vanishes at t={t}; loss weight is undefined")
    return 1.0 / c_out**2


def _is_torch(a):
    return type(a).__module__.startswith("torch")


def _like(value, ref):
    """Shape a scalar or per-sample coefficient to broadcast against ``ref``."""
    value = np.asarray(value, dtype=float)
    if value.ndim == 1:
        value = value.reshape((-1,) + (1,) * (len(ref.shape) - 1))
    if _is_torch(ref):
        import torch

        return torch.as_tensor(value, dtype=ref.dtype, device=ref.device)
    return value


def denoise(raw_net, p: PreconditionParams, sched: Schedule, x_tilde_seq, t, cond=None):
    """Evaluate the preconditioned denoiser on a temporal stack.

    ``x_tilde_seq`` has shape ``(..., L, C, H, W)`` with ``L == p.L``; ``t`` is
    a scalar or one value per leading batch entry. ``raw_net`` is called as
    ``raw_net(c_in * x_tilde_seq, c_noise, cond)`` and must return one temporal
    slice ``(..., 1, C, H, W)``.
    """
    shape = tuple(x_tilde_seq.shape)
    if len(shape) < 4 or shape[-4] != p.L:
        raise ShapeError(f"expected {p.L} time points on axis -4, got shape {shape}")
    c = coefficients(p, sched, t)
    c_in, c_skip, c_out = (_like(v, x_tilde_seq) for v in c[:3])
    if _is_torch(x_tilde_seq):
        import torch

        c_noise = torch.as_tensor(c.c_noise, dtype=x_tilde_seq.dtype)
        skip = (c_skip * x_tilde_seq).mean(dim=-4, keepdim=True)
    else:
        c_noise = c.c_noise
        skip = (c_skip * x_tilde_seq).mean(axis=-4, keepdims=True)
    return skip + c_out * raw_net(c_in * x_tilde_seq, c_noise, cond)


class Preconditioned:
    """Denoiser callable ``(x_tilde_seq, t, mu_seq, cond) -> D`` around a raw network."""

    def __init__(self, raw_net, params: PreconditionParams, sched: Schedule):
        self.raw_net = raw_net
        self.params = params
        self.sched = sched

    def __call__(self, x_tilde_seq, t, mu_seq=None, cond=None):
        return denoise(self.raw_net, self.params, self.sched, x_tilde_seq, t, cond)

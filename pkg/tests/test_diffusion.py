import numpy as np
import pytest
import torch

from emrdm.diffusion import (
    DiffusionState,
    kernel_moments,
    ode_rhs,
    perturb,
    score_from_denoiser,
    simulate_forward_sde,
)
from emrdm.errors import DomainError, ShapeError
from emrdm.networks import GaussianOracleParams, oracle_denoise
from emrdm.schedule import Schedule, s_of_t

MR = Schedule(3.0)
GEN = Schedule.generative()


def test_perturb_at_zero_is_identity(rng):
    x0 = rng.standard_normal((2, 1, 3, 4, 4))
    mu = rng.standard_normal((2, 3, 3, 4, 4))
    out = perturb(x0, mu, MR, 0.0, rng=rng)
    np.testing.assert_array_equal(out, np.broadcast_to(x0, mu.shape))


def test_perturb_hand_example():
    assert perturb(0.0, 1.0, MR, 1.0, noise=0.0) == pytest.approx(3.0)


def test_perturb_variance(rng):
    draws = perturb(np.zeros(100_000), 0.0, MR, 1.0, rng=rng)
    assert abs(draws.var() - 1.0) < 0.02


def test_perturb_independent_noise_per_slice(rng):
    out = perturb(np.zeros((1, 1, 1, 64, 64)), np.zeros((1, 2, 1, 64, 64)), MR, 1.0, rng=rng)
    corr = np.corrcoef(out[0, 0].ravel(), out[0, 1].ravel())[0, 1]
    assert abs(corr) < 0.05


def test_perturb_torch_matches_numpy(rng):
    x0, mu, eps = (rng.standard_normal((1, 2, 1, 2, 2)) for _ in range(3))
    ref = perturb(x0, mu, MR, 0.7, noise=eps)
    got = perturb(torch.from_numpy(x0), torch.from_numpy(mu), MR, 0.7, noise=torch.from_numpy(eps))
    np.testing.assert_allclose(got.numpy(), ref, rtol=0, atol=1e-15)


def test_perturb_shape_mismatch():
    with pytest.raises(ShapeError):
        perturb(np.zeros((2, 3)), np.zeros((4, 3)), MR, 1.0, rng=0)


def test_kernel_moments_spaces():
    mean, std = kernel_moments(0.2, 0.5, MR, 1.0)
    assert (mean, std) == pytest.approx((0.2 + 1.5, 1.0))
    mean_x, std_x = kernel_moments(0.2, 0.5, MR, 1.0, space="x")
    assert (mean_x, std_x) == pytest.approx((0.25 * 1.7, 0.25))


def test_sde_mean_ode_hand_example():
    # without noise the state relaxes as mu + s(t)(x0 - mu)
    x = simulate_forward_sde(1.0, 0.0, MR, 2.0, steps=20_000, diffusion=False)
    assert x == pytest.approx(1 / 7, rel=1e-3)


def test_sde_fixed_point_at_mu():
    x = simulate_forward_sde(0.4, 0.4, MR, 50.0, steps=2000, seed=0, n_paths=20_000)
    assert abs(x.mean() - 0.4) < 0.02


def test_sde_moments_in_tilde_space():
    x0, mu, t = 0.3, 0.8, 1.0
    x = simulate_forward_sde(x0, mu, MR, t, steps=1000, seed=3, n_paths=100_000)
    y = x / s_of_t(MR, t) - 3.0 * t * mu
    assert abs(y.mean() - x0) < 0.02 * max(abs(x0), t)
    assert abs(y.var() - t**2) / t**2 < 0.02


def test_ode_rhs_examples():
    assert ode_rhs(DiffusionState(2.0, 1.0, 1.0), 0.5, MR) == pytest.approx(1.5)
    # consistent estimate: bracket vanishes, only the mean-reversion term is left
    x, mu, t = 2.0, 0.4, 0.8
    D = x - 3.0 * t * mu
    assert ode_rhs(DiffusionState(x, t, mu), D, MR) == pytest.approx(3.0 * mu)


def test_ode_rhs_generative_is_edm(rng):
    x, D, mu = rng.standard_normal((3, 5))
    np.testing.assert_allclose(ode_rhs(DiffusionState(x, 1.3, mu), D, GEN), (x - D) / 1.3, rtol=1e-14)


def test_ode_rhs_rejects_zero_time():
    with pytest.raises(DomainError):
        ode_rhs(DiffusionState(1.0, 0.0, 0.0), 0.0, MR)


def test_score_examples():
    sched = Schedule(3.0)
    x, mu, t = 1.7, 0.3, 0.6
    assert score_from_denoiser(x, x - 3 * t * mu, mu, sched, t) == pytest.approx(0.0, abs=1e-14)
    # Gaussian toy: x0 ~ N(0,1), mu = 0, sigma = 1; the marginal is N(0, 2)
    oracle = oracle_denoise(GaussianOracleParams(0.0, 1.0), 2.0, 0.0, GEN, 1.0)
    assert oracle == pytest.approx(1.0)
    assert score_from_denoiser(2.0, oracle, 0.0, GEN, 1.0) == pytest.approx(-2.0 / 2.0)


def test_score_matches_x_space_score():
    # x0 ~ N(m, sd^2): x_tilde ~ N(m + k mu, sd^2 + t^2), x = s x_tilde
    m, sd, mu, t, x_tilde = 0.2, 0.7, 0.5, 0.9, 1.4
    k, s = 3.0 * t, s_of_t(MR, t)
    D = oracle_denoise(GaussianOracleParams(m, sd), x_tilde, mu, MR, t)
    var_x = s**2 * (sd**2 + t**2)
    x_score = -(s * x_tilde - s * (m + k * mu)) / var_x
    assert score_from_denoiser(x_tilde, D, mu, MR, t) == pytest.approx(s * x_score, rel=1e-12)

import math

import numpy as np
import pytest
import torch

from emrdm.errors import ConfigError, DomainError, ShapeError
from emrdm.precondition import (
    PreconditionParams,
    Preconditioned,
    coefficients,
    coefficients_at,
    denoise,
    loss_weight,
)
from emrdm.schedule import Schedule

DEFAULT_CFG = PreconditionParams(sigma_data=1.0, sigma_mu=1.0, sigma_cov=0.9, L=1)
GEN = Schedule.generative()


def _zero_net(x, c_noise, cond):
    return 0.0 * x[..., :1, :, :, :]


def test_coefficients_hand_example():
    # k = 3, sigma = 0.5: denominator 1 + 9 + 0.25 + 5.4 = 15.65
    c = coefficients_at(DEFAULT_CFG, 3.0, 0.5)
    assert c.c_in == pytest.approx(1 / math.sqrt(15.65), rel=1e-12)
    assert c.c_skip == pytest.approx(3.7 / 15.65, rel=1e-12)
    assert c.c_out == pytest.approx(math.sqrt(1.96 / 15.65), rel=1e-12)
    assert (c.c_in, c.c_skip, c.c_out) == pytest.approx((0.25278, 0.23642, 0.35389), abs=5e-6)
    # through the schedule: alpha = 6 puts k = 3 at t = 0.5
    assert coefficients(DEFAULT_CFG, Schedule(6.0), 0.5) == pytest.approx(tuple(c), rel=1e-14)


def test_c_noise_vanishes_at_unit_sigma():
    assert coefficients(DEFAULT_CFG, Schedule(3.0), 1.0).c_noise == 0.0


@pytest.mark.parametrize("sigma", [0.01, 0.5, 1.0, 7.0, 80.0])
def test_edm_reduction(sigma):
    sd = 0.6
    c = coefficients(PreconditionParams(sd, 0.0, 0.0, 1), GEN, sigma)
    ref = (
        1 / math.sqrt(sd**2 + sigma**2),
        sd**2 / (sd**2 + sigma**2),
        sigma * sd / math.sqrt(sd**2 + sigma**2),
    )
    assert (c.c_in, c.c_skip, c.c_out) == pytest.approx(ref, rel=1e-13)
    lam = loss_weight(PreconditionParams(sd, 0.0, 0.0, 1), GEN, sigma)
    assert lam == pytest.approx((sigma**2 * sd**2 / (sigma**2 + sd**2)) ** -1, rel=1e-13)


def test_loss_weight_example_and_identity():
    lam = loss_weight(DEFAULT_CFG, Schedule(6.0), 0.5)
    assert lam == pytest.approx(15.65 / 1.96, rel=1e-12)
    assert lam == pytest.approx(7.985, abs=1e-3)
    t = np.geomspace(1e-3, 100, 100)
    for p in (DEFAULT_CFG, PreconditionParams(0.4, 0.5, 0.1, 3)):
        prod = loss_weight(p, Schedule(3.0), t) * coefficients(p, Schedule(3.0), t).c_out ** 2
        np.testing.assert_allclose(prod, 1.0, rtol=0, atol=1e-12)


def test_denoise_zero_net_hand_example():
    x = np.full((1, 1, 1, 1, 1), 2.0)
    D = denoise(_zero_net, DEFAULT_CFG, Schedule(6.0), x, 0.5)
    assert D.item() == pytest.approx(2 * 3.7 / 15.65, rel=1e-12)
    assert D.item() == pytest.approx(0.47284, abs=5e-6)


def test_denoise_zero_net_is_mean_skip(rng):
    p = PreconditionParams(1.0, 1.0, 0.5, L=3)
    x = rng.standard_normal((2, 3, 2, 4, 4))
    D = denoise(_zero_net, p, Schedule(3.0), x, 0.7)
    c_skip = coefficients(p, Schedule(3.0), 0.7).c_skip
    np.testing.assert_allclose(D, (c_skip * x).mean(axis=1, keepdims=True), rtol=1e-14)


def test_denoise_matches_edm_wrapper(rng):
    sd = 0.5

    def raw(x, c_noise, cond):
        return np.tanh(x) * (1 + c_noise)

    p = PreconditionParams(sd, 0.0, 0.0, 1)
    x = rng.standard_normal((3, 1, 2, 4, 4))
    for sigma in (0.05, 1.0, 20.0):
        c_in = 1 / math.sqrt(sigma**2 + sd**2)
        c_skip = sd**2 / (sigma**2 + sd**2)
        c_out = sigma * sd / math.sqrt(sigma**2 + sd**2)
        ref = c_skip * x + c_out * raw(c_in * x, math.log(sigma) / 4, None)
        np.testing.assert_array_equal(denoise(raw, p, GEN, x, sigma), ref)


def test_denoise_torch_and_per_sample_sigma(rng):
    p = PreconditionParams(0.8, 0.7, 0.3, L=2)
    sched = Schedule(3.0)
    x = rng.standard_normal((3, 2, 1, 4, 4))
    sig = np.array([0.1, 1.0, 10.0])

    def raw(x, c_noise, cond):
        return x[..., :1, :, :, :] * 0.5

    D_np = denoise(raw, p, sched, x, sig)
    D_t = denoise(raw, p, sched, torch.from_numpy(x), sig)
    np.testing.assert_allclose(D_t.numpy(), D_np, rtol=1e-14)
    for b in range(3):
        np.testing.assert_allclose(D_np[b], denoise(raw, p, sched, x[b : b + 1], sig[b])[0], rtol=1e-14)


def test_denoise_wrong_L(rng):
    with pytest.raises(ShapeError):
        denoise(_zero_net, PreconditionParams(L=2), Schedule(), rng.standard_normal((1, 3, 1, 2, 2)), 1.0)


def test_preconditioned_callable(rng):
    x = rng.standard_normal((1, 1, 1, 2, 2))
    wrapped = Preconditioned(_zero_net, DEFAULT_CFG, Schedule())
    np.testing.assert_array_equal(wrapped(x, 0.3), denoise(_zero_net, DEFAULT_CFG, Schedule(), x, 0.3))


def _c_out_sq_of_skip(p, k, sigma, c_skip):
    # E[(x0 - c_skip * mean_l(x0 + k mu + n^l))^2] expanded by hand
    sd2, smu2, scov = p.sigma_data**2, p.sigma_mu**2, p.sigma_cov
    var_in = sd2 + k**2 * smu2 + 2 * k * scov + sigma**2 / p.L
    return sd2 - 2 * c_skip * (sd2 + k * scov) + c_skip**2 * var_in


def test_c_skip_minimises_c_out(rng):
    for _ in range(20):
        sd = rng.uniform(0.2, 2.0)
        smu = rng.uniform(0.0, 2.0)
        p = PreconditionParams(sd, smu, rng.uniform(-1, 1) * sd * smu * 0.95, int(rng.integers(1, 5)))
        k, sigma = rng.uniform(0, 5), rng.uniform(0.05, 10)
        c = coefficients_at(p, k, sigma)
        best = _c_out_sq_of_skip(p, k, sigma, c.c_skip)
        assert best == pytest.approx(c.c_out**2, rel=1e-10)
        for scale in (0.99, 1.01):
            assert _c_out_sq_of_skip(p, k, sigma, c.c_skip * scale) >= best


def test_large_sigma_limits():
    c = coefficients_at(DEFAULT_CFG, 2.0, 1e6)
    assert c.c_skip < 1e-10 and c.c_in < 1e-5


@pytest.mark.parametrize("L", [1, 3])
@pytest.mark.parametrize("k", [0.5, 3.0])
@pytest.mark.parametrize("sigma", [0.1, 1.0, 10.0])
def test_unit_variance_normalisation(L, k, sigma):
    sd, smu, scov = 1.0, 1.0, 0.9
    rng = np.random.default_rng(hash((L, k, sigma)) % 2**32)
    n = 100_000
    x0 = sd * rng.standard_normal(n)
    mu = (scov / sd**2) * x0 + math.sqrt(smu**2 - scov**2 / sd**2) * rng.standard_normal(n)
    noise = sigma * rng.standard_normal((L, n))
    c = coefficients_at(PreconditionParams(sd, smu, scov, L), k, sigma)
    assert abs(np.var(c.c_in * (x0 + k * mu + noise[0])) - 1) < 0.02
    target = (x0 - np.mean(c.c_skip * (x0 + k * mu + noise), axis=0)) / c.c_out
    assert abs(np.var(target) - 1) < 0.03


def test_param_validation():
    with pytest.raises(ConfigError):
        PreconditionParams(sigma_data=0.0)
    with pytest.raises(ConfigError):
        PreconditionParams(sigma_mu=-1.0)
    with pytest.raises(ConfigError):
        PreconditionParams(1.0, 1.0, 1.5)
    with pytest.raises(ConfigError):
        PreconditionParams(L=0)


def test_check_grid_rejects_degenerate():
    tight = PreconditionParams(1.0, 1.0, 1.0, 1)  # perfectly correlated: only the noise term keeps c_out^2 positive
    tight.check_grid(Schedule(3.0), [100.0, 1.0, 0.01])
    with pytest.raises(ConfigError):
        PreconditionParams(1.0, 0.0, 0.0, 1).check_grid(GEN, [1.0, 0.0])


def test_coefficients_reject_zero_time():
    with pytest.raises(DomainError):
        coefficients(DEFAULT_CFG, Schedule(), 0.0)

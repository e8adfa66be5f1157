import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from emrdm.errors import ConfigError, DomainError
from emrdm.schedule import (
    Schedule,
    drift_diffusion,
    k_of_t,
    make_sigma_grid,
    s_dot,
    s_of_t,
    sigma_dot,
    sigma_of_t,
)

MR = Schedule(alpha=3.0)
GEN = Schedule.generative()

times = st.floats(min_value=0.0, max_value=1e3, allow_nan=False)
alphas = st.floats(min_value=1e-3, max_value=50.0)


def test_s_at_zero_and_closed_form():
    assert s_of_t(MR, 0.0) == 1.0
    assert s_of_t(MR, 2.0) == pytest.approx(1 / 7, rel=1e-15)
    assert s_of_t(GEN, 5.0) == 1.0


def test_k_examples():
    assert k_of_t(MR, 0.0) == 0.0
    # (1 - s)/s evaluated directly
    s = 1 / (1 + 3 * 2.0)
    assert k_of_t(MR, 2.0) == pytest.approx((1 - s) / s, rel=1e-14)
    assert k_of_t(MR, 2.0) == pytest.approx(6.0)
    assert k_of_t(GEN, 2.0) == 0.0


def test_sigma_and_derivatives():
    assert sigma_of_t(MR, 0.5) == 0.5
    assert sigma_of_t(MR, 0.0) == 0.0
    assert sigma_dot(MR, 0.7) == 1.0
    # central difference of s(t) at t=1
    h = 1e-6
    fd = (s_of_t(MR, 1 + h) - s_of_t(MR, 1 - h)) / (2 * h)
    assert s_dot(MR, 1.0) == pytest.approx(fd, rel=1e-8)
    assert s_dot(MR, 1.0) == pytest.approx(-0.1875)


@given(t=times, alpha=alphas)
def test_minus_sdot_over_s2_is_alpha(t, alpha):
    sched = Schedule(alpha)
    assert -s_dot(sched, t) / s_of_t(sched, t) ** 2 == pytest.approx(alpha, rel=1e-10)


def test_drift_diffusion_examples():
    f, g = drift_diffusion(MR, 1.0)
    assert f == pytest.approx(s_dot(MR, 1.0) / s_of_t(MR, 1.0))
    assert f == pytest.approx(-0.75)
    assert g == pytest.approx(0.25 * math.sqrt(2.0))
    f_gen, _ = drift_diffusion(GEN, 3.0)
    assert f_gen == 0.0


@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_diffusion_integrates_to_sigma_squared(t):
    def integrand(xi):
        _, g = drift_diffusion(MR, xi)
        return (g / s_of_t(MR, xi)) ** 2

    val, _ = integrate.quad(integrand, 0.0, t, epsabs=0, epsrel=1e-12)
    assert abs(val - t**2) / t**2 < 1e-4


@given(t1=times, dt=st.floats(min_value=1e-6, max_value=1e3), alpha=alphas)
def test_monotone(t1, dt, alpha):
    sched = Schedule(alpha)
    t2 = t1 + dt
    assert s_of_t(sched, t1) > s_of_t(sched, t2)
    assert sigma_of_t(sched, t1) < sigma_of_t(sched, t2)
    assert 0 < s_of_t(sched, t2) <= 1


def test_k_s_identity_on_log_grid():
    t = np.logspace(-4, 3, 200)
    for sched in (MR, Schedule(0.37), GEN):
        lhs = k_of_t(sched, t) * s_of_t(sched, t) + s_of_t(sched, t)
        np.testing.assert_allclose(lhs, 1.0, rtol=1e-12)


def test_negative_time_rejected():
    for fn in (s_of_t, k_of_t, sigma_of_t, s_dot):
        with pytest.raises(DomainError):
            fn(MR, -0.1)
    with pytest.raises(DomainError):
        drift_diffusion(MR, -1.0)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule(alpha=0.0)
    with pytest.raises(ConfigError):
        Schedule(kind="bogus")
    assert GEN.rate == 0.0


def _grid_longhand(smin, smax, n, rho):
    a, b = smax ** (1 / rho), smin ** (1 / rho)
    return [(a + i / (n - 1) * (b - a)) ** rho for i in range(n)]


def test_grid_examples():
    assert make_sigma_grid(0.001, 100, 2, 7).values == pytest.approx((100.0, 0.001))
    grid = make_sigma_grid(0.001, 100, 5, 7)
    ref = _grid_longhand(0.001, 100, 5, 7)
    assert grid.values == pytest.approx(ref, rel=1e-13)
    assert grid[2] == pytest.approx(2.688, abs=5e-4)


@given(
    smin=st.floats(1e-4, 1.0),
    ratio=st.floats(1.5, 1e4),
    n=st.integers(2, 60),
    rho=st.floats(1.0, 10.0),
)
def test_grid_properties(smin, ratio, n, rho):
    smax = smin * ratio
    vals = make_sigma_grid(smin, smax, n, rho).as_array()
    assert vals[0] == pytest.approx(smax, rel=1e-12)
    assert vals[-1] == pytest.approx(smin, rel=1e-12)
    assert np.all(np.diff(vals) < 0)
    assert np.all((vals >= smin * (1 - 1e-12)) & (vals <= smax * (1 + 1e-12)))


@pytest.mark.parametrize("args", [(0.0, 1.0, 5), (1.0, 0.5, 5), (0.1, 1.0, 1), (0.1, 1.0, 5, 0.0)])
def test_grid_rejects_bad_config(args):
    with pytest.raises(ConfigError):
        make_sigma_grid(*args)

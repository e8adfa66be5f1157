import numpy as np
import pytest
from scipy import stats

from emrdm.errors import ConfigError, NumericError
from emrdm.networks import GaussianOracle, GaussianOracleParams
from emrdm.sampler import SamplerConfig, churn, gamma, init_states, sample, write_trace
from emrdm.schedule import Schedule

MR = Schedule(3.0)


def _oracle(m=0.0, sd=1.0, sched=MR):
    return GaussianOracle(GaussianOracleParams(m, sd), sched)


def test_config_validation():
    for bad in (dict(n_steps=0), dict(sigma_min=0.0), dict(sigma_min=2.0, sigma_max=1.0), dict(s_churn=-1.0),
                dict(s_noise=0.0), dict(s_tmin=2.0, s_tmax=1.0)):
        with pytest.raises(ConfigError):
            SamplerConfig(**bad)
    assert SamplerConfig(s_churn=0.0).deterministic


def test_grid_has_one_more_point_than_steps():
    g = SamplerConfig(n_steps=5).grid().as_array()
    assert len(g) == 6 and g[0] == 100.0 and g[-1] == pytest.approx(0.001)


def test_init_states_mean_and_independence(rng):
    cfg = SamplerConfig()
    mu = np.full((10_000, 2, 1, 1, 1), 0.4)
    x = init_states(mu, MR, cfg, rng)
    k = 3.0 * cfg.sigma_max
    assert abs(x.mean() / (k * 0.4) - 1) < 0.02
    eps = (x - k * mu) / cfg.sigma_max
    assert abs(np.corrcoef(eps[:, 0].ravel(), eps[:, 1].ravel())[0, 1]) < 0.03


def test_init_states_small_limit(rng):
    cfg = SamplerConfig(sigma_min=1e-12, sigma_max=1e-9)
    x = init_states(np.ones((3, 1, 1, 2, 2)), Schedule(1e-9), cfg, rng)
    assert np.max(np.abs(x)) < 1e-7


def test_gamma_window_and_no_cap():
    cfg = SamplerConfig(n_steps=5, s_churn=10.0, s_tmin=0.5, s_tmax=20.0)
    assert gamma(cfg, 1.0) == 2.0  # well above sqrt(2) - 1
    assert gamma(cfg, 0.1) == 0.0
    assert gamma(cfg, 50.0) == 0.0


def test_churn_examples(rng):
    cfg = SamplerConfig()
    x = np.array([0.7])
    x_hat, t_hat = churn(x, 1.0, MR, cfg, 1.0, rng, gamma_i=0.0)
    assert t_hat == 1.0 and x_hat is x
    cfg_quiet = SamplerConfig(s_noise=1e-300)
    x_hat, t_hat = churn(x, 1.0, MR, cfg_quiet, 1.0, rng, gamma_i=1.0)
    assert t_hat == 2.0
    assert x_hat == pytest.approx(x + 3.0, abs=1e-12)


@pytest.mark.parametrize("g", [0.2, 1.0])
def test_churn_preserves_kernel(g):
    rng = np.random.default_rng(99)
    x0, mu, t = -0.3, 0.6, 0.8
    x = x0 + 3 * t * mu + t * rng.standard_normal(10_000)
    x_hat, t_hat = churn(x, mu, MR, SamplerConfig(), t, rng, gamma_i=g)
    ks = stats.kstest(x_hat, stats.norm(x0 + 3 * t_hat * mu, t_hat).cdf).statistic
    assert ks < 0.02


def test_deterministic_sampler_draws_nothing_after_init(rng):
    mu = rng.standard_normal((2, 2, 1, 4, 4))
    start = 100 * rng.standard_normal(mu.shape) + 300 * mu
    outs = [
        sample(_oracle(), mu, MR, SamplerConfig(s_churn=0.0, seed=seed, s_noise=noise), x_init=start)
        for seed, noise in ((0, 1.0), (1, 0.5), (7, 3.0))
    ]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_same_seed_bit_identical(rng):
    mu = rng.standard_normal((1, 1, 3, 4, 4))
    cfg = SamplerConfig(n_steps=6, s_churn=1.0, seed=5)
    np.testing.assert_array_equal(sample(_oracle(), mu, MR, cfg), sample(_oracle(), mu, MR, cfg))
    assert not np.array_equal(sample(_oracle(), mu, MR, cfg), sample(_oracle(), mu, MR, SamplerConfig(seed=6)))


def test_trace_noise_levels_monotone(rng, tmp_path):
    mu = rng.standard_normal((1, 2, 1, 4, 4))
    trace = []
    sample(_oracle(), mu, MR, SamplerConfig(n_steps=6, s_churn=2.0), trace=trace)
    grid = SamplerConfig(n_steps=6).grid().as_array()
    assert [r["step"] for r in trace] == list(range(6))
    for r, t_next in zip(trace, grid[1:]):
        assert r["t_hat"] >= r["t"] > t_next
    assert trace[0]["t_hat"] == pytest.approx(100.0 * (1 + 2.0 / 6))
    write_trace(tmp_path / "trace.csv", trace)
    assert (tmp_path / "trace.csv").read_text().splitlines()[0] == "step,t,t_hat,mean_abs_x"


def test_one_denoiser_call_per_step(rng):
    calls = []

    def denoiser(x, t, mu, cond):
        calls.append((x.shape, t))
        return np.zeros(x.shape[:-4] + (1,) + x.shape[-3:])

    mu = rng.standard_normal((1, 3, 1, 2, 2))
    sample(denoiser, mu, MR, SamplerConfig(n_steps=4))
    assert len(calls) == 4 and all(shape == mu.shape for shape, _ in calls)


def test_single_slice_fusion_is_identity(rng):
    mu = rng.standard_normal((1, 1, 1, 2, 2))
    out = sample(_oracle(), mu, MR, SamplerConfig(n_steps=3, s_churn=0.0))
    assert out.shape == mu.shape


def test_point_prior_endpoint_exact():
    # a point-mass prior makes D = m; Euler then scales x - k mu - m by t_next/t exactly,
    # so the start offset 100 * 0.7 shrinks to sigma_min * 0.7
    m, mu = 0.25, np.full((1, 1, 1, 1, 1), 0.5)
    start = m + 300.0 * mu + 100.0 * 0.7
    out = sample(_oracle(m=m, sd=1e-12), mu, MR, SamplerConfig(n_steps=20, s_churn=0.0), x_init=start)
    assert out.item() == pytest.approx(m + 3 * 0.001 * 0.5 + 0.001 * 0.7, abs=1e-12)


def test_nonfinite_state_aborts(rng):
    def bad(x, t, mu, cond):
        return np.full(x.shape[:-4] + (1,) + x.shape[-3:], np.nan)

    with pytest.raises(NumericError, match="step 0"):
        sample(bad, np.zeros((1, 1, 1, 2, 2)), MR, SamplerConfig())

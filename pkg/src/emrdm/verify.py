"""Oracle suites run by ``emrdm verify``.

Each suite compares a production code path with something it cannot share a
bug with: closed-form kernel moments, Monte-Carlo statistics, an EDM
reference written out longhand, the exact solution of the probability-flow
ODE for a Gaussian prior, or central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .diffusion import DiffusionState, ode_rhs, perturb, simulate_forward_sde
from .networks import (
    GaussianOracle,
    GaussianOracleParams,
    NetConfig,
    build_network,
    fuse_skips,
    temporal_attention,
    upsample_masks,
)
from .precondition import PreconditionParams, coefficients, coefficients_at, denoise, loss_weight
from .sampler import SamplerConfig, churn, sample
from .schedule import Schedule


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.suite}/{self.name}: measured={self.measured:.3e} tol={self.tolerance:.1e}"


def _check(suite, name, measured, tol):
    return Check(suite, name, float(measured), float(tol), bool(measured <= tol))


def _rel(a, b):
    return abs(a - b) / abs(b)


# ----------------------------------------------------------------------------


def kernel_suite(n=100_000, seed=0):
    """Moments of ``perturb`` against the closed-form kernel."""
    rng = np.random.default_rng(seed)
    x0, mu = 0.3, 0.8
    out = []
    for alpha in (1.0, 3.0):
        sched = Schedule(alpha)
        for t in (0.1, 0.5, 1.0, 3.0):
            draws = perturb(np.full(n, x0), mu, sched, t, rng=rng)
            mean_ref, std_ref = x0 + alpha * t * mu, t
            tag = f"alpha={alpha:g},t={t:g}"
            out.append(_check("kernel", f"{tag}/mean", _rel(draws.mean(), mean_ref), 0.02))
            out.append(_check("kernel", f"{tag}/std", _rel(draws.std(), std_ref), 0.02))
    return out


def sde_suite(n=100_000, steps=1000, seed=0):
    """Euler-Maruyama x-space moments against ``s(t)(x0 + k mu)`` and ``s(t) sigma(t)``."""
    x0, mu = 0.3, 0.8
    out = []
    for i, (alpha, t) in enumerate([(1.0, 1.0), (3.0, 0.5), (3.0, 1.0)]):
        sched = Schedule(alpha)
        x = simulate_forward_sde(x0, mu, sched, t, steps, seed=seed + i, n_paths=n)
        s = 1.0 / (1.0 + alpha * t)
        tag = f"alpha={alpha:g},t={t:g}"
        out.append(_check("sde", f"{tag}/mean", _rel(x.mean(), s * (x0 + alpha * t * mu)), 0.03))
        out.append(_check("sde", f"{tag}/std", _rel(x.std(), s * t), 0.03))
    return out


def precondition_suite(n=100_000, seed=0, params=(1.0, 1.0, 0.9)):
    """Unit variance of scaled inputs and effective targets; ``lambda * c_out^2 = 1``."""
    sd, smu, scov = params
    rng = np.random.default_rng(seed)
    out = []
    for L in (1, 3):
        p = PreconditionParams(sd, smu, scov, L)
        for k in (0.5, 3.0):
            for sigma in (0.1, 1.0, 10.0):
                x0 = sd * rng.standard_normal(n)
                zeta = rng.standard_normal(n)
                mu = (scov / sd**2) * x0 + math.sqrt(smu**2 - scov**2 / sd**2) * zeta
                noise = sigma * rng.standard_normal((L, n))
                c = coefficients_at(p, k, sigma)
                tag = f"L={L},k={k:g},sigma={sigma:g}"
                inputs = c.c_in * (x0 + k * mu + noise[0])
                out.append(_check("precondition", f"{tag}/input_var", abs(inputs.var() - 1), 0.02))
                target = (x0 - (c.c_skip * (x0 + k * mu + noise)).mean(axis=0)) / c.c_out
                out.append(_check("precondition", f"{tag}/target_var", abs(target.var() - 1), 0.03))
    sched = Schedule(3.0)
    p = PreconditionParams(sd, smu, scov, 1)
    t = np.exp(np.linspace(math.log(1e-3), math.log(1e2), 100))
    product = loss_weight(p, sched, t) * coefficients(p, sched, t).c_out ** 2
    out.append(_check("precondition", "lambda*c_out^2", np.max(np.abs(product - 1)), 1e-12))
    return out


# -- EDM reference, written independently of the package code paths ---------


def _edm_coeffs(sigma, sd):
    return (
        1 / math.sqrt(sigma**2 + sd**2),
        sd**2 / (sigma**2 + sd**2),
        sigma * sd / math.sqrt(sigma**2 + sd**2),
        math.log(sigma) / 4,
    )


def _toy_raw(x, c_noise, cond):
    return np.sin(x) + 0.5 * c_noise


def _edm_denoiser(x, sigma, sd):
    c_in, c_skip, c_out, c_noise = _edm_coeffs(sigma, sd)
    return c_skip * x + c_out * _toy_raw(c_in * x, c_noise, None)


def _edm_euler(x, sigmas, sd):
    for s_cur, s_next in zip(sigmas[:-1], sigmas[1:]):
        d = (x - _edm_denoiser(x, s_cur, sd)) / s_cur
        x = x + (s_next - s_cur) * d
    return x


def edm_suite(seed=0):
    sd = 0.5
    sched = Schedule.generative()
    p = PreconditionParams(sd, 0.0, 0.0, 1)
    rng = np.random.default_rng(seed)
    out = []
    errs = []
    for sigma in (0.002, 0.3, 1.0, 7.0, 80.0):
        ours = coefficients(p, sched, sigma)
        errs.append(max(abs(a - b) for a, b in zip(ours, _edm_coeffs(sigma, sd))))
    out.append(_check("edm", "coefficients", max(errs), 1e-10))

    x0 = rng.standard_normal((1, 2, 4, 4))
    mu = rng.standard_normal((1, 2, 4, 4))
    eps = rng.standard_normal((1, 2, 4, 4))
    out.append(_check("edm", "perturb", np.max(np.abs(perturb(x0, mu, sched, 2.5, noise=eps) - (x0 + 2.5 * eps))), 1e-10))

    x = rng.standard_normal((1, 2, 4, 4))
    D = rng.standard_normal((1, 2, 4, 4))
    rhs = ode_rhs(DiffusionState(x, 1.7, mu), D, sched)
    out.append(_check("edm", "ode_rhs", np.max(np.abs(rhs - (x - D) / 1.7)), 1e-10))

    D_ours = denoise(_toy_raw, p, sched, x, 1.7)
    out.append(_check("edm", "denoiser", np.max(np.abs(D_ours - _edm_denoiser(x, 1.7, sd))), 1e-10))

    cfg = SamplerConfig(n_steps=12, s_churn=0.0, sigma_min=0.002, sigma_max=80.0)
    start = 80.0 * rng.standard_normal((1, 1, 2, 4, 4))
    mu_seq = rng.standard_normal((1, 1, 2, 4, 4))

    def wrapped(x_seq, t, mu_seq, cond):
        return denoise(_toy_raw, p, sched, x_seq, t)

    ours = sample(wrapped, mu_seq, sched, cfg, x_init=start)
    ref = _edm_euler(start, cfg.grid().values, sd)
    out.append(_check("edm", "sampler", np.max(np.abs(ours - ref)), 1e-10))
    return out


# -- sampler against the exact probability-flow solution ---------------------


def gaussian_ode_endpoint(y_start, m, sd, sigma_max, sigma_min, alpha, mu):
    """Exact ODE solution for a Gaussian prior: ``(y - m)`` scales with ``sqrt(sd^2 + t^2)``."""
    z = (y_start - m) * math.sqrt(sd**2 + sigma_min**2) / math.sqrt(sd**2 + sigma_max**2)
    return m + z + alpha * sigma_min * mu


def sampler_suite():
    alpha, m, sd = 3.0, 0.3, 1.0
    sched = Schedule(alpha)
    oracle = GaussianOracle(GaussianOracleParams(m, sd), sched)
    mu = np.array([0.7, -0.4, 1.2]).reshape(3, 1, 1, 1, 1)
    y_start = np.array([150.0, -80.0, 40.0]).reshape(3, 1, 1, 1, 1)
    x_init = y_start + alpha * 100.0 * mu
    results = {}
    for N in (8, 16, 32, 64, 512):
        cfg = SamplerConfig(n_steps=N, s_churn=0.0)
        results[N] = sample(oracle, mu, sched, cfg, x_init=x_init)
    errs = [np.max(np.abs(results[N] - results[512])) for N in (8, 16, 32, 64)]
    out = []
    for (N, e1), e2 in zip(zip((8, 16, 32), errs[:-1]), errs[1:]):
        # first-order convergence: halving the step halves the error
        out.append(_check("sampler", f"order N={N}->{2 * N} |ratio-2|", abs(e1 / e2 - 2), 0.3))
    exact = gaussian_ode_endpoint(y_start, m, sd, 100.0, 0.001, alpha, mu)
    rel = np.max(np.abs(results[512] - exact) / np.abs(exact))
    out.append(_check("sampler", "endpoint N=512", rel, 0.01))
    return out


def churn_suite(n=10_000, seed=0):
    alpha, x0, mu, t = 3.0, 0.2, 0.5, 1.0
    sched = Schedule(alpha)
    rng = np.random.default_rng(seed)
    cfg = SamplerConfig(s_churn=1.0)
    out = []
    for g in (0.2, 1.0):
        x = x0 + alpha * t * mu + t * rng.standard_normal(n)
        x_hat, t_hat = churn(x, mu, sched, cfg, t, rng, gamma_i=g)
        ref = stats.norm(loc=x0 + alpha * t_hat * mu, scale=t_hat)
        out.append(_check("churn", f"gamma={g:g}/ks", stats.kstest(x_hat, ref.cdf).statistic, 0.02))
    return out


# -- temporal fusion and gradients (torch) ------------------------------------


def tfsa_suite(seed=0):
    import torch

    out = []
    Q = torch.tensor([[1.0]], dtype=torch.float64)
    K = torch.tensor([[[[0.0]], [[math.log(3.0)]]]], dtype=torch.float64)
    V = torch.tensor([[[1.0], [5.0]]], dtype=torch.float64)
    fused, masks = temporal_attention(Q, K, V, heads=1)
    out.append(_check("tfsa", "hand masks", float((masks[0, 0] - torch.tensor([0.25, 0.75], dtype=torch.float64)).abs().max()), 1e-12))
    out.append(_check("tfsa", "hand fused", abs(float(fused[0, 0]) - 4.0), 1e-12))
    const = torch.tensor([0.25, 0.75], dtype=torch.float64).reshape(1, 1, 2, 1, 1).expand(1, 1, 2, 2, 2)
    skips = torch.tensor([2.0, 4.0], dtype=torch.float64).reshape(1, 2, 1, 1, 1).expand(1, 2, 1, 4, 4)
    (o,) = fuse_skips(const, [skips])
    out.append(_check("tfsa", "hand skip fusion", float((o - 3.5).abs().max()), 1e-12))

    cfg = NetConfig(kind="multi", L=3, in_channels=3, cond_channels=3, base_channels=8, mid_channels=16, heads=4, key_dim=4)
    net = build_network(cfg, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(2, 3, 3, 16, 16, generator=gen)
    cond = torch.randn(2, 3, 3, 16, 16, generator=gen)
    with torch.no_grad():
        _, masks = net(x, torch.tensor([0.1, -0.3]), cond, return_masks=True)
    out.append(_check("tfsa", "mask rows sum to 1", float((masks.sum(dim=2) - 1).abs().max()), 1e-6))
    worst = 0.0
    for size in ((8, 8), (16, 16), (13, 7)):
        up = upsample_masks(masks, size)
        worst = max(worst, float((up.sum(dim=2) - 1).abs().max()))
    out.append(_check("tfsa", "upsampled masks partition unity", worst, 1e-5))
    return out


def gradient_check(net, x, c_noise, cond, h=1e-5, seed=0):
    """Largest relative error between autograd and central differences over all parameters."""
    import torch

    net = net.double()
    x, cond = x.double(), None if cond is None else cond.double()
    weights = torch.randn(net(x, c_noise, cond).shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)

    def objective():
        return float((net(x, c_noise, cond) * weights).sum())

    net.zero_grad()
    (net(x, c_noise, cond) * weights).sum().backward()
    worst = 0.0
    with torch.no_grad():
        for param in net.parameters():
            flat = param.view(-1)
            grad = param.grad.view(-1)
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + h
                up = objective()
                flat[j] = orig - h
                down = objective()
                flat[j] = orig
                numeric = (up - down) / (2 * h)
                analytic = float(grad[j])
                denom = max(abs(numeric), abs(analytic), 1e-7)
                worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def gradient_suite(seed=0):
    import torch

    out = []
    gen = torch.Generator().manual_seed(seed)
    for kind, L in (("mono", 1), ("multi", 2)):
        cfg = NetConfig(kind=kind, L=L, in_channels=4, cond_channels=4, out_channels=4,
                        base_channels=4, mid_channels=8, heads=2, key_dim=2)
        net = build_network(cfg, seed=seed)
        x = torch.randn(1, L, 4, 8, 8, generator=gen)
        cond = torch.randn(1, L, 4, 8, 8, generator=gen)
        err = gradient_check(net, x, torch.tensor([0.2]), cond, seed=seed)
        out.append(_check("gradient", f"{kind} L={L}", err, 1e-3))
    return out


SUITES = {
    "kernel": kernel_suite,
    "sde": sde_suite,
    "precondition": precondition_suite,
    "edm": edm_suite,
    "sampler": sampler_suite,
    "churn": churn_suite,
    "tfsa": tfsa_suite,
    "gradient": gradient_suite,
}
MC_SUITES = ("kernel", "sde", "precondition", "churn")


def run(suite="all", samples=None, seed=0):
    names = list(SUITES) if suite == "all" else [suite]
    checks = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; choose from {', '.join(['all', *SUITES])}")
        kwargs = {} if name == "sampler" else {"seed": seed}
        if samples is not None and name in MC_SUITES:
            kwargs["n"] = samples
        checks.extend(SUITES[name](**kwargs))
    return checks

"""
The mean-reverting forward process
==================================

A clean pixel x0 drifts toward the cloudy observation mu while noise grows.
In the rescaled variable x_tilde = x / s(t) the law is simply
N(x0 + alpha t mu, t^2). Here we draw from that kernel directly, then check
it against a brute-force Euler-Maruyama simulation of the SDE.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from emrdm.diffusion import kernel_moments, perturb, simulate_forward_sde
from emrdm.schedule import Schedule, drift_diffusion, k_of_t, s_of_t

sched = Schedule(alpha=3.0)
x0, mu = 0.2, 0.9

# s(t) shrinks, k(t) grows linearly
t = np.linspace(0, 3, 7)
print("t     s(t)    k(t)")
for ti in t:
    print(f"{ti:.1f}  {s_of_t(sched, ti):.4f}  {k_of_t(sched, ti):.2f}")

f, g = drift_diffusion(sched, 1.0)
print(f"\nat t=1: drift coefficient f={f:.4f}, diffusion g={g:.5f}")

# %%
# Kernel samples vs closed form
rng = np.random.default_rng(0)
for ti in (0.1, 1.0, 3.0):
    draws = perturb(np.full(100_000, x0), mu, sched, ti, rng=rng)
    mean, std = kernel_moments(x0, mu, sched, ti)
    print(f"t={ti}: empirical mean {draws.mean():.4f} (exact {mean:.4f}), std {draws.std():.4f} (exact {std:.4f})")

# %%
# The SDE in x-space lands on the same law, scaled by s(t)
t_end = 1.0
paths = simulate_forward_sde(x0, mu, sched, t_end, steps=1000, seed=1, n_paths=50_000)
mean_x, std_x = kernel_moments(x0, mu, sched, t_end, space="x")
print(f"\nSDE at t={t_end}: mean {paths.mean():.4f} vs {mean_x:.4f}, std {paths.std():.4f} vs {std_x:.4f}")

grid = np.linspace(paths.min(), paths.max(), 200)
density = np.exp(-0.5 * ((grid - mean_x) / std_x) ** 2) / (std_x * np.sqrt(2 * np.pi))
plt.hist(paths, bins=80, density=True, alpha=0.5, label="Euler-Maruyama paths")
plt.plot(grid, density, "k", label="closed-form kernel")
plt.axvline(mu, color="r", ls="--", label="mu")
plt.legend()
plt.title("x(1) for x0=0.2, mu=0.9, alpha=3")
plt.savefig("forward_process.png", dpi=100)
print("saved forward_process.png")

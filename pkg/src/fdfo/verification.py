"""Executable checks of the math behind FDFO.

Everything here is an oracle: closed-form Gaussian flows, Monte-Carlo
estimates compared with analytic values, and finite-difference Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import central_difference_grad
from .rewards import NotDifferentiable, RewardSpec, reward, reward_grad
from .sampler import euler_ode_step, euler_sample, noise_mix, stochastic_sample, time_grid
from .velocity_model import VelocityNet, velocity_fn

# --- Gaussian flows --------------------------------------------------------


def gaussian_std(t, sigma_d: float):
    """Marginal std of ``x_t = (1-t) x0 + t eps`` with ``x0 ~ N(0, sigma_d^2)``."""
    t = np.asarray(t, dtype=np.float64)
    return np.sqrt((1.0 - t) ** 2 * sigma_d**2 + t**2)


def analytic_gaussian_velocity(x, t, sigma_d: float):
    """``E[eps - x0 | x_t = x]`` for Gaussian data."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    if t.ndim == 1 and x.ndim == 2:
        t = t[:, None]
    s2 = sigma_d**2
    return (t - (1.0 - t) * s2) * x / ((1.0 - t) ** 2 * s2 + t**2)


def gaussian_velocity_fn(sigma_d: float):
    return lambda x, t, c: analytic_gaussian_velocity(x, t, sigma_d)


def exact_gaussian_step(sigma_d: float):
    """ODE sub-step that transports Gaussian marginals exactly (ignores ``v``)."""

    def step(x, t_from, t_to, v):
        return x * (gaussian_std(t_to, sigma_d) / gaussian_std(t_from, sigma_d))

    return step


def doubled_noise_mix(x_tilde, t_tilde, t_next, gamma, eps_new):
    """Fault-injected mixer with twice the correct noise coefficient."""
    return noise_mix(x_tilde, t_tilde, t_next, gamma, 2.0 * np.asarray(eps_new))


@dataclass
class MarginalReport:
    max_z: float
    z_var: np.ndarray
    z_mean: np.ndarray
    n: int

    @property
    def passed(self) -> bool:
        return self.max_z < 4.0


def marginal_check(sigma_d: float, gamma: float, n: int, T: int, rng: np.random.Generator, *, dim: int = 1,
                   integrator: str = "exact", break_mixer: bool = False) -> MarginalReport:
    """Run ``n`` stochastic Gaussian trajectories and z-score per-step moments.

    ``integrator="exact"`` isolates the noise mixer from Euler discretization
    error; ``"euler"`` uses the analytic velocity with Euler steps.
    """
    if integrator not in ("exact", "euler"):
        raise ValueError(f"unknown integrator {integrator!r}")
    grid = time_grid(T)
    eps = rng.standard_normal((n, dim))
    ode = exact_gaussian_step(sigma_d) if integrator == "exact" else euler_ode_step
    mix = doubled_noise_mix if break_mixer else noise_mix
    tr = stochastic_sample(gaussian_velocity_fn(sigma_d), eps, 0, grid, gamma, rng=rng, ode_step=ode, mix=mix)
    var_true = gaussian_std(grid, sigma_d) ** 2
    x = tr.states.reshape(T + 1, -1)
    m = x.shape[1]
    z_mean = x.mean(axis=1) / np.sqrt(var_true / m)
    # standard error of the sample variance of Gaussian data
    z_var = (x.var(axis=1, ddof=1) - var_true) / (var_true * np.sqrt(2.0 / (m - 1)))
    return MarginalReport(float(max(np.abs(z_mean).max(), np.abs(z_var).max())), z_var, z_mean, n)


# --- linear flows and Stein's lemma ---------------------------------------


@dataclass
class LinearFlowOracle:
    """The flow map ``f(x) = A x`` with a linear or radial reward on its output."""

    A: np.ndarray
    reward: RewardSpec
    sigma_c: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1] or not np.all(np.isfinite(self.A)):
            raise ValueError("A must be a finite square matrix")
        if not self.sigma_c > 0:
            raise ValueError("sigma_c must be positive")
        if self.reward.variant not in ("linear", "radial"):
            raise ValueError("only linear and radial rewards have an exact smoothed gradient")

    def flow(self, x):
        return np.asarray(x, dtype=np.float64) @ self.A.T

    def smoothed_grad(self, y):
        # the Gaussian average of a linear or quadratic function has the same gradient at the mean
        return reward_grad(self.reward, y)


@dataclass
class SteinReport:
    estimate: np.ndarray
    analytic: np.ndarray
    rel_error: float
    stderr: np.ndarray
    n: int

    @property
    def max_z(self) -> float:
        return float(np.max(np.abs(self.estimate - self.analytic) / self.stderr))


def stein_check(oracle: LinearFlowOracle, n: int, rng: np.random.Generator, x=None, baseline: float | None = None,
                chunk: int = 250_000) -> SteinReport:
    """Monte-Carlo ``E[(R(f(x+e)) - R(f(x))) (f(x+e) - f(x))]`` vs ``sigma^2 A A^T grad R~``.

    ``baseline`` replaces ``R(f(x))`` with a constant.
    """
    if n < 10_000:
        raise ValueError("stein_check needs at least 1e4 samples")
    d = oracle.A.shape[0]
    x = np.zeros(d) if x is None else np.asarray(x, dtype=np.float64)
    y0 = oracle.flow(x)
    r0 = reward(oracle.reward, y0) if baseline is None else float(baseline)
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        e = oracle.sigma_c * rng.standard_normal((m, d))
        dy = e @ oracle.A.T
        contrib = (reward(oracle.reward, y0 + dy) - r0)[:, None] * dy
        s1 += contrib.sum(axis=0)
        s2 += (contrib**2).sum(axis=0)
        done += m
    est = s1 / n
    stderr = np.sqrt(np.maximum(s2 / n - est**2, 0.0) / n)
    analytic = oracle.sigma_c**2 * oracle.A @ oracle.A.T @ oracle.smoothed_grad(y0)
    denom = np.linalg.norm(analytic)
    rel = float(np.linalg.norm(est - analytic) / denom) if denom > 0 else float(np.linalg.norm(est))
    return SteinReport(est, analytic, rel, stderr, n)


# --- the prototype update and Jacobian statistics --------------------------


def _integrate(vel, x, c, times):
    x = np.asarray(x, dtype=np.float64)
    c = np.broadcast_to(np.asarray(c), (x.shape[0],)) if x.ndim == 2 else c
    for i in range(len(times) - 1):
        x = euler_ode_step(x, times[i], times[i + 1], vel(x, times[i], c))
    return x


def flow_completion(net: VelocityNet, grid, j: int, c, cfg_scale: float | None = None):
    """Deterministic map from the state at step ``j`` to the final sample."""
    vel = velocity_fn(net, cfg_scale)
    tail = np.asarray(grid, dtype=np.float64)[j:]
    return lambda x: _integrate(vel, x, c, tail)


@dataclass
class AscentReport:
    mean: float
    stderr: float
    n: int

    @property
    def z(self) -> float:
        return self.mean / self.stderr if self.stderr > 0 else float("inf") * np.sign(self.mean)


def ascent_statistic(f, reward_spec: RewardSpec, x, sigma_c: float, rng: np.random.Generator, h: float = 1e-4):
    """Per-row ``grad R(f(x))^T J_f(x) [dR dx]`` for one perturbation of each row of ``x``.

    ``dR dx`` is the reward-weighted output difference of the pair
    ``(f(x), f(x + delta))``; ``J_f`` is applied by central differences.
    """
    if not reward_spec.differentiable:
        raise NotDifferentiable(f"{reward_spec.variant} reward has no gradient")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = f(x)
    y_hat = f(x + sigma_c * rng.standard_normal(x.shape))
    u = (reward(reward_spec, y_hat) - reward(reward_spec, y))[:, None] * (y_hat - y)
    norm = np.linalg.norm(u, axis=1, keepdims=True)
    u_hat = np.divide(u, norm, out=np.zeros_like(u), where=norm > 0)
    ju = norm * (f(x + h * u_hat) - f(x - h * u_hat)) / (2.0 * h)
    return np.sum(reward_grad(reward_spec, y) * ju, axis=1)


def _report(stats) -> AscentReport:
    stats = np.asarray(stats)
    return AscentReport(float(stats.mean()), float(stats.std(ddof=1) / np.sqrt(stats.size)), stats.size)


def prototype_oracle_step(oracle: LinearFlowOracle, n: int, rng: np.random.Generator, x=None) -> AscentReport:
    d = oracle.A.shape[0]
    x = np.zeros((n, d)) if x is None else np.broadcast_to(np.asarray(x, dtype=np.float64), (n, d))
    return _report(ascent_statistic(oracle.flow, oracle.reward, x, oracle.sigma_c, rng))


def prototype_net_step(net: VelocityNet, reward_spec: RewardSpec, T: int, j: int, sigma_c: float, n: int,
                       rng: np.random.Generator, cfg_scale: float | None = None) -> AscentReport:
    """Ascent statistic on a net: ``n`` deterministic trajectories are stopped at step ``j``
    and each state gets one perturbation."""
    grid = time_grid(T)
    c = rng.integers(net.n_conditions, size=n)
    x_j = _integrate(velocity_fn(net, cfg_scale), rng.standard_normal((n, net.dim)), c, grid[: j + 1])
    return _report(ascent_statistic(flow_completion(net, grid, j, c, cfg_scale), reward_spec, x_j, sigma_c, rng))


def finite_difference_jacobian(f, x, h: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    E = h * np.eye(d)
    cols = (f(x[None] + E) - f(x[None] - E)) / (2.0 * h)
    return cols.T


def jacobian_psd_stat(f, x, h: float = 1e-4) -> float:
    """Smallest eigenvalue of the symmetric part of the Jacobian of ``f`` at ``x``."""
    if not h > 0:
        raise ValueError("h must be positive")
    J = finite_difference_jacobian(f, x, h)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite Jacobian entries")
    return float(np.linalg.eigvalsh(0.5 * (J + J.T)).min())


def jacobian_survey(net: VelocityNet, T: int, n: int, rng: np.random.Generator, h: float = 1e-4) -> np.ndarray:
    """PSD statistic at ``n`` random (state, step, condition) triples."""
    grid = time_grid(T)
    out = np.empty(n)
    for k in range(n):
        j = int(rng.integers(T))
        c = int(rng.integers(net.n_conditions))
        x = gaussian_std(grid[j], 1.0) * rng.standard_normal(net.dim)
        out[k] = jacobian_psd_stat(flow_completion(net, grid, j, c), x, h)
    return out


# --- autodiff and sampler checks ------------------------------------------


def gradient_check(net: VelocityNet, x, t, c, rng: np.random.Generator, cfg_scale: float | None = None,
                   h: float = 1e-5) -> float:
    """Relative error between the tape gradient and central differences for
    the scalar ``<v(x, t, c), g>`` with a random ``g``."""
    v, pullback = net.forward_with_pullback(x, t, c, cfg_scale)
    g = rng.standard_normal(v.shape)
    auto = pullback(g)

    def scalar(p):
        return float(np.sum(velocity_fn(net.with_params(p), cfg_scale)(x, t, c) * g))

    fd = central_difference_grad(scalar, net.params, h)
    return float(np.linalg.norm(auto - fd) / max(np.linalg.norm(fd), 1e-12))


def random_small_net(rng: np.random.Generator) -> VelocityNet:
    dim = int(rng.integers(1, 4))
    C = int(rng.integers(1, 5))
    hidden = tuple(int(w) for w in rng.integers(3, 12, size=rng.integers(1, 4)))
    net = VelocityNet.initialize(dim, C, rng, hidden, n_freq=int(rng.integers(0, 3)))
    # a non-zero output layer so every parameter receives gradient
    return net.with_params(net.params + 0.3 * rng.standard_normal(net.n_params))


def sampler_degeneracy(net: VelocityNet, eps, c, T: int) -> bool:
    """True when the stochastic sampler with zero stochasticity reproduces Euler bit for bit."""
    grid = time_grid(T)
    vel = velocity_fn(net)
    a = euler_sample(vel, eps, c, grid)
    b = stochastic_sample(vel, eps, c, grid, np.zeros(T), noises=np.ones((T, *np.atleast_2d(eps).shape)))
    return bool(np.array_equal(a.states, b.states))

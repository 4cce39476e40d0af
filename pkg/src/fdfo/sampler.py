"""Euler and EDM-style stochastic sampling of the flow ODE dx = v dt from t=1 to t=0.

Flow matching in EDM terms has scale ``s(t) = 1 - t`` and noise level
``sigma(t) = t / (1 - t)``.  The stochastic step overshoots the Euler step to
the time whose noise level is ``sigma(t_next) / (1 + gamma)`` and then mixes in
fresh noise to land back on ``t_next``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numerics import NonFiniteError, ShapeError


def time_grid(T: int, kind: str = "uniform") -> np.ndarray:
    """Times ``t_0 = 1 > t_1 > ... > t_T = 0``."""
    if T < 1:
        raise ValueError("need at least one step")
    if kind == "uniform":
        g = np.linspace(1.0, 0.0, T + 1)
    elif kind == "cosine":
        g = 0.5 * (1.0 + np.cos(np.pi * np.arange(T + 1) / T))
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    g[0], g[-1] = 1.0, 0.0
    return g


def check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 1.0 or grid[-1] != 0.0 or np.any(np.diff(grid) >= 0):
        raise ValueError("time grid must decrease strictly from 1 to 0")
    return grid


def sigma(t):
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return t / (1.0 - t)


def scale(t):
    return 1.0 - np.asarray(t, dtype=np.float64)


def overshoot_time(t_next, gamma):
    """Time whose noise level is ``sigma(t_next) / (1 + gamma)``."""
    t_next = np.asarray(t_next, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0):
        raise ValueError("gamma must be non-negative")
    if np.any((t_next >= 1.0) & (gamma > 0)):
        raise ValueError("cannot overshoot from t = 1 (infinite noise level)")
    if np.any(t_next < 0) or np.any(t_next > 1):
        raise ValueError("t_next must lie in [0, 1]")
    out = t_next / (1.0 - gamma * t_next + gamma)
    return out if out.ndim else float(out)


def noise_mix(x_tilde, t_tilde, t_next, gamma, eps_new):
    """Add fresh noise at ``t_tilde`` and rescale so the state sits at ``t_next``.

    ``t_next`` is implied by ``(t_tilde, gamma)``; it is accepted to keep the
    call site explicit.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    eps_new = np.asarray(eps_new, dtype=np.float64)
    if x_tilde.shape != eps_new.shape:
        raise ShapeError(f"noise_mix: {x_tilde.shape} vs {eps_new.shape}")
    t_tilde = np.asarray(t_tilde, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if x_tilde.ndim == 2:
        t_tilde = t_tilde.reshape(-1, 1) if t_tilde.ndim else t_tilde
        gamma = gamma.reshape(-1, 1) if gamma.ndim else gamma
    coef = t_tilde * np.sqrt(gamma * gamma + 2.0 * gamma)
    return (x_tilde + coef * eps_new) / (gamma * t_tilde + 1.0)


def euler_ode_step(x, t_from, t_to, v):
    return x + (t_to - t_from) * v


@dataclass
class Trajectory:
    """A batch of sampling paths.

    ``states`` is ``(T+1, n, d)``, ``v_ref`` and ``noises`` are ``(T, n, d)``,
    ``gammas`` is ``(n, T)`` and holds the values actually applied (the
    final step into t=0 is always deterministic).
    """

    states: np.ndarray
    times: np.ndarray
    v_ref: np.ndarray
    noises: np.ndarray
    cond: np.ndarray
    gammas: np.ndarray

    @property
    def T(self) -> int:
        return self.times.size - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _batch(eps, c):
    eps = np.asarray(eps, dtype=np.float64)
    single = eps.ndim == 1
    eps = np.atleast_2d(eps)
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (eps.shape[0],)).copy()
    return eps, c, single


def _check_state(x, i):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite sampler state at step {i}")


def euler_sample(vel, eps, c, grid) -> Trajectory:
    """Deterministic Euler integration; ``vel(x, t, c)`` gives velocities."""
    grid = check_grid(grid)
    x, c, _ = _batch(eps, c)
    n, d = x.shape
    T = grid.size - 1
    states = np.empty((T + 1, n, d))
    v_ref = np.empty((T, n, d))
    states[0] = x
    for i in range(T):
        v = vel(x, grid[i], c)
        v_ref[i] = v
        x = euler_ode_step(x, grid[i], grid[i + 1], v)
        _check_state(x, i)
        states[i + 1] = x
    return Trajectory(states, grid, v_ref, np.zeros((T, n, d)), c, np.zeros((n, T)))


def effective_gammas(gammas, grid, n: int) -> np.ndarray:
    """Broadcast to ``(n, T)`` and zero the step that lands on t = 0."""
    T = grid.size - 1
    g = np.array(np.broadcast_to(np.asarray(gammas, dtype=np.float64), (n, T)))
    if np.any(g < 0):
        raise ValueError("stochasticity must be non-negative")
    g[:, grid[1:] == 0.0] = 0.0
    return g


def stochastic_sample(vel, eps, c, grid, gammas, rng=None, noises=None, *, ode_step=euler_ode_step, mix=noise_mix) -> Trajectory:
    """Stochastic flow sampler.

    ``gammas`` is ``(T,)`` or per-trajectory ``(n, T)``.  Fresh noises come
    from ``noises`` (``(T, n, d)``) when given, else from ``rng``.
    ``ode_step`` and ``mix`` are the two sub-steps; tests swap them for
    exact transport or fault-injected mixers.
    """
    grid = check_grid(grid)
    x, c, _ = _batch(eps, c)
    n, d = x.shape
    T = grid.size - 1
    g = effective_gammas(gammas, grid, n)
    if noises is None:
        if rng is None:
            raise ValueError("stochastic_sample needs rng or noises")
        noises = rng.standard_normal((T, n, d))
    noises = np.asarray(noises, dtype=np.float64)
    if noises.shape != (T, n, d):
        raise ShapeError(f"noises must be {(T, n, d)}, got {noises.shape}")
    states = np.empty((T + 1, n, d))
    v_ref = np.empty((T, n, d))
    states[0] = x
    for i in range(T):
        v = vel(x, grid[i], c)
        v_ref[i] = v
        gi = g[:, i]
        t_tilde = overshoot_time(np.full(n, grid[i + 1]), gi)
        x_tilde = ode_step(x, grid[i], t_tilde[:, None], v)
        x = mix(x_tilde, t_tilde, grid[i + 1], gi, noises[i])
        _check_state(x, i)
        states[i + 1] = x
    return Trajectory(states, grid, v_ref, noises, c, g)


def transition_params(x_i, v, t_i, t_next, gamma):
    """Gaussian transition of one stochastic step: ``(mean, std)`` per trajectory.

    ``x_{i+1} = mean + std * eps_i``; ``std`` is zero for deterministic steps.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    t_tilde = overshoot_time(np.broadcast_to(t_next, gamma.shape), gamma)
    denom = gamma * t_tilde + 1.0
    mean = (x_i + (t_tilde - t_i)[:, None] * v) / denom[:, None]
    std = t_tilde * np.sqrt(gamma * gamma + 2.0 * gamma) / denom
    return mean, std, (t_tilde - t_i) / denom


def write_trajectory_csv(traj: Trajectory, fh, rows=None) -> None:
    """Write paths as ``sample, cond, step, t, x_*, v_ref_*`` rows.

    The last state has no outgoing velocity; its ``v_ref`` cells are empty.
    """
    d = traj.states.shape[2]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["sample", "cond", "step", "t", *(f"x_{k}" for k in range(d)), *(f"v_ref_{k}" for k in range(d))])
    for j in range(traj.states.shape[1]) if rows is None else rows:
        for i in range(traj.T + 1):
            v = [repr(float(a)) for a in traj.v_ref[i, j]] if i < traj.T else [""] * d
            w.writerow([j, int(traj.cond[j]), i, repr(float(traj.times[i])),
                        *(repr(float(a)) for a in traj.states[i, j]), *v])

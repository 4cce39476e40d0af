"""Stochasticity schedules and per-step gradient weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("uniform", "interval", "prior")
WEIGHT_MODES = {"uniform": None, "low_noise": (-0.3, 1.0), "high_noise": (0.3, 1.0)}


@dataclass(frozen=True)
class StochasticitySchedule:
    gammas: np.ndarray
    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.gammas) < 0):
            raise ValueError("stochasticity must be non-negative")

    def __len__(self):
        return len(self.gammas)


def logit(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log(x) - np.log1p(-x)


def log_logit_normal_density(x, mu: float, s: float):
    """Log of the logit-normal density; ``-inf`` at x in {0, 1}."""
    if not s > 0:
        raise ValueError("logit-normal sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.shape, -np.inf)
    inside = (x > 0) & (x < 1)
    xi = x[inside]
    z = (logit(xi) - mu) / s
    out[inside] = -0.5 * z * z - math.log(math.sqrt(2 * math.pi) * s) - np.log(xi) - np.log1p(-xi)
    return out


def logit_normal_density(x, mu: float, s: float):
    out = np.exp(log_logit_normal_density(x, mu, s))
    return out if out.ndim else float(out)


def _normalized_density(t, mu, s):
    # softmax of log densities: exact normalization even when all densities underflow
    logd = log_logit_normal_density(t, mu, s)
    if not np.any(np.isfinite(logd)):
        raise ValueError("no interior time in grid")
    w = np.exp(logd - np.max(logd))
    return w / w.sum()


def schedule_uniform(T: int, gamma: float = 0.0025) -> StochasticitySchedule:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return StochasticitySchedule(np.full(T, float(gamma)), "uniform", {"gamma": gamma})


def schedule_interval(grid, rng, mu_center=1.3, sigma_center=1.5, sigma_int=0.25, w_int=3.0) -> StochasticitySchedule:
    """Random smooth interval: logit-normal bump around a random center, then ``exp(w * g) - 1``."""
    for v in (mu_center, sigma_center, sigma_int, w_int):
        if not np.isfinite(v):
            raise ValueError("interval schedule parameters must be finite")
    if sigma_center <= 0 or sigma_int <= 0:
        raise ValueError("interval schedule sigmas must be positive")
    t = np.asarray(grid, dtype=np.float64)[:-1]
    center = rng.normal(mu_center, sigma_center)
    raw = _normalized_density(t, center, sigma_int)
    gammas = np.expm1(w_int * raw)
    return StochasticitySchedule(gammas, "interval", {"center": float(center), "raw": raw,
                                                      "sigma_int": sigma_int, "w_int": w_int})


def prior_gamma(log_w: float) -> float:
    return math.expm1(math.exp(log_w))


def schedule_prior(T: int, rng, mu_logw=math.log(0.1), sigma_logw=1.0) -> StochasticitySchedule:
    """All stochasticity on the first step, with log-normally distributed strength."""
    if sigma_logw <= 0:
        raise ValueError("sigma_logw must be positive")
    log_w = rng.normal(mu_logw, sigma_logw)
    gammas = np.zeros(T)
    gammas[0] = prior_gamma(log_w)
    return StochasticitySchedule(gammas, "prior", {"log_w": float(log_w)})


def draw_schedule(family: str, grid, rng, params: dict) -> StochasticitySchedule:
    T = len(grid) - 1
    if family == "uniform":
        return schedule_uniform(T, params.get("gamma", 0.0025))
    if family == "interval":
        keys = ("mu_center", "sigma_center", "sigma_int", "w_int")
        return schedule_interval(grid, rng, **{k: params[k] for k in keys if k in params})
    if family == "prior":
        keys = ("mu_logw", "sigma_logw")
        return schedule_prior(T, rng, **{k: params[k] for k in keys if k in params})
    raise ValueError(f"unknown schedule family {family!r}")


def gradient_weights(grid, mode: str = "uniform") -> np.ndarray:
    """Per-step loss weights for steps starting at ``t_0 .. t_{T-1}``; sums to 1."""
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown gradient weight mode {mode!r}")
    t = np.asarray(grid, dtype=np.float64)[:-1]
    if WEIGHT_MODES[mode] is None:
        return np.full(t.size, 1.0 / t.size)
    mu, s = WEIGHT_MODES[mode]
    return _normalized_density(t, mu, s)

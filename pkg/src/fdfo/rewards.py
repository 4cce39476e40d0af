"""Toy scalar rewards on generated samples.

All functions accept a single point ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("sigmoid_halfplane", "radial", "mode_indicator", "linear", "step")
DIFFERENTIABLE = ("sigmoid_halfplane", "radial", "linear")


class NotDifferentiable(TypeError):
    """Gradient requested from a reward that has none."""


@dataclass(frozen=True)
class RewardSpec:
    variant: str
    direction: tuple = ()  # u for sigmoid_halfplane / step
    gain: float = 1.0  # k for sigmoid_halfplane
    offset: float = 0.0
    center: tuple = ()  # mu for radial
    modes: tuple = ()  # mode table for mode_indicator
    preferred: tuple = ()  # preferred mode ids; empty means "the sample's own condition"
    coef: tuple = ()  # b for linear
    threshold: float = 0.0  # tau for step

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown reward variant {self.variant!r}")
        for name in ("direction", "center", "coef"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "modes", tuple(tuple(float(v) for v in m) for m in self.modes))
        object.__setattr__(self, "preferred", tuple(int(v) for v in self.preferred))
        vals = [*self.direction, *self.center, *self.coef, self.gain, self.offset, self.threshold]
        vals += [v for m in self.modes for v in m]
        if not np.all(np.isfinite(vals)):
            raise ValueError("reward parameters must be finite")
        needed = {"sigmoid_halfplane": "direction", "step": "direction", "radial": "center",
                  "linear": "coef", "mode_indicator": "modes"}[self.variant]
        if not getattr(self, needed):
            raise ValueError(f"{self.variant} reward needs {needed!r}")

    @property
    def differentiable(self) -> bool:
        return self.variant in DIFFERENTIABLE

    @property
    def dim(self) -> int:
        if self.variant == "mode_indicator":
            return len(self.modes[0])
        return len({"radial": self.center, "linear": self.coef}.get(self.variant, self.direction))


def _rows(spec: RewardSpec, y):
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != spec.dim:
        raise ValueError(f"reward expects dimension {spec.dim}, got {y.shape[1]}")
    return y, single


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def reward(spec: RewardSpec, y, c=None):
    """Evaluate the reward. ``c`` is only used by mode_indicator without a preferred set."""
    y, single = _rows(spec, y)
    v = spec.variant
    if v == "sigmoid_halfplane":
        r = 100.0 * _sigmoid(spec.gain * (y @ np.array(spec.direction) - spec.offset))
    elif v == "radial":
        r = -np.sum((y - np.array(spec.center)) ** 2, axis=1)
    elif v == "linear":
        r = y @ np.array(spec.coef)
    elif v == "step":
        r = (y @ np.array(spec.direction) > spec.threshold).astype(np.float64)
    else:
        modes = np.array(spec.modes)
        nearest = np.argmin(((y[:, None, :] - modes[None]) ** 2).sum(axis=2), axis=1)
        if spec.preferred:
            r = np.isin(nearest, spec.preferred).astype(np.float64)
        else:
            if c is None:
                raise ValueError("mode_indicator without a preferred set needs the condition")
            r = (nearest == np.broadcast_to(np.asarray(c), nearest.shape)).astype(np.float64)
    return float(r[0]) if single else r


def reward_grad(spec: RewardSpec, y):
    if not spec.differentiable:
        raise NotDifferentiable(f"{spec.variant} reward has no gradient")
    y, single = _rows(spec, y)
    v = spec.variant
    if v == "sigmoid_halfplane":
        u = np.array(spec.direction)
        s = _sigmoid(spec.gain * (y @ u - spec.offset))
        g = (100.0 * spec.gain * s * (1.0 - s))[:, None] * u[None]
    elif v == "radial":
        g = -2.0 * (y - np.array(spec.center))
    else:
        g = np.broadcast_to(np.array(spec.coef), y.shape).copy()
    return g[0] if single else g


@dataclass(frozen=True)
class CombinedReward:
    terms: tuple = field(default_factory=tuple)  # ((RewardSpec, weight), ...)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("combined reward needs at least one term")
        if not all(np.isfinite(w) for _, w in self.terms):
            raise ValueError("reward weights must be finite")

    @property
    def differentiable(self) -> bool:
        return all(s.differentiable for s, _ in self.terms)


def combine(combined: CombinedReward, y, c=None):
    return sum(w * reward(s, y, c) for s, w in combined.terms)


def combine_grad(combined: CombinedReward, y):
    return sum(w * reward_grad(s, y) for s, w in combined.terms)

"""Conditional velocity network v(x; t, c) and classifier-free guidance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import NonFiniteError, ShapeError, Tape, check_finite


@dataclass
class VelocityNet:
    """Tanh MLP on ``[x, t, sin/cos(2 pi k t), onehot(c)]``.

    Condition ids run over ``0..n_conditions``; the last id is the null
    (unconditional) condition.  The one-hot block of the first weight matrix
    acts as a learned condition embedding table.
    """

    dim: int
    n_conditions: int
    hidden: tuple[int, ...] = (64, 64, 64)
    n_freq: int = 2
    params: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def null_id(self) -> int:
        return self.n_conditions

    @property
    def in_features(self) -> int:
        return self.dim + 1 + 2 * self.n_freq + self.n_conditions + 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.in_features, *self.hidden, self.dim]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes())

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        p = self.params if params is None else params
        out, k = [], 0
        for a, b in self.layer_shapes():
            w = p[k : k + a * b].reshape(a, b)
            k += a * b
            out.append((w, p[k : k + b]))
            k += b
        return out

    @classmethod
    def initialize(cls, dim, n_conditions, rng, hidden=(64, 64, 64), n_freq=2) -> "VelocityNet":
        net = cls(dim, n_conditions, tuple(hidden), n_freq)
        chunks = []
        shapes = net.layer_shapes()
        for i, (a, b) in enumerate(shapes):
            if i == len(shapes) - 1:
                w = np.zeros((a, b))  # untrained flow is the identity map
            else:
                w = rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b))
            chunks += [w.ravel(), np.zeros(b)]
        net.params = np.concatenate(chunks)
        return net

    def copy(self) -> "VelocityNet":
        return VelocityNet(self.dim, self.n_conditions, self.hidden, self.n_freq, self.params.copy())

    def with_params(self, params) -> "VelocityNet":
        return VelocityNet(self.dim, self.n_conditions, self.hidden, self.n_freq, np.array(params, dtype=np.float64))

    # evaluation
    def features(self, x: np.ndarray, t: np.ndarray, c: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        t = t.reshape(n, 1)
        k = 2.0 * np.pi * np.arange(1, self.n_freq + 1)
        onehot = np.zeros((n, self.n_conditions + 1))
        onehot[np.arange(n), c] = 1.0
        return np.concatenate([x, t, np.sin(t * k), np.cos(t * k), onehot], axis=1)

    def _prepare(self, x, t, c):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"x must have trailing dimension {self.dim}, got {x.shape}")
        check_finite(x, "x")
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
            raise ValueError("t must lie in [0, 1]")
        c = np.broadcast_to(np.asarray(c, dtype=np.int64), (n,))
        if np.any(c < 0) or np.any(c > self.n_conditions):
            raise ValueError(f"condition ids must lie in [0, {self.n_conditions}]")
        return x, t, c, single

    def __call__(self, x, t, c) -> np.ndarray:
        x, t, c, single = self._prepare(x, t, c)
        h = self.features(x, t, c)
        layers = self.layers()
        for w, b in layers[:-1]:
            h = np.tanh(h @ w + b)
        w, b = layers[-1]
        out = h @ w + b
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("velocity produced non-finite output")
        return out[0] if single else out

    # differentiable evaluation
    def leaves(self, tape: Tape) -> list:
        return [(tape.param(w, f"W{i}"), tape.param(b, f"b{i}")) for i, (w, b) in enumerate(self.layers())]

    def record(self, tape: Tape, leaves, x, t, c):
        x, t, c, _ = self._prepare(x, t, c)
        h = tape.const(self.features(x, t, c))
        for w, b in leaves[:-1]:
            h = tape.tanh(tape.affine(h, w, b))
        w, b = leaves[-1]
        return tape.affine(h, w, b)

    def flatten_grads(self, grads: dict) -> np.ndarray:
        chunks = []
        for i in range(len(self.layer_shapes())):
            chunks += [grads[f"W{i}"].ravel(), grads[f"b{i}"]]
        return np.concatenate(chunks)

    def record_velocity(self, tape: Tape, leaves, x, t, c, cfg_scale: float | None = None):
        """Record v (or the guided velocity when ``cfg_scale`` is set) on ``tape``."""
        if cfg_scale is None:
            return self.record(tape, leaves, x, t, c)
        c = np.asarray(c)
        if np.any(c == self.null_id):
            raise ValueError("guidance needs a real (non-null) condition")
        v_c = self.record(tape, leaves, x, t, c)
        v_0 = self.record(tape, leaves, x, t, self.null_id)
        return tape.add(v_0, tape.scale(tape.sub(v_c, v_0), cfg_scale))

    def forward_with_pullback(self, x, t, c, cfg_scale: float | None = None):
        """Return ``(v, pullback)``; ``pullback(cot)`` gives ``d<v, cot>/d params``."""
        tape = Tape()
        leaves = self.leaves(tape)
        v = self.record_velocity(tape, leaves, x, t, c, cfg_scale)

        def pullback(cotangent):
            return self.flatten_grads(tape.backward(tape.inner(v, cotangent)))

        return v.value, pullback

    def vjp(self, x, t, c, cotangent, cfg_scale: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        v, pullback = self.forward_with_pullback(x, t, c, cfg_scale)
        return v, pullback(cotangent)


def velocity(net: VelocityNet, x, t, c) -> np.ndarray:
    return net(x, t, c)


def cfg_velocity(net: VelocityNet, x, t, c, w: float) -> np.ndarray:
    """Guided velocity ``v_null + w * (v_c - v_null)``."""
    if np.any(np.asarray(c) == net.null_id):
        raise ValueError("guidance needs a real (non-null) condition")
    v_c = net(x, t, c)
    v_0 = net(x, t, net.null_id)
    return v_0 + w * (v_c - v_0)


def velocity_fn(net: VelocityNet, cfg_scale: float | None = None):
    """Callable ``(x, t, c) -> v`` used by the samplers."""
    if cfg_scale is None:
        return net
    return lambda x, t, c: cfg_velocity(net, x, t, c, cfg_scale)

"""Reverse-mode autodiff over a small set of batched primitives.

A :class:`Tape` records every operation as a :class:`Node`.  Values are
float64 numpy arrays; rows are batch items.  Only the primitives needed by
the velocity network and its losses are provided; there is no general
broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached an operation boundary."""


class ShapeError(ValueError):
    pass


def check_finite(a: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite entries in {what}")
    return a


@dataclass(eq=False)
class Node:
    index: int
    op: str
    value: np.ndarray
    parents: tuple[int, ...] = ()
    extra: Any = None
    key: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


# forward rules, shared by recording and replay so both are bit-identical
def _affine(x, w, b):
    return x @ w + b


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


_FORWARD: dict[str, Callable[..., np.ndarray]] = {
    "affine": _affine,
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
    "exp": np.exp,
    "log": np.log,
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "sum": lambda a: np.asarray(np.sum(a)),
    "sqnorm": lambda a: np.asarray(np.sum(a * a)),
}


@dataclass
class Tape:
    """Records a computation and differentiates it.

    Leaves are created with :meth:`param` (differentiated) or :meth:`const`
    (not differentiated).  :meth:`backward` takes a scalar output node.
    """

    nodes: list[Node] = field(default_factory=list)

    def _push(self, op, value, parents=(), extra=None, key=None) -> Node:
        node = Node(len(self.nodes), op, check_finite(value, op), tuple(p.index for p in parents), extra, key)
        self.nodes.append(node)
        return node

    # leaves
    def param(self, value, key: str) -> Node:
        return self._push("param", np.array(value, dtype=np.float64), key=key)

    def const(self, value) -> Node:
        return self._push("const", np.asarray(value, dtype=np.float64))

    # primitives
    def affine(self, x: Node, w: Node, b: Node) -> Node:
        if x.value.ndim != 2 or w.value.ndim != 2 or b.value.ndim != 1:
            raise ShapeError("affine expects x (n,k), w (k,m), b (m,)")
        if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
            raise ShapeError(f"affine shape mismatch {x.shape} @ {w.shape} + {b.shape}")
        return self._push("affine", _affine(x.value, w.value, b.value), (x, w, b))

    def _unary(self, op: str, a: Node) -> Node:
        # overflow surfaces as NonFiniteError from _push
        with np.errstate(over="ignore"):
            value = _FORWARD[op](a.value)
        return self._push(op, value, (a,))

    def tanh(self, a: Node) -> Node:
        return self._unary("tanh", a)

    def sigmoid(self, a: Node) -> Node:
        return self._unary("sigmoid", a)

    def exp(self, a: Node) -> Node:
        return self._unary("exp", a)

    def log(self, a: Node) -> Node:
        if np.any(a.value <= 0):
            raise NonFiniteError("log of non-positive value")
        return self._unary("log", a)

    def _binary(self, op: str, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes differ {a.shape} vs {b.shape}")
        return self._push(op, _FORWARD[op](a.value, b.value), (a, b))

    def add(self, a: Node, b: Node) -> Node:
        return self._binary("add", a, b)

    def sub(self, a: Node, b: Node) -> Node:
        return self._binary("sub", a, b)

    def mul(self, a: Node, b: Node) -> Node:
        return self._binary("mul", a, b)

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push("scale", a.value * c, (a,), extra=c)

    def sum(self, a: Node) -> Node:
        return self._unary("sum", a)

    def sqnorm(self, a: Node) -> Node:
        return self._unary("sqnorm", a)

    def inner(self, a: Node, g) -> Node:
        """Scalar ``sum(a * g)`` with ``g`` held constant.

        Seeding a network output with an externally computed cotangent goes
        through here.
        """
        g = np.asarray(g, dtype=np.float64)
        if g.shape != a.shape:
            raise ShapeError(f"inner: shapes differ {a.shape} vs {g.shape}")
        check_finite(g, "inner weights")
        return self._push("inner", np.asarray(np.sum(a.value * g)), (a,), extra=g)

    # replay / backward
    def replay(self, upto: Node | None = None) -> np.ndarray:
        """Re-run the recorded forward pass from the leaves and return the value of ``upto``."""
        end = self.nodes[-1] if upto is None else upto
        vals: list[np.ndarray | None] = [None] * (end.index + 1)
        for node in self.nodes[: end.index + 1]:
            if node.op in ("param", "const"):
                vals[node.index] = node.value
            elif node.op == "scale":
                vals[node.index] = vals[node.parents[0]] * node.extra
            elif node.op == "inner":
                vals[node.index] = np.asarray(np.sum(vals[node.parents[0]] * node.extra))
            else:
                vals[node.index] = _FORWARD[node.op](*(vals[p] for p in node.parents))
        return vals[end.index]

    def backward(self, out: Node, seed: float = 1.0) -> dict[str, np.ndarray]:
        """Gradients of ``seed * out`` for every ``param`` leaf, keyed by leaf key."""
        if out.value.size != 1 or out.value.ndim != 0:
            raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
        adj: dict[int, np.ndarray] = {out.index: np.asarray(float(seed))}
        for node in reversed(self.nodes[: out.index + 1]):
            g = adj.pop(node.index, None)
            if g is None or not node.parents:
                if node.op == "param" and g is not None:
                    adj[node.index] = g
                continue
            for p, gp in zip(node.parents, self._vjp(node, g)):
                if gp is None:
                    continue
                adj[p] = adj[p] + gp if p in adj else gp
        grads = {}
        for node in self.nodes[: out.index + 1]:
            if node.op == "param":
                grads[node.key] = adj.get(node.index, np.zeros_like(node.value))
        return grads

    def _vjp(self, node: Node, g: np.ndarray):
        vals = [self.nodes[p].value for p in node.parents]
        op = node.op
        if op == "affine":
            x, w, _ = vals
            return g @ w.T, x.T @ g, g.sum(axis=0)
        if op == "tanh":
            return (g * (1.0 - node.value * node.value),)
        if op == "sigmoid":
            return (g * node.value * (1.0 - node.value),)
        if op == "exp":
            return (g * node.value,)
        if op == "log":
            return (g / vals[0],)
        if op == "add":
            return g, g
        if op == "sub":
            return g, -g
        if op == "mul":
            return g * vals[1], g * vals[0]
        if op == "scale":
            return (g * node.extra,)
        if op == "sum":
            return (np.full_like(vals[0], g),)
        if op == "sqnorm":
            return (2.0 * g * vals[0],)
        if op == "inner":
            return (g * node.extra,)
        raise AssertionError(op)

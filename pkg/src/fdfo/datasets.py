"""Synthetic conditional datasets.

============  ===  ==========  ==============================================
name          d    conditions  distribution for condition k
============  ===  ==========  ==============================================
gauss1d       1    1           N(0, sigma_d^2)
ring8         2    8           N(mode_k, sigma_d^2 I), modes on a circle
gauss_mixture 2    len(means)  N(means[k], sigma_d^2 I)
checkerboard  2    2           uniform over cells of parity k
============  ===  ==========  ==============================================
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NAMES = ("gauss1d", "ring8", "gauss_mixture", "checkerboard")

_DEFAULT_MIXTURE = ((-1.5, -1.5), (-1.5, 1.5), (1.5, -1.5), (1.5, 1.5))


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "ring8"
    sigma_d: float = 0.2
    radius: float = 2.0
    means: tuple = field(default=_DEFAULT_MIXTURE)
    cells: int = 4

    def __post_init__(self):
        if self.name not in NAMES:
            raise ValueError(f"unknown dataset {self.name!r}; expected one of {NAMES}")
        if not self.sigma_d > 0:
            raise ValueError("sigma_d must be positive")
        object.__setattr__(self, "means", tuple(tuple(float(v) for v in m) for m in self.means))

    @property
    def dim(self) -> int:
        return 1 if self.name == "gauss1d" else 2

    @property
    def n_conditions(self) -> int:
        return {"gauss1d": 1, "ring8": 8, "checkerboard": 2}.get(self.name, len(self.means))

    def mode_centers(self) -> np.ndarray | None:
        """Per-condition centers, or None when a condition has no single mode."""
        if self.name == "gauss1d":
            return np.zeros((1, 1))
        if self.name == "ring8":
            a = 2.0 * np.pi * np.arange(8) / 8
            return self.radius * np.stack([np.cos(a), np.sin(a)], axis=1)
        if self.name == "gauss_mixture":
            return np.array(self.means, dtype=np.float64)
        return None


def sample_dataset(spec: DatasetSpec, n: int, c, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. points for condition ``c`` (int, or an array of length n)."""
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (n,))
    if np.any(c < 0) or np.any(c >= spec.n_conditions):
        raise ValueError(f"condition out of range for {spec.name}")
    if n == 0:
        return np.zeros((0, spec.dim))
    if spec.name == "checkerboard":
        return _checkerboard(spec, c, rng)
    centers = spec.mode_centers()
    return centers[c] + spec.sigma_d * rng.standard_normal((n, spec.dim))


def _checkerboard(spec: DatasetSpec, c, rng):
    # cells of side sigma_d on a cells x cells board centred at the origin
    n = c.shape[0]
    k = spec.cells
    ij = rng.integers(0, k, size=(n, 2))
    # force the parity of i + j to equal the condition
    wrong = (ij.sum(axis=1) % 2) != c
    ij[wrong, 0] = (ij[wrong, 0] + 1) % k
    u = rng.random((n, 2))
    return (ij + u - k / 2.0) * spec.sigma_d


def nearest_mode(spec: DatasetSpec, y: np.ndarray) -> np.ndarray:
    centers = spec.mode_centers()
    if centers is None:
        k = spec.cells
        ij = np.floor(y / spec.sigma_d + k / 2.0).astype(np.int64)
        return ij.sum(axis=1) % 2
    d2 = ((y[:, None, :] - centers[None]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def alignment(spec: DatasetSpec, y: np.ndarray, c, within: float | None = 3.0) -> np.ndarray:
    """Boolean per sample: lies in the mode of its own condition.

    For modal datasets ``within`` additionally requires the point to be
    within ``within * sigma_d`` of its center.
    """
    y = np.atleast_2d(y)
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (y.shape[0],))
    ok = nearest_mode(spec, y) == c
    centers = spec.mode_centers()
    if centers is not None and within is not None:
        ok &= np.linalg.norm(y - centers[c], axis=1) <= within * spec.sigma_d
    return ok


def diversity(y: np.ndarray) -> float:
    """Mean pairwise Euclidean distance."""
    n = y.shape[0]
    if n < 2:
        return 0.0
    d = np.sqrt(((y[:, None, :] - y[None]) ** 2).sum(axis=2))
    return float(d[np.triu_indices(n, 1)].mean())

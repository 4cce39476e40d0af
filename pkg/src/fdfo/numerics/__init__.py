import numpy as np

from .optim import AdamWState, adamw_step
from .tape import NonFiniteError, ShapeError, Tape, check_finite


def rms_norm(v) -> float:
    """sqrt(mean(v**2)) over all components."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("rms_norm of an empty vector")
    return float(np.sqrt(np.mean(v * v)))


def central_difference_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


__all__ = [
    "AdamWState",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "adamw_step",
    "central_difference_grad",
    "check_finite",
    "rms_norm",
]

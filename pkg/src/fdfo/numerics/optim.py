from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tape import NonFiniteError, ShapeError


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamWState":
        return cls(np.zeros(n), np.zeros(n), **hyper)

    def hyperparams(self) -> dict:
        return dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, weight_decay=self.weight_decay)


def adamw_step(params: np.ndarray, grads: np.ndarray, state: AdamWState) -> tuple[np.ndarray, AdamWState]:
    """One bias-corrected AdamW update with decoupled weight decay.

    Returns new arrays; the inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError(f"adamw: params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("adamw: non-finite gradient")
    if state.lr <= 0 or state.eps <= 0 or not (0 <= state.beta1 < 1) or not (0 <= state.beta2 < 1):
        raise ValueError("adamw: invalid hyperparameters")

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new = params - state.lr * state.weight_decay * params
    new = new - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=step)

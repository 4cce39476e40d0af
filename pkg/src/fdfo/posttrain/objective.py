"""Per-sample pieces of the post-training objective.

Functions work on single vectors or row batches.  The ``*_grad`` helpers
return derivatives with respect to the current velocity so the network
only needs a vector-Jacobian product.
"""

from __future__ import annotations

import numpy as np

LOG_RATIO_CLAMP = 20.0
NORM_EPS = 1e-6


def _rowsq(a):
    a = np.asarray(a, dtype=np.float64)
    return np.sum(a * a, axis=-1)


def normalize_delta(dx):
    """``dx / (rms(dx)^2 + 1e-6)``, rms taken per row for batches."""
    dx = np.asarray(dx, dtype=np.float64)
    ms = np.mean(dx * dx, axis=-1, keepdims=True)
    return dx / (ms + NORM_EPS)


def velocity_target(v_ref, dx_bar):
    return np.asarray(v_ref, dtype=np.float64) - np.asarray(dx_bar, dtype=np.float64)


def log_proxy_ratio(v_target, v_ref, v_cur):
    raw = _rowsq(np.subtract(v_target, v_ref)) - _rowsq(np.subtract(v_target, v_cur))
    return np.clip(raw, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP), raw


def proxy_ratio(v_target, v_ref, v_cur):
    """``exp(|v_target - v_ref|^2 - |v_target - v_cur|^2)`` with the exponent clamped to [-20, 20]."""
    logr, _ = log_proxy_ratio(v_target, v_ref, v_cur)
    return np.exp(logr)


def proxy_ratio_grad(v_target, v_ref, v_cur):
    """Return ``(ratio, d ratio / d v_cur)``; zero gradient where the clamp is active."""
    logr, raw = log_proxy_ratio(v_target, v_ref, v_cur)
    r = np.exp(logr)
    live = (np.abs(raw) < LOG_RATIO_CLAMP).astype(np.float64)
    g = (r * live)[..., None] * 2.0 * (np.asarray(v_target) - np.asarray(v_cur))
    return r, g


def clipped_objective(ratio, advantage, style: str = "ppo", eps_clip: float = 0.2, eps_spo: float | None = None):
    """Loss contribution (to be minimized) for a ratio and an advantage.

    ppo: ``-min(r A, clip(r, 1-eps, 1+eps) A)``
    spo: ``-r A max(0, 1 - |r - 1| / eps_spo)``
    """
    loss, _, _ = clipped_objective_grad(ratio, advantage, style, eps_clip, eps_spo)
    return loss if np.ndim(loss) else float(loss)


def clipped_objective_grad(ratio, advantage, style="ppo", eps_clip=0.2, eps_spo=None):
    """Return ``(loss, d loss / d ratio, clipped mask)``."""
    r = np.asarray(ratio, dtype=np.float64)
    a = np.asarray(advantage, dtype=np.float64)
    if not 0 < eps_clip < 1:
        raise ValueError("eps_clip must lie in (0, 1)")
    if style == "ppo":
        lo, hi = 1.0 - eps_clip, 1.0 + eps_clip
        clipped = ((a > 0) & (r > hi)) | ((a < 0) & (r < lo))
        loss = -np.minimum(r * a, np.clip(r, lo, hi) * a)
        dr = np.where(clipped, 0.0, -a)
    elif style == "spo":
        e = eps_clip if eps_spo is None else eps_spo
        m = np.maximum(0.0, 1.0 - np.abs(r - 1.0) / e)
        dm = np.where(m > 0, -np.sign(r - 1.0) / e, 0.0)
        loss = -r * a * m
        dr = -a * (m + r * dm)
        clipped = m <= 0
    else:
        raise ValueError(f"unknown clip style {style!r}")
    return loss, dr, clipped


def kl_penalty(v_base, v_cur, weight: float):
    """``weight * |v_base - v_cur|^2`` per row."""
    if weight < 0:
        raise ValueError("KL weight must be non-negative")
    out = weight * _rowsq(np.subtract(v_base, v_cur))
    return out if np.ndim(out) else float(out)


def kl_penalty_grad(v_base, v_cur, weight: float):
    return 2.0 * weight * (np.asarray(v_cur) - np.asarray(v_base))

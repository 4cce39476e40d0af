"""Group-relative policy-gradient baseline.

Each stochastic sampling step is treated as a Gaussian action whose mean
comes from the current velocity.  Rewards are standardized within groups of
rollouts sharing a condition; per-step likelihood ratios are PPO-clipped.
"""

from __future__ import annotations

import time

import numpy as np

from .. import rng as rngs
from ..numerics import AdamWState
from ..sampler import stochastic_sample, transition_params
from ..schedules import schedule_uniform
from ..velocity_model import VelocityNet
from .fdfo import RunContext, _flatten, monitor, optimize
from .metrics import EpochMetrics
from .objective import LOG_RATIO_CLAMP, clipped_objective_grad, kl_penalty, kl_penalty_grad

ADV_EPS = 1e-6


def group_advantages(rewards: np.ndarray, group_size: int) -> np.ndarray:
    """``(R - mean) / (std + 1e-6)`` within consecutive groups (population std)."""
    r = np.asarray(rewards, dtype=np.float64).reshape(-1, group_size)
    a = (r - r.mean(axis=1, keepdims=True)) / (r.std(axis=1, keepdims=True) + ADV_EPS)
    return a.reshape(-1)


def rollout_groups(net: VelocityNet, ctx: RunContext, epoch: int):
    cfg, spec = ctx.cfg, ctx.spec
    G, T, d = cfg.group_size, cfg.steps, spec.dim
    n_groups = 2 * cfg.pairs // G
    eps = np.empty((n_groups * G, d))
    cond = np.empty(n_groups * G, dtype=np.int64)
    noises = np.empty((T, n_groups * G, d))
    for k in range(n_groups):
        r = rngs.stream(ctx.seed, rngs.BASELINE, epoch, k)
        c = r.integers(spec.n_conditions)
        e = np.repeat(r.standard_normal((1, d)), G, axis=0) if cfg.baseline_shared_init_noise else r.standard_normal((G, d))
        rows = slice(k * G, (k + 1) * G)
        eps[rows], cond[rows] = e, c
        noises[:, rows] = r.standard_normal((T, G, d))
    gammas = schedule_uniform(T, cfg.baseline_level).gammas
    return stochastic_sample(ctx.counted(net), eps, cond, ctx.grid, gammas, noises=noises)


def baseline_grpo_epoch(net: VelocityNet, state: AdamWState, ctx: RunContext, epoch: int):
    t0 = time.perf_counter()
    cfg = ctx.cfg
    ctx.counts.clear()
    traj = rollout_groups(net, ctx, epoch)
    rewards = ctx.score(traj.final, traj.cond)
    adv_traj = group_advantages(rewards, cfg.group_size)
    samples = _flatten(traj, ctx, ctx.base if cfg.kl_weight > 0 else None)

    T, S, d = traj.v_ref.shape
    x_next = traj.states[1:].reshape(T * S, d)
    t_next = np.repeat(traj.times[1:], S)
    gam = traj.gammas.T.reshape(T * S)
    adv = np.tile(adv_traj, T)
    mean_old, std, coef = transition_params(samples.x, samples.v_ref, samples.t, t_next, gam)
    live = std > 0
    inv_var = np.where(live, 1.0 / np.where(live, std, 1.0) ** 2, 0.0)
    logp_old = -0.5 * np.sum((x_next - mean_old) ** 2, axis=1) * inv_var

    def cotangent(idx, v_cur, first):
        mean = mean_old[idx] + coef[idx, None] * (v_cur - samples.v_ref[idx])
        resid = x_next[idx] - mean
        logp = -0.5 * np.sum(resid**2, axis=1) * inv_var[idx]
        raw = logp - logp_old[idx]
        logr = np.clip(raw, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
        r = np.exp(logr)
        dlogp = (coef[idx] * inv_var[idx])[:, None] * resid
        drdv = (r * (np.abs(raw) < LOG_RATIO_CLAMP))[:, None] * dlogp
        loss, dldr, clip = clipped_objective_grad(r, adv[idx], "ppo", cfg.clip_eps)
        n = idx.size
        cot = (dldr / n)[:, None] * drdv
        total = float(np.sum(loss) / n)
        kl = 0.0
        if cfg.kl_weight > 0:
            vb = samples.v_base[idx]
            k = kl_penalty(vb, v_cur, cfg.kl_weight)
            kl = float(np.sum(k))
            total += kl / n
            cot = cot + kl_penalty_grad(vb, v_cur, cfg.kl_weight) / n
        return cot, total, int(np.sum(clip & live[idx])), kl

    net, state, clip_frac, kl_value, gnorm = optimize(net, state, ctx, epoch, samples, cotangent)
    eval_reward, div = monitor(net, ctx)
    # consecutive rollouts within a group stand in for pairs in the shared metric columns
    fin = traj.final.reshape(-1, 2, d)
    dR = np.diff(rewards.reshape(-1, 2), axis=1).ravel()
    rms_dx = np.sqrt(np.mean((fin[:, 1] - fin[:, 0]) ** 2, axis=1))
    m = EpochMetrics(epoch, float(rewards.mean()), float(rewards.std()), float(np.abs(dR).mean()),
                     float(rms_dx.mean()), float(clip_frac), float(kl_value), gnorm, div, eval_reward,
                     int(ctx.counts["model"]), int(ctx.counts["reward"]),
                     time.perf_counter() - t0 if cfg.log_wall_time else 0.0)
    return net, state, m

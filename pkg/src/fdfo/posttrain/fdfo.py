"""Finite-difference flow optimization.

Each epoch rolls out pairs of trajectories from a shared initial noise,
scores both endpoints, and trains the velocities along both trajectories
toward ``dR * normalize(x_hat_T - x_T)``.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngs
from ..datasets import DatasetSpec, diversity
from ..numerics import AdamWState, NonFiniteError, adamw_step
from ..pretrain import TrainingDiverged
from ..rewards import CombinedReward, combine, combine_grad
from ..sampler import Trajectory, euler_sample, stochastic_sample, time_grid
from ..schedules import StochasticitySchedule, draw_schedule, gradient_weights
from ..velocity_model import VelocityNet, velocity_fn
from .config import PostTrainConfig
from .metrics import EpochMetrics
from .objective import NORM_EPS, clipped_objective_grad, kl_penalty, kl_penalty_grad, normalize_delta, proxy_ratio_grad

REFRESH_TOL = 1e-9


@dataclass
class RunContext:
    """Everything an epoch needs besides the trainable net and optimizer."""

    spec: DatasetSpec
    reward: CombinedReward
    cfg: PostTrainConfig
    base: VelocityNet
    seed: int = 0
    counts: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.batch_clip_fractions: list[float] = []  # filled by the last optimize() call
        self.grid = time_grid(self.cfg.steps, self.cfg.grid)
        self.weights = gradient_weights(self.grid, self.cfg.grad_weights)
        m = self.cfg.monitor_samples
        C = self.spec.n_conditions
        r = rngs.stream(self.seed, rngs.MONITOR)
        self.monitor_eps = r.standard_normal((C * m, self.spec.dim))
        self.monitor_cond = np.repeat(np.arange(C), m)

    @property
    def evals_per_call(self) -> int:
        return 1 if self.cfg.cfg_scale is None else 2

    def counted(self, net: VelocityNet):
        vel = velocity_fn(net, self.cfg.cfg_scale)

        def f(x, t, c):
            self.counts["model"] += x.shape[0] * self.evals_per_call
            return vel(x, t, c)

        return f

    def score(self, y, c) -> np.ndarray:
        self.counts["reward"] += y.shape[0]
        return np.asarray(combine(self.reward, y, c), dtype=np.float64)


@dataclass
class RolloutPair:
    eps: np.ndarray
    eps_hat: np.ndarray
    cond: int
    x_T: np.ndarray
    x_hat_T: np.ndarray
    reward: float
    reward_hat: float
    dx: np.ndarray
    dx_bar: np.ndarray
    dR: float
    schedule: StochasticitySchedule


@dataclass
class RolloutPairs:
    """P pairs as one batch of 2P trajectories: rows ``[0, P)`` are the first
    members, rows ``[P, 2P)`` the second members."""

    traj: Trajectory
    rewards: np.ndarray
    dx: np.ndarray
    dx_bar: np.ndarray
    dR: np.ndarray
    schedules: list

    @property
    def P(self) -> int:
        return self.dx.shape[0]

    def __len__(self):
        return self.P

    def pair(self, k: int) -> RolloutPair:
        P, tr = self.P, self.traj
        return RolloutPair(tr.states[0, k], tr.states[0, P + k], int(tr.cond[k]), tr.final[k], tr.final[P + k],
                           float(self.rewards[k]), float(self.rewards[P + k]), self.dx[k], self.dx_bar[k],
                           float(self.dR[k]), self.schedules[k])


def generate_pairs(net: VelocityNet, ctx: RunContext, epoch: int) -> RolloutPairs:
    cfg, spec = ctx.cfg, ctx.spec
    P, T, d = cfg.pairs, cfg.steps, spec.dim
    eps = np.empty((2 * P, d))
    cond = np.empty(2 * P, dtype=np.int64)
    gammas = np.empty((2 * P, T))
    noises = np.empty((T, 2 * P, d))
    schedules = []
    params = cfg.schedule_params()
    for p in range(P):
        r = rngs.stream(ctx.seed, rngs.ROLLOUT, epoch, p)
        c = r.integers(spec.n_conditions)
        e = r.standard_normal(d)
        e_hat = e if cfg.shared_init_noise else r.standard_normal(d)
        sched = draw_schedule(cfg.schedule, ctx.grid, r, params)
        nz = r.standard_normal((2, T, d))
        eps[p], eps[P + p] = e, e_hat
        cond[p] = cond[P + p] = c
        gammas[p] = 0.0 if cfg.deterministic_second else sched.gammas
        gammas[P + p] = sched.gammas
        noises[:, p], noises[:, P + p] = nz[0], nz[1]
        schedules.append(sched)
    traj = stochastic_sample(ctx.counted(net), eps, cond, ctx.grid, gammas, noises=noises)
    rewards = ctx.score(traj.final, cond)
    dx = traj.final[P:] - traj.final[:P]
    dR = rewards[P:] - rewards[:P]
    dx_bar = normalize_delta(dx) if cfg.normalize else dx.copy()
    return RolloutPairs(traj, rewards, dx, dx_bar, dR, schedules)


def monitor(net: VelocityNet, ctx: RunContext) -> tuple[float, float]:
    """Mean reward and diversity of deterministic samples from a fixed noise set."""
    tr = euler_sample(velocity_fn(net, ctx.cfg.cfg_scale), ctx.monitor_eps, ctx.monitor_cond, ctx.grid)
    y = tr.final
    r = np.asarray(combine(ctx.reward, y, ctx.monitor_cond), dtype=np.float64)
    div = np.mean([diversity(y[ctx.monitor_cond == k]) for k in range(ctx.spec.n_conditions)])
    return float(r.mean()), float(div)


@dataclass
class _Samples:
    x: np.ndarray
    t: np.ndarray
    c: np.ndarray
    v_ref: np.ndarray
    weight: np.ndarray
    v_base: np.ndarray | None

    @property
    def n(self) -> int:
        return self.x.shape[0]


def _flatten(traj: Trajectory, ctx: RunContext, net_base: VelocityNet | None) -> _Samples:
    # sample index k = step * n_traj + trajectory
    T, S, d = traj.v_ref.shape
    x = traj.states[:-1].reshape(T * S, d)
    t = np.repeat(traj.times[:-1], S)
    c = np.tile(traj.cond, T)
    v_base = None
    if net_base is not None:
        ctx.counts["model"] += T * S * ctx.evals_per_call
        v_base = velocity_fn(net_base, ctx.cfg.cfg_scale)(x, t, c)
    return _Samples(x, t, c, traj.v_ref.reshape(T * S, d), np.repeat(ctx.weights, S), v_base)


def optimize(net, state, ctx: RunContext, epoch: int, samples: _Samples, cotangent_fn):
    """One pass over shuffled batches with an AdamW step per batch.

    ``cotangent_fn(idx, v_cur, first)`` returns ``(cot, loss_sum, n_clipped, kl_sum)``
    where ``cot`` is d(batch loss)/d(v_cur).
    """
    cfg = ctx.cfg
    perm = rngs.stream(ctx.seed, rngs.SHUFFLE, epoch).permutation(samples.n)
    clipped = kl_sum = 0.0
    norms = []
    ctx.batch_clip_fractions = []
    for b, idx in enumerate(np.array_split(perm, cfg.batches)):
        idx = np.sort(idx)
        if idx.size == 0:
            continue
        v_cur, pullback = net.forward_with_pullback(samples.x[idx], samples.t[idx], samples.c[idx], cfg.cfg_scale)
        ctx.counts["model"] += idx.size * ctx.evals_per_call
        cot, loss, n_clip, kl = cotangent_fn(idx, v_cur, b == 0)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"epoch {epoch} batch {b}: loss is {loss}")
        grad = pullback(cot)
        norms.append(float(np.linalg.norm(grad)))
        try:
            params, state = adamw_step(net.params, grad, state)
        except NonFiniteError as e:
            raise TrainingDiverged(f"epoch {epoch} batch {b}: {e}") from e
        net = net.with_params(params)
        clipped += n_clip
        kl_sum += kl
        ctx.batch_clip_fractions.append(n_clip / idx.size)
    return net, state, clipped / samples.n, kl_sum / samples.n, float(np.mean(norms)) if norms else 0.0


def pair_directions(pairs: RolloutPairs, ctx: RunContext):
    """Per-trajectory training direction and advantage, shape ``(2P, d)`` and ``(2P,)``."""
    cfg = ctx.cfg
    if cfg.reward_gradient_mode:
        g = np.asarray(combine_grad(ctx.reward, pairs.traj.final), dtype=np.float64)
        g_rms = np.sqrt(np.mean(g * g, axis=1))
        direction = g / (g_rms + NORM_EPS)[:, None]
        return direction, g_rms * cfg.reward_scale
    direction = np.concatenate([pairs.dx_bar, pairs.dx_bar])
    adv = np.concatenate([pairs.dR, pairs.dR]) * cfg.reward_scale
    return direction, adv


def fdfo_epoch(net: VelocityNet, state: AdamWState, ctx: RunContext, epoch: int):
    """Roll out, train one pass, and report. Returns ``(net, state, EpochMetrics)``."""
    t0 = time.perf_counter()
    cfg = ctx.cfg
    ctx.counts.clear()
    pairs = generate_pairs(net, ctx, epoch)
    samples = _flatten(pairs.traj, ctx, ctx.base if cfg.kl_weight > 0 else None)
    T = cfg.steps
    direction, adv = pair_directions(pairs, ctx)
    direction = np.tile(direction, (T, 1))
    adv = np.tile(adv, T)
    v_target = samples.v_ref - direction

    def cotangent(idx, v_cur, first):
        r, drdv = proxy_ratio_grad(v_target[idx], samples.v_ref[idx], v_cur)
        if first and np.any(np.abs(np.log(r)) > REFRESH_TOL):
            raise RuntimeError("proxy ratio differs from 1 right after a rollout refresh")
        loss, dldr, clip = clipped_objective_grad(r, adv[idx], cfg.clip_style, cfg.clip_eps, cfg.spo_eps)
        omega = samples.weight[idx] * T / idx.size
        cot = (omega * dldr)[:, None] * drdv
        total = float(np.sum(omega * loss))
        kl = 0.0
        if cfg.kl_weight > 0:
            vb = samples.v_base[idx]
            k = kl_penalty(vb, v_cur, cfg.kl_weight)
            kl = float(np.sum(k))
            total += float(np.sum(omega * k))
            cot = cot + omega[:, None] * kl_penalty_grad(vb, v_cur, cfg.kl_weight)
        return cot, total, int(np.sum(clip)), kl

    net, state, clip_frac, kl_value, gnorm = optimize(net, state, ctx, epoch, samples, cotangent)
    eval_reward, div = monitor(net, ctx)
    rms_dx = np.sqrt(np.mean(pairs.dx**2, axis=1))
    m = EpochMetrics(epoch, float(pairs.rewards.mean()), float(pairs.rewards.std()), float(np.abs(pairs.dR).mean()),
                     float(rms_dx.mean()), float(clip_frac), float(kl_value), gnorm, div, eval_reward,
                     int(ctx.counts["model"]), int(ctx.counts["reward"]),
                     time.perf_counter() - t0 if cfg.log_wall_time else 0.0)
    return net, state, m


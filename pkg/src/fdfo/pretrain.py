"""Conditional flow-matching pre-training."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import rng as rngs
from .datasets import DatasetSpec, sample_dataset
from .numerics import AdamWState, NonFiniteError, Tape, adamw_step, check_finite
from .velocity_model import VelocityNet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (64, 64, 64)
    n_freq: int = 2


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 20000
    batch_size: int = 256
    lr: float = 2e-3
    lr_final: float = 1e-4
    weight_decay: float = 0.0
    p_uncond: float = 0.1
    log_every: int = 100


@dataclass
class TrainBatch:
    x0: np.ndarray
    c: np.ndarray
    t: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        n = self.x0.shape[0]
        if not (self.c.shape == (n,) and self.t.shape == (n,) and self.eps.shape == self.x0.shape):
            raise ValueError("batch fields must have equal lengths")

    def interpolant(self) -> np.ndarray:
        t = self.t[:, None]
        return (1.0 - t) * self.x0 + t * self.eps

    def target(self) -> np.ndarray:
        return self.eps - self.x0


def draw_batch(spec: DatasetSpec, n: int, rng: np.random.Generator, p_uncond: float = 0.0, null_id: int | None = None):
    c = rng.integers(0, spec.n_conditions, size=n)
    x0 = sample_dataset(spec, n, c, rng)
    t = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=n)
    eps = rng.standard_normal(x0.shape)
    if p_uncond > 0:
        drop = rng.random(n) < p_uncond
        c = np.where(drop, spec.n_conditions if null_id is None else null_id, c)
    return TrainBatch(x0, c, t, eps)


def cfm_loss(net: VelocityNet, batch: TrainBatch, with_grad: bool = False):
    """Mean squared error between v(x_t, t, c) and the target eps - x0.

    With ``with_grad`` returns ``(loss, flat_grad)``.
    """
    for name in ("x0", "t", "eps"):
        check_finite(getattr(batch, name), name)
    xt, u = batch.interpolant(), batch.target()
    n = xt.shape[0]
    if not with_grad:
        r = net(xt, batch.t, batch.c) - u
        return float(np.sum(r * r) / n)
    tape = Tape()
    leaves = net.leaves(tape)
    v = net.record(tape, leaves, xt, batch.t, batch.c)
    loss = tape.scale(tape.sqnorm(tape.sub(v, tape.const(u))), 1.0 / n)
    return float(loss.value), net.flatten_grads(tape.backward(loss))


def lr_at(cfg: PretrainConfig, step: int) -> float:
    # cosine decay from lr to lr_final
    if cfg.steps <= 1:
        return cfg.lr
    f = 0.5 * (1.0 + np.cos(np.pi * step / (cfg.steps - 1)))
    return cfg.lr_final + (cfg.lr - cfg.lr_final) * f


def init_net(spec: DatasetSpec, model: ModelConfig, seed: int) -> VelocityNet:
    return VelocityNet.initialize(spec.dim, spec.n_conditions, rngs.stream(seed, rngs.INIT), model.hidden, model.n_freq)


def pretrain(spec: DatasetSpec, model: ModelConfig, cfg: PretrainConfig, seed: int, net: VelocityNet | None = None):
    """Train from scratch (or from ``net``). Returns ``(net, optimizer_state, losses)``.

    ``losses`` holds one value per step.
    """
    net = init_net(spec, model, seed) if net is None else net.copy()
    state = AdamWState.zeros(net.n_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses = []
    for step in range(cfg.steps):
        batch = draw_batch(spec, cfg.batch_size, rngs.stream(seed, rngs.PRETRAIN, step), cfg.p_uncond, net.null_id)
        try:
            loss, grad = cfm_loss(net, batch, with_grad=True)
        except NonFiniteError as e:
            raise TrainingDiverged(f"pretrain diverged at step {step}: {e}") from e
        if not np.isfinite(loss):
            raise TrainingDiverged(f"pretrain loss is {loss} at step {step}")
        state.lr = lr_at(cfg, step)
        net.params, state = adamw_step(net.params, grad, state)
        losses.append(loss)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("pretrain step %d loss %.5f", step, loss)
    return net, state, losses


def gaussian_cfm_minimum(sigma_d: float, n_quad: int = 20001) -> float:
    """Minimum attainable flow-matching loss for 1-D N(0, sigma_d^2) data.

    Average over t ~ U(0,1) of Var(eps - x0 | x_t), by the trapezoid rule.
    """
    t = np.linspace(0.0, 1.0, n_quad)
    s2 = sigma_d**2
    cov = t - (1 - t) * s2
    var_xt = (1 - t) ** 2 * s2 + t**2
    cond = (1 + s2) - cov**2 / var_xt
    return float(np.trapezoid(cond, t))

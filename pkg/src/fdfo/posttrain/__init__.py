"""Reward post-training of a pretrained velocity net."""

from __future__ import annotations

import logging
from pathlib import Path

from ..checkpoint import Checkpoint
from ..numerics import AdamWState
from ..velocity_model import VelocityNet
from .config import PostTrainConfig
from .fdfo import RolloutPair, RolloutPairs, RunContext, fdfo_epoch, generate_pairs, monitor, pair_directions
from .grpo import baseline_grpo_epoch, group_advantages
from .metrics import COLUMNS, EpochMetrics, MetricsWriter, read_metrics
from .objective import (clipped_objective, clipped_objective_grad, kl_penalty, kl_penalty_grad, log_proxy_ratio,
                        normalize_delta, proxy_ratio, proxy_ratio_grad, velocity_target)

log = logging.getLogger(__name__)

__all__ = [
    "COLUMNS", "EpochMetrics", "MetricsWriter", "PostTrainConfig", "RolloutPair", "RolloutPairs", "RunContext",
    "baseline_grpo_epoch", "clipped_objective", "clipped_objective_grad", "fdfo_epoch", "generate_pairs",
    "group_advantages", "kl_penalty", "kl_penalty_grad", "log_proxy_ratio", "monitor", "normalize_delta",
    "pair_directions", "proxy_ratio", "proxy_ratio_grad", "read_metrics", "train", "velocity_target",
]


def train(ctx: RunContext, out=None, *, baseline: bool = False, config_hash: str = "", state: AdamWState | None = None,
          on_epoch=None):
    """Run ``ctx.cfg.epochs`` epochs starting from ``ctx.base``.

    With ``out`` set, writes ``metrics.csv``, ``epoch_{N}.ckpt`` every
    ``checkpoint_every`` epochs and ``final.ckpt`` (skipped for zero epochs;
    the caller copies its input checkpoint instead).  ``on_epoch`` receives
    each epoch's metrics and may return True to stop early.  Returns
    ``(net, state, list of EpochMetrics)``.
    """
    cfg = ctx.cfg
    net: VelocityNet = ctx.base.copy()
    if state is None:
        state = AdamWState.zeros(net.n_params, **cfg.optimizer_hyper())
    step = baseline_grpo_epoch if baseline else fdfo_epoch
    history = []
    writer = None
    if out is not None:
        out = Path(out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            writer = MetricsWriter(out / "metrics.csv")
        except OSError as e:
            raise OSError(f"cannot write metrics under {out}: {e.strerror}") from e
    try:
        for epoch in range(cfg.epochs):
            net, state, m = step(net, state, ctx, epoch)
            history.append(m)
            log.info("epoch %d reward %.3f eval %.3f", epoch, m.mean_reward, m.eval_reward)
            if writer:
                writer.write(m)
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    Checkpoint(net, state, config_hash, epoch + 1).save(out / f"epoch_{epoch + 1}.ckpt")
            if on_epoch is not None and on_epoch(m):
                break
    finally:
        if writer:
            writer.close()
    if out is not None and history:
        Checkpoint(net, state, config_hash, len(history)).save(out / "final.ckpt")
    return net, state, history

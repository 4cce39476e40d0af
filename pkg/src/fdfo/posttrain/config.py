from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PostTrainConfig:
    pairs: int = 64
    batches: int = 4
    steps: int = 40
    grid: str = "uniform"
    # stochasticity schedule
    schedule: str = "uniform"
    gamma: float = 0.0025
    mu_center: float = 1.3
    sigma_center: float = 1.5
    sigma_int: float = 0.25
    w_int: float = 3.0
    mu_logw: float = math.log(0.1)
    sigma_logw: float = 1.0
    # objective
    clip_style: str = "ppo"
    clip_eps: float = 0.2
    spo_eps: float | None = None
    kl_weight: float = 0.0
    cfg_scale: float | None = None
    grad_weights: str = "uniform"
    reward_scale: float = 1.0
    # ablation toggles
    shared_init_noise: bool = True
    deterministic_second: bool = False
    reward_gradient_mode: bool = False
    normalize: bool = True
    # optimizer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    # run
    epochs: int = 300
    checkpoint_every: int = 50
    monitor_samples: int = 64
    log_wall_time: bool = False
    # group-relative baseline
    group_size: int = 8
    baseline_gamma: float | None = None  # None: same uniform level as `gamma`
    baseline_shared_init_noise: bool = False

    def __post_init__(self):
        if min(self.pairs, self.batches, self.steps) < 1:
            raise ValueError("pairs, batches and steps must be >= 1")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be non-negative")
        if self.clip_style not in ("ppo", "spo"):
            raise ValueError(f"unknown clip_style {self.clip_style!r}")
        if self.schedule not in ("uniform", "interval", "prior"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.grad_weights not in ("uniform", "low_noise", "high_noise"):
            raise ValueError(f"unknown grad_weights {self.grad_weights!r}")
        if self.epochs < 0 or self.group_size < 2:
            raise ValueError("epochs must be >= 0 and group_size >= 2")
        if (2 * self.pairs) % self.group_size:
            raise ValueError("group_size must divide 2 * pairs (matched rollout budget)")

    def schedule_params(self) -> dict:
        keys = {"uniform": ("gamma",), "interval": ("mu_center", "sigma_center", "sigma_int", "w_int"),
                "prior": ("mu_logw", "sigma_logw")}[self.schedule]
        return {k: getattr(self, k) for k in keys}

    @property
    def baseline_level(self) -> float:
        return self.gamma if self.baseline_gamma is None else self.baseline_gamma

    def optimizer_hyper(self) -> dict:
        return dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps, weight_decay=self.weight_decay)

"""Finite-difference flow optimization (FDFO) on small flow-matching models."""

from .checkpoint import Checkpoint
from .datasets import DatasetSpec
from .rewards import CombinedReward, RewardSpec
from .velocity_model import VelocityNet

__version__ = "0.1.0"
__all__ = ["Checkpoint", "CombinedReward", "DatasetSpec", "RewardSpec", "VelocityNet", "__version__"]

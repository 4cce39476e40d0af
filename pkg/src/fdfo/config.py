"""Experiment configuration loaded from JSON with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import DatasetSpec
from .posttrain.config import PostTrainConfig
from .pretrain import ModelConfig, PretrainConfig
from .rewards import CombinedReward, RewardSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class VerifyConfig:
    n: int | None = None  # overrides each check's default sample count
    sigma_d: float = 1.0
    steps: int = 40
    gammas: tuple = (0.0, 0.05, 0.2)
    sigma_c: float = 0.1
    net_sigma_c: float = 0.1
    random_nets: int = 100


@dataclass(frozen=True)
class EvalConfig:
    samples: int = 256  # per condition
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    posttrain: PostTrainConfig = field(default_factory=PostTrainConfig)
    reward: CombinedReward = field(
        default_factory=lambda: CombinedReward(((RewardSpec("sigmoid_halfplane", direction=(0.0, 1.0), gain=2.0), 1.0),)))
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out: str = "runs/default"
    init: str | None = None

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "reward":
                v = [{**_fields_dict(s), "weight": w} for s, w in v.terms]
            elif dataclasses.is_dataclass(v):
                v = _fields_dict(v)
            d[f.name] = v
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))


def _fields_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(source: str, text: str, key: str, msg: str):
    line = _line_of(text, key)
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: {msg}")


def _tupled(v):
    return tuple(_tupled(x) for x in v) if isinstance(v, list) else v


def _build(cls, data, section: str, source: str, text: str):
    if not isinstance(data, dict):
        _fail(source, text, section, f"section {section!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in known:
            _fail(source, text, k, f"unknown key {k!r} in section {section!r}")
    try:
        return cls(**{k: _tupled(v) for k, v in data.items()})
    except (TypeError, ValueError) as e:
        _fail(source, text, section, f"invalid {section!r} section: {e}")


def _build_reward(data, source: str, text: str) -> CombinedReward:
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not data:
        _fail(source, text, "reward", "reward must be an object or a non-empty list of objects")
    terms = []
    for item in data:
        if not isinstance(item, dict):
            _fail(source, text, "reward", "reward terms must be objects")
        item = dict(item)
        w = item.pop("weight", 1.0)
        terms.append((_build(RewardSpec, item, "reward", source, text), float(w)))
    return CombinedReward(tuple(terms))


SECTIONS = {"dataset": DatasetSpec, "model": ModelConfig, "pretrain": PretrainConfig, "posttrain": PostTrainConfig,
            "verify": VerifyConfig, "eval": EvalConfig}


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    kw = {}
    for k, v in raw.items():
        if k in SECTIONS:
            kw[k] = _build(SECTIONS[k], v, k, source, text)
        elif k == "reward":
            kw[k] = _build_reward(v, source, text)
        elif k == "seed":
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                _fail(source, text, k, "seed must be a non-negative integer")
            kw[k] = v
        elif k in ("out", "init"):
            if v is not None and not isinstance(v, str):
                _fail(source, text, k, f"{k} must be a string path")
            kw[k] = v
        else:
            _fail(source, text, k, f"unknown top-level key {k!r}")
    if kw.get("init") is not None:
        p = Path(kw["init"])
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.is_file():
            _fail(source, text, "init", f"init checkpoint {str(p)!r} does not exist")
        kw["init"] = str(p)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    return parse_config(text, str(path), path.parent)

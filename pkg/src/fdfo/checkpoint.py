"""Binary checkpoint format.

Layout (little-endian)::

    b"FDFO" | uint16 version | uint32 header length | header (UTF-8 JSON)
    | params float64[n] | [adam m float64[n] | adam v float64[n]]
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import AdamWState
from .velocity_model import VelocityNet

MAGIC = b"FDFO"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    net: VelocityNet
    optimizer: AdamWState | None = None
    config_hash: str = ""
    epoch: int = 0

    def header(self) -> dict:
        net = self.net
        h = {
            "dim": net.dim,
            "n_conditions": net.n_conditions,
            "hidden": list(net.hidden),
            "n_freq": net.n_freq,
            "n_params": net.n_params,
            "config_hash": self.config_hash,
            "epoch": int(self.epoch),
            "optimizer": None,
        }
        if self.optimizer is not None:
            h["optimizer"] = {"step": int(self.optimizer.step), **self.optimizer.hyperparams()}
        return h

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        parts = [MAGIC, struct.pack("<HI", VERSION, len(head)), head, self.net.params.astype("<f8").tobytes()]
        if self.optimizer is not None:
            parts += [self.optimizer.m.astype("<f8").tobytes(), self.optimizer.v.astype("<f8").tobytes()]
        return b"".join(parts)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError(f"{source}: not an FDFO checkpoint")
        version, hlen = struct.unpack("<HI", data[4:10])
        if version != VERSION:
            raise CheckpointError(f"{source}: checkpoint format version {version}, expected {VERSION}")
        h = json.loads(data[10 : 10 + hlen].decode())
        n = h["n_params"]
        off = 10 + hlen
        want = off + 8 * n * (3 if h["optimizer"] else 1)
        if len(data) != want:
            raise CheckpointError(f"{source}: truncated or oversized ({len(data)} bytes, expected {want})")
        arr = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
        net = VelocityNet(h["dim"], h["n_conditions"], tuple(h["hidden"]), h["n_freq"], arr[:n].copy())
        opt = None
        if h["optimizer"]:
            o = dict(h["optimizer"])
            step = o.pop("step")
            opt = AdamWState(arr[n : 2 * n].copy(), arr[2 * n :].copy(), step=step, **o)
        return cls(net, opt, h["config_hash"], h["epoch"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
        return cls.from_bytes(data, str(path))


def config_hash(cfg_dict: dict) -> str:
    blob = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"), default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]

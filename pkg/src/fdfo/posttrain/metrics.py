from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path

COLUMNS = ("epoch", "mean_reward", "reward_std", "mean_abs_dR", "mean_rms_dx", "clip_fraction", "kl_value",
           "grad_norm", "diversity", "eval_reward", "model_evals", "reward_evals", "wall_s")


@dataclass
class EpochMetrics:
    epoch: int
    mean_reward: float
    reward_std: float
    mean_abs_dR: float
    mean_rms_dx: float
    clip_fraction: float
    kl_value: float
    grad_norm: float
    diversity: float
    eval_reward: float
    model_evals: int
    reward_evals: int
    wall_s: float = 0.0

    def row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in astuple(self)]


assert tuple(f.name for f in fields(EpochMetrics)) == COLUMNS


class MetricsWriter:
    """Appends one CSV row per epoch, flushing each time."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(COLUMNS)
        self._fh.flush()

    def write(self, m: EpochMetrics):
        self._w.writerow(m.row())
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path_or_text) -> list[dict]:
    text = path_or_text if "\n" in str(path_or_text) else Path(path_or_text).read_text()
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]

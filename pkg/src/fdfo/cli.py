"""``fdfo`` command line: pretrain, posttrain, eval, verify, plot.

Exit codes: 0 success, 1 failed verification, 2 usage/config/input error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import rng as rngs
from .checkpoint import Checkpoint, CheckpointError, config_hash
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import alignment, diversity
from .plotting import line_plot
from .posttrain import RunContext, read_metrics, train
from .posttrain.metrics import COLUMNS
from .pretrain import TrainingDiverged, pretrain
from .rewards import reward
from .sampler import euler_sample, time_grid, write_trajectory_csv
from .velocity_model import velocity_fn
from . import verification as V

log = logging.getLogger("fdfo")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
CHECKS = ("stein", "marginal", "gradcheck", "sampler-degeneracy", "prototype", "jacobian")


class InputError(Exception):
    """Bad user input that should exit with code 2."""


def _thread_limit():
    n = os.environ.get("FDFO_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        k = int(n)
    except ValueError:
        raise InputError(f"FDFO_THREADS must be an integer, got {n!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(k, 1))


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = dataclasses.replace(cfg, posttrain=dataclasses.replace(cfg.posttrain, epochs=args.epochs))
    return cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.out)


def _load_compatible(path, cfg: ExperimentConfig) -> Checkpoint:
    ck = Checkpoint.load(path)
    net, spec, model = ck.net, cfg.dataset, cfg.model
    got = (net.dim, net.n_conditions, tuple(net.hidden), net.n_freq)
    want = (spec.dim, spec.n_conditions, tuple(model.hidden), model.n_freq)
    if got != want:
        raise InputError(f"{path}: architecture (dim, conditions, hidden, n_freq) = {got} does not match config {want}")
    return ck


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    net, state, losses = pretrain(cfg.dataset, cfg.model, cfg.pretrain, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash({k: v for k, v in cfg.to_dict().items() if k in ("dataset", "model", "pretrain", "seed")})
    Checkpoint(net, state, h, cfg.pretrain.steps).save(out / "pre.ckpt")
    with open(out / "pretrain_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "loss"))
        w.writerows((i, repr(float(v))) for i, v in enumerate(losses))
    print(f"wrote {out / 'pre.ckpt'}")
    return EXIT_OK


def cmd_posttrain(args) -> int:
    cfg = _config(args)
    init = args.init or cfg.init
    if not init:
        raise InputError("posttrain needs --init or an 'init' entry in the config")
    ck = _load_compatible(init, cfg)
    out = _out(args, cfg)
    ctx = RunContext(cfg.dataset, cfg.reward, cfg.posttrain, ck.net, cfg.seed)
    h = config_hash({**cfg.to_dict(), "init": None, "out": None, "baseline": bool(args.baseline)})
    train(ctx, out, baseline=args.baseline, config_hash=h)
    if cfg.posttrain.epochs == 0:
        shutil.copyfile(init, out / "final.ckpt")
    print(f"wrote {out / 'metrics.csv'} and {out / 'final.ckpt'}")
    return EXIT_OK


def eval_trajectories(net, cfg: ExperimentConfig):
    spec, pt = cfg.dataset, cfg.posttrain
    n = cfg.eval.samples
    C = spec.n_conditions
    r = rngs.stream(cfg.seed, rngs.EVAL, cfg.eval.seed)
    eps = r.standard_normal((C * n, spec.dim))
    cond = np.repeat(np.arange(C), n)
    return euler_sample(velocity_fn(net, pt.cfg_scale), eps, cond, time_grid(pt.steps, pt.grid))


def evaluate(net, cfg: ExperimentConfig, traj=None) -> list[dict]:
    """Per-condition and overall reward, mode alignment and diversity on fresh noise."""
    spec = cfg.dataset
    C = spec.n_conditions
    traj = eval_trajectories(net, cfg) if traj is None else traj
    y, cond = traj.final, traj.cond
    terms = [(f"reward_{i}_{s.variant}", np.asarray(reward(s, y, cond), dtype=np.float64) * w)
             for i, (s, w) in enumerate(cfg.reward.terms)]
    total = sum(v for _, v in terms)
    aligned = alignment(spec, y, cond) if spec.mode_centers() is not None or spec.name == "checkerboard" else None
    rows = []
    for label, mask in [*((str(k), cond == k) for k in range(C)), ("all", np.ones(cond.size, bool))]:
        row = {"condition": label, "n": int(mask.sum()), "reward": float(total[mask].mean()),
               "reward_stderr": float(total[mask].std(ddof=1) / np.sqrt(mask.sum()))}
        row.update({name: float(v[mask].mean()) for name, v in terms})
        row["alignment"] = float(np.mean(aligned[mask])) if aligned is not None else float("nan")
        row["diversity"] = (float(np.mean([diversity(y[cond == k]) for k in range(C)])) if label == "all"
                            else diversity(y[mask]))
        rows.append(row)
    return rows


def cmd_eval(args) -> int:
    cfg = _config(args)
    ck = _load_compatible(args.ckpt, cfg)
    traj = eval_trajectories(ck.net, cfg)
    rows = evaluate(ck.net, cfg, traj)
    if args.trajectories:
        # the first path of every condition
        with open(args.trajectories, "w", newline="") as fh:
            write_trajectory_csv(traj, fh, rows=range(0, traj.cond.size, cfg.eval.samples))
    fh = open(args.metrics, "w", newline="") if args.metrics else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rows[0].keys())
        w.writerows([repr(v) if isinstance(v, float) else v for v in row.values()] for row in rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def run_check(name: str, cfg: ExperimentConfig, n: int | None, break_mixer: bool, init: str | None) -> dict:
    """Run one verification check and return a JSON-ready report with ``passed``."""
    vc = cfg.verify
    n = n if n is not None else vc.n
    r = rngs.stream(cfg.seed, rngs.VERIFY, CHECKS.index(name))
    rep: dict = {"check": name, "seed": cfg.seed}
    if name == "stein":
        o = V.LinearFlowOracle(np.array([[2.0, 1.0], [0.0, 1.0]]), V.RewardSpec("linear", coef=(1.0, 0.0)), vc.sigma_c)
        s = V.stein_check(o, n or 10**6, r)
        rep.update(estimate=s.estimate.tolist(), analytic=s.analytic.tolist(), rel_error=s.rel_error,
                   stderr=s.stderr.tolist(), n=s.n, passed=s.rel_error < 0.02)
    elif name == "marginal":
        res = []
        for g in vc.gammas:
            m = V.marginal_check(vc.sigma_d, g, n or 10**4, vc.steps, r, break_mixer=break_mixer)
            res.append({"gamma": g, "max_z": m.max_z, "passed": m.passed})
        rep.update(results=res, n=n or 10**4, break_mixer=break_mixer, passed=all(x["passed"] for x in res))
    elif name == "gradcheck":
        errs = []
        for _ in range(n or vc.random_nets):
            net = V.random_small_net(r)
            k = int(r.integers(1, 6))
            cs = float(r.uniform(0.5, 3.0)) if r.random() < 0.5 else None
            c = r.integers(0, net.n_conditions if cs is not None else net.n_conditions + 1, size=k)
            errs.append(V.gradient_check(net, r.standard_normal((k, net.dim)), r.uniform(0, 1, k), c, r, cs))
        rep.update(max_rel_error=max(errs), n=len(errs), passed=max(errs) < 1e-4)
    elif name == "sampler-degeneracy":
        ok = [V.sampler_degeneracy(net := V.random_small_net(r), r.standard_normal((4, net.dim)),
                                   r.integers(0, net.n_conditions + 1, 4), int(r.integers(1, 41)))
              for _ in range(n or vc.random_nets)]
        rep.update(identical=int(sum(ok)), n=len(ok), passed=all(ok))
    elif name == "prototype":
        o = V.LinearFlowOracle(np.array([[2.0, 0.5], [0.5, 1.0]]), V.RewardSpec("linear", coef=(1.0, -1.0)), vc.sigma_c)
        a = V.prototype_oracle_step(o, n or 1000, r)
        rep.update(oracle={"mean": a.mean, "stderr": a.stderr, "z": a.z, "n": a.n}, passed=a.z >= 5)
        if init:
            net = _load_compatible(init, cfg).net
            spec = cfg.reward.terms[0][0]
            b = V.prototype_net_step(net, spec, vc.steps, vc.steps // 2, vc.net_sigma_c, n or 1000, r)
            rep["net"] = {"mean": b.mean, "stderr": b.stderr, "z": b.z, "n": b.n}
            rep["passed"] = rep["passed"] and b.z >= 3
    elif name == "jacobian":
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        stat = V.jacobian_psd_stat(lambda x: x @ A.T, np.zeros(2))
        want = float(np.linalg.eigvalsh(A).min())
        rep.update(oracle_min_eig=stat, expected=want, passed=abs(stat - want) < 1e-3)
        if init:
            s = V.jacobian_survey(_load_compatible(init, cfg).net, vc.steps, n or 100, r)
            rep["net"] = {"fraction_positive": float(np.mean(s > 0)), "min": float(s.min()), "n": s.size}
    return rep


def cmd_verify(args) -> int:
    cfg = _config(args)
    n = None if args.n is None else int(float(args.n))
    rep = run_check(args.check, cfg, n, args.break_mixer, args.init)
    text = json.dumps(rep, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if rep["passed"] else EXIT_VERIFY


def cmd_plot(args) -> int:
    series = []
    for path in args.metrics:
        try:
            rows = read_metrics(path)
            header = Path(path).read_text().splitlines()[:1]
        except (OSError, ValueError, TypeError) as e:
            raise InputError(f"{path}: cannot read metrics CSV: {e}")
        if not header or tuple(header[0].split(",")) != COLUMNS:
            raise InputError(f"{path}: header does not match the metrics schema")
        label = Path(path).parent.name or Path(path).stem
        for col in args.column:
            series.append((f"{label}:{col}" if len(args.column) > 1 else label,
                           [r["epoch"] for r in rows], [r[col] for r in rows]))
    svg = line_plot(series, "epoch", ", ".join(args.column))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdfo", description="Finite-difference flow optimization on toy flows.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("pretrain", help="flow-matching pretraining")
    common(sp)
    sp.set_defaults(fn=cmd_pretrain)
    sp = sub.add_parser("posttrain", help="reward post-training")
    common(sp)
    sp.add_argument("--init", help="pretrained checkpoint")
    sp.add_argument("--baseline", action="store_true", help="group-relative baseline instead of FDFO")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(fn=cmd_posttrain)
    sp = sub.add_parser("eval", help="evaluate a checkpoint on fresh noise")
    common(sp)
    sp.add_argument("ckpt")
    sp.add_argument("--metrics", help="output CSV (default stdout)")
    sp.add_argument("--trajectories", help="also dump one sampling path per condition to this CSV")
    sp.set_defaults(fn=cmd_eval)
    sp = sub.add_parser("verify", help="run a verification check")
    common(sp)
    sp.add_argument("check", choices=CHECKS)
    sp.add_argument("--n", help="sample count (accepts 1e6)")
    sp.add_argument("--init", help="checkpoint for net-based checks")
    sp.add_argument("--break-mixer", action="store_true", help="fault-inject the noise mixer")
    sp.set_defaults(fn=cmd_verify)
    sp = sub.add_parser("plot", help="SVG plot of metrics CSVs")
    sp.add_argument("metrics", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--column", action="append", choices=COLUMNS[1:])
    sp.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "plot" and not args.column:
        args.column = ["eval_reward"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.fn(args)
    except (ConfigError, CheckpointError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

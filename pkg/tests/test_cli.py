import json
import subprocess
import sys

import numpy as np
import pytest

from fdfo.checkpoint import Checkpoint, CheckpointError, config_hash
from fdfo.cli import evaluate, main
from fdfo.config import ConfigError, ExperimentConfig, load_config, parse_config
from fdfo.numerics import AdamWState
from fdfo.plotting import line_plot
from fdfo.velocity_model import VelocityNet

TINY = {
    "dataset": {"name": "ring8"},
    "model": {"hidden": [16, 16], "n_freq": 1},
    "pretrain": {"steps": 60, "batch_size": 64, "log_every": 0},
    "posttrain": {"pairs": 8, "batches": 2, "steps": 6, "monitor_samples": 4, "epochs": 3, "checkpoint_every": 2},
    "eval": {"samples": 16},
    "seed": 1,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.json").write_text(json.dumps(TINY, indent=2))
    assert main(["pretrain", "--config", str(d / "tiny.json"), "--out", str(d / "pre")]) == 0
    return d


def cfg_path(workdir):
    return str(workdir / "tiny.json")


# config


def test_default_config_round_trips():
    cfg = ExperimentConfig()
    again = parse_config(json.dumps(cfg.to_dict()))
    assert again == cfg


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "dataset": {"sigmma": 1.0}\n}\n')
    with pytest.raises(ConfigError, match=r"bad\.json:2: unknown key 'sigmma' in section 'dataset'"):
        load_config(p)


@pytest.mark.parametrize("text, pattern", [
    ('{"bogus": 1}', "unknown top-level key"),
    ('{"seed": -1}', "non-negative"),
    ('{"posttrain": {"pairs": 0}}', "invalid 'posttrain'"),
    ('{"reward": []}', "non-empty"),
    ('{"reward": {"variant": "nope"}}', "invalid 'reward'"),
    ('{"dataset": 3}', "must be an object"),
    ('{"seed": 1,,}', "invalid JSON"),
    ('{"init": "missing.ckpt"}', "does not exist"),
])
def test_config_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text, "c.json")


def test_reward_list_with_weights():
    cfg = parse_config(json.dumps({"reward": [
        {"variant": "radial", "center": [0, 0], "weight": 0.5},
        {"variant": "linear", "coef": [1, 0]},
    ]}))
    assert [w for _, w in cfg.reward.terms] == [0.5, 1.0]
    assert cfg.reward.terms[0][0].center == (0, 0)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


# checkpoints


def _net():
    rng = np.random.default_rng(0)
    n = VelocityNet.initialize(2, 3, rng, hidden=(5, 4))
    return n.with_params(rng.standard_normal(n.n_params))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = _net()
    st = AdamWState.zeros(net.n_params, lr=3e-4)
    st.m[:] = np.random.default_rng(1).standard_normal(net.n_params)
    st.v[:] = np.random.default_rng(2).random(net.n_params)
    st.step = 17
    ck = Checkpoint(net, st, "abc", 5)
    p = ck.save(tmp_path / "a.ckpt")
    back = Checkpoint.load(p)
    assert back.net.params.tobytes() == net.params.tobytes()
    assert back.optimizer.m.tobytes() == st.m.tobytes() and back.optimizer.v.tobytes() == st.v.tobytes()
    assert back.optimizer.step == 17 and back.optimizer.lr == 3e-4
    assert (back.config_hash, back.epoch) == ("abc", 5)
    assert back.to_bytes() == p.read_bytes()


def test_checkpoint_without_optimizer(tmp_path):
    back = Checkpoint.load(Checkpoint(_net()).save(tmp_path / "b.ckpt"))
    assert back.optimizer is None


def test_checkpoint_rejects_bad_files(tmp_path):
    data = Checkpoint(_net()).to_bytes()
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.from_bytes(data[:4] + b"\x09\x00" + data[6:])
    with pytest.raises(CheckpointError, match="not an FDFO"):
        Checkpoint.from_bytes(b"JUNK" + data[4:])
    with pytest.raises(CheckpointError, match="truncated"):
        Checkpoint.from_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "absent.ckpt")


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


# plotting


def test_plot_is_deterministic_and_overlays():
    s = [("fdfo", [0, 1, 2], [50.0, 60.0, 70.0]), ("grpo", [0, 1, 2], [50.0, 52.0, 55.0])]
    a = line_plot(s, "epoch", "reward")
    assert a == line_plot(s, "epoch", "reward")
    assert a.startswith("<svg") and a.count("<polyline") == 2
    assert "fdfo" in a and "grpo" in a


def test_plot_handles_flat_and_single_point():
    svg = line_plot([("x", [0], [1.0])])
    assert "<svg" in svg and "nan" not in svg.lower()


# commands


def test_pretrain_outputs(workdir):
    ck = Checkpoint.load(workdir / "pre" / "pre.ckpt")
    assert ck.net.hidden == (16, 16) and ck.epoch == 60
    lines = (workdir / "pre" / "pretrain_loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 61


def test_posttrain_is_deterministic(workdir):
    outs = []
    for k in range(2):
        out = workdir / f"post{k}"
        assert main(["posttrain", "--config", cfg_path(workdir), "--init", str(workdir / "pre" / "pre.ckpt"),
                     "--out", str(out)]) == 0
        outs.append(out)
    for name in ("metrics.csv", "epoch_2.ckpt", "final.ckpt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert len((outs[0] / "metrics.csv").read_text().splitlines()) == 4


def test_seed_changes_run(workdir):
    a, b = workdir / "seedA", workdir / "seedB"
    pre = str(workdir / "pre" / "pre.ckpt")
    main(["posttrain", "--config", cfg_path(workdir), "--init", pre, "--out", str(a), "--epochs", "1"])
    main(["posttrain", "--config", cfg_path(workdir), "--init", pre, "--out", str(b), "--epochs", "1", "--seed", "9"])
    assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()


def test_zero_epochs_copies_init(workdir):
    out = workdir / "zero"
    pre = workdir / "pre" / "pre.ckpt"
    assert main(["posttrain", "--config", cfg_path(workdir), "--init", str(pre), "--out", str(out),
                 "--epochs", "0"]) == 0
    assert (out / "final.ckpt").read_bytes() == pre.read_bytes()
    assert (out / "metrics.csv").read_text().count("\n") == 1


def test_baseline_run_and_plot(workdir):
    out = workdir / "base"
    pre = str(workdir / "pre" / "pre.ckpt")
    assert main(["posttrain", "--config", cfg_path(workdir), "--init", pre, "--out", str(out), "--baseline",
                 "--epochs", "2"]) == 0
    main(["posttrain", "--config", cfg_path(workdir), "--init", pre, "--out", str(workdir / "fd"), "--epochs", "2"])
    svg = workdir / "cmp.svg"
    args = ["plot", str(workdir / "fd" / "metrics.csv"), str(out / "metrics.csv"), "--out", str(svg)]
    assert main(args) == 0
    first = svg.read_bytes()
    assert main(args) == 0 and svg.read_bytes() == first
    assert b"base" in first and b"fd" in first
    assert main(["plot", str(out / "metrics.csv"), "--out", str(svg), "--column", "mean_reward",
                 "--column", "clip_fraction"]) == 0


def test_plot_rejects_foreign_csv(workdir, tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    assert main(["plot", str(p), "--out", str(tmp_path / "x.svg")]) == 2


def test_eval_is_deterministic(workdir, capsys):
    pre = str(workdir / "pre" / "pre.ckpt")
    a, b = workdir / "e1.csv", workdir / "e2.csv"
    assert main(["eval", pre, "--config", cfg_path(workdir), "--metrics", str(a)]) == 0
    assert main(["eval", pre, "--config", cfg_path(workdir), "--metrics", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "condition,n,reward,reward_stderr,reward_0_sigmoid_halfplane,alignment,diversity"
    assert len(lines) == 10 and lines[-1].startswith("all,128,")


def test_evaluate_rows():
    cfg = parse_config(json.dumps({"dataset": {"name": "gauss1d"}, "model": {"hidden": [4]},
                                   "reward": {"variant": "linear", "coef": [1.0]}, "eval": {"samples": 50}}))
    rows = evaluate(VelocityNet.initialize(1, 1, np.random.default_rng(0), hidden=(4,)), cfg)
    assert [r["condition"] for r in rows] == ["0", "all"]
    assert 0.0 <= rows[0]["alignment"] <= 1.0
    assert rows[0]["reward"] == rows[1]["reward"]


def test_architecture_mismatch_exits_2(workdir, tmp_path):
    other = dict(TINY, model={"hidden": [8]})
    p = tmp_path / "other.json"
    p.write_text(json.dumps(other))
    assert main(["posttrain", "--config", str(p), "--init", str(workdir / "pre" / "pre.ckpt"),
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["eval", str(workdir / "pre" / "pre.ckpt"), "--config", str(p)]) == 2


def test_posttrain_needs_init(tmp_path):
    assert main(["posttrain", "--out", str(tmp_path)]) == 2


def test_missing_and_bad_configs_exit_2(tmp_path):
    assert main(["pretrain", "--config", str(tmp_path / "none.json")]) == 2
    p = tmp_path / "bad.json"
    p.write_text('{\n  "dataset": {"sigmma": 1.0}\n}\n')
    assert main(["pretrain", "--config", str(p)]) == 2


def test_unknown_check_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["verify", "nonsense"])
    assert e.value.code == 2


@pytest.mark.parametrize("check, n", [("stein", "1e5"), ("marginal", "1e4"), ("gradcheck", "5"),
                                      ("sampler-degeneracy", "10"), ("prototype", "1000"), ("jacobian", None)])
def test_verify_checks_pass(check, n, tmp_path, capsys):
    args = ["verify", check, "--out", str(tmp_path / "r.json")] + (["--n", n] if n else [])
    code = main(args)
    rep = json.loads((tmp_path / "r.json").read_text())
    assert code == 0 and rep["passed"] and rep["check"] == check


def test_verify_broken_mixer_exits_1(capsys):
    assert main(["verify", "marginal", "--n", "1e4", "--break-mixer"]) == 1
    rep = json.loads(capsys.readouterr().out)
    assert max(r["max_z"] for r in rep["results"]) > 10


def test_verify_with_net(workdir, capsys):
    pre = str(workdir / "pre" / "pre.ckpt")
    assert main(["verify", "jacobian", "--config", cfg_path(workdir), "--init", pre, "--n", "5"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["net"]["n"] == 5


def test_thread_env_is_validated(monkeypatch, tmp_path):
    monkeypatch.setenv("FDFO_THREADS", "two")
    assert main(["verify", "jacobian"]) == 2
    monkeypatch.setenv("FDFO_THREADS", "1")
    assert main(["verify", "jacobian"]) == 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "fdfo", "verify", "jacobian"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["passed"]


def test_eval_trajectory_dump(workdir):
    pre = str(workdir / "pre" / "pre.ckpt")
    p = workdir / "traj.csv"
    assert main(["eval", pre, "--config", cfg_path(workdir), "--metrics", str(workdir / "e3.csv"),
                 "--trajectories", str(p)]) == 0
    lines = p.read_text().splitlines()
    # one path of T+1 states per ring8 condition
    assert len(lines) == 1 + 8 * 7  # tiny config: T = 6
    assert {ln.split(",")[1] for ln in lines[1:]} == {str(k) for k in range(8)}

import csv
import hashlib
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from d3rqn.errors import ConfigError, NumericError
from d3rqn.explore import eps_decreasing
from d3rqn.harness import cli
from d3rqn.harness.config import RunConfig, dump_config, load_config, parse_config
from d3rqn.harness.evaluate import EpisodeRecord, EvalReport, cmd_eval, reward_bins
from d3rqn.harness.report import centered_mean, cmd_report, loss_differences, trailing_mean
from d3rqn.harness.train import METRICS_COLUMNS, train

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    return train(load_config(CONFIGS / "smoke.cfg", environ={}), tmp_path_factory.mktemp("smoke") / "run")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """A short run that actually learns a little (lr > 0) and opens the update gate."""
    cfg = load_config(CONFIGS / "smoke.cfg", environ={})
    cfg = replace(cfg, agent=replace(cfg.agent, lr=1e-3), run=replace(cfg.run, max_episodes=40, checkpoint_every=20))
    return train(cfg, tmp_path_factory.mktemp("small") / "run")


# configuration --------------------------------------------------------------------------------

def test_empty_config_is_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    a = cfg.agent
    assert (a.update_rate, a.trace_len, a.n_err, a.batch, a.buffer_capacity, a.start_episodes) == (4, 10, 7, 10, 1000, 999)
    assert a.eta == 0.001 and a.lr == 1e-4 and a.state_updated == 3
    assert cfg.env.step_cap == 2000


def test_bmc_table2_round_trip():
    text = ("strategy.kind = bmc\nstrategy.bmc_alpha0 = 25\nstrategy.bmc_beta0 = 25\nstrategy.bmc_a0 = 250\n"
            "strategy.bmc_b0 = 250\nstrategy.bmc_mu0 = 0\nstrategy.bmc_tau0 = 1\n")
    cfg = parse_config(text)
    assert cfg.strategy.kind == "bmc" and cfg.strategy.bmc_a0 == 250.0
    assert parse_config(dump_config(cfg)) == cfg


def test_n_err_error_has_line_number():
    with pytest.raises(ConfigError, match=r"cfg:3:.*n_err"):
        parse_config("# comment\nagent.trace_len = 10\nagent.n_err = 12\n", "cfg")


@pytest.mark.parametrize("text,match", [
    ("agent.gama = 0.9\n", "unknown config key"),
    ("agent.gamma = 0.9\nagent.gamma = 0.8\n", "duplicate"),
    ("agent.batch = ten\n", "cannot parse"),
    ("just words\n", "key = value"),
    ("strategy.kind = ucb\n", "strategy.kind"),
    ("strategy.kind = decreasing\nagent.max_steps = 1000\n", "n_start"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_env_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("agent.n_err = 7\n")
    cfg = load_config(path, environ={"APP_AGENT__N_ERR": "5", "APP_RUN__SEED": "11", "OTHER": "x"})
    assert cfg.agent.n_err == 5 and cfg.run.seed == 11
    with pytest.raises(ConfigError, match="APP_AGENT__NERR"):
        load_config(path, environ={"APP_AGENT__NERR": "5"})


def test_full_config_decreasing_shape():
    cfg = load_config(CONFIGS / "full.cfg", environ={})
    sched = cfg.strategy_params().schedule()
    assert cfg.strategy.kind == "decreasing" and cfg.agent.max_steps == 1_000_000
    assert eps_decreasing(50_000, sched) == 1.0
    assert abs(eps_decreasing(450_000, sched) - 0.1) < 1e-12
    assert abs(eps_decreasing(1_000_000, sched) - 0.01) < 1e-12


def test_desk_config_loads():
    cfg = load_config(CONFIGS / "desk.cfg", environ={})
    assert cfg.agent.max_steps <= 50_000 and cfg.strategy.temperature == 0.1


# training -----------------------------------------------------------------------------------------

def test_smoke_run_writes_fifty_rows(smoke_run):
    metrics = rows(smoke_run / "metrics.csv")
    assert len(metrics) == 50
    assert tuple(metrics[0]) == METRICS_COLUMNS
    assert [int(r["episode"]) for r in metrics] == list(range(1, 51))
    for r in metrics:
        assert 1 <= int(r["steps"]) <= 50
        assert float(r["cum_reward"]) <= int(r["steps"])
    assert (smoke_run / "checkpoints" / "final.ckpt").is_file()
    assert (smoke_run / "config.txt").read_text() == dump_config(load_config(CONFIGS / "smoke.cfg", environ={}))


def test_smoke_run_lr_zero_keeps_weights(smoke_run):
    from d3rqn.harness.train import build_agent
    from d3rqn.nnet import checkpoint
    fresh = build_agent(load_config(CONFIGS / "smoke.cfg", environ={}))
    blocks, meta = checkpoint.load(smoke_run / "checkpoints" / "final.ckpt")
    assert blocks["main"].allclose_exact(fresh.main)
    assert int(meta["updates"]) > 0
    assert len(rows(smoke_run / "updates.csv")) == int(meta["updates"])


def test_rerun_is_byte_identical(small_run, tmp_path):
    cfg = load_config(small_run / "config.txt", environ={})
    again = train(cfg, tmp_path / "again")
    for name in ("metrics.csv", "updates.csv", "steps.csv", "checkpoints/ep000020.ckpt", "checkpoints/final.ckpt"):
        assert digest(small_run / name) == digest(again / name), name


def test_steps_csv_one_row_per_step(small_run):
    metrics = rows(small_run / "metrics.csv")
    steps = rows(small_run / "steps.csv")
    assert len(steps) == int(metrics[-1]["total_steps"])
    # before the gate opens the strategy is forced to full exploration
    assert float(steps[0]["epsilon"]) == 1.0


# evaluation ---------------------------------------------------------------------------------------

def test_stub_always_collides():
    recs = [EpisodeRecord(s, k, 7, 3.0, True, False, np.full(7, 3 / 7)) for s in range(10) for k in range(30)]
    report = EvalReport(recs, 2000)
    assert (report.average, report.std, report.min, report.cfr) == (7.0, 0.0, 7, 0.0)


def test_stub_always_survives():
    recs = [EpisodeRecord(s, k, 50, 40.0, False, True, np.full(50, 0.8)) for s in range(10) for k in range(3)]
    report = EvalReport(recs, 50)
    assert report.cfr == 100.0 and report.min == 50
    assert report.histogram.tolist() == [0, 0, 0, 1500]
    assert "100.00%" in report.table("stub")


def test_reward_bins_partition():
    r = np.array([0.0, 0.2499999, 0.25, 0.5, 0.74999, 0.75, 1.0])
    assert reward_bins(r).tolist() == [2, 1, 2, 2]
    with pytest.raises(ValueError):
        reward_bins([1.01])


@pytest.fixture(scope="module")
def eval_dir(small_run):
    ckpt = small_run / "checkpoints" / "final.ckpt"
    before = digest(ckpt)
    report, out = cmd_eval(ckpt, "test", 30)
    assert digest(ckpt) == before
    return report, out


def test_eval_protocol_rows(eval_dir):
    report, out = eval_dir
    recs = rows(out / "eval.csv")
    assert len(recs) == 300 and len(report.records) == 300
    assert sorted({int(r["start"]) for r in recs}) == list(range(10))
    assert 0.0 <= report.cfr <= 100.0
    for r in recs:
        assert int(r["reached_cap"]) == (int(r["length"]) >= 50 and not int(r["collided"]))


def test_histogram_matches_counting_oracle(eval_dir):
    report, out = eval_dir
    counts = [0, 0, 0, 0]
    steps = rows(out / "eval_steps.csv")
    for r in steps:
        x = float(r["reward"])
        counts[3 if x >= 0.75 else 2 if x >= 0.5 else 1 if x >= 0.25 else 0] += 1
    hist = rows(out / "reward_hist.csv")
    assert [int(h["count"]) for h in hist] == counts == report.histogram.tolist()
    assert sum(counts) == int(report.lengths.sum()) == len(steps)


def test_eval_random_baseline(small_run):
    report, out = cmd_eval(small_run / "checkpoints" / "final.ckpt", "train", 2, policy="random")
    assert out.name == "eval_train_random" and len(report.records) == 20


def test_eval_rejects_mismatched_config(small_run, tmp_path):
    cfg = tmp_path / "other.cfg"
    cfg.write_text("net.lstm_width = 7\n")
    with pytest.raises(ConfigError, match="does not match"):
        cmd_eval(small_run / "checkpoints" / "final.ckpt", config_path=cfg)


def test_parallel_eval_matches_serial(small_run, tmp_path):
    ckpt = small_run / "checkpoints" / "final.ckpt"
    a, _ = cmd_eval(ckpt, "test", 2, out=tmp_path / "a")
    b, _ = cmd_eval(ckpt, "test", 2, out=tmp_path / "b", workers=2)
    assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()


# reporting ----------------------------------------------------------------------------------------

def test_smoothers():
    assert np.allclose(trailing_mean(np.full(250, 0.7), 100), 0.7, atol=1e-15)
    assert trailing_mean(np.array([1.0, 3.0, 5.0]), 2).tolist() == [1.0, 2.0, 4.0]
    x = np.arange(10.0)
    assert np.allclose(centered_mean(x, 5), x)  # a line is its own centred average
    assert loss_differences(np.array([1.0, 0.5, 2.0])).tolist() == [0.5, 1.5]


def test_report_outputs_and_leaves_runs_alone(small_run, eval_dir, tmp_path):
    before = {p: digest(p) for p in small_run.rglob("*") if p.is_file()}
    made = cmd_report([small_run], tmp_path / "rep")
    assert {p.name for p in made} == {"reward_curve.svg", "epsilon.svg", "loss_diff.svg", "reward_hist.svg"}
    for p in made:
        assert p.read_text().lstrip().startswith("<?xml")
        assert p.with_suffix(".csv").is_file()
    assert before == {p: digest(p) for p in small_run.rglob("*") if p.is_file()}


def test_constant_reward_stream_is_flat(tmp_path):
    run = tmp_path / "const"
    run.mkdir()
    with open(run / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for k in range(1, 301):
            w.writerow((k, 10, 4.5, 0.45, 0.1, 0.0, 0, 10 * k, 0))
    (run / "steps.csv").write_text("step,epsilon,exploring\n1,0.5,1\n")
    (run / "updates.csv").write_text("step,episode,loss,epsilon\n")
    cmd_report([run], tmp_path / "rep")
    curve = rows(tmp_path / "rep" / "reward_curve.csv")
    assert len(curve) == 300 and {float(r["reward_ma"]) for r in curve} == {4.5}


def test_report_missing_column_names_file(tmp_path):
    run = tmp_path / "broken"
    run.mkdir()
    (run / "metrics.csv").write_text("episode,steps\n1,3\n")
    with pytest.raises(ConfigError, match=r"metrics\.csv.*cum_reward"):
        cmd_report([run], tmp_path / "rep")


# command line ----------------------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("agent.n_err = 12\n")
    assert cli.main(["-q", "train", "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "-q"]) == 2

    def boom(*a, **k):
        raise NumericError("non-finite values in lstm")

    monkeypatch.setattr("d3rqn.harness.train.cmd_train", boom)
    assert cli.main(["-q", "train"]) == 3
    assert "NumericError" in capsys.readouterr().err


def test_cli_end_to_end(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("APP_RUN__MAX_EPISODES", "6")
    out = tmp_path / "run"
    assert cli.main(["-q", "train", "--config", str(CONFIGS / "smoke.cfg"), "--out", str(out), "--seed", "4"]) == 0
    assert len(rows(out / "metrics.csv")) == 6
    assert "run.seed = 4" in (out / "config.txt").read_text()
    assert cli.main(["-q", "eval", "--checkpoint", str(out / "checkpoints" / "final.ckpt"), "--trials", "1"]) == 0
    assert "CFR" in capsys.readouterr().out
    assert cli.main(["-q", "report", str(out), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "reward_hist.svg").is_file()

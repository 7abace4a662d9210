"""Evaluation campaigns: T trials per start point, greedy (or uniform-random baseline) policy.

Outputs, in the evaluation directory:

    eval.csv          one row per episode: start, trial, length, cum_reward, collided,
                      reached_cap, bin0..bin3 (per-episode reward histogram counts)
    eval_steps.csv    one row per step: start, trial, step, reward
    eval_summary.csv  average, std, min, cfr, episodes, total_steps
    reward_hist.csv   bin, lower, upper, count, percent
    eval_table.txt    human-readable summary table
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from d3rqn.agent import D3RQNAgent, same_architecture
from d3rqn.envsim.env import RoadEnv
from d3rqn.errors import ConfigError
from d3rqn.harness.config import RunConfig, load_config
from d3rqn.harness.train import build_agent, fmt
from d3rqn.nnet import checkpoint

BIN_EDGES = (0.0, 0.25, 0.5, 0.75, 1.0)
_MODE_SALT = {"train": 0, "test": 1}
_POLICY_SALT = {"greedy": 0, "random": 1}


def reward_bins(rewards) -> np.ndarray:
    """Counts over [0,.25), [.25,.5), [.5,.75), [.75,1]; the last bin is closed on the right."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size and (r.min() < 0.0 or r.max() > 1.0):
        raise ValueError("rewards must lie in [0, 1]")
    idx = np.minimum(np.floor(r * 4).astype(np.int64), 3)
    return np.bincount(idx, minlength=4)


@dataclass
class EpisodeRecord:
    start: int
    trial: int
    length: int
    cum_reward: float
    collided: bool
    reached_cap: bool
    rewards: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass
class EvalReport:
    records: list[EpisodeRecord]
    step_cap: int

    @property
    def lengths(self) -> np.ndarray:
        return np.array([r.length for r in self.records])

    @property
    def average(self) -> float:
        return float(self.lengths.mean())

    @property
    def std(self) -> float:
        return float(self.lengths.std())

    @property
    def min(self) -> int:
        return int(self.lengths.min())

    @property
    def cfr(self) -> float:
        """Percentage of episodes that reach the step cap without colliding."""
        return 100.0 * sum(r.reached_cap and not r.collided for r in self.records) / len(self.records)

    @property
    def histogram(self) -> np.ndarray:
        return sum((reward_bins(r.rewards) for r in self.records), np.zeros(4, dtype=np.int64))

    def per_start(self) -> dict[int, dict[str, float]]:
        out = {}
        for s in sorted({r.start for r in self.records}):
            sub = EvalReport([r for r in self.records if r.start == s], self.step_cap)
            out[s] = {"average": sub.average, "std": sub.std, "min": sub.min, "cfr": sub.cfr}
        return out

    def table(self, label: str = "") -> str:
        head = f"{'Strategy':<16}| {'Average':>10} | {'Std':>10} | {'Min':>6} | {'CFR':>8}"
        row = f"{label:<16}| {self.average:>10.2f} | {self.std:>10.2f} | {self.min:>6d} | {self.cfr:>7.2f}%"
        return head + "\n" + "-" * len(head) + "\n" + row + "\n"


def _run_random(env: RoadEnv, start: int, mode: str, rng: np.random.Generator) -> list[float]:
    env.reset(start, mode, rng)
    rewards = []
    while not env.done:
        _, r, _ = env.step(int(rng.integers(env.n_actions)))
        rewards.append(r)
    return rewards


def _run_start(args) -> list[EpisodeRecord]:
    config, main_arrays, start, trials, mode, policy = args
    env = RoadEnv(replace(config.env, seed=config.run.seed))
    agent = None
    if policy == "greedy":
        agent = build_agent(config)
        agent.main = type(agent.main)(agent.net_config, main_arrays)
    out = []
    for trial in range(trials):
        rng = np.random.default_rng([config.run.seed, _MODE_SALT[mode], _POLICY_SALT[policy], start, trial])
        if agent is None:
            rewards = _run_random(env, start, mode, rng)
        else:
            rewards = list(agent.run_episode(env, "eval", rng, start_index=start, start_mode=mode).rewards)
        out.append(EpisodeRecord(start, trial, len(rewards), float(np.sum(rewards)), env.collided,
                                 env.steps >= config.env.step_cap, np.array(rewards)))
    return out


def evaluate(config: RunConfig, agent: D3RQNAgent | None, mode: str = "test", trials: int = 30,
             policy: str = "greedy", workers: int = 1) -> EvalReport:
    """Run ``trials`` episodes from every start point of ``mode``. Never trains."""
    if mode not in _MODE_SALT:
        raise ConfigError(f"mode must be 'train' or 'test', got {mode!r}")
    if policy not in _POLICY_SALT:
        raise ConfigError(f"policy must be 'greedy' or 'random', got {policy!r}")
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if policy == "greedy" and agent is None:
        raise ConfigError("greedy evaluation needs an agent")
    n_starts = len(RoadEnv(config.env).world.starts(mode))
    arrays = agent.main.arrays if agent is not None else None
    jobs = [(config, arrays, s, trials, mode, policy) for s in range(n_starts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_start, jobs))
    else:
        chunks = [_run_start(j) for j in jobs]
    return EvalReport([rec for chunk in chunks for rec in chunk], config.env.step_cap)


def write_report(report: EvalReport, out_dir: str | Path, label: str = "") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("start", "trial", "length", "cum_reward", "collided", "reached_cap",
                    "bin0", "bin1", "bin2", "bin3"))
        for r in report.records:
            w.writerow((r.start, r.trial, r.length, fmt(r.cum_reward), int(r.collided), int(r.reached_cap),
                        *reward_bins(r.rewards)))
    with open(out_dir / "eval_steps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("start", "trial", "step", "reward"))
        for r in report.records:
            for i, x in enumerate(r.rewards, 1):
                w.writerow((r.start, r.trial, i, fmt(x)))
    with open(out_dir / "eval_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("label", "average", "std", "min", "cfr", "episodes", "total_steps"))
        w.writerow((label, fmt(report.average), fmt(report.std), report.min, fmt(report.cfr),
                    len(report.records), int(report.lengths.sum())))
    hist = report.histogram
    total = max(int(hist.sum()), 1)
    with open(out_dir / "reward_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bin", "lower", "upper", "count", "percent"))
        for k in range(4):
            w.writerow((k, BIN_EDGES[k], BIN_EDGES[k + 1], int(hist[k]), fmt(100.0 * hist[k] / total)))
    (out_dir / "eval_table.txt").write_text(report.table(label), encoding="utf-8")
    return out_dir


def find_run_config(ckpt: Path) -> Path:
    for d in (ckpt.parent, ckpt.parent.parent):
        if (d / "config.txt").is_file():
            return d / "config.txt"
    raise ConfigError(f"no config.txt found next to {ckpt} or in its run directory")


def cmd_eval(checkpoint_path: str | Path, mode: str = "test", trials: int = 30, policy: str = "greedy",
             out: str | Path | None = None, config_path: str | Path | None = None,
             workers: int = 1) -> tuple[EvalReport, Path]:
    ckpt = Path(checkpoint_path)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    cfg_path = Path(config_path) if config_path else find_run_config(ckpt)
    config = load_config(cfg_path)
    blocks, _ = checkpoint.load(ckpt)
    if not same_architecture(blocks["main"].config, config.network_config()):
        raise ConfigError(f"{ckpt}: network layout does not match {cfg_path}")
    agent = build_agent(config)
    agent.load(ckpt)
    report = evaluate(config, agent, mode, trials, policy, workers)
    if out is None:
        out = cfg_path.parent / f"eval_{mode}" if policy == "greedy" else cfg_path.parent / f"eval_{mode}_{policy}"
    label = config.strategy.kind if policy == "greedy" else "random"
    return report, write_report(report, out, label)


def summary_line(report: EvalReport) -> str:
    return (f"average {report.average:.2f}  std {report.std:.2f}  min {report.min}  "
            f"CFR {report.cfr:.2f}%  episodes {len(report.records)}")


"""Training runs: drive the agent to its step budget and persist metrics and checkpoints.

Run directory layout::

    config.txt              resolved configuration (dump_config format)
    metrics.csv             one row per episode
    updates.csv             one row per agent update
    steps.csv               one row per environment step
    checkpoints/epNNNNNN.ckpt, checkpoints/final.ckpt

metrics.csv columns: episode, steps (episode length), cum_reward,
mean_reward, epsilon (at episode end), loss_ma (mean of the last 100
update losses), wall_ms (0 unless run.wall_clock), total_steps, collided.
updates.csv columns: step, episode, loss, epsilon.
steps.csv columns: step, epsilon, exploring.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import replace
from pathlib import Path

from d3rqn.agent import D3RQNAgent
from d3rqn.envsim.env import RoadEnv
from d3rqn.explore import make_strategy
from d3rqn.harness.config import RunConfig, dump_config, load_config

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("episode", "steps", "cum_reward", "mean_reward", "epsilon", "loss_ma", "wall_ms",
                   "total_steps", "collided")
UPDATE_COLUMNS = ("step", "episode", "loss", "epsilon")
STEP_COLUMNS = ("step", "epsilon", "exploring")


def fmt(x: float) -> str:
    return f"{x:.10g}"


def build_agent(config: RunConfig) -> D3RQNAgent:
    strategy = make_strategy(config.strategy.kind, config.strategy_params())
    return D3RQNAgent(config.network_config(), config.agent, strategy, seed=config.run.seed)


def build_env(config: RunConfig) -> RoadEnv:
    return RoadEnv(replace(config.env, seed=config.run.seed))


def train(config: RunConfig, out: str | Path | None = None) -> Path:
    """Train to ``agent.max_steps``; returns the run directory."""
    config.validate()
    run_dir = Path(out if out is not None else config.run.out)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(dump_config(config), encoding="utf-8")
    agent = build_agent(config)
    env = build_env(config)
    t0 = time.perf_counter()

    with open(run_dir / "metrics.csv", "w", newline="") as fm, \
            open(run_dir / "updates.csv", "w", newline="") as fu, \
            open(run_dir / "steps.csv", "w", newline="") as fs:
        metrics, updates, steps = csv.writer(fm), csv.writer(fu), csv.writer(fs)
        metrics.writerow(METRICS_COLUMNS)
        updates.writerow(UPDATE_COLUMNS)
        steps.writerow(STEP_COLUMNS)
        agent.on_update_log = lambda step, ep, loss, eps: updates.writerow((step, ep, fmt(loss), fmt(eps)))
        agent.on_step_log = lambda step, eps, exploring: steps.writerow((step, fmt(eps), int(exploring)))

        max_eps = config.run.max_episodes
        while agent.total_steps < config.agent.max_steps and not (max_eps and agent.episodes >= max_eps):
            stats = agent.run_episode(env, "train")
            wall_ms = int((time.perf_counter() - t0) * 1000) if config.run.wall_clock else 0
            metrics.writerow((stats.episode, stats.length, fmt(stats.cum_reward), fmt(stats.mean_reward),
                              fmt(stats.epsilon), fmt(stats.loss_ma), wall_ms, agent.total_steps,
                              int(stats.collided)))
            every = config.run.checkpoint_every
            if every and agent.episodes % every == 0:
                fm.flush()
                agent.save(run_dir / "checkpoints" / f"ep{agent.episodes:06d}.ckpt")
            if config.run.log_every and agent.episodes % config.run.log_every == 0:
                log.info("episode %d  steps %d  length %d  reward %.2f  eps %.4f  loss %.5f",
                         agent.episodes, agent.total_steps, stats.length, stats.cum_reward,
                         stats.epsilon, stats.loss_ma)
    agent.save(run_dir / "checkpoints" / "final.ckpt")
    log.info("finished %d steps, %d episodes in %.1fs", agent.total_steps, agent.episodes,
             time.perf_counter() - t0)
    return run_dir


def cmd_train(config_path: str | Path | None, seed: int | None = None, out: str | Path | None = None) -> Path:
    config = load_config(config_path)
    if seed is not None:
        config = replace(config, run=replace(config.run, seed=seed))
    return train(config, out)

"""Double dueling deep recurrent Q-network agent trained with bootstrapped random updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from d3rqn.envsim.env import RoadEnv
from d3rqn.errors import ConfigError
from d3rqn.explore import ActionChoice, Strategy, greedy_action, make_strategy, select_eps_greedy
from d3rqn.nnet import checkpoint
from d3rqn.nnet.network import backward, dueling_combine, encode, forward, lstm_step
from d3rqn.nnet.optim import Adam, soft_update
from d3rqn.nnet.params import NetworkConfig, ParamSet, RecurrentState
from d3rqn.replay import ReplayBuffer, TraceBatch, Transition


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    eta: float = 0.001
    update_rate: int = 4
    trace_len: int = 10
    n_err: int = 7
    batch: int = 10
    lr: float = 1e-4
    buffer_capacity: int = 1000
    start_episodes: int = 999
    # "episodes": gate opens at start_episodes; "half_buffer": at buffer_capacity // 2
    start_rule: str = "episodes"
    max_steps: int = 1_000_000

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("agent.gamma must lie in (0, 1)")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError("agent.eta must lie in (0, 1]")
        if self.update_rate < 1:
            raise ConfigError("agent.update_rate must be >= 1")
        if self.trace_len < 1 or not 0 <= self.n_err < self.trace_len:
            raise ConfigError(f"agent.n_err ({self.n_err}) must be < agent.trace_len ({self.trace_len})")
        if self.batch < 1 or self.buffer_capacity < 1 or self.max_steps < 1:
            raise ConfigError("agent.batch, agent.buffer_capacity and agent.max_steps must be >= 1")
        if self.lr < 0:
            raise ConfigError("agent.lr must be non-negative")
        if self.start_rule not in ("episodes", "half_buffer"):
            raise ConfigError("agent.start_rule must be 'episodes' or 'half_buffer'")
        if self.start_episodes < 0:
            raise ConfigError("agent.start_episodes must be >= 0")

    @property
    def state_updated(self) -> int:
        return self.trace_len - self.n_err

    @property
    def start_threshold(self) -> int:
        if self.start_rule == "half_buffer":
            return self.buffer_capacity // 2
        return self.start_episodes


@dataclass
class EpisodeStats:
    episode: int
    length: int
    cum_reward: float
    mean_reward: float
    epsilon: float
    collided: bool
    loss_ma: float = float("nan")
    rewards: np.ndarray | None = None


def step_q(params: ParamSet, obs: np.ndarray, state: RecurrentState):
    """Q-values for a single observation, threading the recurrent state."""
    x = encode(params, np.asarray(obs, dtype=np.float64).reshape(1, -1))
    h, new_state = lstm_step(params, x[0], state)
    value = h @ params["value.W"] + params["value.b"]
    adv = h @ params["adv.W"] + params["adv.b"]
    return dueling_combine(value, adv), new_state


def same_architecture(a: NetworkConfig, b: NetworkConfig) -> bool:
    return a.layer_shapes() == b.layer_shapes() and a.encoder_activations == b.encoder_activations


class D3RQNAgent:
    def __init__(self, net_config: NetworkConfig, config: AgentConfig | None = None,
                 strategy: Strategy | None = None, seed: int = 0):
        self.config = config or AgentConfig()
        self.config.validate()
        self.net_config = net_config
        self.main = ParamSet.initialize(net_config)
        self.target = self.main.copy()
        self.optimizer = Adam(self.config.lr)
        self.buffer = ReplayBuffer(self.config.buffer_capacity, net_config.n_actions)
        self.strategy = strategy or make_strategy("softmax")
        self.rng = np.random.default_rng(seed)
        self.total_steps = 0
        self.episodes = 0
        self.updates = 0
        self.losses: list[float] = []
        self.on_update_log: Callable[[int, int, float, float], None] | None = None
        self.on_step_log: Callable[[int, float, bool], None] | None = None
        self._probe: tuple[np.ndarray, RecurrentState] | None = None

    # acting -----------------------------------------------------------------

    def initial_state(self) -> RecurrentState:
        return RecurrentState.zeros(self.net_config.lstm_width)

    @property
    def gate_open(self) -> bool:
        return self.buffer.ready(self.config.start_threshold)

    @property
    def epsilon(self) -> float:
        """Exploration probability currently in force (1 during warm-up)."""
        return 1.0 if not self.gate_open else self.strategy.epsilon

    def act(self, obs: np.ndarray, hidden: RecurrentState, explore: bool = True):
        """Returns ``(action, hidden', diagnostics)``; diagnostics carries q, choice and epsilon."""
        q, new_hidden = step_q(self.main, obs, hidden)
        if not explore:
            choice = ActionChoice(greedy_action(q), False)
        elif not self.gate_open:
            choice = select_eps_greedy(q, 1.0, self.rng)
        else:
            choice = self.strategy.select(q, self.rng)
            self._probe = (np.asarray(obs, dtype=np.float64).copy(), hidden.copy())
        return choice.action, new_hidden, {"q": q, "choice": choice, "epsilon": self.epsilon if explore else 0.0}

    # learning ---------------------------------------------------------------

    def compute_targets(self, traces: TraceBatch):
        """Double-estimator targets; both nets start every next-observation trace from zero state.

        Returns ``(targets, main_next_q)``.
        """
        main_next, _ = forward(self.main, traces.next_obs)
        target_next, _ = forward(self.target, traces.next_obs)
        best = np.argmax(main_next, axis=2)
        double_q = np.take_along_axis(target_next, best[..., None], axis=2)[..., 0]
        y = traces.rewards + self.config.gamma * double_q * (1.0 - traces.terminals)
        return y, main_next

    def train_step(self) -> float:
        cfg = self.config
        traces = self.buffer.sample_traces(cfg.batch, cfg.trace_len, self.rng)
        targets, main_next = self.compute_targets(traces)
        q_before = None
        if self.strategy.wants_delta and self._probe is not None:
            q_before, _ = step_q(self.main, *self._probe)
        loss, grads = backward(self.main, traces.obs, traces.actions, targets, cfg.n_err)
        self.main = self.optimizer.step(self.main, grads, cfg.lr)
        self.target = soft_update(self.main, self.target, cfg.eta)
        self.updates += 1
        self.losses.append(loss)
        if q_before is not None:
            q_after, _ = step_q(self.main, *self._probe)
            a_star = greedy_action(q_before)
            self.strategy.on_update(float(q_after[a_star] - q_before[a_star]))
        if self.strategy.wants_returns:
            notdone = 1.0 - traces.terminals[:, -1]
            r = traces.rewards[:, -1]
            nq = main_next[:, -1]
            g_greedy = r + cfg.gamma * nq.max(axis=1) * notdone
            g_uniform = r + cfg.gamma * nq.mean(axis=1) * notdone
            for gq, gu, y in zip(g_greedy, g_uniform, targets[:, -1]):
                self.strategy.on_return(float(gq), float(gu), float(y))
        if self.on_update_log is not None:
            self.on_update_log(self.total_steps, self.episodes, loss, self.epsilon)
        return loss

    def loss_ma(self, window: int = 100) -> float:
        if not self.losses:
            return float("nan")
        return float(np.mean(self.losses[-window:]))

    # episodes ---------------------------------------------------------------

    def run_episode(self, env: RoadEnv, mode: str = "train", rng: np.random.Generator | None = None,
                    start_index: int | None = None, start_mode: str = "train") -> EpisodeStats:
        """Drive one episode. ``mode='eval'`` acts greedily and never touches buffer or weights."""
        if mode not in ("train", "eval"):
            raise ConfigError("mode must be 'train' or 'eval'")
        training = mode == "train"
        obs = env.reset(start_index, start_mode, rng)
        hidden = self.initial_state()
        rewards = []
        while not env.done:
            if training and self.total_steps >= self.config.max_steps:
                break
            action, hidden, diag = self.act(obs, hidden, explore=training)
            next_obs, r, terminal = env.step(action)
            rewards.append(r)
            if training:
                self.buffer.push(Transition(obs, action, r, next_obs, terminal))
                self.total_steps += 1
                self.strategy.on_step(self.total_steps)
                if self.on_step_log is not None:
                    self.on_step_log(self.total_steps, diag["epsilon"], diag["choice"].exploring)
                if self.gate_open and self.total_steps % self.config.update_rate == 0:
                    self.train_step()
            obs = next_obs
        if training:
            self.buffer.end_episode()
            self.episodes += 1
        rewards = np.array(rewards)
        length = len(rewards)
        return EpisodeStats(
            episode=self.episodes,
            length=length,
            cum_reward=float(rewards.sum()),
            mean_reward=float(rewards.mean()) if length else 0.0,
            epsilon=self.epsilon if training else 0.0,
            collided=env.collided,
            loss_ma=self.loss_ma(),
            rewards=rewards,
        )

    # persistence ------------------------------------------------------------

    def save(self, path, extra: dict[str, str] | None = None) -> None:
        meta = {"steps": str(self.total_steps), "episodes": str(self.episodes), "updates": str(self.updates)}
        meta.update(extra or {})
        checkpoint.save(path, {"main": self.main, "target": self.target}, meta)

    def load(self, path) -> dict[str, str]:
        blocks, meta = checkpoint.load(path)
        if not same_architecture(blocks["main"].config, self.net_config):
            raise ConfigError(f"{path}: checkpoint network config does not match the agent's")
        self.main = ParamSet(self.net_config, blocks["main"].arrays)
        self.target = ParamSet(self.net_config, blocks.get("target", blocks["main"]).copy().arrays)
        return meta

"""Episodic replay memory with Bootstrapped Random Update trace sampling."""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from d3rqn.errors import ConfigError, SamplingError


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool = False


@dataclass
class Episode:
    """Stored compactly: ``obs`` has one more row than there are transitions."""

    obs: np.ndarray        # (L+1, obs_size)
    actions: np.ndarray    # (L,)
    rewards: np.ndarray    # (L,)
    terminals: np.ndarray  # (L,) bool; only the last entry may be True

    def __len__(self) -> int:
        return len(self.actions)

    def transition(self, i: int) -> Transition:
        return Transition(self.obs[i], int(self.actions[i]), float(self.rewards[i]),
                          self.obs[i + 1], bool(self.terminals[i]))


@dataclass
class TraceBatch:
    """``b`` traces of ``t`` consecutive transitions each."""

    obs: np.ndarray        # (b, t, obs_size)
    actions: np.ndarray    # (b, t)
    rewards: np.ndarray    # (b, t)
    next_obs: np.ndarray   # (b, t, obs_size)
    terminals: np.ndarray  # (b, t)
    episode_ids: np.ndarray  # (b,) position-independent ids of the source episodes
    starts: np.ndarray     # (b,)

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """FIFO of completed episodes; capacity is counted in episodes."""

    def __init__(self, capacity: int, n_actions: int = 5, max_retries: int = 1000):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self.n_actions = n_actions
        self.max_retries = max_retries
        self.episodes: deque[Episode] = deque()
        self.episode_ids: deque[int] = deque()
        self._next_id = 0
        self._pending: list[Transition] = []

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def pending_length(self) -> int:
        return len(self._pending)

    def push(self, tr: Transition) -> None:
        if not 0 <= tr.action < self.n_actions:
            raise ConfigError(f"action {tr.action} outside [0, {self.n_actions})")
        if not 0.0 <= tr.reward <= 1.0:
            raise ConfigError(f"reward {tr.reward} outside [0, 1]")
        if self._pending and self._pending[-1].terminal:
            raise ConfigError("transition pushed after a terminal one; call end_episode first")
        self._pending.append(tr)

    def end_episode(self) -> None:
        if not self._pending:
            return
        pend = self._pending
        obs = np.stack([np.ravel(tr.obs) for tr in pend] + [np.ravel(pend[-1].next_obs)]).astype(np.float64)
        ep = Episode(
            obs=obs,
            actions=np.array([tr.action for tr in pend], dtype=np.int64),
            rewards=np.array([tr.reward for tr in pend], dtype=np.float64),
            terminals=np.array([tr.terminal for tr in pend], dtype=bool),
        )
        self._pending = []
        self.episodes.append(ep)
        self.episode_ids.append(self._next_id)
        self._next_id += 1
        while len(self.episodes) > self.capacity:
            self.episodes.popleft()
            self.episode_ids.popleft()

    def ready(self, start_episodes: int) -> bool:
        return len(self.episodes) >= start_episodes

    def sample_traces(self, batch: int, trace_len: int, rng: np.random.Generator) -> TraceBatch:
        """Uniform episode (with replacement), then uniform start in [0, len - t].

        Episodes shorter than ``trace_len`` are rejected and redrawn.
        """
        if trace_len < 1 or batch < 1:
            raise ConfigError("batch and trace length must be >= 1")
        n = len(self.episodes)
        if n == 0 or not any(len(ep) >= trace_len for ep in self.episodes):
            raise SamplingError(f"no stored episode has length >= {trace_len}")
        picks, starts = [], []
        retries = 0
        while len(picks) < batch:
            k = int(rng.integers(n))
            ep = self.episodes[k]
            if len(ep) < trace_len:
                retries += 1
                if retries > self.max_retries * batch:
                    raise SamplingError("too many short episodes rejected while sampling")
                continue
            picks.append(k)
            starts.append(int(rng.integers(len(ep) - trace_len + 1)))
        eps = [self.episodes[k] for k in picks]
        sl = [slice(s, s + trace_len) for s in starts]
        return TraceBatch(
            obs=np.stack([ep.obs[s] for ep, s in zip(eps, sl)]),
            actions=np.stack([ep.actions[s] for ep, s in zip(eps, sl)]),
            rewards=np.stack([ep.rewards[s] for ep, s in zip(eps, sl)]),
            next_obs=np.stack([ep.obs[s.start + 1:s.stop + 1] for ep, s in zip(eps, sl)]),
            terminals=np.stack([ep.terminals[s] for ep, s in zip(eps, sl)]),
            episode_ids=np.array([self.episode_ids[k] for k in picks], dtype=np.int64),
            starts=np.array(starts, dtype=np.int64),
        )

    def dump(self, path: str | Path) -> int:
        """Write every stored transition as a binary record; returns the record count.

        File: 8-byte magic ``D3RQNRB1``, then uint32 obs_size, then per record
        (little-endian): uint32 episode_id, uint32 step, uint8 action,
        uint8 terminal, float64 reward, obs_size float64 obs,
        obs_size float64 next_obs.
        """
        size = self.episodes[0].obs.shape[1] if self.episodes else 0
        count = 0
        with open(path, "wb") as fh:
            fh.write(b"D3RQNRB1")
            fh.write(struct.pack("<I", size))
            for eid, ep in zip(self.episode_ids, self.episodes):
                for i in range(len(ep)):
                    fh.write(struct.pack("<IIBBd", eid, i, int(ep.actions[i]), int(ep.terminals[i]),
                                         float(ep.rewards[i])))
                    fh.write(ep.obs[i].astype("<f8").tobytes())
                    fh.write(ep.obs[i + 1].astype("<f8").tobytes())
                    count += 1
        return count


def read_dump(path: str | Path) -> list[tuple[int, int, Transition]]:
    data = Path(path).read_bytes()
    if data[:8] != b"D3RQNRB1":
        raise ConfigError("not a replay dump")
    (size,) = struct.unpack_from("<I", data, 8)
    pos, out = 12, []
    rec = struct.calcsize("<IIBBd")
    while pos < len(data):
        eid, step, action, term, reward = struct.unpack_from("<IIBBd", data, pos)
        pos += rec
        obs = np.frombuffer(data, "<f8", size, pos).copy()
        pos += 8 * size
        nxt = np.frombuffer(data, "<f8", size, pos).copy()
        pos += 8 * size
        out.append((eid, step, Transition(obs, action, reward, nxt, bool(term))))
    return out

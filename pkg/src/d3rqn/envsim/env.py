from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from d3rqn.envsim.track import CELL_VALUES, ROAD, Pose, RoadWorld, bundled_track, load_track
from d3rqn.errors import ConfigError, ContractError

# steering command per action index: two left levels, straight, two right levels
ACTIONS = (-1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class EnvConfig:
    track: str = "default"        # bundled track name or path to a .track file
    beta: float = 1.0             # reward decay per metre off the centre line
    dt: float = 0.25
    speed: float = 2.0            # m/s, constant
    steer_gain: float = 1.2       # rad/s per unit steering command
    step_cap: int = 2000
    obs_depth: int = 12
    obs_width: int = 8
    obs_spacing: float = 0.75     # metres between observation samples
    start_jitter: float = 0.0     # max lateral start offset, metres
    heading_jitter: float = 0.0   # max start heading offset, radians
    seed: int = 0

    def validate(self) -> None:
        if self.beta <= 0:
            raise ConfigError("env.beta must be positive")
        if self.dt <= 0 or self.speed <= 0 or self.steer_gain < 0:
            raise ConfigError("env.dt and env.speed must be positive, env.steer_gain non-negative")
        if self.step_cap < 1:
            raise ConfigError("env.step_cap must be >= 1")
        if self.obs_depth < 1 or self.obs_width < 1 or self.obs_spacing <= 0:
            raise ConfigError("observation window must be positive")
        if self.start_jitter < 0 or self.heading_jitter < 0:
            raise ConfigError("jitter must be non-negative")


@dataclass
class CarState:
    x: float
    y: float
    heading: float
    speed: float


def reward(distance: float, beta: float) -> float:
    """exp(-beta * d): 1 on the centre line, decaying with distance."""
    if beta <= 0:
        raise ConfigError("beta must be positive")
    return math.exp(-beta * distance)


def resolve_track(spec: str) -> RoadWorld:
    if spec.endswith(".track") or "/" in spec:
        return load_track(spec)
    return bundled_track(spec)


class RoadEnv:
    """Constant-speed car on a grid road with a forward-facing occupancy window."""

    def __init__(self, config: EnvConfig | None = None, world: RoadWorld | None = None):
        self.config = config or EnvConfig()
        self.config.validate()
        self.world = world if world is not None else resolve_track(self.config.track)
        self.rng = np.random.default_rng(self.config.seed)
        cfg = self.config
        # window sample offsets in the car frame: rows go away from the car, columns sweep across
        ahead = (np.arange(cfg.obs_depth) + 0.5) * cfg.obs_spacing
        across = (np.arange(cfg.obs_width) - (cfg.obs_width - 1) / 2.0) * cfg.obs_spacing
        self._ahead, self._across = np.meshgrid(ahead, across, indexing="ij")
        self.car: CarState | None = None
        self.steps = 0
        self.done = True
        self.collided = False

    @property
    def n_actions(self) -> int:
        return len(ACTIONS)

    @property
    def truncated(self) -> bool:
        return self.done and not self.collided

    def reset(self, start_index: int | None = None, mode: str = "train",
              rng: np.random.Generator | None = None) -> np.ndarray:
        """Place the car at a start pose; a random one from the set when no index is given.

        Jitter (if configured) is drawn from ``rng`` or the environment's own generator.
        """
        starts = self.world.starts(mode)
        rng = rng if rng is not None else self.rng
        if start_index is None:
            start_index = int(rng.integers(len(starts)))
        if not 0 <= start_index < len(starts):
            raise ConfigError(f"start index {start_index} out of range for {len(starts)} {mode} starts")
        pose = starts[start_index]
        cfg = self.config
        x, y, h = pose.x, pose.y, pose.heading
        if cfg.start_jitter > 0 or cfg.heading_jitter > 0:
            off = rng.uniform(-cfg.start_jitter, cfg.start_jitter)
            x, y = x - off * math.sin(h), y + off * math.cos(h)
            h += rng.uniform(-cfg.heading_jitter, cfg.heading_jitter)
        return self.place(Pose(x, y, h))

    def place(self, pose: Pose) -> np.ndarray:
        self.car = CarState(pose.x, pose.y, pose.heading, self.config.speed)
        self.steps = 0
        self.done = False
        self.collided = self.world.cell_at(pose.x, pose.y) != ROAD
        if self.collided:
            raise ConfigError("start pose is not on the road")
        return self.observe()

    def step(self, action: int):
        """Apply steering action ``action`` (index into ACTIONS). Returns (obs, reward, terminal)."""
        if self.done or self.car is None:
            raise ContractError("step() called on a finished episode; call reset() first")
        if not 0 <= action < len(ACTIONS):
            raise ConfigError(f"action index {action} outside [0, {len(ACTIONS)})")
        cfg, car = self.config, self.car
        car.heading += ACTIONS[action] * cfg.steer_gain * cfg.dt
        car.x += car.speed * cfg.dt * math.cos(car.heading)
        car.y += car.speed * cfg.dt * math.sin(car.heading)
        self.steps += 1
        if self.world.cell_at(car.x, car.y) != ROAD:
            self.collided = True
            self.done = True
            return self.observe(), 0.0, True
        r = reward(self.world.distance_to_center(car.x, car.y), cfg.beta)
        if self.steps >= cfg.step_cap:
            self.done = True
        return self.observe(), r, False

    def observe(self) -> np.ndarray:
        return render_observation(self, self.car)

    def distance_to_center(self) -> float:
        return self.world.distance_to_center(self.car.x, self.car.y)


def render_observation(env: RoadEnv, car: CarState) -> np.ndarray:
    """Cells ahead of the car in its own frame, coded road 0, off-road 0.5, obstacle 1."""
    c, s = math.cos(car.heading), math.sin(car.heading)
    xs = car.x + env._ahead * c - env._across * s
    ys = car.y + env._ahead * s + env._across * c
    return CELL_VALUES[env.world.cells_at(xs, ys)]

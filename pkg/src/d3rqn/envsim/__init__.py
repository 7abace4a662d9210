from d3rqn.envsim.env import ACTIONS, CarState, EnvConfig, RoadEnv, render_observation, reward
from d3rqn.envsim.track import (
    Pose,
    RoadWorld,
    build_default_track,
    bundled_track,
    distance_to_center,
    load_track,
    parse_track,
)

__all__ = [
    "ACTIONS",
    "CarState",
    "EnvConfig",
    "Pose",
    "RoadEnv",
    "RoadWorld",
    "build_default_track",
    "bundled_track",
    "distance_to_center",
    "load_track",
    "parse_track",
    "render_observation",
    "reward",
]

"""Run configuration: flat dotted ``key = value`` text files with env-var overrides.

Sections are ``agent.*``, ``net.*``, ``env.*``, ``strategy.*`` and ``run.*``.
An environment variable ``APP_<SECTION>__<KEY>`` (upper case, double
underscore between section and key) overrides the matching config key, e.g.
``APP_AGENT__N_ERR=5`` sets ``agent.n_err``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from d3rqn.agent import AgentConfig
from d3rqn.envsim.env import ACTIONS, EnvConfig
from d3rqn.errors import ConfigError
from d3rqn.explore import KINDS, StrategyParams
from d3rqn.nnet.params import NetworkConfig

ENV_PREFIX = "APP_"


@dataclass(frozen=True)
class NetSection:
    encoder_widths: tuple[int, ...] = (64, 32)
    encoder_activations: tuple[str, ...] = ("relu", "relu")
    conv: bool = False
    conv_channels: int = 4
    conv_kernel: int = 3
    lstm_width: int = 32


@dataclass
class StrategySection(StrategyParams):
    kind: str = "softmax"


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs/run"
    checkpoint_every: int = 100   # episodes between periodic checkpoints; 0 disables
    log_every: int = 50           # episodes between progress lines on stderr; 0 disables
    wall_clock: bool = False      # fill metrics.csv wall_ms; off keeps reruns byte-identical
    max_episodes: int = 0         # stop after this many episodes as well; 0 disables


@dataclass(frozen=True)
class RunConfig:
    agent: AgentConfig = field(default_factory=AgentConfig)
    net: NetSection = field(default_factory=NetSection)
    env: EnvConfig = field(default_factory=EnvConfig)
    strategy: StrategySection = field(default_factory=StrategySection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> None:
        self.agent.validate()
        self.env.validate()
        self.strategy.validate()
        if self.strategy.kind not in KINDS:
            raise ConfigError(f"strategy.kind must be one of {KINDS}, got {self.strategy.kind!r}")
        if self.strategy.kind == "decreasing" and self.strategy.n_start >= self.agent.max_steps:
            raise ConfigError("strategy.n_start (full-exploration phase) must be below agent.max_steps")
        if self.run.checkpoint_every < 0 or self.run.log_every < 0 or self.run.max_episodes < 0:
            raise ConfigError("run.checkpoint_every, run.log_every and run.max_episodes must be >= 0")
        self.network_config()

    def network_config(self) -> NetworkConfig:
        n = self.net
        return NetworkConfig(
            obs_depth=self.env.obs_depth, obs_width=self.env.obs_width,
            encoder_widths=n.encoder_widths, encoder_activations=n.encoder_activations,
            conv=n.conv, conv_channels=n.conv_channels, conv_kernel=n.conv_kernel,
            lstm_width=n.lstm_width, n_actions=len(ACTIONS), seed=self.run.seed,
        )

    def strategy_params(self) -> StrategyParams:
        return StrategyParams(**{f.name: getattr(self.strategy, f.name) for f in fields(StrategyParams)})


SECTIONS = {f.name: f for f in fields(RunConfig)}


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw.replace("_", ""))
        if isinstance(default, tuple):
            kind = type(default[0]) if default else str
            return tuple(kind(p.strip()) for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _all_keys() -> dict[str, tuple[str, str]]:
    keys = {}
    base = RunConfig()
    for sname in SECTIONS:
        for f in fields(getattr(base, sname)):
            keys[f"{sname}.{f.name}"] = (sname, f.name)
    return keys


def apply_overrides(config: RunConfig, values: dict[str, tuple[str, str]]) -> RunConfig:
    """``values`` maps dotted key -> (raw text, location for error messages)."""
    keys = _all_keys()
    changes: dict[str, dict] = {}
    for key, (raw, where) in values.items():
        if key not in keys:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        sname, fname = keys[key]
        default = getattr(getattr(config, sname), fname)
        changes.setdefault(sname, {})[fname] = _convert(raw, default, where)
    try:
        sections = {s: replace(getattr(config, s), **kw) for s, kw in changes.items()}
        return replace(config, **sections)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, tuple[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        where = f"{source}:{lineno}"
        if not eq or not key.strip():
            raise ConfigError(f"{where}: expected 'key = value'")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        values[key] = (value, where)
    config = apply_overrides(RunConfig(), values)
    _validate_with_lines(config, values)
    return config


def _validate_with_lines(config: RunConfig, values: dict[str, tuple[str, str]]) -> None:
    try:
        config.validate()
    except ConfigError as exc:
        # point at the line of the key the message names first
        msg = str(exc)
        named = [(msg.find(key), where) for key, (_, where) in values.items() if key in msg]
        if named:
            raise ConfigError(f"{min(named)[1]}: {exc}") from None
        raise


def env_overrides(environ: dict[str, str] | None = None) -> dict[str, tuple[str, str]]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, _, key = name[len(ENV_PREFIX):].partition("__")
        out[f"{section.lower()}.{key.lower()}"] = (value, f"env {name}")
    return out


def load_config(path: str | Path | None = None, environ: dict[str, str] | None = None) -> RunConfig:
    """Read a config file (or defaults when ``path`` is None), then apply APP_ overrides."""
    if path is None:
        config, values = RunConfig(), {}
    else:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        config = parse_config(path.read_text(encoding="utf-8"), str(path))
        values = {}
    overrides = env_overrides(environ)
    if overrides:
        config = apply_overrides(config, overrides)
        values.update(overrides)
    _validate_with_lines(config, values)
    return config


def dump_config(config: RunConfig) -> str:
    lines = []
    for sname in SECTIONS:
        section = getattr(config, sname)
        for f in fields(section):
            lines.append(f"{sname}.{f.name} = {_format(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"

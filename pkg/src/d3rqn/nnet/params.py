"""Network configuration and the parameter container shared by main and target nets."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from d3rqn.errors import ConfigError

ACTIVATIONS = ("relu", "tanh", "linear")

# LSTM gate blocks inside the stacked 4*H axis, in this order.
GATE_ORDER = ("input", "forget", "cell", "output")


@dataclass(frozen=True)
class NetworkConfig:
    obs_depth: int = 12
    obs_width: int = 8
    encoder_widths: tuple[int, ...] = (64, 32)
    encoder_activations: tuple[str, ...] = ("relu", "relu")
    conv: bool = False
    conv_channels: int = 4
    conv_kernel: int = 3
    lstm_width: int = 32
    n_actions: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "encoder_activations", tuple(self.encoder_activations))
        self.validate()

    def validate(self) -> None:
        if self.obs_depth < 1 or self.obs_width < 1:
            raise ConfigError("observation shape must be positive")
        if len(self.encoder_widths) != len(self.encoder_activations):
            raise ConfigError("encoder_widths and encoder_activations differ in length")
        if any(w < 1 for w in self.encoder_widths):
            raise ConfigError("encoder widths must be >= 1")
        for act in self.encoder_activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")
        if self.lstm_width < 1 or self.n_actions < 1:
            raise ConfigError("lstm_width and n_actions must be >= 1")
        if self.conv:
            k = self.conv_kernel
            if k < 1 or k > self.obs_depth or k > self.obs_width or self.conv_channels < 1:
                raise ConfigError("conv kernel does not fit the observation window")

    @property
    def obs_size(self) -> int:
        return self.obs_depth * self.obs_width

    @property
    def conv_out_shape(self) -> tuple[int, int, int]:
        k = self.conv_kernel
        return (self.conv_channels, self.obs_depth - k + 1, self.obs_width - k + 1)

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) pairs; this order is also the checkpoint layout."""
        shapes: list[tuple[str, tuple[int, ...]]] = []
        n_in = self.obs_size
        if self.conv:
            c, d, w = self.conv_out_shape
            shapes += [("conv.W", (c, self.conv_kernel, self.conv_kernel)), ("conv.b", (c,))]
            n_in = c * d * w
        for i, width in enumerate(self.encoder_widths):
            shapes += [(f"enc{i}.W", (n_in, width)), (f"enc{i}.b", (width,))]
            n_in = width
        h = self.lstm_width
        shapes += [
            ("lstm.Wx", (n_in, 4 * h)),
            ("lstm.Wh", (h, 4 * h)),
            ("lstm.b", (4 * h,)),
            ("value.W", (h, 1)),
            ("value.b", (1,)),
            ("adv.W", (h, self.n_actions)),
            ("adv.b", (self.n_actions,)),
        ]
        return shapes

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append((f.name, str(v)))
        return out

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "NetworkConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name].strip()
            if f.name == "encoder_widths":
                kw[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif f.name == "encoder_activations":
                kw[f.name] = tuple(x.strip() for x in raw.split(",") if x.strip())
            elif f.name == "conv":
                kw[f.name] = raw.lower() in ("1", "true", "yes", "on")
            else:
                kw[f.name] = int(raw)
        unknown = set(items) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown network keys: {sorted(unknown)}")
        return cls(**kw)


@dataclass
class RecurrentState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, width: int, batch: int | None = None) -> "RecurrentState":
        shape = (width,) if batch is None else (batch, width)
        return cls(np.zeros(shape), np.zeros(shape))

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.h.copy(), self.c.copy())


@dataclass
class ParamSet:
    """Named float64 arrays for one network, ordered as in ``NetworkConfig.layer_shapes``."""

    config: NetworkConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = self.config.layer_shapes()
        if list(self.arrays) != [n for n, _ in expected]:
            raise ConfigError("parameter names do not match the network configuration")
        for name, shape in expected:
            arr = self.arrays[name]
            if arr.shape != shape:
                raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
            if arr.dtype != np.float64:
                self.arrays[name] = arr.astype(np.float64)

    @classmethod
    def initialize(cls, config: NetworkConfig, seed: int | None = None) -> "ParamSet":
        """Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero."""
        rng = np.random.default_rng(config.seed if seed is None else seed)
        arrays = {}
        for name, shape in config.layer_shapes():
            if name.endswith(".b"):
                arrays[name] = np.zeros(shape)
                continue
            fan_in = shape[1] * shape[2] if name == "conv.W" else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, arrays)

    @classmethod
    def zeros_like(cls, other: "ParamSet") -> "ParamSet":
        return cls(other.config, {k: np.zeros_like(v) for k, v in other.arrays.items()})

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.arrays[name] = value

    def items(self):
        return self.arrays.items()

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ConfigError(f"flat vector has {vec.size} entries, expected {self.size}")
        arrays, pos = {}, 0
        for name, arr in self.arrays.items():
            arrays[name] = vec[pos:pos + arr.size].reshape(arr.shape).copy()
            pos += arr.size
        return ParamSet(self.config, arrays)

    def max_abs_diff(self, other: "ParamSet") -> float:
        return max(float(np.max(np.abs(a - other.arrays[k]))) for k, a in self.arrays.items())

    def allclose_exact(self, other: "ParamSet") -> bool:
        return all(np.array_equal(a, other.arrays[k]) for k, a in self.arrays.items())

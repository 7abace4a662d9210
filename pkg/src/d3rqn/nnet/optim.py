from __future__ import annotations

import numpy as np

from d3rqn.errors import ConfigError
from d3rqn.nnet.params import ParamSet


class Adam:
    """Adam with bias correction. Defaults: lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet, grads: ParamSet, lr: float | None = None) -> ParamSet:
        """Return updated parameters; ``params`` itself is left untouched."""
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            out[name] = p - lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return ParamSet(params.config, out)

    def state_arrays(self) -> list[np.ndarray]:
        return [a for name in self.m for a in (self.m[name], self.v[name])]


def soft_update(main: ParamSet, target: ParamSet, eta: float) -> ParamSet:
    """Target <- eta * main + (1 - eta) * target, elementwise."""
    if not 0.0 < eta <= 1.0:
        raise ConfigError(f"soft-update rate must lie in (0, 1], got {eta}")
    if main.config.layer_shapes() != target.config.layer_shapes():
        raise ConfigError("main and target networks have different layouts")
    return ParamSet(target.config, {k: main[k] * eta + target[k] * (1.0 - eta) for k in target.arrays})

import numpy as np
import pytest

from d3rqn.nnet.network import ForwardCache, backward, forward
from d3rqn.nnet.params import NetworkConfig, ParamSet


def small_config(rng, conv=False, activations=None):
    depth, width = int(rng.integers(3, 6)), int(rng.integers(3, 6))
    n_layers = int(rng.integers(1, 3))
    acts = activations or tuple(rng.choice(["relu", "tanh", "linear"], size=n_layers))
    return NetworkConfig(
        obs_depth=depth, obs_width=width,
        encoder_widths=tuple(int(w) for w in rng.integers(3, 7, size=len(acts))),
        encoder_activations=tuple(str(a) for a in acts),
        conv=conv, conv_channels=2, conv_kernel=2,
        lstm_width=int(rng.integers(2, 6)), n_actions=5, seed=int(rng.integers(1 << 30)),
    )


def _relu_margin(params, obs):
    cache = ForwardCache(0, 0, np.empty(0))
    forward(params, obs, None, cache)
    zs = [z for z, act in zip(cache.enc_z, params.config.encoder_activations) if act == "relu"]
    if cache.conv_z is not None:
        zs.append(cache.conv_z)
    return min((float(np.abs(z).min()) for z in zs), default=np.inf)


def random_problem(rng, cfg, batch, t, kink_margin=1e-3):
    """Random weights and data; redrawn while any ReLU input sits within ``kink_margin`` of 0,
    where a central difference would straddle the kink."""
    while True:
        params = ParamSet.initialize(cfg)
        # biases away from zero so every gate and activation is exercised
        params = params.with_flat(params.flat() + rng.normal(0.0, 0.3, params.size))
        obs = rng.normal(size=(batch, t, cfg.obs_depth, cfg.obs_width))
        if _relu_margin(params, obs) > kink_margin:
            break
    actions = rng.integers(cfg.n_actions, size=(batch, t))
    targets = rng.normal(size=(batch, t))
    return params, obs, actions, targets


def fd_gradient(params, obs, actions, targets, n_err, h=1e-5):
    base = params.flat()
    out = np.empty_like(base)
    for k in range(base.size):
        up, down = base.copy(), base.copy()
        up[k] += h
        down[k] -= h
        lu, _ = backward(params.with_flat(up), obs, actions, targets, n_err)
        ld, _ = backward(params.with_flat(down), obs, actions, targets, n_err)
        out[k] = (lu - ld) / (2 * h)
    return out


def max_rel_error(analytic, numeric, floor=1e-7):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and asserts ``ok``."""

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

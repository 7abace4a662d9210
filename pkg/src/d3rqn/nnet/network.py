"""Forward and backward passes for encoder -> LSTM -> dueling heads.

All batched arrays are laid out ``(batch, time, ...)``. Observations may be
given either as ``(b, t, depth, width)`` or already flattened ``(b, t, depth*width)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from d3rqn.errors import ConfigError, NumericError
from d3rqn.nnet.params import NetworkConfig, ParamSet, RecurrentState


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _check(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {where}")
    return x


def dueling_combine(value: np.ndarray, adv: np.ndarray) -> np.ndarray:
    """Q = V + (A - mean_a A). ``value`` has a trailing axis of size 1."""
    return value + (adv - adv.mean(axis=-1, keepdims=True))


def lstm_step(params: ParamSet, x: np.ndarray, state: RecurrentState):
    """One LSTM step. Works on a single vector or on a batch of rows.

    Returns ``(h_new, RecurrentState(h_new, c_new))``.
    """
    hw = params.config.lstm_width
    if state.h.shape[-1] != hw or state.c.shape[-1] != hw:
        raise ConfigError(f"recurrent state width must be {hw}")
    if x.shape[-1] != params["lstm.Wx"].shape[0]:
        raise ConfigError(f"LSTM input width must be {params['lstm.Wx'].shape[0]}, got {x.shape[-1]}")
    z = x @ params["lstm.Wx"] + state.h @ params["lstm.Wh"] + params["lstm.b"]
    i = sigmoid(z[..., :hw])
    f = sigmoid(z[..., hw:2 * hw])
    g = np.tanh(z[..., 2 * hw:3 * hw])
    o = sigmoid(z[..., 3 * hw:])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    return h, RecurrentState(h, c)


def _flatten_obs(config: NetworkConfig, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 4:
        if obs.shape[2:] != (config.obs_depth, config.obs_width):
            raise ConfigError(f"observation shape {obs.shape[2:]} does not match config")
        obs = obs.reshape(obs.shape[0], obs.shape[1], -1)
    if obs.ndim != 3 or obs.shape[2] != config.obs_size:
        raise ConfigError(f"observations must be (b, t, {config.obs_size}), got {obs.shape}")
    if obs.shape[1] < 1:
        raise ConfigError("trace length must be >= 1")
    return obs


@dataclass
class ForwardCache:
    batch: int
    steps: int
    obs: np.ndarray
    conv_patches: np.ndarray | None = None
    conv_z: np.ndarray | None = None
    enc_inputs: list = field(default_factory=list)
    enc_z: list = field(default_factory=list)
    enc_a: list = field(default_factory=list)
    lstm_x: np.ndarray | None = None
    gates: list = field(default_factory=list)
    h_seq: np.ndarray | None = None
    h_prev: list = field(default_factory=list)
    c_prev: list = field(default_factory=list)
    c_seq: list = field(default_factory=list)


def encode(params: ParamSet, obs: np.ndarray, cache: ForwardCache | None = None) -> np.ndarray:
    """Encoder over flattened observations ``(n, obs_size)`` -> ``(n, enc_out)``."""
    cfg = params.config
    x = obs
    if cfg.conv:
        img = obs.reshape(-1, cfg.obs_depth, cfg.obs_width)
        k = cfg.conv_kernel
        patches = sliding_window_view(img, (k, k), axis=(1, 2))  # n, d', w', k, k
        z = np.einsum("nijab,cab->ncij", patches, params["conv.W"]) + params["conv.b"][None, :, None, None]
        x = np.maximum(z, 0.0).reshape(z.shape[0], -1)
        _check(x, "conv")
        if cache is not None:
            cache.conv_patches = patches
            cache.conv_z = z
    for i, act in enumerate(cfg.encoder_activations):
        z = x @ params[f"enc{i}.W"] + params[f"enc{i}.b"]
        a = _activate(z, act)
        _check(a, f"enc{i}")
        if cache is not None:
            cache.enc_inputs.append(x)
            cache.enc_z.append(z)
            cache.enc_a.append(a)
        x = a
    return x


def forward(params: ParamSet, obs: np.ndarray, init: RecurrentState | None = None,
            cache: ForwardCache | None = None):
    """Batched forward pass. Returns ``(q, final_state)`` with ``q`` of shape (b, t, |A|)."""
    cfg = params.config
    obs = _flatten_obs(cfg, obs)
    b, t, _ = obs.shape
    if init is None:
        init = RecurrentState.zeros(cfg.lstm_width, b)
    elif init.h.shape != (b, cfg.lstm_width) or init.c.shape != (b, cfg.lstm_width):
        raise ConfigError(f"initial state must be ({b}, {cfg.lstm_width})")
    if cache is not None:
        cache.batch, cache.steps, cache.obs = b, t, obs

    enc = encode(params, obs.reshape(b * t, -1), cache).reshape(b, t, -1)
    hw = cfg.lstm_width
    # input projection for all steps at once; recurrence stays sequential
    zx = enc @ params["lstm.Wx"] + params["lstm.b"]
    Wh = params["lstm.Wh"]
    h, c = init.h, init.c
    hs = np.empty((b, t, hw))
    for s in range(t):
        z = zx[:, s] + h @ Wh
        i = sigmoid(z[:, :hw])
        f = sigmoid(z[:, hw:2 * hw])
        g = np.tanh(z[:, 2 * hw:3 * hw])
        o = sigmoid(z[:, 3 * hw:])
        c_new = f * c + i * g
        if cache is not None:
            cache.h_prev.append(h)
            cache.c_prev.append(c)
            cache.gates.append((i, f, g, o))
            cache.c_seq.append(c_new)
        c = c_new
        h = o * np.tanh(c)
        hs[:, s] = h
    _check(hs, "lstm")
    if cache is not None:
        cache.lstm_x = enc
        cache.h_seq = hs
    value = hs @ params["value.W"] + params["value.b"]
    adv = hs @ params["adv.W"] + params["adv.b"]
    q = _check(dueling_combine(value, adv), "dueling heads")
    return q, RecurrentState(h, c)


def forward_trace(params: ParamSet, obs_trace: np.ndarray, init: RecurrentState | None = None):
    """Single-trace forward: ``obs_trace`` is (t, obs...) and ``init`` holds unbatched vectors."""
    obs_trace = np.asarray(obs_trace, dtype=np.float64)
    batched_init = None
    if init is not None:
        batched_init = RecurrentState(init.h[None, :], init.c[None, :])
    q, final = forward(params, obs_trace[None], batched_init)
    return q[0], RecurrentState(final.h[0], final.c[0])


def masked_loss(q_pred: np.ndarray, targets: np.ndarray, n_err: int) -> float:
    """Mean over traces of sum_{i > n_err} (y_i - q_i)^2 / t, with 1-based step index i."""
    q_pred = np.atleast_2d(np.asarray(q_pred, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if q_pred.shape != targets.shape:
        raise ConfigError("q_pred and targets must have the same shape")
    resid = _masked_residual(q_pred, targets, n_err)
    t = q_pred.shape[1]
    return float(np.mean(np.sum(resid * resid, axis=1) / t))


def _masked_residual(q_pred: np.ndarray, targets: np.ndarray, n_err: int) -> np.ndarray:
    t = q_pred.shape[1]
    if not 0 <= n_err < t:
        raise ConfigError(f"n_err must satisfy 0 <= n_err < t (got n_err={n_err}, t={t})")
    live = np.arange(t) >= n_err
    # np.where, not multiplication: masked entries must be exactly zero whatever the target holds
    return np.where(live[None, :], q_pred - targets, 0.0)


def backward(params: ParamSet, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray,
             n_err: int, init: RecurrentState | None = None):
    """Masked loss and its exact gradient w.r.t. every parameter (full-trace BPTT).

    Returns ``(loss, grads)`` where ``grads`` is a ParamSet of the same layout.
    """
    cfg = params.config
    cache = ForwardCache(0, 0, np.empty(0))
    q, _ = forward(params, obs, init, cache)
    b, t = cache.batch, cache.steps
    actions = np.asarray(actions, dtype=np.int64).reshape(b, t)
    targets = np.asarray(targets, dtype=np.float64).reshape(b, t)
    q_taken = np.take_along_axis(q, actions[..., None], axis=2)[..., 0]
    resid = _masked_residual(q_taken, targets, n_err)
    loss = float(np.mean(np.sum(resid * resid, axis=1) / t))

    grads = ParamSet.zeros_like(params)
    dq_taken = 2.0 * resid / (t * b)
    dq = np.zeros_like(q)
    np.put_along_axis(dq, actions[..., None], dq_taken[..., None], axis=2)

    # dueling heads: dV = sum_a dQ, dA = dQ - mean_a dQ
    dv = dq.sum(axis=2, keepdims=True)
    da = dq - dq.mean(axis=2, keepdims=True)
    hs = cache.h_seq.reshape(b * t, -1)
    grads["value.W"] = hs.T @ dv.reshape(b * t, 1)
    grads["value.b"] = dv.reshape(b * t, 1).sum(axis=0)
    grads["adv.W"] = hs.T @ da.reshape(b * t, -1)
    grads["adv.b"] = da.reshape(b * t, -1).sum(axis=0)
    dh_heads = dv @ params["value.W"].T + da @ params["adv.W"].T  # b, t, H

    hw = cfg.lstm_width
    Wh = params["lstm.Wh"]
    dz_all = np.empty((b, t, 4 * hw))
    dh_next = np.zeros((b, hw))
    dc_next = np.zeros((b, hw))
    for s in reversed(range(t)):
        i, f, g, o = cache.gates[s]
        tc = np.tanh(cache.c_seq[s])
        dh = dh_heads[:, s] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_all[:, s]
        dz[:, :hw] = dc * g * i * (1.0 - i)
        dz[:, hw:2 * hw] = dc * cache.c_prev[s] * f * (1.0 - f)
        dz[:, 2 * hw:3 * hw] = dc * i * (1.0 - g * g)
        dz[:, 3 * hw:] = do * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ Wh.T
    h_prev = np.stack(cache.h_prev, axis=1).reshape(b * t, hw)
    dz_flat = dz_all.reshape(b * t, -1)
    x_flat = cache.lstm_x.reshape(b * t, -1)
    grads["lstm.Wx"] = x_flat.T @ dz_flat
    grads["lstm.Wh"] = h_prev.T @ dz_flat
    grads["lstm.b"] = dz_flat.sum(axis=0)
    dx = dz_flat @ params["lstm.Wx"].T

    for li in reversed(range(len(cfg.encoder_widths))):
        act = cfg.encoder_activations[li]
        dzl = dx * _activation_grad(cache.enc_z[li], cache.enc_a[li], act)
        grads[f"enc{li}.W"] = cache.enc_inputs[li].T @ dzl
        grads[f"enc{li}.b"] = dzl.sum(axis=0)
        dx = dzl @ params[f"enc{li}.W"].T
    if cfg.conv:
        dzc = dx.reshape(cache.conv_z.shape) * (cache.conv_z > 0)
        grads["conv.W"] = np.einsum("ncij,nijab->cab", dzc, cache.conv_patches)
        grads["conv.b"] = dzc.sum(axis=(0, 2, 3))

    for name, g_arr in grads.items():
        _check(g_arr, f"gradient of {name}")
    return loss, grads

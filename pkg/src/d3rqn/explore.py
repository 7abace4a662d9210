"""Exploration strategies: epsilon-greedy family, Boltzmann, Max-Boltzmann and adaptive epsilon.

Every strategy exposes the same small interface (``select`` plus the
``on_step`` / ``on_update`` / ``on_return`` hooks) so the agent can stay
agnostic about which one is active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from d3rqn.errors import ConfigError

KINDS = ("constant", "decreasing", "vdbe", "bmc", "softmax", "mbe", "vdbe_softmax")


@dataclass
class ActionChoice:
    action: int
    exploring: bool
    probabilities: np.ndarray | None = None


def greedy_action(q: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(q))


def softmax_probs(q: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = (np.asarray(q, dtype=np.float64) - np.max(q)) / temperature
    e = np.exp(z)
    return e / e.sum()


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(probs) - 1)


def select_eps_greedy(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> ActionChoice:
    n = len(q)
    best = greedy_action(q)
    probs = np.full(n, epsilon / n)
    probs[best] += 1.0 - epsilon
    if rng.random() < epsilon:
        return ActionChoice(int(rng.integers(n)), True, probs)
    return ActionChoice(best, False, probs)


def select_softmax(q: np.ndarray, temperature: float, rng: np.random.Generator) -> ActionChoice:
    probs = softmax_probs(q, temperature)
    a = _draw(probs, rng)
    return ActionChoice(a, a != greedy_action(q), probs)


def select_mbe(q: np.ndarray, epsilon: float, temperature: float, rng: np.random.Generator) -> ActionChoice:
    """Greedy with probability 1 - epsilon, otherwise a Boltzmann draw."""
    best = greedy_action(q)
    soft = softmax_probs(q, temperature)
    probs = epsilon * soft
    probs[best] += 1.0 - epsilon
    if rng.random() < epsilon:
        return ActionChoice(_draw(soft, rng), True, probs)
    return ActionChoice(best, False, probs)


@dataclass(frozen=True)
class DecreasingSchedule:
    """Two-slope linear epsilon schedule with a full-exploration prefix."""

    eps_start: float = 1.0
    eps_last: float = 0.1
    eps_end: float = 0.01
    n_start: int = 50_000
    eps_ann: int = 400_000
    n_max: int = 1_000_000

    def __post_init__(self):
        if not (0 <= self.n_start and self.eps_ann > 0 and self.n_start + self.eps_ann < self.n_max):
            raise ConfigError("decreasing schedule needs 0 <= n_start, eps_ann > 0, n_start + eps_ann < n_max")
        if not 0.0 <= self.eps_end <= self.eps_last <= self.eps_start <= 1.0:
            raise ConfigError("decreasing schedule needs 0 <= eps_end <= eps_last <= eps_start <= 1")

    @property
    def pi1(self) -> float:
        return -(self.eps_start - self.eps_last) / self.eps_ann

    @property
    def pi0(self) -> float:
        return self.eps_start - self.pi1 * self.n_start

    @property
    def delta1(self) -> float:
        return -(self.eps_last - self.eps_end) / (self.n_max - self.eps_ann - self.n_start)

    @property
    def delta0(self) -> float:
        return self.eps_end - self.delta1 * self.n_max


def eps_decreasing(step: int, sched: DecreasingSchedule) -> float:
    if step <= sched.n_start:
        return 1.0
    if step > sched.n_max:
        return sched.eps_end
    if step > sched.n_start + sched.eps_ann:
        return sched.delta0 + sched.delta1 * step
    return sched.pi0 + sched.pi1 * step


def vdbe_f(delta: float, sensitivity: float) -> float:
    """(1 - e^{-|d|/nu}) / (1 + e^{-|d|/nu}), in [0, 1)."""
    x = math.exp(-abs(delta) / sensitivity)
    return (1.0 - x) / (1.0 + x)


def vdbe_update(epsilon: float, delta: float, lam: float, sensitivity: float) -> float:
    if not 0.0 < lam < 1.0 or sensitivity <= 0:
        raise ConfigError("VDBE needs lambda in (0, 1) and sensitivity > 0")
    return lam * vdbe_f(delta, sensitivity) + (1.0 - lam) * epsilon


def delta_err(q_after: np.ndarray, q_before: np.ndarray, a_star: int) -> float:
    return float(q_after[a_star] - q_before[a_star])


def student_t_logpdf(x: float, loc: float, precision: float, dof: float) -> float:
    if precision <= 0 or dof <= 0:
        raise ConfigError("Student-t needs positive precision and degrees of freedom")
    return (math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2)
            + 0.5 * math.log(precision / (math.pi * dof))
            - (dof + 1) / 2 * math.log1p(precision * (x - loc) ** 2 / dof))


def student_t_pdf(x: float, loc: float, precision: float, dof: float) -> float:
    """Location/precision parameterized Student-t density."""
    return math.exp(student_t_logpdf(x, loc, precision, dof))


@dataclass
class BMCState:
    """Beta posterior over epsilon plus the Normal-Gamma statistics of observed returns."""

    alpha: float = 25.0
    beta: float = 25.0
    a0: float = 250.0
    b0: float = 250.0
    mu0: float = 0.0
    tau0: float = 1.0
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    skipped: int = 0

    @property
    def epsilon(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    @property
    def a_t(self) -> float:
        return self.a0 + self.count / 2.0

    @property
    def b_t(self) -> float:
        n = self.count
        if n == 0:
            return self.b0
        shrink = self.tau0 / (self.tau0 + n) * (self.mean - self.mu0) ** 2
        return self.b0 + n / 2.0 * (self.variance + shrink)


def bmc_evidence(state: BMCState, model_return: float, observed: float) -> float:
    return student_t_pdf(observed, model_return, state.a_t / state.b_t, 2.0 * state.a_t)


def bmc_observe(state: BMCState, greedy_return: float, uniform_return: float, observed: float) -> BMCState:
    """One Bayesian model-combination step; mutates and returns ``state``.

    Evidence uses the return statistics gathered *before* this observation,
    then the observation is folded into the running mean/variance.
    """
    prec, dof = state.a_t / state.b_t, 2.0 * state.a_t
    log_q = student_t_logpdf(observed, greedy_return, prec, dof)
    log_u = student_t_logpdf(observed, uniform_return, prec, dof)
    # moment matching is scale-free in the evidences, so normalize in log space
    top = max(log_q, log_u)
    e_q, e_u = math.exp(log_q - top), math.exp(log_u - top)
    a, b = state.alpha, state.beta
    s = a + b
    denom = e_u * a + e_q * b
    m = a / (s + 1) * (e_u * (a + 1) + e_q * b) / denom
    v = a / (s + 1) * (a + 1) / (s + 2) * (e_u * (a + 2) + e_q * b) / denom
    gap = v - m * m
    r = (m - v) / gap if gap > 1e-12 else -1.0
    if gap > 1e-12 and r > 0 and 0 < m < 1:
        state.alpha = m * r
        state.beta = (1.0 - m) * r
    else:
        state.skipped += 1
    state.count += 1
    d = observed - state.mean
    state.mean += d / state.count
    state.m2 += d * (observed - state.mean)
    return state


@dataclass
class StrategyParams:
    epsilon: float = 0.05
    temperature: float = 0.1
    eps_start: float = 1.0
    eps_last: float = 0.1
    eps_end: float = 0.01
    n_start: int = 50_000
    eps_ann: int = 400_000
    n_max: int = 1_000_000
    vdbe_lambda: float = 0.2
    vdbe_sensitivity: float = 1.0
    vdbe_initial: float = 1.0
    bmc_alpha0: float = 25.0
    bmc_beta0: float = 25.0
    bmc_a0: float = 250.0
    bmc_b0: float = 250.0
    bmc_mu0: float = 0.0
    bmc_tau0: float = 1.0

    def validate(self) -> None:
        for name in ("epsilon", "vdbe_initial"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"strategy.{name} must lie in [0, 1]")
        if self.temperature <= 0:
            raise ConfigError("strategy.temperature must be positive")
        if not 0.0 < self.vdbe_lambda < 1.0:
            raise ConfigError("strategy.vdbe_lambda must lie in (0, 1)")
        if self.vdbe_sensitivity <= 0:
            raise ConfigError("strategy.vdbe_sensitivity must be positive")
        for name in ("bmc_alpha0", "bmc_beta0", "bmc_a0", "bmc_b0", "bmc_tau0"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"strategy.{name} must be positive")
        self.schedule()

    def schedule(self) -> DecreasingSchedule:
        return DecreasingSchedule(self.eps_start, self.eps_last, self.eps_end,
                                  self.n_start, self.eps_ann, self.n_max)


class Strategy:
    kind = ""
    uses_epsilon = True

    def __init__(self, params: StrategyParams):
        self.params = params
        self.epsilon = params.epsilon

    def select(self, q: np.ndarray, rng: np.random.Generator) -> ActionChoice:
        return select_eps_greedy(q, self.epsilon, rng)

    def on_step(self, step: int) -> None:
        pass

    def on_update(self, delta: float) -> None:
        pass

    def on_return(self, greedy_return: float, uniform_return: float, observed: float) -> None:
        pass

    @property
    def wants_delta(self) -> bool:
        return False

    @property
    def wants_returns(self) -> bool:
        return False


class ConstantEpsilon(Strategy):
    kind = "constant"


class DecreasingEpsilon(Strategy):
    kind = "decreasing"

    def __init__(self, params):
        super().__init__(params)
        self.sched = params.schedule()
        self.epsilon = eps_decreasing(0, self.sched)

    def on_step(self, step):
        self.epsilon = eps_decreasing(step, self.sched)


class VDBE(Strategy):
    kind = "vdbe"

    def __init__(self, params):
        super().__init__(params)
        self.epsilon = params.vdbe_initial

    @property
    def wants_delta(self):
        return True

    def on_update(self, delta):
        self.epsilon = vdbe_update(self.epsilon, delta, self.params.vdbe_lambda, self.params.vdbe_sensitivity)


class BMC(Strategy):
    kind = "bmc"

    def __init__(self, params):
        super().__init__(params)
        self.state = BMCState(params.bmc_alpha0, params.bmc_beta0, params.bmc_a0, params.bmc_b0,
                              params.bmc_mu0, params.bmc_tau0)
        self.epsilon = self.state.epsilon

    @property
    def wants_returns(self):
        return True

    def on_return(self, greedy_return, uniform_return, observed):
        bmc_observe(self.state, greedy_return, uniform_return, observed)
        self.epsilon = self.state.epsilon


class Softmax(Strategy):
    kind = "softmax"
    uses_epsilon = False

    def __init__(self, params):
        super().__init__(params)
        self.epsilon = float("nan")

    def select(self, q, rng):
        return select_softmax(q, self.params.temperature, rng)


class MaxBoltzmann(Strategy):
    kind = "mbe"

    def select(self, q, rng):
        return select_mbe(q, self.epsilon, self.params.temperature, rng)


class VDBESoftmax(VDBE):
    kind = "vdbe_softmax"

    def select(self, q, rng):
        return select_mbe(q, self.epsilon, self.params.temperature, rng)


_REGISTRY = {cls.kind: cls for cls in (ConstantEpsilon, DecreasingEpsilon, VDBE, BMC, Softmax,
                                       MaxBoltzmann, VDBESoftmax)}


def make_strategy(kind: str, params: StrategyParams | None = None) -> Strategy:
    params = params or StrategyParams()
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise ConfigError(f"unknown strategy kind {kind!r}; expected one of {KINDS}") from None
    params.validate()
    return cls(params)


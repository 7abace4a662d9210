import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from d3rqn.errors import ConfigError
from d3rqn.explore import (
    KINDS, BMCState, DecreasingSchedule, StrategyParams, bmc_observe, delta_err, eps_decreasing,
    greedy_action, make_strategy, select_eps_greedy, select_mbe, select_softmax, softmax_probs,
    student_t_pdf, vdbe_f, vdbe_update,
)

TABLE2 = DecreasingSchedule(1.0, 0.1, 0.01, 50_000, 400_000, 1_000_000)
q_vectors = st.lists(st.floats(-20, 20), min_size=2, max_size=7).map(np.array)


def counts(fn, n, k=5, seed=0):
    rng = np.random.default_rng(seed)
    return np.bincount([fn(rng) for _ in range(n)], minlength=k)


# epsilon-greedy ----------------------------------------------------------------

def test_eps_zero_always_greedy():
    q = np.array([0.1, 0.7, 0.7, -1.0, 0.0])
    c = counts(lambda r: select_eps_greedy(q, 0.0, r).action, 500)
    assert c[1] == 500


def test_eps_one_uniform():
    c = counts(lambda r: select_eps_greedy(np.arange(5.0), 1.0, r).action, 10_000)
    assert np.all(np.abs(c / 10_000 - 0.2) <= 0.02)


def test_eps_small_greedy_frequency():
    q = np.array([0.0, 0.0, 3.0, 0.0, 0.0])
    c = counts(lambda r: select_eps_greedy(q, 0.05, r).action, 10_000, seed=1)
    assert abs(c[2] / 10_000 - (1 - 0.05 + 0.05 / 5)) <= 0.01


def test_ties_go_to_lowest_index():
    assert greedy_action(np.array([1.0, 3.0, 3.0, 3.0])) == 1


# softmax ---------------------------------------------------------------------------

def test_softmax_equal_q_uniform():
    assert np.allclose(softmax_probs(np.full(5, 0.3), 0.1), 0.2, atol=1e-15)


def test_softmax_two_action_value():
    p = softmax_probs(np.array([1.0, 0.0]), 0.1)
    assert p[0] == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-15)
    assert p[0] == pytest.approx(0.9999546, abs=1e-7)


def test_softmax_large_q_no_overflow():
    p = softmax_probs(np.array([1e4, 0.0, -1e4]), 0.1)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


@pytest.mark.parametrize("kappa", [0.0, -1.0])
def test_softmax_rejects_temperature(kappa):
    with pytest.raises(ConfigError):
        select_softmax(np.zeros(5), kappa, np.random.default_rng(0))


def test_softmax_chi_square():
    q = np.array([0.30, 0.25, 0.10, 0.0, 0.28])
    p = softmax_probs(q, 0.1)
    c = counts(lambda r: select_softmax(q, 0.1, r).action, 100_000, seed=2)
    chi2 = np.sum((c - 100_000 * p) ** 2 / (100_000 * p))
    assert chi2 < stats.chi2.ppf(0.99, df=4)


@settings(max_examples=80, deadline=None)
@given(q_vectors, st.floats(-1e3, 1e3), st.floats(0.01, 10))
def test_shift_invariance(q, c, kappa):
    assert greedy_action(q + c) == greedy_action(q) or np.isclose((q + c)[greedy_action(q + c)], (q + c).max())
    assert np.allclose(softmax_probs(q, kappa), softmax_probs(q + c, kappa), atol=1e-9)


@settings(max_examples=80, deadline=None)
@given(q_vectors, st.floats(0, 1), st.floats(0.01, 10))
def test_reported_probabilities_sum_to_one(q, eps, kappa):
    rng = np.random.default_rng(0)
    for choice in (select_eps_greedy(q, eps, rng), select_softmax(q, kappa, rng), select_mbe(q, eps, kappa, rng)):
        assert abs(choice.probabilities.sum() - 1.0) <= 1e-12
        assert 0 <= choice.action < len(q)


# MBE -------------------------------------------------------------------------------

def test_mbe_extremes():
    q = np.array([0.2, 0.1, 0.5, 0.4, 0.0])
    assert counts(lambda r: select_mbe(q, 0.0, 0.1, r).action, 300)[2] == 300
    a = counts(lambda r: select_mbe(q, 1.0, 0.1, r).action, 20_000, seed=3) / 20_000
    assert np.allclose(a, softmax_probs(q, 0.1), atol=0.015)


def test_mbe_non_greedy_closed_form():
    q = np.array([1.0, 0, 0, 0, 0])
    soft0 = 1 / (1 + 4 * math.exp(-10))
    expected = 0.05 * (1 - soft0)
    freq = 1 - counts(lambda r: select_mbe(q, 0.05, 0.1, r).action, 10_000, seed=4)[0] / 10_000
    assert abs(freq - expected) <= 0.01
    assert select_mbe(q, 0.05, 0.1, np.random.default_rng(0)).probabilities[0] == pytest.approx(1 - expected, abs=1e-15)


# decreasing schedule ------------------------------------------------------------------

@pytest.mark.parametrize("step,eps", [(0, 1.0), (50_000, 1.0), (250_000, 0.55), (450_000, 0.1), (1_000_000, 0.01)])
def test_schedule_values(step, eps):
    assert abs(eps_decreasing(step, TABLE2) - eps) <= 1e-12


def test_schedule_coefficients():
    assert TABLE2.pi1 == pytest.approx(-0.9 / 400_000, abs=1e-18)
    assert TABLE2.pi0 == pytest.approx(1 + 0.9 * 50_000 / 400_000, abs=1e-15)
    assert TABLE2.delta1 == pytest.approx(-0.09 / 550_000, abs=1e-18)
    assert TABLE2.delta0 == pytest.approx(0.01 + 0.09 * 1_000_000 / 550_000, abs=1e-15)


def test_schedule_continuous_and_monotone():
    steps = np.arange(0, 1_100_001, 250)
    eps = np.array([eps_decreasing(int(s), TABLE2) for s in steps])
    assert np.all(np.diff(eps) <= 1e-15)
    assert np.max(np.abs(np.diff(eps))) <= 0.9 / 400_000 * 250 + 1e-12
    for b in (50_000, 450_000, 1_000_000):
        assert abs(eps_decreasing(b, TABLE2) - eps_decreasing(b + 1, TABLE2)) < 1e-5
    assert eps_decreasing(2_000_000, TABLE2) == 0.01


@pytest.mark.parametrize("kw", [dict(n_start=700_000), dict(eps_ann=0), dict(eps_last=2.0)])
def test_schedule_rejects_bad_breakpoints(kw):
    base = dict(eps_start=1.0, eps_last=0.1, eps_end=0.01, n_start=50_000, eps_ann=400_000, n_max=1_000_000)
    base.update(kw)
    with pytest.raises(ConfigError):
        DecreasingSchedule(**base)


# VDBE --------------------------------------------------------------------------------

def test_vdbe_closed_form():
    f = (1 - math.exp(-1)) / (1 + math.exp(-1))
    assert vdbe_f(1.0, 1.0) == pytest.approx(0.46211715726000974, abs=1e-15)
    assert vdbe_f(1.0, 1.0) == pytest.approx(f, abs=1e-15)
    assert abs(vdbe_update(0.5, 1.0, 0.2, 1.0) - 0.49242343145200196) < 1e-9


def test_vdbe_zero_delta_geometric_decay():
    eps = 0.7
    for k in range(1, 101):
        eps = vdbe_update(eps, 0.0, 0.2, 1.0)
        assert eps == pytest.approx(0.7 * 0.8 ** k, rel=1e-12)


def test_vdbe_saturation_and_sign():
    assert vdbe_update(0.3, 1e6, 0.2, 1.0) == pytest.approx(0.2 + 0.8 * 0.3, abs=1e-15)
    assert vdbe_update(0.3, -2.0, 0.2, 1.0) == vdbe_update(0.3, 2.0, 0.2, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(-1e6, 1e6), st.floats(0.01, 0.99), st.floats(0.01, 100))
def test_vdbe_stays_in_unit_interval(eps, delta, lam, nu):
    assert 0.0 <= vdbe_update(eps, delta, lam, nu) <= 1.0


def test_delta_err():
    before, after = np.array([1.2, 9.0, -3.0]), np.array([1.5, -4.0, 7.0])
    assert delta_err(after, before, 0) == pytest.approx(0.3)
    assert delta_err(before, before, 1) == 0.0


def test_vdbe_softmax_decays_to_greedy_mix():
    s = make_strategy("vdbe_softmax")
    for _ in range(200):
        s.on_update(0.0)
    assert s.epsilon == pytest.approx(0.8 ** 200)
    q = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    assert counts(lambda r: s.select(q, r).action, 500)[1] == 500


# Student-t and BMC ------------------------------------------------------------------------

def test_student_t_cauchy_special_case():
    assert student_t_pdf(0.0, 0.0, 1.0, 1.0) == pytest.approx(1 / math.pi, abs=1e-15)


@pytest.mark.parametrize("loc,prec,dof", [(0.0, 1.0, 3.0), (1.5, 0.2, 7.0), (-2.0, 4.0, 500.0)])
def test_student_t_normalized(loc, prec, dof):
    total, _ = integrate.quad(lambda x: student_t_pdf(x, loc, prec, dof), -np.inf, np.inf, epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("x", np.linspace(-3.0, 4.0, 10))
def test_student_t_is_normal_gamma_marginal(x):
    # integrate Normal(x; loc, 1/tau) * Gamma(tau; shape a, rate b) over tau
    loc, a, b = 0.4, 3.5, 2.0

    def integrand(tau):
        return stats.norm.pdf(x, loc, 1 / math.sqrt(tau)) * stats.gamma.pdf(tau, a, scale=1 / b)

    marginal, _ = integrate.quad(integrand, 0, np.inf, epsabs=1e-13, limit=200)
    assert student_t_pdf(x, loc, a / b, 2 * a) == pytest.approx(marginal, abs=1e-6)


def test_bmc_prior_epsilon_half():
    assert make_strategy("bmc").epsilon == 0.5


def test_bmc_shape_parameter_exact():
    state = BMCState()
    rng = np.random.default_rng(5)
    for t in range(1, 301):
        bmc_observe(state, *rng.normal(size=3))
        assert state.a_t == 250 + t / 2


def test_bmc_scale_parameter_matches_batch_formula():
    state = BMCState(mu0=0.3, tau0=2.0)
    data = np.random.default_rng(6).normal(1.0, 0.5, size=40)
    for x in data:
        bmc_observe(state, 0.0, 0.0, x)
    n, mean = len(data), data.mean()
    b_t = 250 + 0.5 * np.sum((data - mean) ** 2) + 2.0 * n * (mean - 0.3) ** 2 / (2 * (2.0 + n))
    assert state.b_t == pytest.approx(b_t, rel=1e-12)


def test_bmc_equal_evidence_leaves_beta_unchanged():
    state = BMCState()
    for x in np.linspace(-1, 1, 25):
        bmc_observe(state, 0.7, 0.7, x)
        assert abs(state.alpha - 25) < 1e-9 and abs(state.beta - 25) < 1e-9


@pytest.mark.parametrize("alpha,beta,gq,gu,obs", [(25, 25, 1.0, 0.0, 0.9), (3, 7, -0.5, 0.4, 0.3), (40, 2, 0.2, 0.1, 2.0)])
def test_bmc_moment_matching_matches_quadrature(alpha, beta, gq, gu, obs):
    state = BMCState(alpha=alpha, beta=beta)
    e_q = student_t_pdf(obs, gq, state.a_t / state.b_t, 2 * state.a_t)
    e_u = student_t_pdf(obs, gu, state.a_t / state.b_t, 2 * state.a_t)

    # mixture posterior over epsilon: (eps * e_u + (1 - eps) * e_q) * Beta(eps; alpha, beta)
    def post(e, k):
        return e ** k * (e * e_u + (1 - e) * e_q) * stats.beta.pdf(e, alpha, beta)

    z = integrate.quad(post, 0, 1, args=(0,), epsabs=1e-14)[0]
    m = integrate.quad(post, 0, 1, args=(1,), epsabs=1e-14)[0] / z
    v = integrate.quad(post, 0, 1, args=(2,), epsabs=1e-14)[0] / z
    r = (m - v) / (v - m * m)
    bmc_observe(state, gq, gu, obs)
    assert state.alpha == pytest.approx(m * r, rel=1e-7)
    assert state.beta == pytest.approx((1 - m) * r, rel=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=60))
def test_bmc_invariants(observations):
    s = make_strategy("bmc")
    for gq, gu, y in observations:
        s.on_return(gq, gu, y)
        st_ = s.state
        assert st_.alpha > 0 and st_.beta > 0 and st_.a_t > 0 and st_.b_t > 0
        assert s.epsilon == st_.alpha / (st_.alpha + st_.beta)
        assert 0.0 <= s.epsilon <= 1.0


def test_bmc_greedy_evidence_lowers_epsilon():
    s = make_strategy("bmc")
    trail = [s.epsilon]
    for _ in range(200):
        s.on_return(1.0, 0.0, 1.0)
        trail.append(s.epsilon)
    assert np.all(np.diff(trail) < 0)
    assert trail[-1] < 0.25


# dispatch ------------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_all_kinds_constructible_from_defaults(kind):
    s = make_strategy(kind, StrategyParams())
    c = s.select(np.array([0.0, 1.0, 0.0, 0.0, 0.0]), np.random.default_rng(0))
    assert 0 <= c.action < 5
    if s.uses_epsilon:
        assert 0.0 <= s.epsilon <= 1.0


def test_softmax_never_consults_epsilon():
    s = make_strategy("softmax")
    s.epsilon = 123.0
    q = np.array([0.0, 0.05, 0.0, 0.0, 0.0])
    a = counts(lambda r: s.select(q, r).action, 2000, seed=7) / 2000
    assert np.allclose(a, softmax_probs(q, 0.1), atol=0.04)


def test_table2_defaults():
    p = StrategyParams()
    assert (p.epsilon, p.vdbe_sensitivity, p.vdbe_lambda, p.temperature) == (0.05, 1.0, 0.2, 0.1)
    assert (p.bmc_alpha0, p.bmc_beta0, p.bmc_a0, p.bmc_b0, p.bmc_mu0, p.bmc_tau0) == (25, 25, 250, 250, 0, 1)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        make_strategy("thompson")


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.lists(st.floats(-3, 3), min_size=1, max_size=30))
def test_epsilon_always_in_unit_interval(kind, signals):
    s = make_strategy(kind)
    for k, x in enumerate(signals, 1):
        s.on_step(k * 10_000)
        s.on_update(x)
        s.on_return(x, -x, x / 2)
        if s.uses_epsilon:
            assert 0.0 <= s.epsilon <= 1.0

"""Adaptive test: quantile, correlation, cell programs and decisions."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal, norm

from aberrant import adaptive
from aberrant.adaptive import (AdaptiveProblem, AdaptiveEngine, NEG_SENTINEL, adaptive_alpha_star,
                               adaptive_test, adaptive_test_full_matching, bonferroni_test,
                               joint_quantile, minimax_feasibility, minimize_correlation,
                               orthant, worst_case_expectation)
from aberrant.core import AberrantSpec, MatchedSample, ValidationError, aberrant_indicators, aberrant_ranks
from aberrant.simlab import GeneratorSpec, generate

from conftest import random_sample


# ---------------------------------------------------------------------------
# oracles on pair-matched instances, where each stratum has one free probability

def pair_instance(seed, n_pairs):
    rng = np.random.default_rng(seed)
    q1 = rng.integers(0, 4, 2 * n_pairs).astype(float)
    q2 = rng.integers(0, 4, 2 * n_pairs).astype(float)
    treated = np.zeros(2 * n_pairs, dtype=bool)
    treated[2 * np.arange(n_pairs) + rng.integers(0, 2, n_pairs)] = True
    sample = MatchedSample(np.arange(0, 2 * n_pairs + 1, 2), treated, np.zeros(2 * n_pairs))
    return sample, q1, q2


def pair_moments(P, q, t):
    """Means and variances for a batch of first-unit probabilities P (rows)."""
    a, b = q[0::2], q[1::2]
    mu = P @ a + (1 - P) @ b
    V = (P * (1 - P)) @ ((a - b) ** 2)
    return t - mu, V


def cell_objective(P, q1, q2, t, Q):
    out = np.full(P.shape[0], -np.inf)
    for q, tk in ((q1, t[0]), (q2, t[1])):
        d, V = pair_moments(P, q, tk)
        val = d * d - Q * Q * V
        out = np.where(d >= 0, np.maximum(out, val), out)
    return np.where(np.isneginf(out), NEG_SENTINEL, out)


def zoom_minimize(f, lo, hi, n=41, rounds=8):
    lo, hi = np.array(lo, float), np.array(hi, float)
    best_x, best = None, math.inf
    for _ in range(rounds):
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, lo.size)
        v = f(P)
        k = int(np.argmin(v))
        if v[k] < best:
            best, best_x = float(v[k]), P[k]
        step = (hi - lo) / (n - 1)
        lo, hi = np.maximum(lo, best_x - 2 * step), np.minimum(hi, best_x + 2 * step)
    return best, best_x


@settings(max_examples=200)
@given(st.integers(0, 10**6), st.sampled_from([2, 3]), st.floats(1.2, 5.0), st.floats(1.0, 2.5))
def test_cell_minimax_matches_grid_search(seed, n_pairs, gamma, Q):
    sample, q1, q2 = pair_instance(seed, n_pairs)
    if np.all(q1[0::2] == q1[1::2]) or np.all(q2[0::2] == q2[1::2]):
        return
    t = np.array([q1[sample.treated].sum(), q2[sample.treated].sum()])
    res = minimax_feasibility(AdaptiveProblem(sample, q1, q2, gamma), Q)
    lo, hi = 1 / (1 + gamma), gamma / (1 + gamma)
    grid, _ = zoom_minimize(lambda P: cell_objective(P, q1, q2, t, Q), [lo] * n_pairs, [hi] * n_pairs)
    if res.y_star == NEG_SENTINEL:
        # the program found a law under which both statistics fall below their means
        d1, _ = pair_moments(res.p_star[0::2][None, :], q1, t[0])
        d2, _ = pair_moments(res.p_star[0::2][None, :], q2, t[1])
        assert d1[0] <= 1e-9 and d2[0] <= 1e-9
        return
    assert grid != NEG_SENTINEL
    assert res.y_star <= grid + 1e-6 * max(1.0, abs(grid))
    assert res.y_star == pytest.approx(grid, abs=1e-3)


def correlation_grid(q1, q2, gamma, n_pairs):
    def rho(P):
        a1, b1, a2, b2 = q1[0::2], q1[1::2], q2[0::2], q2[1::2]
        w = P * (1 - P)
        c = w @ ((a1 - b1) * (a2 - b2))
        v1 = w @ ((a1 - b1) ** 2)
        v2 = w @ ((a2 - b2) ** 2)
        return c / np.sqrt(v1 * v2)
    lo, hi = 1 / (1 + gamma), gamma / (1 + gamma)
    return zoom_minimize(rho, [lo] * n_pairs, [hi] * n_pairs, n=31, rounds=6)[0]


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.floats(1.2, 6.0))
def test_minimum_correlation_matches_grid(seed, gamma):
    sample, q1, q2 = pair_instance(seed, 3)
    if np.any(q1[0::2] == q1[1::2]) or np.any(q2[0::2] == q2[1::2]):
        return
    r = minimize_correlation(AdaptiveProblem(sample, q1, q2, gamma))
    g = correlation_grid(q1, q2, gamma, 3)
    assert r.rho_star <= g + 1e-6
    assert r.rho_star >= g - 1e-3


# ---------------------------------------------------------------------------
# bivariate normal quantile

@given(st.floats(-0.99, 0.99), st.floats(0.001, 0.2))
def test_joint_quantile_solves_orthant_equation(rho, alpha):
    q = joint_quantile(rho, alpha)
    cdf = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]]).cdf([q, q])
    assert cdf == pytest.approx(1 - alpha, abs=1e-8)
    assert norm.ppf(1 - alpha) - 1e-12 <= q <= norm.ppf(1 - alpha / 2) + 1e-12


@pytest.mark.parametrize("alpha", [0.01, 0.05, 0.1])
def test_joint_quantile_closed_forms(alpha):
    assert joint_quantile(1.0, alpha) == pytest.approx(norm.ppf(1 - alpha), abs=1e-12)
    assert joint_quantile(0.0, alpha) == pytest.approx(norm.ppf(math.sqrt(1 - alpha)), abs=1e-9)
    assert joint_quantile(-1.0, alpha) == pytest.approx(norm.ppf(1 - alpha / 2), abs=1e-12)


def test_joint_quantile_decreases_with_correlation():
    qs = [joint_quantile(r, 0.05) for r in np.linspace(-0.9, 0.99, 12)]
    assert all(b <= a + 1e-12 for a, b in zip(qs, qs[1:]))


def test_orthant_independent_case():
    assert orthant(0.7, 0.0) == pytest.approx(norm.cdf(0.7) ** 2, abs=1e-12)


# ---------------------------------------------------------------------------
# worst-case expectation on the negatively coupled pair construction

def coupled_pairs(I):
    d = np.array([[3.0, -1.0], [-1.0, 3.0]] * (I // 2))
    q1 = np.zeros(2 * I)
    q2 = np.zeros(2 * I)
    q1[0::2], q2[0::2] = d[:, 0], d[:, 1]
    s = MatchedSample(np.arange(0, 2 * I + 1, 2), np.tile([True, False], I), q1 + np.sqrt(2) * q2)
    return s, q1, q2


@pytest.mark.parametrize("gamma", [2.0, 3.0, 5.0])
def test_worst_case_expectation_closed_form(gamma):
    s, q1, q2 = coupled_pairs(20)
    v, p = worst_case_expectation(s, q1, q2, gamma)
    assert v == pytest.approx((gamma - 1) / (gamma + 1), abs=1e-4)


# ---------------------------------------------------------------------------
# decisions

def model1_problem(seed, I=80, gamma=2.0, alpha=0.05):
    gen = GeneratorSpec.model(1, 1.0)
    s = generate(gen, I, seed=seed)
    return AdaptiveProblem(s, aberrant_indicators(s, gen.spec), aberrant_ranks(s, gen.spec), gamma, alpha)


@pytest.mark.parametrize("seed", range(12))
def test_margin_and_cell_forms_agree(seed):
    pr = model1_problem(seed)
    prep = adaptive._Prepared(pr.sample, pr.scores1, pr.scores2)
    for gamma in (1.5, 2.5, 4.0):
        for Q in (1.645, 1.9, 1.96):
            cell = adaptive._minimax(prep, gamma, Q)
            margin = adaptive.margin_minimax(prep, gamma, Q)
            if abs(cell.y_star) > 1e-6:
                assert (cell.y_star >= 0) == (margin.upper >= 0)


def test_gamma_one_uses_uniform_law():
    pr = model1_problem(1, gamma=1.0)
    v = adaptive_test(pr)
    assert v.rho_star == pytest.approx(adaptive.correlation_rho(
        adaptive.AssignmentProbabilities.uniform(pr.sample), pr.scores1, pr.scores2))
    assert v.cells == []


@pytest.mark.parametrize("seed", range(5))
def test_engine_matches_two_stage_verdict(seed):
    pr = model1_problem(seed)
    eng = AdaptiveEngine(pr.sample, pr.scores1, pr.scores2, pr.alpha)
    for g in (1.5, 2.5, 3.5, 5.0):
        assert eng.rejects(g) == adaptive_test(pr.at(gamma=g)).reject


def test_alpha_star_is_the_rejection_threshold():
    pr = model1_problem(7, I=100)
    checked = 0
    for g in (2.0, 3.0, 4.0):
        a = adaptive_alpha_star(pr.sample, pr.scores1, pr.scores2, g)
        if a.at_least_half or not 0.002 < a.value < 0.4:
            continue
        assert adaptive_test(pr.at(gamma=g, alpha=a.value * 1.05)).reject
        assert not adaptive_test(pr.at(gamma=g, alpha=a.value * 0.95)).reject
        checked += 1
    assert checked >= 1


def test_alpha_star_reports_half_for_no_evidence():
    s = MatchedSample.from_strata([[(1, 0.0), (0, 2.0), (0, 3.0)], [(1, 0.5), (0, 2.5), (0, 1.5)]] * 5)
    spec = AberrantSpec(1.0)
    a = adaptive_alpha_star(s, aberrant_indicators(s, spec), aberrant_ranks(s, spec), 1.5)
    assert a.at_least_half and a.value == 0.5


def test_full_matching_entry_points():
    rng = np.random.default_rng(9)
    s = random_sample(rng, [3, 4, 3, 2, 4] * 8, full=True)
    spec = AberrantSpec(0.5)
    pr = AdaptiveProblem(s, aberrant_indicators(s, spec), aberrant_ranks(s, spec), 1.5)
    if s.diagnostics.one_treated:
        pytest.skip("draw produced no reversed strata")
    with pytest.raises(ValidationError):
        adaptive_test(pr)
    v = adaptive_test_full_matching(pr)
    assert v.reject in (True, False)
    assert -1.0 <= v.rho_star <= 1.0


def test_full_matching_without_reversed_strata_is_plain_test():
    pr = model1_problem(3)
    a, b = adaptive_test(pr), adaptive_test_full_matching(pr)
    assert a.reject == b.reject and a.rho_star == b.rho_star


def test_degenerate_statistic_falls_back_to_the_other():
    s = MatchedSample.from_strata([[(1, 2.0), (0, 2.0)], [(1, 3.0), (0, 3.0)], [(1, 4.0), (0, 0.0)]])
    q1 = np.zeros(6)
    q2 = s.response
    v = adaptive_test(AdaptiveProblem(s, q1, q2, 1.0))
    assert v.flags["degenerate_variance"]


def test_bonferroni_uses_half_alpha():
    pr = model1_problem(2, gamma=1.0)
    d = adaptive.bonferroni_deviates(pr.sample, pr.scores1, pr.scores2, 1.0)
    assert bonferroni_test(pr) == (max(d) >= norm.ppf(0.975))


def test_problem_validation():
    pr = model1_problem(0)
    with pytest.raises(ValidationError):
        pr.at(gamma=0.5)
    with pytest.raises(ValidationError):
        pr.at(alpha=0.7)

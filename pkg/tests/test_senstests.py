"""Worst-case p-values against exhaustive oracles."""
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from aberrant.core import AberrantSpec, MatchedSample, ValidationError, aberrant_ranks
from aberrant.senstests import (brute_force_worst_case, crossing_gamma, mh_worst_case,
                                randomization_pvalue, sensitivity_value,
                                separability_worst_case, stratum_worst_moments)

from conftest import random_sample, small_samples

gammas = st.sampled_from([1.0, 1.3, 2.0, 3.5, 7.0])


def vertex_moments(q, gamma):
    """Largest mean over all 2^n confounder vertices, then largest variance among ties."""
    best_m, best_v = -math.inf, -math.inf
    rows = []
    for u in itertools.product((0, 1), repeat=q.size):
        w = np.where(np.array(u) == 1, gamma, 1.0)
        p = w / w.sum()
        m = float(p @ q)
        rows.append((m, float(p @ (q * q)) - m * m))
        best_m = max(best_m, m)
    tol = 1e-9 * max(1.0, abs(best_m), float(np.abs(q).max()))
    best_v = max(v for m, v in rows if m >= best_m - tol)
    return best_m, best_v


@given(small_samples(), gammas)
def test_separability_moments_match_vertex_enumeration(sample, gamma):
    q = np.round(sample.response * 2) / 2
    mu, nu = stratum_worst_moments(sample, q, gamma)
    for i in range(sample.n_strata):
        lo, hi = sample.offsets[i], sample.offsets[i + 1]
        m, v = vertex_moments(q[lo:hi], gamma)
        assert mu[i] == pytest.approx(m, rel=1e-12, abs=1e-12)
        assert nu[i] == pytest.approx(v, rel=1e-9, abs=1e-12)


@given(small_samples(), gammas, st.floats(-1.0, 1.5))
def test_mh_mean_is_sum_of_bounds(sample, gamma, c):
    spec = AberrantSpec(c)
    r = mh_worst_case(sample, spec, gamma)
    ab = (sample.response >= c).astype(float)
    expect = 0.0
    for i in range(sample.n_strata):
        lo, hi = sample.offsets[i], sample.offsets[i + 1]
        a, n = ab[lo:hi].sum(), hi - lo
        expect += gamma * a / ((gamma - 1) * a + n)
        # the same bound from the vertex enumeration
        assert vertex_moments(ab[lo:hi], gamma)[0] == pytest.approx(gamma * a / ((gamma - 1) * a + n))
    assert r.worst_mean == pytest.approx(expect, rel=1e-13)


@given(small_samples(max_units=10), gammas)
def test_brute_force_dominates_randomization_pvalue(sample, gamma):
    q = aberrant_ranks(sample, AberrantSpec(0.0))
    p0 = randomization_pvalue(sample, q)
    pg = brute_force_worst_case(sample, q, gamma)
    assert pg >= p0 - 1e-12
    if gamma == 1.0:
        assert pg == pytest.approx(p0)


def test_randomization_pvalue_single_pair():
    s = MatchedSample.from_strata([[(1, 2.0), (0, 1.0)]])
    assert randomization_pvalue(s, s.response) == 0.5
    assert brute_force_worst_case(s, s.response, 3.0) == pytest.approx(0.75)


def test_mh_worst_case_known_values():
    s = MatchedSample.from_strata([[(1, 2.0), (0, 0.0), (0, 0.0)]] * 4)
    r = mh_worst_case(s, AberrantSpec(1.0), 2.0)
    p = 2.0 / (1.0 + 3.0)
    assert r.statistic_value == 4 and r.worst_mean == pytest.approx(4 * p)
    assert r.worst_variance == pytest.approx(4 * p * (1 - p))
    assert r.p_value == pytest.approx(norm.sf((4 - 2) / math.sqrt(1)))


def test_mh_refuses_full_matching():
    s = MatchedSample.from_strata([[(1, 2.0), (1, 0.0), (0, 0.0)]])
    with pytest.raises(ValidationError):
        mh_worst_case(s, AberrantSpec(1.0), 1.0)


def test_constant_response_gives_p_one():
    s = MatchedSample.from_strata([[(1, 5.0), (0, 5.0), (0, 5.0)]] * 6)
    for g in (1.0, 2.0):
        assert mh_worst_case(s, AberrantSpec(1.0), g).p_value == 1.0
        assert separability_worst_case(s, aberrant_ranks(s, AberrantSpec(1.0)), g).p_value == 1.0


def test_full_matching_reversed_stratum_equivalence():
    # one control with two treated: the statistic is the stratum total minus the control
    s = MatchedSample.from_strata([[(1, 3.0), (1, 1.0), (0, 2.0)], [(1, 4.0), (0, 0.0)]])
    q = s.response.copy()
    r = separability_worst_case(s, q, 2.0)
    assert r.statistic_value == pytest.approx(8.0)
    assert brute_force_worst_case(s, q, 2.0) >= randomization_pvalue(s, q) - 1e-12


@given(small_samples(max_units=12), st.floats(1.0, 4.0), st.floats(0.0, 1.5))
def test_worst_case_p_monotone_in_gamma(sample, g, dg):
    q = aberrant_ranks(sample, AberrantSpec(0.0))
    a = separability_worst_case(sample, q, g).p_value
    b = separability_worst_case(sample, q, g + dg).p_value
    assert b >= a - 1e-12


def test_crossing_gamma_statuses():
    assert crossing_gamma(lambda g: g < 2.345, [1, 2, 3], tol=1e-6).value == pytest.approx(2.345, abs=1e-6)
    assert crossing_gamma(lambda g: False, [1, 2]).status == "not_significant"
    assert crossing_gamma(lambda g: True, [1, 2]).status == "lower_bound"
    with pytest.raises(ValidationError):
        crossing_gamma(lambda g: True, [2, 1])


def test_sensitivity_value_brackets_alpha():
    rng = np.random.default_rng(3)
    s = random_sample(rng, [4] * 200)
    resp = s.response.copy()
    resp[s.treated] += 1.0
    s = s.with_response(resp)
    q = aberrant_ranks(s, AberrantSpec(1.0))
    sv = sensitivity_value(s, q, 0.05, [1, 2, 3, 4, 6, 8])
    assert sv.found
    lo, hi = sv.bracket
    assert separability_worst_case(s, q, lo).p_value <= 0.05 < separability_worst_case(s, q, hi).p_value


def test_exact_enumeration_budget():
    s = MatchedSample.from_strata([[(1, 1.0)] + [(0, 0.0)] * 9] * 8)
    with pytest.raises(ValidationError, match="budget"):
        randomization_pvalue(s, s.response)

"""Worst-case p-values under the Gamma sensitivity model, and exact oracles."""
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import kernels
from .core import (ValidationError, aberrant_indicators, check_scores, is_aberrant,
                   orient, statistic)

ENUMERATION_BUDGET = 10**7
BRUTE_FORCE_MAX_UNITS = 20


@dataclass(frozen=True)
class WorstCaseResult:
    statistic_value: float
    worst_mean: float
    worst_variance: float
    deviate: float
    p_value: float
    gamma: float


def _check_gamma(gamma):
    gamma = float(gamma)
    if not gamma >= 1.0 or not np.isfinite(gamma):
        raise ValidationError(f"gamma must be a finite number >= 1, got {gamma}")
    return gamma


def normal_tail(t, mean, var):
    """Upper-tail normal approximation; a zero variance gives the limiting 0/1 answer."""
    if var <= 0.0:
        if t <= mean:
            return -math.inf, 1.0
        return math.inf, 0.0
    z = (t - mean) / math.sqrt(var)
    return z, float(norm.sf(z))


def _result(t, mean, var, gamma):
    z, p = normal_tail(t, mean, var)
    return WorstCaseResult(float(t), float(mean), float(var), float(z), p, gamma)


def mh_worst_case(sample, spec, gamma):
    """Mantel-Haenszel count of aberrant treated units, worst case over the bias.

    Stratum ``i`` with ``a_i`` aberrant units out of ``n_i`` contributes an
    independent Bernoulli with success probability at most
    ``gamma a_i / ((gamma - 1) a_i + n_i)``.
    """
    gamma = _check_gamma(gamma)
    if not sample.diagnostics.one_treated:
        raise ValidationError(
            "Mantel-Haenszel bound needs one treated unit per stratum; "
            "use separability_worst_case for full matching")
    ab = is_aberrant(sample, spec)
    a = np.add.reduceat(ab.astype(np.float64), sample.offsets[:-1])
    n = sample.sizes.astype(np.float64)
    p_plus = gamma * a / ((gamma - 1.0) * a + n)
    t = float(ab[sample.treated].sum())
    return _result(t, p_plus.sum(), np.sum(p_plus * (1.0 - p_plus)), gamma)


def stratum_worst_moments(sample, scores, gamma):
    """Per-stratum largest treated-score expectation and matching variance.

    Strata with one control and several treated units are handled in their
    oriented form (see :func:`aberrant.core.orient`), so the moments refer to
    the oriented scores there.
    """
    gamma = _check_gamma(gamma)
    o = orient(sample, scores)
    return kernels.sep_moments(o.q, o.offsets, gamma)


def separability_worst_case(sample, scores, gamma):
    """Normal approximation to the worst-case p-value of a sum statistic."""
    gamma = _check_gamma(gamma)
    o = orient(sample, scores)
    mu, nu = kernels.sep_moments(o.q, o.offsets, gamma)
    return _result(o.t + o.shift, o.shift + mu.sum(), nu.sum(), gamma)


def _tail_count(values, probs, t):
    tol = 1e-9 * max(1.0, abs(t))
    return float(probs[values >= t - tol].sum())


def _convolve(vals, probs, q, p):
    v = (vals[:, None] + q[None, :]).ravel()
    w = (probs[:, None] * p[None, :]).ravel()
    u, inv = np.unique(v, return_inverse=True)
    return u, np.bincount(inv, weights=w, minlength=u.size)


def randomization_pvalue(sample, scores, mode="exact"):
    """Randomization p-value of the sum statistic with no hidden bias.

    ``exact`` enumerates every assignment (one distinguished unit per
    stratum); ``normal`` is the separability normal approximation at Gamma=1.
    """
    if mode == "normal":
        return separability_worst_case(sample, scores, 1.0).p_value
    if mode != "exact":
        raise ValidationError(f"unknown mode {mode!r}")
    o = orient(sample, scores)
    sizes = np.diff(o.offsets)
    if math.prod(int(n) for n in sizes) > ENUMERATION_BUDGET:
        raise ValidationError("exact enumeration budget exceeded")
    vals, probs = np.zeros(1), np.ones(1)
    for i in range(sizes.size):
        q = o.q[o.offsets[i]:o.offsets[i + 1]]
        vals, probs = _convolve(vals, probs, q, np.full(q.size, 1.0 / q.size))
    return min(1.0, _tail_count(vals, probs, o.t))


def _vertex_laws(n, gamma):
    """Distinct distributions of the distinguished unit over u in {0,1}^n."""
    laws = []
    for u in itertools.product((0, 1), repeat=n):
        if 0 < sum(u) < n or (sum(u) == 0 and not laws):
            w = np.where(np.array(u) == 1, gamma, 1.0)
            laws.append(w / w.sum())
    return laws


def brute_force_worst_case(sample, scores, gamma):
    """Exact worst-case tail probability, maximised over binary confounders.

    Exhaustive: every stratum-wise vertex law is combined with every other, and
    each combination's exact distribution of the statistic is built by
    convolution.  Meant as an oracle for samples with at most 20 units.
    """
    gamma = _check_gamma(gamma)
    o = orient(sample, scores)
    if o.q.size > BRUTE_FORCE_MAX_UNITS:
        raise ValidationError("brute force limited to 20 units")
    sizes = np.diff(o.offsets)
    per = [_vertex_laws(int(n), gamma) if gamma > 1.0 else [np.full(n, 1.0 / n)] for n in sizes]
    work = math.prod(len(x) for x in per) * math.prod(int(n) for n in sizes)
    if work > 50 * ENUMERATION_BUDGET:
        raise ValidationError("brute force budget exceeded")
    qs = [o.q[o.offsets[i]:o.offsets[i + 1]] for i in range(sizes.size)]
    best = 0.0

    def walk(i, vals, probs):
        nonlocal best
        if i == len(qs):
            best = max(best, _tail_count(vals, probs, o.t))
            return
        for law in per[i]:
            walk(i + 1, *_convolve(vals, probs, qs[i], law))

    walk(0, np.zeros(1), np.ones(1))
    return min(1.0, best)


# ---------------------------------------------------------------------------
# sensitivity value

@dataclass(frozen=True)
class SensitivityValue:
    value: float
    status: str  # "crossed", "not_significant" or "lower_bound"
    bracket: tuple

    @property
    def found(self):
        return self.status == "crossed"


def crossing_gamma(rejects, grid, tol=1e-3):
    """Locate the Gamma where a monotone decision switches from reject to accept.

    ``rejects(gamma)`` must be True on an initial segment of Gamma values.
    The grid is scanned for the first non-rejecting value and the switch is
    then refined by bisection to ``tol``.
    """
    grid = [float(g) for g in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("gamma grid must be strictly increasing")
    if not rejects(grid[0]):
        return SensitivityValue(grid[0], "not_significant", (grid[0], grid[0]))
    lo = grid[0]
    hi = None
    for g in grid[1:]:
        if rejects(g):
            lo = g
        else:
            hi = g
            break
    if hi is None:
        return SensitivityValue(lo, "lower_bound", (lo, math.inf))
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rejects(mid):
            lo = mid
        else:
            hi = mid
    return SensitivityValue(0.5 * (lo + hi), "crossed", (lo, hi))


def sensitivity_value(sample, scores, alpha, grid, method="separability", spec=None, tol=1e-3):
    """Gamma at which the worst-case p-value crosses ``alpha``.

    ``method`` is ``"separability"`` (any sum statistic) or ``"mh"`` (needs
    ``spec``; ``scores`` is then ignored).
    """
    if not 0.0 < alpha <= 0.5:
        raise ValidationError("alpha must lie in (0, 0.5]")
    if method == "mh":
        if spec is None:
            raise ValidationError("method 'mh' needs an AberrantSpec")
        pfun = lambda g: mh_worst_case(sample, spec, g).p_value
    elif method == "separability":
        check_scores(sample, scores)
        pfun = lambda g: separability_worst_case(sample, scores, g).p_value
    else:
        raise ValidationError(f"unknown method {method!r}")
    return crossing_gamma(lambda g: pfun(g) <= alpha, grid, tol)


__all__ = [
    "WorstCaseResult", "SensitivityValue", "statistic", "mh_worst_case",
    "separability_worst_case", "stratum_worst_moments", "randomization_pvalue",
    "brute_force_worst_case", "sensitivity_value", "crossing_gamma", "normal_tail",
    "aberrant_indicators",
]

"""Adaptive combination of two sum statistics under the Gamma sensitivity model.

The test proceeds in two stages.  First the worst-case (smallest) correlation
between the two statistics is found over the sensitivity model, which fixes a
critical value ``Q`` from the bivariate normal.  Then the null is rejected if,
for every admissible assignment law, at least one statistic's standardized
deviate reaches ``Q``.  The second stage is written as a minimisation of

    max_k  (t_k - mu_k(p))^2 - Q^2 V_k(p)

over the assignment polytope, split into four sign cells; each cell is convex
and is solved by the interior-point method in :mod:`aberrant.kernels`.  The
accept/reject decision itself uses an equivalent single convex program in
margin form (see :func:`margin_minimax`).
"""
import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.optimize import brentq, minimize
from scipy.special import ndtr
from scipy.stats import norm

from . import kernels
from .core import ValidationError, check_scores, orient
from .senstests import separability_worst_case

NEG_SENTINEL = -1e300
CELLS = ((1, 1), (1, 0), (0, 1), (0, 0))
RHO_CLAMP = 1.0 - 1e-9
DEFAULT_STARTS = 5
CELL_TOL = 1e-9
CELL_MAX_ITER = 200
GAP_ACCEPT = 1e-6
PHASE1_ITERS = 60
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# problem and probability containers

@dataclass
class AdaptiveProblem:
    sample: object
    scores1: np.ndarray
    scores2: np.ndarray
    gamma: float = 1.0
    alpha: float = 0.05

    def __post_init__(self):
        self.scores1 = check_scores(self.sample, self.scores1, "scores1")
        self.scores2 = check_scores(self.sample, self.scores2, "scores2")
        self.gamma = float(self.gamma)
        if not (self.gamma >= 1.0 and math.isfinite(self.gamma)):
            raise ValidationError("gamma must be a finite number >= 1")
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError("alpha must lie in (0, 0.5)")

    def at(self, gamma=None, alpha=None):
        return AdaptiveProblem(self.sample, self.scores1, self.scores2,
                               self.gamma if gamma is None else gamma,
                               self.alpha if alpha is None else alpha)


@dataclass
class AssignmentProbabilities:
    """Per-unit assignment probabilities of a sample, stratum by stratum.

    In a stratum with one treated unit ``p`` is the chance each unit is the
    treated one; in a stratum with one control it is the chance each unit is
    the control.
    """

    p: np.ndarray
    offsets: np.ndarray

    @classmethod
    def uniform(cls, sample):
        return cls(np.repeat(1.0 / sample.sizes, sample.sizes), sample.offsets)

    @classmethod
    def from_weights(cls, sample, w):
        w = np.asarray(w, dtype=np.float64)
        tot = np.repeat(np.add.reduceat(w, sample.offsets[:-1]), sample.sizes)
        return cls(w / tot, sample.offsets)

    def within(self, gamma, rtol=1e-9):
        """True if every stratum's probability ratio is at most gamma."""
        hi = np.maximum.reduceat(self.p, self.offsets[:-1])
        lo = np.minimum.reduceat(self.p, self.offsets[:-1])
        sums = np.add.reduceat(self.p, self.offsets[:-1])
        return bool(np.all(lo > 0) and np.all(hi <= gamma * lo * (1 + rtol))
                    and np.allclose(sums, 1.0, rtol=0, atol=1e-12))


def correlation_rho(probs, scores1, scores2):
    """Correlation of the two sum statistics under independent strata."""
    q1 = np.asarray(scores1, dtype=np.float64)
    q2 = np.asarray(scores2, dtype=np.float64)
    off = probs.offsets
    p = probs.p
    m1 = np.add.reduceat(p * q1, off[:-1])
    m2 = np.add.reduceat(p * q2, off[:-1])
    cov = np.sum(p * q1 * q2) - np.sum(m1 * m2)
    v1 = np.sum(p * q1 * q1) - np.sum(m1 * m1)
    v2 = np.sum(p * q2 * q2) - np.sum(m2 * m2)
    if v1 <= 0.0 or v2 <= 0.0:
        raise ValidationError("a statistic has zero variance (scores constant within strata)")
    return float(np.clip(cov / math.sqrt(v1 * v2), -1.0, 1.0))


# ---------------------------------------------------------------------------
# prepared arrays shared by both stages

class _Prepared:
    def __init__(self, sample, scores1, scores2):
        o1 = orient(sample, scores1)
        o2 = orient(sample, scores2)
        self.sample = sample
        self.offsets = sample.offsets
        self.sizes = sample.sizes
        self.Qm = np.ascontiguousarray(np.vstack([o1.q, o2.q]))
        self.t = np.array([o1.t, o2.t])
        self.u = np.repeat(1.0 / self.sizes, self.sizes)
        spread = [np.maximum.reduceat(q, self.offsets[:-1]) - np.minimum.reduceat(q, self.offsets[:-1])
                  for q in self.Qm]
        self.degenerate = np.array([not np.any(s > 0) for s in spread])
        self.scale = np.maximum(np.abs(self.Qm).sum(axis=1), np.abs(self.t))
        self.feas_tol = 1e-12 * max(1.0, float(self.scale.max()))

    def moments(self, p):
        mu = np.empty(2)
        V = np.empty(2)
        for k in range(2):
            ms = kernels.seg_sum(p * self.Qm[k], self.offsets)
            mu[k] = ms.sum()
            V[k] = np.sum(p * self.Qm[k] ** 2) - np.sum(ms * ms)
        return mu, V


# ---------------------------------------------------------------------------
# stage 1: smallest correlation over the sensitivity model

@dataclass
class CorrelationResult:
    rho_star: float
    weights: np.ndarray
    converged: bool
    start_values: list = field(default_factory=list)


def _rho_fun(prep):
    q1, q2, off = prep.Qm[0], prep.Qm[1], prep.offsets

    def fun(w):
        r, g = kernels.rho_grad(w, q1, q2, off)
        return r, g
    return fun


def _min_rho(prep, gamma, starts=DEFAULT_STARTS, seed=0, warm=None):
    if prep.degenerate.any():
        raise ValidationError("a statistic has zero variance (scores constant within strata)")
    N = prep.u.size
    fun = _rho_fun(prep)
    if gamma == 1.0:
        r = fun(np.ones(N))[0]
        return CorrelationResult(float(r), np.ones(N), True, [float(r)])
    inits = [np.ones(N), np.full(N, gamma), np.full(N, math.sqrt(gamma))]
    rng = np.random.default_rng(seed)
    for _ in range(max(0, starts - 3)):
        inits.append(rng.uniform(1.0, gamma, N))
    inits = inits[:max(starts, 1)]
    for w in warm or ():
        w = np.asarray(w, dtype=np.float64)
        w = w / np.repeat(np.minimum.reduceat(w, prep.offsets[:-1]), prep.sizes)
        inits.append(np.clip(w, 1.0, gamma))
    bounds = [(1.0, gamma)] * N
    best_r, best_w, ok_any = math.inf, inits[0], False
    start_values = []
    for w0 in inits:
        r0 = fun(w0)[0]
        start_values.append(float(r0))
        if r0 < best_r:
            best_r, best_w = r0, w0
        res = minimize(fun, w0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 5000, "ftol": 1e-14, "gtol": 1e-10})
        if np.isfinite(res.fun) and res.fun < best_r:
            best_r, best_w = float(res.fun), res.x
        ok_any = ok_any or bool(res.success)
    return CorrelationResult(float(np.clip(best_r, -1.0, 1.0)), best_w, ok_any, start_values)


def minimize_correlation(problem, starts=DEFAULT_STARTS, seed=0, warm=None):
    """Smallest correlation of the two statistics over the sensitivity model.

    Multi-start L-BFGS-B over box weights ``w`` in ``[1, gamma]``.  Extra
    starting weights may be passed in ``warm`` (for example the optimum found
    at a smaller gamma, which makes the result monotone along a gamma path).
    """
    res = _min_rho(_Prepared(problem.sample, problem.scores1, problem.scores2),
                   problem.gamma, starts, seed, warm)
    if not res.converged:
        warnings.warn("correlation minimisation did not converge; using best value found",
                      RuntimeWarning, stacklevel=2)
    return res


def correlation_path(problem, grid, starts=DEFAULT_STARTS, seed=0):
    """Smallest correlation along an increasing gamma grid, warm-started."""
    prep = _Prepared(problem.sample, problem.scores1, problem.scores2)
    out, warm = [], None
    for g in grid:
        res = _min_rho(prep, float(g), starts, seed, warm)
        out.append(res)
        warm = [res.weights]
    return out


# ---------------------------------------------------------------------------
# bivariate normal quantile

def orthant(h, rho):
    """P(X1 <= h, X2 <= h) for a standard bivariate normal with correlation rho."""
    if rho >= RHO_CLAMP:
        return float(norm.cdf(h))
    if rho <= -RHO_CLAMP:
        return float(max(2.0 * norm.cdf(h) - 1.0, 0.0))
    s = math.sqrt(1.0 - rho * rho)

    def f(x):
        return _INV_SQRT_2PI * math.exp(-0.5 * x * x) * ndtr((h - rho * x) / s)

    lo = min(h, -abs(h)) - 40.0
    pts = None
    if rho != 0.0 and lo < h / rho < h:
        pts = [h / rho]
    val, _ = integrate.quad(f, lo, h, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


@functools.lru_cache(maxsize=4096)
def joint_quantile(rho, alpha):
    """Common critical value Q with P(X1 <= Q, X2 <= Q) = 1 - alpha."""
    if not 0.0 < alpha < 0.5:
        raise ValidationError("alpha must lie in (0, 0.5)")
    rho = float(min(max(rho, -1.0), 1.0))
    lo = float(norm.ppf(1.0 - alpha))
    hi = float(norm.ppf(1.0 - alpha / 2.0))
    if rho >= RHO_CLAMP:
        return lo
    if rho <= -RHO_CLAMP:
        return hi
    target = 1.0 - alpha
    f_lo = orthant(lo, rho) - target
    f_hi = orthant(hi, rho) - target
    if f_lo >= 0.0:
        return lo
    if f_hi <= 0.0:
        return hi
    return float(brentq(lambda x: orthant(x, rho) - target, lo, hi, xtol=1e-13, rtol=1e-14))


# ---------------------------------------------------------------------------
# stage 2: four sign cells

@dataclass
class CellResult:
    cell: tuple
    feasible: bool
    value: float
    lower_bound: float
    status: str
    iterations: int = 0
    p: np.ndarray = None
    min_variance: float = math.nan


_STATUS = {kernels.STATUS_CONVERGED: "converged", kernels.STATUS_NEGATIVE: "negative",
           kernels.STATUS_POSITIVE: "positive", kernels.STATUS_MAXITER: "max_iter",
           kernels.STATUS_FAILED: "failed", kernels.STATUS_STALLED: "stalled"}


def _status(status, ub, lb, tol_abs):
    # a run cut short by rounding still counts when its bounds have met
    name = _STATUS[int(status)]
    if name in ("failed", "max_iter", "stalled") and ub - lb <= GAP_ACCEPT * max(tol_abs / CELL_TOL, 1.0):
        return "converged"
    return name


def _interior_start(prep, gamma, p_lp, margin, sgn):
    # mix the phase-one point toward uniform while keeping every sign margin
    # at least half of the phase-one margin
    mp = sgn * (prep.t - prep.Qm @ p_lp)
    mu = sgn * (prep.t - prep.Qm @ prep.u)
    eps = 0.1
    for k in range(2):
        if mu[k] < mp[k]:
            eps = min(eps, (mp[k] - 0.5 * margin) / (mp[k] - mu[k]))
    p = (1.0 - eps) * p_lp + eps * prep.u
    return p, _inner_s(p, prep.offsets, gamma)


def _inner_s(p, off, gamma):
    # stratum scale strictly inside p / gamma < s < p
    return np.sqrt(np.maximum.reduceat(p, off[:-1]) / gamma * np.minimum.reduceat(p, off[:-1]))


def _magnitude(prep, Q, wts, form):
    mu, V = prep.moments(prep.u)
    if form == kernels.FORM_CELL:
        m = np.asarray(wts) * ((prep.t - mu) ** 2 + Q * Q * V)
    else:
        m = np.asarray(wts) * (np.abs(prep.t - mu) + Q * np.sqrt(V))
    return max(float(m.max()), 1e-300)


def _solve_cell(prep, gamma, Q, cell, wts, stop_neg=False, stop_pos=False,
                tol_rel=CELL_TOL, max_iter=CELL_MAX_ITER):
    sgn = np.array([1.0 if b == 0 else -1.0 for b in cell])
    act = np.array([b == 0 for b in cell])
    a = sgn * prep.t
    Cm = np.ascontiguousarray(-sgn[:, None] * prep.Qm)
    margin, p_lp = kernels.maxmin_affine(a, Cm, prep.offsets, gamma, PHASE1_ITERS)
    if margin <= prep.feas_tol:
        return CellResult(cell, False, math.inf, math.inf, "infeasible")
    if not act.any():
        return CellResult(cell, True, NEG_SENTINEL, NEG_SENTINEL, "sentinel", 0, p_lp)
    p0, s0 = _interior_start(prep, gamma, p_lp, margin, sgn)
    wts = np.asarray(wts, dtype=np.float64)
    tol_abs = tol_rel * _magnitude(prep, Q, wts, kernels.FORM_CELL)
    ub, lb, p, it, status = kernels.pd_solve(
        kernels.FORM_CELL, prep.Qm, prep.offsets, float(gamma), prep.t, float(Q), wts, act,
        True, sgn, p0, s0, float(tol_abs), int(max_iter), bool(stop_neg), bool(stop_pos))
    return CellResult(cell, True, float(ub), float(lb), _status(status, ub, lb, tol_abs), int(it),
                      p, float(prep.moments(p)[1].min()))


def _uniform_ystar(prep, Q, wts):
    mu, V = prep.moments(prep.u)
    vals = [wts[k] * ((prep.t[k] - mu[k]) ** 2 - Q * Q * max(V[k], kernels.VAR_FLOOR))
            for k in range(2) if prep.t[k] - mu[k] > 0.0]
    return max(vals) if vals else NEG_SENTINEL


@dataclass
class MinimaxResult:
    y_star: float
    cells: list
    p_star: np.ndarray
    failed: bool
    degenerate_variance: bool


def _minimax(prep, gamma, Q, wts=(1.0, 1.0), tol_rel=CELL_TOL):
    if gamma == 1.0:
        y = _uniform_ystar(prep, Q, wts)
        return MinimaxResult(y, [], prep.u, False, False)
    cells = [_solve_cell(prep, gamma, Q, c, wts, tol_rel=tol_rel) for c in CELLS]
    feasible = [c for c in cells if c.feasible]
    failed = any(c.status in ("failed", "max_iter", "stalled") for c in feasible)
    if not feasible:
        return MinimaxResult(math.nan, cells, None, True, False)
    best = min(feasible, key=lambda c: c.value)
    degenerate = any(c.min_variance < kernels.VAR_FLOOR for c in feasible
                     if not math.isnan(c.min_variance))
    return MinimaxResult(best.value, cells, best.p, failed, degenerate)


def minimax_feasibility(problem, quantile, tol_rel=CELL_TOL):
    """Smallest worst-case value of the cell objectives at critical value ``quantile``.

    Returns a :class:`MinimaxResult`; the null is rejected iff ``y_star >= 0``.
    """
    if not quantile > 0:
        raise ValidationError("quantile must be positive")
    prep = _Prepared(problem.sample, problem.scores1, problem.scores2)
    return _minimax(prep, problem.gamma, float(quantile), tol_rel=tol_rel)


@dataclass
class MarginResult:
    upper: float
    lower: float
    p: np.ndarray
    status: str
    iterations: int


def margin_minimax(prep, gamma, Q, stop_neg=False, stop_pos=False, tol_rel=CELL_TOL,
                   max_iter=CELL_MAX_ITER):
    """Bounds on min over the model of max_k w_k (t_k - mu_k - Q sd_k).

    With positive weights this has the sign of the cell minimax value, and it
    is a single convex program, so no sign cells are needed.  The weights are
    the reciprocal uniform-point standard deviations.
    """
    mu, V = prep.moments(prep.u)
    wts = 1.0 / np.sqrt(np.maximum(V, kernels.VAR_FLOOR))
    if gamma == 1.0:
        v = float(np.max(wts * (prep.t - mu - Q * np.sqrt(V))))
        return MarginResult(v, v, prep.u, "converged", 0)
    s0 = _inner_s(prep.u, prep.offsets, gamma)
    tol_abs = tol_rel * _magnitude(prep, Q, wts, kernels.FORM_MARGIN)
    ub, lb, p, it, status = kernels.pd_solve(
        kernels.FORM_MARGIN, prep.Qm, prep.offsets, float(gamma), prep.t, float(Q), wts,
        np.array([True, True]), False, np.ones(2), prep.u, s0, float(tol_abs), int(max_iter),
        bool(stop_neg), bool(stop_pos))
    return MarginResult(float(ub), float(lb), p, _status(status, ub, lb, tol_abs), int(it))


def _decide(prep, gamma, Q):
    """Whether the adaptive test rejects at critical value Q.

    Returns ``(rejects, failed)``; ``failed`` marks a solve whose bounds did not
    settle the sign, in which case the attained (upper) value decides.
    """
    r = margin_minimax(prep, gamma, Q, stop_neg=True, stop_pos=True)
    if r.status == "negative":
        return False, False
    if r.status == "positive":
        return True, False
    return r.upper >= 0.0, r.status != "converged"


# ---------------------------------------------------------------------------
# verdicts

def bonferroni_deviates(sample, scores1, scores2, gamma):
    return (separability_worst_case(sample, scores1, gamma).deviate,
            separability_worst_case(sample, scores2, gamma).deviate)


def bonferroni_test(problem):
    """Reject if either component's worst-case deviate reaches z at 1 - alpha/2."""
    z = norm.ppf(1.0 - problem.alpha / 2.0)
    d = bonferroni_deviates(problem.sample, problem.scores1, problem.scores2, problem.gamma)
    return bool(max(d) >= z)


@dataclass
class AdaptiveVerdict:
    rho_star: float
    quantile: float
    y_star: float
    reject: bool
    cells: list
    bonferroni_reject: bool
    flags: dict


def _degenerate_verdict(problem, prep):
    # a statistic that is constant within strata carries no information
    flags = {"degenerate_variance": True, "solver_fallback": False, "rho_unconverged": False}
    live = [k for k in range(2) if not prep.degenerate[k]]
    reject = False
    if live:
        scores = (problem.scores1, problem.scores2)[live[0]]
        r = separability_worst_case(problem.sample, scores, problem.gamma)
        reject = r.deviate >= norm.ppf(1.0 - problem.alpha)
    return AdaptiveVerdict(math.nan, float(norm.ppf(1.0 - problem.alpha)), math.nan, bool(reject),
                           [], bonferroni_test(problem), flags)


def _run(problem, starts, seed):
    prep = _Prepared(problem.sample, problem.scores1, problem.scores2)
    if prep.degenerate.any():
        return _degenerate_verdict(problem, prep)
    corr = _min_rho(prep, problem.gamma, starts, seed)
    Q = joint_quantile(corr.rho_star, problem.alpha)
    mm = _minimax(prep, problem.gamma, Q)
    bonf = bonferroni_test(problem)
    flags = {"degenerate_variance": mm.degenerate_variance, "solver_fallback": False,
             "rho_unconverged": not corr.converged}
    if math.isnan(mm.y_star):
        flags["solver_fallback"] = True
        reject = bonf
    else:
        reject = mm.y_star >= 0.0
        if mm.failed and not reject:
            # the best feasible value is an upper bound; only a sign certificate counts
            flags["solver_fallback"] = True
    return AdaptiveVerdict(corr.rho_star, Q, mm.y_star, bool(reject), mm.cells, bonf, flags)


def adaptive_test(problem, starts=DEFAULT_STARTS, seed=0):
    """Two-stage adaptive test for samples with one treated unit per stratum."""
    if not problem.sample.diagnostics.one_treated:
        raise ValidationError("sample has strata with several treated units; "
                              "use adaptive_test_full_matching")
    return _run(problem, starts, seed)


def adaptive_test_full_matching(problem, starts=DEFAULT_STARTS, seed=0):
    """Adaptive test where strata may have one control and several treated units.

    Such strata are handled through the control's assignment probability, which
    lives in the same polytope, so the correlation and the cell programs keep
    their form.  Without such strata this is exactly :func:`adaptive_test`.
    """
    return _run(problem, starts, seed)


@dataclass
class AlphaStar:
    value: float
    at_least_half: bool
    min_max_deviate: float
    rho_star: float


def min_max_deviate(prep, gamma, tol=1e-9):
    """Smallest over the model of the larger standardized deviate, by bisection on Q."""
    mu, V = prep.moments(prep.u)
    dev = (prep.t - mu) / np.sqrt(np.maximum(V, kernels.VAR_FLOOR))
    hi = float(dev.max())
    if hi <= 0.0:
        return hi
    if gamma == 1.0:
        return hi
    lo = 0.0
    if not _decide(prep, gamma, tol)[0]:
        return 0.0
    hi = hi * (1.0 + 1e-12) + 1e-12
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _decide(prep, gamma, mid)[0]:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def adaptive_alpha_star(sample, scores1, scores2, gamma, starts=DEFAULT_STARTS, seed=0):
    """Smallest level at which the adaptive test still rejects at this gamma."""
    problem = AdaptiveProblem(sample, scores1, scores2, gamma, 0.05)
    prep = _Prepared(sample, problem.scores1, problem.scores2)
    if prep.degenerate.any():
        raise ValidationError("a statistic has zero variance (scores constant within strata)")
    rho = _min_rho(prep, problem.gamma, starts, seed).rho_star
    d = min_max_deviate(prep, problem.gamma)
    if d <= 0.0:
        return AlphaStar(0.5, True, d, rho)
    a = 1.0 - orthant(d, rho)
    if a >= 0.5 - 1e-6:
        return AlphaStar(0.5, True, d, rho)
    return AlphaStar(float(max(a, 0.0)), False, d, rho)


# ---------------------------------------------------------------------------
# repeated decisions for simulation

class AdaptiveEngine:
    """Adaptive-test decisions on one sample at many gamma values.

    The decision is settled without the correlation step whenever the
    critical value's bounds already agree: rejecting at z(1 - alpha/2) implies
    rejecting, and failing at z(1 - alpha) implies failing.
    """

    def __init__(self, sample, scores1, scores2, alpha=0.05, starts=DEFAULT_STARTS, seed=0):
        self.prep = _Prepared(sample, check_scores(sample, scores1), check_scores(sample, scores2))
        self.sample = sample
        self.scores = (self.prep.Qm[0], self.prep.Qm[1])
        self.alpha = alpha
        self.starts = starts
        self.seed = seed
        self.q_lo = float(norm.ppf(1.0 - alpha))
        self.q_hi = float(norm.ppf(1.0 - alpha / 2.0))
        self.failures = 0

    def minimax_rejects(self, gamma, Q):
        rej, failed = _decide(self.prep, float(gamma), float(Q))
        self.failures += failed
        return rej

    def rejects(self, gamma):
        gamma = float(gamma)
        if self.prep.degenerate.any():
            live = [k for k in range(2) if not self.prep.degenerate[k]]
            if not live:
                return False
            off = self.prep.offsets
            mu, nu = kernels.sep_moments(self.prep.Qm[live[0]], off, gamma)
            from .senstests import normal_tail
            return normal_tail(self.prep.t[live[0]], mu.sum(), nu.sum())[0] >= self.q_lo
        if self.minimax_rejects(gamma, self.q_hi):
            return True
        if not self.minimax_rejects(gamma, self.q_lo):
            return False
        rho = _min_rho(self.prep, gamma, self.starts, self.seed).rho_star
        return self.minimax_rejects(gamma, joint_quantile(rho, self.alpha))


# ---------------------------------------------------------------------------
# worst-case expectation of paired-difference statistics

def worst_case_expectation(sample, scores1, scores2, gamma):
    """Largest over the model of min_k E[mean paired difference of statistic k].

    For pairs, the paired difference of statistic ``k`` in pair ``i`` has
    expectation ``2 mu_ik - (q_i1k + q_i2k)``; the max-min of the two averages
    is a linear program solved through its one-dimensional dual.
    Returns ``(value, p)``.
    """
    if np.any(sample.sizes != 2):
        raise ValidationError("worst-case paired expectation needs pairs")
    prep = _Prepared(sample, check_scores(sample, scores1), check_scores(sample, scores2))
    I = sample.n_strata
    tot = np.array([q.sum() for q in prep.Qm])
    a = -tot / I
    Cm = np.ascontiguousarray(2.0 * prep.Qm / I)
    v, p = kernels.maxmin_affine(a, Cm, prep.offsets, float(gamma), 200)
    return float(v), p

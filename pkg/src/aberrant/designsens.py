"""Design sensitivities of the aberrant rank and Mantel-Haenszel tests.

Both are roots in Gamma of "worst-case expected statistic = actual expected
statistic", with the expectations estimated by Monte Carlo.  One set of
simulated strata is drawn per call and reused for every Gamma (common random
numbers), which makes the estimated worst-case side monotone in Gamma and the
bisection well defined.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ValidationError

DEFAULT_MC = 100_000
PILOT_DRAWS = 1_000_000
BRACKET = (1.0 + 1e-6, 50.0)
MAX_GAMMA = 100.0
DEFAULT_TOL = 0.01
BATCHES = 20
NO_CUTOFF = -math.inf  # aberrant set is everything: the Wilcoxon rank sum case


class GFunction:
    """Average over stratum positions of how far each marginal has climbed past the cutoff.

    ``G(v) = mean_j max(F_j(v) - F_j(c), 0)``, nondecreasing with values in [0, 1].
    """

    def __init__(self, cdfs, cutoff, empirical=False):
        self.cdfs = list(cdfs)
        self.cutoff = float(cutoff)
        self.empirical = empirical
        if self.cutoff == -math.inf:
            self.base = np.zeros(len(self.cdfs))
        else:
            self.base = np.array([float(F(self.cutoff)) for F in self.cdfs])

    @property
    def m(self):
        return len(self.cdfs)

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        tot = np.zeros(v.shape)
        for F, b in zip(self.cdfs, self.base):
            tot += np.maximum(F(v) - b, 0.0)
        return tot / self.m

    @classmethod
    def for_generator(cls, gen, cutoff=None, seed=0):
        """Analytic marginals when the generator has them, else empirical ones."""
        cutoff = gen.cutoff if cutoff is None else cutoff
        cdfs = gen.marginals()
        if cdfs is not None:
            return cls(cdfs, cutoff)
        warnings.warn("no analytic marginals; using empirical ones from a pilot sample",
                      RuntimeWarning, stacklevel=2)
        pilot = gen.draw(np.random.default_rng(seed), PILOT_DRAWS)
        return cls([_ecdf(pilot[:, j]) for j in range(pilot.shape[1])], cutoff, empirical=True)


def _ecdf(x):
    xs = np.sort(x)

    def F(v):
        return np.searchsorted(xs, v, side="right") / xs.size
    return F


def _check_gen(gen):
    if gen.kind.value == "superadaptivity":
        raise ValidationError("design sensitivity needs a response generator, not pair scores")


class _Draws:
    """Simulated strata and their G values, shared by every Gamma."""

    def __init__(self, gen, n_mc, seed, cutoff=None):
        _check_gen(gen)
        if n_mc < BATCHES:
            raise ValidationError(f"n_mc must be at least {BATCHES}")
        rng = np.random.default_rng(seed)
        self.R = gen.draw(rng, int(n_mc))
        self.G = GFunction.for_generator(gen, cutoff, seed)
        g = self.G(self.R)
        self.treated = g[:, 0]
        self.sorted = np.ascontiguousarray(np.sort(g, axis=1))

    def phi_rows(self, gamma):
        return kernels.phi_rows(self.sorted, float(gamma))


def phi_gamma(gen, gamma, n_mc=DEFAULT_MC, seed=0, cutoff=None):
    """Monte-Carlo mean over strata of the largest Gamma-tilted average of sorted G values.

    ``cutoff`` overrides the generator's (``NO_CUTOFF`` gives the Wilcoxon case).
    """
    if not gamma >= 1.0:
        raise ValidationError("gamma must be >= 1")
    return float(_Draws(gen, n_mc, seed, cutoff).phi_rows(gamma).mean())


def true_mean(gen, n_mc=DEFAULT_MC, seed=0, cutoff=None):
    """Monte-Carlo mean of G at the treated response."""
    return float(_Draws(gen, n_mc, seed, cutoff).treated.mean())


@dataclass(frozen=True)
class DesignSensResult:
    gamma_tilde: float
    bracket: tuple
    mc_samples: int
    std_error_estimate: float
    status: str = "converged"  # or "unbounded" / "no_effect"

    @property
    def found(self):
        return self.status == "converged"


def _batch_se(values):
    b = np.array_split(values, BATCHES)
    means = np.array([x.mean() for x in b])
    return float(means.std(ddof=1) / math.sqrt(BATCHES))


def _solve(excess, per_row, n_mc, tol):
    """Root of the Monte-Carlo ``excess(gamma)`` (worst-case minus actual mean).

    ``per_row(gamma)`` gives the per-stratum contributions, used for the
    batch-means standard error and the no-effect check.
    """
    lo, hi = BRACKET
    e_lo = excess(lo)
    se0 = _batch_se(per_row(lo))
    if e_lo >= -3.0 * se0:
        return DesignSensResult(math.nan, (1.0, 1.0), n_mc, se0, "no_effect")
    while excess(hi) < 0.0:
        if hi >= MAX_GAMMA:
            return DesignSensResult(math.inf, (hi, math.inf), n_mc, math.nan, "unbounded")
        lo, hi = hi, min(2.0 * hi, MAX_GAMMA)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    # delta method: spread of the estimating equation over its slope in gamma
    h = max(tol, 1e-3 * root)
    slope = (excess(root + h) - excess(max(root - h, 1.0))) / (root + h - max(root - h, 1.0))
    se = _batch_se(per_row(root)) / slope if slope > 0 else math.nan
    return DesignSensResult(root, (lo, hi), n_mc, float(se))


def design_sensitivity_aberrant(gen, tol=DEFAULT_TOL, n_mc=DEFAULT_MC, seed=0, cutoff=None):
    """Gamma where the aberrant rank test's worst-case mean meets its actual mean."""
    d = _Draws(gen, n_mc, seed, cutoff)
    target = d.treated.mean()
    return _solve(lambda g: d.phi_rows(g).mean() - target,
                  lambda g: d.phi_rows(g) - d.treated, int(n_mc), tol)


def design_sensitivity_mh(gen, tol=DEFAULT_TOL, n_mc=DEFAULT_MC, seed=0):
    """Gamma where the Mantel-Haenszel worst-case mean meets its actual mean.

    A stratum with ``a`` aberrant units out of ``m`` has its treated unit
    aberrant with probability at most ``gamma a / ((gamma - 1) a + m)``; the
    actual chance is that of the treated response being aberrant.
    """
    _check_gen(gen)
    R = gen.draw(np.random.default_rng(seed), int(n_mc))
    ab = R >= gen.cutoff
    a = ab.sum(axis=1).astype(np.float64)
    t = ab[:, 0].astype(np.float64)
    m = R.shape[1]
    target = t.mean()

    def rows(g):
        return g * a / ((g - 1.0) * a + m)
    return _solve(lambda g: rows(g).mean() - target, lambda g: rows(g) - t, int(n_mc), tol)


__all__ = [
    "GFunction", "DesignSensResult", "phi_gamma", "true_mean", "design_sensitivity_aberrant",
    "design_sensitivity_mh", "NO_CUTOFF",
]

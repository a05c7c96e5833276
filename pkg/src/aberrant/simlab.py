"""Simulation generators and power / size estimation.

Every generated stratum puts the treated unit first.  Its response is a
deterministic function of the unit's own control response (``r + effect`` or
``effect * r``), and treatment carries no hidden bias, so the estimated
rejection rates are powers in the favorable situation.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import laplace, norm

from . import adaptive
from .core import AberrantSpec, MatchedSample, ValidationError, aberrant_indicators, aberrant_ranks
from .senstests import mh_worst_case, separability_worst_case

DEFAULT_SEED = 20240611
EQUICORRELATION = 0.5
LAPLACE_SCALE = 1.0 / math.sqrt(2.0)  # unit variance


class Kind(str, Enum):
    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"
    SUPER_ADAPTIVITY = "superadaptivity"


class Base(str, Enum):
    NORMAL = "normal"
    LAPLACE = "laplace"
    MV_NORMAL = "mvnormal05"
    MV_LAPLACE = "mvlaplace05"
    PAIR_SCORES = "pairscores"


class Setting(int, Enum):
    POSITIVE = 1     # the two paired differences are equal
    INDEPENDENT = 2
    NEGATIVE = 3     # one difference is 3 exactly when the other is -1


class Test(str, Enum):
    MH = "mh"
    ABERRANT = "aberrant"
    ADAPTIVE = "adaptive"
    BONFERRONI = "bonferroni"
    MINIMAX = "minimax"


# model number -> (kind, base)
MODELS = {
    1: (Kind.ADDITIVE, Base.NORMAL),
    2: (Kind.ADDITIVE, Base.LAPLACE),
    3: (Kind.MULTIPLICATIVE, Base.NORMAL),
    4: (Kind.MULTIPLICATIVE, Base.LAPLACE),
    5: (Kind.ADDITIVE, Base.MV_NORMAL),
    6: (Kind.ADDITIVE, Base.MV_LAPLACE),
    7: (Kind.MULTIPLICATIVE, Base.MV_NORMAL),
    8: (Kind.MULTIPLICATIVE, Base.MV_LAPLACE),
}

# paired differences (D1, D2) per setting, each row drawn with equal probability
_PAIR_LAWS = {
    Setting.POSITIVE: np.array([[3.0, 3.0], [-1.0, -1.0]]),
    Setting.INDEPENDENT: np.array([[3.0, 3.0], [3.0, -1.0], [-1.0, 3.0], [-1.0, -1.0]]),
    Setting.NEGATIVE: np.array([[3.0, -1.0], [-1.0, 3.0]]),
}


@dataclass(frozen=True)
class GeneratorSpec:
    kind: Kind
    base: Base
    effect: float = 0.0
    m: int = 4
    cutoff: float = 1.0
    setting: Setting = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "base", Base(self.base))
        object.__setattr__(self, "effect", float(self.effect))
        if self.kind == Kind.SUPER_ADAPTIVITY:
            if self.setting is None:
                raise ValidationError("super-adaptivity generator needs a setting")
            object.__setattr__(self, "setting", Setting(self.setting))
            object.__setattr__(self, "base", Base.PAIR_SCORES)
            object.__setattr__(self, "m", 2)
        elif self.base == Base.PAIR_SCORES:
            raise ValidationError("pair scores only go with the super-adaptivity kind")
        if int(self.m) != self.m or self.m < 2:
            raise ValidationError("m must be an integer >= 2")
        object.__setattr__(self, "m", int(self.m))
        if not math.isfinite(self.effect):
            raise ValidationError("effect must be finite")

    @classmethod
    def model(cls, number, effect, m=4, cutoff=1.0):
        if number not in MODELS:
            raise ValidationError(f"model must be one of 1..8, got {number}")
        kind, base = MODELS[number]
        return cls(kind, base, effect, m, cutoff)

    @classmethod
    def pairs(cls, setting):
        return cls(Kind.SUPER_ADAPTIVITY, Base.PAIR_SCORES, 0.0, 2, 0.0, setting)

    @property
    def is_null(self):
        if self.kind == Kind.ADDITIVE:
            return self.effect == 0.0
        if self.kind == Kind.MULTIPLICATIVE:
            return self.effect == 1.0
        return False

    @property
    def spec(self):
        return AberrantSpec(self.cutoff)

    def treat(self, r):
        if self.kind == Kind.ADDITIVE:
            return r + self.effect
        return self.effect * r

    def draw_controls(self, rng, n):
        """``n`` strata of control potential outcomes, shape ``(n, m)``."""
        m = self.m
        if self.base == Base.NORMAL:
            return rng.standard_normal((n, m))
        if self.base == Base.LAPLACE:
            return rng.laplace(0.0, LAPLACE_SCALE, (n, m))
        L = np.linalg.cholesky(equicorrelation(m))
        x = rng.standard_normal((n, m)) @ L.T
        if self.base == Base.MV_LAPLACE:
            x *= np.sqrt(rng.standard_exponential(n))[:, None]
        return x

    def draw(self, rng, n):
        """Observed responses, treated unit in column 0."""
        r = self.draw_controls(rng, n)
        r[:, 0] = self.treat(r[:, 0])
        return r

    def marginals(self):
        """Analytic distribution functions of each column of :meth:`draw`, or None."""
        if self.kind == Kind.SUPER_ADAPTIVITY:
            return None
        if self.base in (Base.NORMAL, Base.MV_NORMAL):
            F = norm.cdf
        else:
            F = laplace(0.0, LAPLACE_SCALE).cdf
        if self.kind == Kind.ADDITIVE:
            b = self.effect
            treated = lambda v: F(v - b)
        elif self.effect > 0.0:
            d = self.effect
            treated = lambda v: F(v / d)
        else:
            return None
        return [treated] + [F] * (self.m - 1)


def equicorrelation(m, rho=EQUICORRELATION):
    return np.full((m, m), rho) + (1.0 - rho) * np.eye(m)


# ---------------------------------------------------------------------------
# samples

@dataclass
class PairScores:
    sample: MatchedSample
    scores1: np.ndarray
    scores2: np.ndarray
    differences: np.ndarray  # (I, 2) treated-minus-control paired differences


def _pair_scores(gen, I, rng):
    law = _PAIR_LAWS[gen.setting]
    d = law[rng.integers(0, law.shape[0], I)]
    # treated unit carries the differences, the control scores 0 on both
    q1 = np.zeros(2 * I)
    q2 = np.zeros(2 * I)
    q1[0::2] = d[:, 0]
    q2[0::2] = d[:, 1]
    treated = np.tile([True, False], I)
    # a response that encodes both scores, a + b sqrt(2)
    response = q1 + math.sqrt(2.0) * q2
    sample = MatchedSample(np.arange(0, 2 * I + 1, 2), treated, response)
    return PairScores(sample, q1, q2, d)


def generate(gen, I, seed=DEFAULT_SEED):
    """``I`` strata from ``gen``; pair-score generators return :class:`PairScores`."""
    if int(I) != I or I < 1:
        raise ValidationError("I must be a positive integer")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if gen.kind == Kind.SUPER_ADAPTIVITY:
        return _pair_scores(gen, int(I), rng)
    r = gen.draw(rng, int(I))
    m = gen.m
    treated = np.zeros((int(I), m), dtype=bool)
    treated[:, 0] = True
    return MatchedSample(np.arange(0, m * int(I) + 1, m), treated.ravel(), r.ravel())


# ---------------------------------------------------------------------------
# power

@dataclass(frozen=True)
class PowerConfig:
    gen: GeneratorSpec
    I: int
    gamma_grid: tuple
    alpha: float = 0.05
    replications: int = 2000
    seed: int = DEFAULT_SEED
    test: Test = Test.ADAPTIVE

    def __post_init__(self):
        object.__setattr__(self, "test", Test(self.test))
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if not self.gamma_grid or any(g < 1.0 for g in self.gamma_grid):
            raise ValidationError("gamma grid must be non-empty with values >= 1")
        if not 0.0 < self.alpha < 0.5:
            raise ValidationError("alpha must lie in (0, 0.5)")


@dataclass
class PowerEstimate:
    test: str
    gammas: tuple
    power: np.ndarray
    std_error: np.ndarray
    replications: int
    solver_fallbacks: int = 0
    rejections: np.ndarray = field(default=None, repr=False)

    def at(self, gamma):
        return float(self.power[self.gammas.index(float(gamma))])


def _monotone_rejects(rejects, grid):
    """Rejection flags along an increasing grid, assuming rejection shrinks with gamma.

    Only the switch point is searched for, by bisection on the grid index.
    """
    n = len(grid)
    out = np.zeros(n, dtype=bool)
    lo, hi = -1, n  # rejects at lo (or nothing known), fails at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if rejects(grid[mid]):
            lo = mid
        else:
            hi = mid
    out[:lo + 1] = True
    return out


def _replicate(gen, I, grid, alpha, tests, seq):
    """Rejection flags (tests x grid) and solver fallback count for one replication."""
    rng = np.random.default_rng(seq)
    sample = generate(gen, I, rng)
    spec = gen.spec
    out = np.zeros((len(tests), len(grid)), dtype=bool)
    ranks = aberrant_ranks(sample, spec)
    engine = None
    fallbacks = 0
    for k, test in enumerate(tests):
        if test == Test.MH:
            out[k] = [mh_worst_case(sample, spec, g).p_value <= alpha for g in grid]
        elif test == Test.ABERRANT:
            out[k] = [separability_worst_case(sample, ranks, g).p_value <= alpha for g in grid]
        elif test == Test.BONFERRONI:
            ind = aberrant_indicators(sample, spec)
            zb = norm.ppf(1.0 - alpha / 2.0)
            out[k] = [max(adaptive.bonferroni_deviates(sample, ind, ranks, g)) >= zb for g in grid]
        else:
            if engine is None:
                ind = aberrant_indicators(sample, spec)
                if not ind.any():
                    continue  # no aberrant responses: nothing can reject
                engine = adaptive.AdaptiveEngine(sample, ind, ranks, alpha,
                                                 seed=int(rng.integers(2**31)))
            if test == Test.ADAPTIVE:
                out[k] = _monotone_rejects(engine.rejects, grid)
            else:
                out[k] = _monotone_rejects(lambda g: engine.minimax_rejects(g, engine.q_hi), grid)
    if engine is not None:
        fallbacks = engine.failures
    return out, fallbacks


def _chunk(args):
    gen, I, grid, alpha, tests, seqs = args
    flags, fb = [], 0
    for s in seqs:
        f, n = _replicate(gen, I, grid, alpha, tests, s)
        flags.append(f)
        fb += n
    return np.array(flags), fb


def _run_replications(gen, I, grid, alpha, tests, replications, seed, workers):
    seqs = np.random.SeedSequence(seed).spawn(replications)
    if workers and workers > 1:
        parts = [seqs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_chunk, [(gen, I, grid, alpha, tests, p) for p in parts]))
        # restore replication order so the flags do not depend on the worker count
        flags = np.empty((replications, len(tests), len(grid)), dtype=bool)
        for i, (f, _) in enumerate(results):
            flags[i::workers] = f
        return flags, sum(fb for _, fb in results)
    return _chunk((gen, I, grid, alpha, tests, seqs))


def estimate_power_table(gen, I, grid, tests, alpha=0.05, replications=2000,
                         seed=DEFAULT_SEED, workers=1):
    """Power of several tests on the same simulated samples.

    Returns one :class:`PowerEstimate` per test, keyed by the test's value.
    """
    if gen.kind == Kind.SUPER_ADAPTIVITY:
        raise ValidationError("use superadaptivity_power for pair-score generators")
    tests = [Test(t) for t in tests]
    grid = tuple(sorted(float(g) for g in grid))
    flags, fallbacks = _run_replications(gen, int(I), grid, alpha, tests, int(replications),
                                         seed, workers)
    out = {}
    for k, t in enumerate(tests):
        p = flags[:, k, :].mean(axis=0)
        se = np.sqrt(p * (1.0 - p) / replications)
        fb = fallbacks if t in (Test.ADAPTIVE, Test.MINIMAX) else 0
        out[t.value] = PowerEstimate(t.value, grid, p, se, int(replications), int(fb),
                                     flags[:, k, :])
    return out


def estimate_power(config, workers=1):
    return estimate_power_table(config.gen, config.I, config.gamma_grid, [config.test],
                                config.alpha, config.replications, config.seed,
                                workers)[config.test.value]


def estimate_size(config, workers=1):
    """Rejection rate when the generator has no treatment effect."""
    if not config.gen.is_null:
        raise ValidationError("size needs a null generator (beta = 0 or delta = 1)")
    return estimate_power(config, workers)


# ---------------------------------------------------------------------------
# super-adaptivity constructions

@dataclass
class SuperAdaptivityPower:
    setting: int
    I: int
    gamma: float
    first: float
    second: float
    minimax: float
    replications: int

    def std_error(self, p):
        return math.sqrt(p * (1.0 - p) / self.replications)


def superadaptivity_power(setting, I, gamma, reps=10000, seed=DEFAULT_SEED, alpha=0.05):
    """Power of each paired-difference statistic alone and of their minimax combination.

    The combination rejects when, for every admissible assignment law, one of
    the two deviates reaches z at 1 - alpha/2.
    """
    gen = GeneratorSpec.pairs(setting)
    gamma = float(gamma)
    z1 = norm.ppf(1.0 - alpha)
    z2 = norm.ppf(1.0 - alpha / 2.0)
    hits = np.zeros(3)
    for seq in np.random.SeedSequence(seed).spawn(int(reps)):
        ps = generate(gen, I, np.random.default_rng(seq))
        devs = []
        for q in (ps.scores1, ps.scores2):
            r = separability_worst_case(ps.sample, q, gamma)
            devs.append(r.deviate)
        hits[0] += devs[0] >= z1
        hits[1] += devs[1] >= z1
        prep = adaptive._Prepared(ps.sample, ps.scores1, ps.scores2)
        if prep.degenerate.any():
            hits[2] += max(devs) >= z2
        else:
            hits[2] += adaptive._decide(prep, gamma, z2)[0]
    p = hits / reps
    return SuperAdaptivityPower(int(Setting(setting)), int(I), gamma, *map(float, p), int(reps))


__all__ = [
    "DEFAULT_SEED", "Kind", "Base", "Setting", "Test", "MODELS", "GeneratorSpec", "PairScores",
    "generate", "equicorrelation", "PowerConfig", "PowerEstimate", "estimate_power",
    "estimate_power_table", "estimate_size", "SuperAdaptivityPower", "superadaptivity_power",
]

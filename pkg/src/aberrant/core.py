"""Matched samples, aberrant-set definitions and score construction."""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import rankdata


class ValidationError(ValueError):
    """A sample, score vector or argument violates the data model."""


class Direction(str, Enum):
    AT_OR_ABOVE = "ge"
    AT_OR_BELOW = "le"


@dataclass(frozen=True)
class AberrantSpec:
    """Aberrant set ``[cutoff, inf)`` (``ge``) or ``(-inf, cutoff]`` (``le``)."""

    cutoff: float
    direction: Direction = Direction.AT_OR_ABOVE

    def __post_init__(self):
        if not np.isfinite(self.cutoff):
            raise ValidationError("cutoff must be finite")
        object.__setattr__(self, "cutoff", float(self.cutoff))
        object.__setattr__(self, "direction", Direction(self.direction))


class MatchedSample:
    """Units grouped into matched strata.

    Units are stored stratum by stratum: stratum ``i`` occupies
    ``offsets[i]:offsets[i + 1]`` of the flat ``treated`` and ``response``
    arrays.  Construction validates the structural invariants (at least two
    units per stratum, and exactly one treated or exactly one control unit).
    """

    def __init__(self, offsets, treated, response, labels=None):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.treated = np.asarray(treated, dtype=bool)
        self.response = np.asarray(response, dtype=np.float64)
        n_strata = self.offsets.size - 1
        if labels is None:
            labels = [str(i + 1) for i in range(n_strata)]
        self.labels = [str(x) for x in labels]
        self.diagnostics = validate(self)

    @classmethod
    def from_strata(cls, strata, labels=None):
        """Build from ``[[(treated, response), ...], ...]``."""
        treated, response, offsets = [], [], [0]
        for units in strata:
            for z, r in units:
                treated.append(bool(z))
                response.append(float(r))
            offsets.append(len(treated))
        return cls(offsets, treated, response, labels)

    @classmethod
    def from_arrays(cls, stratum, treated, response):
        """Build from per-unit arrays; strata keep their first-appearance order."""
        stratum = [str(s) for s in stratum]
        treated = np.asarray(treated)
        response = np.asarray(response, dtype=np.float64)
        if not (len(stratum) == treated.size == response.size):
            raise ValidationError("stratum, treated and response must have equal length")
        first = {}
        for k, s in enumerate(stratum):
            first.setdefault(s, len(first))
        key = np.array([first[s] for s in stratum], dtype=np.int64)
        order = np.argsort(key, kind="stable")
        counts = np.bincount(key, minlength=len(first))
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return cls(offsets, treated[order], response[order], list(first))

    @property
    def n_strata(self):
        return self.offsets.size - 1

    @property
    def n_units(self):
        return int(self.offsets[-1])

    @property
    def sizes(self):
        return np.diff(self.offsets)

    @property
    def stratum_index(self):
        return np.repeat(np.arange(self.n_strata), self.sizes)

    @property
    def treated_counts(self):
        return np.add.reduceat(self.treated.astype(np.int64), self.offsets[:-1])

    @property
    def reversed_strata(self):
        """Strata with one control and several treated units."""
        return (self.treated_counts > 1)

    def strata(self):
        for i in range(self.n_strata):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            yield list(zip(self.treated[lo:hi].tolist(), self.response[lo:hi].tolist()))

    def with_response(self, response):
        return MatchedSample(self.offsets, self.treated, response, self.labels)

    def rows(self):
        """Yield ``(stratum_label, treated, response)`` per unit."""
        for i, label in enumerate(self.labels):
            for j in range(self.offsets[i], self.offsets[i + 1]):
                yield label, int(self.treated[j]), float(self.response[j])

    def __repr__(self):
        d = self.diagnostics
        return f"MatchedSample(I={self.n_strata}, N={self.n_units}, shape={d.shape})"


@dataclass(frozen=True)
class Diagnostics:
    n_strata: int
    n_units: int
    sizes: tuple
    treated_counts: tuple
    shape: str  # "fixed", "variable" or "full"
    m: int = 0  # common stratum size for the fixed shape

    @property
    def one_treated(self):
        return self.shape != "full"


def validate(sample):
    """Check the structural invariants and describe the sample's shape."""
    off = sample.offsets
    if off.ndim != 1 or off.size < 2 or off[0] != 0:
        raise ValidationError("empty sample")
    sizes = np.diff(off)
    if np.any(sizes < 2):
        bad = int(np.flatnonzero(sizes < 2)[0])
        raise ValidationError(f"stratum {sample.labels[bad]!r} has fewer than 2 units")
    if sample.treated.size != off[-1] or sample.response.size != off[-1]:
        raise ValidationError("unit arrays do not match the stratum offsets")
    if not np.all(np.isfinite(sample.response)):
        raise ValidationError("responses must be finite")
    n_treated = np.add.reduceat(sample.treated.astype(np.int64), off[:-1])
    n_control = sizes - n_treated
    for i in range(sizes.size):
        if n_treated[i] == 0 or n_control[i] == 0:
            raise ValidationError(
                f"stratum {sample.labels[i]!r} needs both a treated and a control unit")
        if n_treated[i] != 1 and n_control[i] != 1:
            raise ValidationError(
                f"stratum {sample.labels[i]!r} has {n_treated[i]} treated and "
                f"{n_control[i]} controls; need exactly one of either")
    if np.any(n_treated > 1):
        shape, m = "full", 0
    elif np.all(sizes == sizes[0]):
        shape, m = "fixed", int(sizes[0])
    else:
        shape, m = "variable", 0
    return Diagnostics(int(sizes.size), int(off[-1]), tuple(sizes.tolist()),
                       tuple(n_treated.tolist()), shape, m)


def canonicalize(sample, spec):
    """Map a lower-tail aberrant set onto the upper-tail form by negation."""
    if spec.direction == Direction.AT_OR_ABOVE:
        return sample, spec
    flipped = sample.with_response(-sample.response)
    return flipped, AberrantSpec(-spec.cutoff, Direction.AT_OR_ABOVE)


def is_aberrant(sample, spec):
    sample, spec = canonicalize(sample, spec)
    return sample.response >= spec.cutoff


def aberrant_indicators(sample, spec):
    """Mantel-Haenszel scores: 1 for aberrant units, else 0."""
    return is_aberrant(sample, spec).astype(np.float64)


def aberrant_ranks(sample, spec):
    """Rank of each aberrant response among all aberrant responses; 0 otherwise.

    Ties get the average of the ranks they span.
    """
    sample, spec = canonicalize(sample, spec)
    ab = sample.response >= spec.cutoff
    q = np.zeros(sample.n_units)
    if ab.any():
        q[ab] = rankdata(sample.response[ab], method="average")
    return q


def check_scores(sample, scores, name="scores"):
    q = np.asarray(scores, dtype=np.float64)
    if q.shape != (sample.n_units,):
        raise ValidationError(f"{name} has shape {q.shape}, expected ({sample.n_units},)")
    if not np.all(np.isfinite(q)):
        raise ValidationError(f"{name} must be finite")
    return q


def statistic(sample, scores):
    """Sum of the scores of the treated units."""
    q = check_scores(sample, scores)
    return float(q[sample.treated].sum())


@dataclass(frozen=True)
class Oriented:
    """One-treated-per-stratum form of a (possibly fully matched) problem.

    In a stratum with one control and several treated units the statistic
    equals the stratum score total minus the control's score, so such a stratum
    behaves like a one-treated stratum whose "treated" unit is the control,
    with negated scores.  ``t`` is the observed statistic in that form;
    ``shift`` is what was subtracted from the original statistic.
    """

    q: np.ndarray
    offsets: np.ndarray
    chosen: np.ndarray  # flat index of the distinguished unit per stratum
    t: float
    shift: float


def orient(sample, scores):
    q = check_scores(sample, scores).copy()
    off = sample.offsets
    rev = sample.reversed_strata
    distinguished = sample.treated.copy()
    shift = 0.0
    if rev.any():
        unit_rev = np.repeat(rev, sample.sizes)
        shift = float(q[unit_rev].sum())
        q[unit_rev] = -q[unit_rev]
        distinguished[unit_rev] = ~sample.treated[unit_rev]
    chosen = np.flatnonzero(distinguished)
    t = float(q[chosen].sum())
    return Oriented(q, off, chosen, t, shift)

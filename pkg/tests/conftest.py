import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from aberrant.core import MatchedSample

settings.register_profile(
    "repo", deadline=None, derandomize=True, print_blob=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("repo")


def random_sample(rng, sizes, full=False, values=None):
    """Matched sample with the given stratum sizes and one treated unit each.

    With ``full`` some strata instead get a single control.  ``values`` draws
    responses from a small set so that ties occur.
    """
    treated, response, offsets = [], [], [0]
    for n in sizes:
        z = np.zeros(n, dtype=bool)
        j = rng.integers(n)
        if full and n > 2 and rng.random() < 0.5:
            z[:] = True
            z[j] = False
        else:
            z[j] = True
        treated.extend(z.tolist())
        if values is None:
            response.extend(rng.normal(size=n).tolist())
        else:
            response.extend(rng.choice(values, size=n).tolist())
        offsets.append(len(treated))
    return MatchedSample(offsets, treated, response)


@st.composite
def small_samples(draw, max_units=12, full=False, min_strata=1):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    sizes = []
    budget = max_units
    n_strata = draw(st.integers(min_strata, max(min_strata, max_units // 2)))
    for _ in range(n_strata):
        if budget < 2:
            break
        n = draw(st.integers(2, min(4, budget)))
        sizes.append(n)
        budget -= n
    tied = draw(st.booleans())
    values = np.array([-1.0, 0.0, 0.5, 1.0, 2.0]) if tied else None
    return random_sample(rng, sizes, full=full, values=values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

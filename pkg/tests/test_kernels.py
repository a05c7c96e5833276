"""The numba kernels and their numpy twins must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from aberrant import _accel, adaptive, kernels
from aberrant.core import AberrantSpec, aberrant_indicators, aberrant_ranks
from aberrant.simlab import GeneratorSpec, generate

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _offsets(rng, n):
    sizes = rng.integers(2, 6, n)
    return np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)


@needs_numba
@given(st.integers(0, 10**6), st.floats(1.0, 8.0))
def test_sep_moments_twins(seed, gamma):
    rng = np.random.default_rng(seed)
    off = _offsets(rng, 7)
    q = rng.choice([0.0, 1.0, 2.5, 3.0], off[-1]) if seed % 2 else rng.normal(size=off[-1])
    a = kernels.sep_moments_nb(q, off, gamma)
    b = kernels.sep_moments_np(q, off, gamma)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)


@needs_numba
@given(st.integers(0, 10**6), st.floats(1.0, 5.0))
def test_rho_grad_twins(seed, gamma):
    rng = np.random.default_rng(seed)
    off = _offsets(rng, 6)
    q1, q2 = rng.normal(size=(2, off[-1]))
    w = rng.uniform(1.0, gamma, off[-1])
    r1, g1 = kernels.rho_grad_nb(w, q1, q2, off)
    r2, g2 = kernels.rho_grad_np(w, q1, q2, off)
    assert r1 == pytest.approx(r2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-9, atol=1e-12)


def test_rho_grad_matches_finite_differences(rng):
    off = _offsets(rng, 5)
    q1, q2 = rng.normal(size=(2, off[-1]))
    w = rng.uniform(1.0, 3.0, off[-1])
    r, g = kernels.rho_grad(w, q1, q2, off)
    h = 1e-6
    fd = [(kernels.rho_grad(w + h * e, q1, q2, off)[0] - kernels.rho_grad(w - h * e, q1, q2, off)[0]) / (2 * h)
          for e in np.eye(w.size)]
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


@needs_numba
def test_phi_rows_twins(rng):
    G = np.sort(rng.uniform(size=(500, 5)), axis=1)
    for g in (1.0, 2.0, 9.0):
        np.testing.assert_allclose(kernels.phi_rows_nb(G, g), kernels.phi_rows_np(G, g), rtol=1e-13)


def test_vertex_argmax_is_linear_maximum(rng):
    off = _offsets(rng, 4)
    c = rng.normal(size=off[-1])
    vals, p = kernels.vertex_argmax(c, off, 3.0)
    val = vals.sum()  # per-stratum maxima
    assert val == pytest.approx(c @ p)
    # compare with random feasible points
    for _ in range(200):
        w = rng.uniform(1.0, 3.0, off[-1])
        tot = np.repeat(np.add.reduceat(w, off[:-1]), np.diff(off))
        assert c @ (w / tot) <= val + 1e-12


@needs_numba
def test_pd_solve_twins():
    gen = GeneratorSpec.model(1, 1.0)
    s = generate(gen, 60, seed=4)
    prep = adaptive._Prepared(s, aberrant_indicators(s, gen.spec), aberrant_ranks(s, gen.spec))
    Q = float(norm.ppf(0.975))
    s0 = adaptive._inner_s(prep.u, prep.offsets, 3.0)
    args = (kernels.FORM_MARGIN, prep.Qm, prep.offsets, 3.0, prep.t, Q, np.ones(2),
            np.array([True, True]), False, np.ones(2), prep.u, s0, 1e-10, 200, False, False)
    a = kernels.pd_solve_nb(*args)
    b = kernels.pd_solve_np(*args)
    assert a[0] == pytest.approx(b[0], rel=1e-7, abs=1e-9)
    assert a[4] == b[4]


def test_disable_flag_selects_numpy():
    code = ("import aberrant, aberrant.kernels as k;"
            "print(aberrant.backend(), k.sep_moments is k.sep_moments_np)")
    env = dict(os.environ, ABERRANT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["numpy", "True"]


@needs_numba
def test_default_backend_is_numba():
    code = "import aberrant; print(aberrant.backend())"
    env = {k: v for k, v in os.environ.items() if k != "ABERRANT_DISABLE_NUMBA"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.strip()
    assert out == "numba"

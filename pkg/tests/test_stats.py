import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privshare.errors import DegeneratePoolError, DegenerateVarianceError, EmptySampleError, TooFewSamplesError
from privshare.stats import (
    betainc_reg,
    jarque_bera,
    mann_whitney_u,
    normality_gate,
    rankdata,
    t_two_sided,
    two_prop_z,
    welch_t,
)

from oracles import exact_mwu_p, mp_t_two_sided, mp_two_prop, mp_welch


# -- normality gate -----------------------------------------------------------------

def test_gate_normal_draws():
    assert normality_gate(np.random.default_rng(0).standard_normal(5000))


def test_gate_normal_false_positive_rate():
    rejected = sum(not normality_gate(np.random.default_rng(s).standard_normal(5000)) for s in range(200))
    assert rejected / 200 < 0.10


def test_gate_uniform_draws():
    assert not normality_gate(np.random.default_rng(0).random(5000))


def test_gate_constant_and_small():
    assert not normality_gate([3.0] * 20)
    with pytest.raises(TooFewSamplesError):
        normality_gate([1.0, 2.0, 3.0])


def test_jarque_bera_against_direct_moments():
    x = np.random.default_rng(4).exponential(size=400)
    m = [mpmath.mpf(float(v)) for v in x]
    mean = sum(m) / len(m)
    m2 = sum((v - mean) ** 2 for v in m) / len(m)
    m3 = sum((v - mean) ** 3 for v in m) / len(m)
    m4 = sum((v - mean) ** 4 for v in m) / len(m)
    jb = len(m) / 6 * ((m3 / m2 ** 1.5) ** 2 + (m4 / m2 ** 2 - 3) ** 2 / 4)
    got, p = jarque_bera(x)
    assert got == pytest.approx(float(jb), rel=1e-10)
    # chi-square(2) survival function
    assert p == pytest.approx(float(mpmath.gammainc(1, float(jb) / 2, mpmath.inf, regularized=True)), rel=1e-10)


# -- special functions --------------------------------------------------------------

@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.3), (2.0, 3.0, 0.9), (40.0, 0.5, 0.97), (1.5, 0.5, 0.01), (300.0, 0.5, 0.999)])
def test_betainc_matches_mpmath(a, b, x):
    ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
    assert betainc_reg(a, b, x) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("t,df", [(0.3, 1.0), (2.0, 8.0), (-3.5, 4.7), (10.0, 30.0), (1.96, 1e4)])
def test_t_tail_matches_mpmath(t, df):
    assert t_two_sided(t, df) == pytest.approx(mp_t_two_sided(t, df), rel=1e-10)


# -- Welch --------------------------------------------------------------------------

def test_welch_identical_samples():
    r = welch_t([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert r.statistic == 0.0 and r.p_value == 1.0


def test_welch_reference_case():
    r = welch_t([1, 2, 3, 4, 5], [3, 4, 5, 6, 7])
    t, df, p = mp_welch([1, 2, 3, 4, 5], [3, 4, 5, 6, 7])
    assert r.statistic == pytest.approx(t, abs=1e-12)
    assert r.df == pytest.approx(df, abs=1e-12)
    assert r.p_value == pytest.approx(p, abs=1e-6)


def test_welch_far_apart():
    assert welch_t([0.0, 0.1, 0.2, 0.1], [100.0, 100.2, 99.9, 100.1]).p_value < 1e-6


def test_welch_errors():
    with pytest.raises(DegenerateVarianceError):
        welch_t([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(TooFewSamplesError):
        welch_t([1.0], [2.0, 3.0])
    with pytest.raises(EmptySampleError):
        welch_t([], [2.0, 3.0])


# -- Mann-Whitney ---------------------------------------------------------------------

def test_mwu_separated_pairs():
    r = mann_whitney_u([1, 2], [3, 4])
    assert r.statistic == 0.0
    # U by direct pair counting
    assert r.statistic == sum(x > y for x in [1, 2] for y in [3, 4])


def test_mwu_identical_multisets():
    a = [1.0, 3.0, 3.0, 7.0]
    r = mann_whitney_u(a, list(reversed(a)))
    assert r.statistic == len(a) ** 2 / 2
    assert r.p_value == 1.0


def test_mwu_statistic_matches_pair_count():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.integers(0, 6, 7), rng.integers(0, 6, 5)
        count = sum((x > y) + 0.5 * (x == y) for x in a for y in b)
        assert mann_whitney_u(a, b).statistic == count


def test_mwu_close_to_exact_for_moderate_samples():
    # the normal approximation is expected to be accurate once both sides have several values
    rng = np.random.default_rng(5)
    for _ in range(15):
        a, b = rng.normal(size=7), rng.normal(0.7, size=8)
        assert abs(mann_whitney_u(a, b).p_value - exact_mwu_p(a, b)) <= 0.02


def test_rankdata_midranks():
    assert rankdata(np.array([10.0, 20.0, 10.0, 30.0])).tolist() == [1.5, 3.0, 1.5, 4.0]


# -- two-proportion z ---------------------------------------------------------------

def test_two_prop_examples():
    r = two_prop_z(50, 100, 50, 100)
    assert r.statistic == 0.0 and r.p_value == 1.0
    r = two_prop_z(50, 100, 30, 100)
    assert round(r.statistic, 3) == 2.887
    assert round(r.p_value, 4) == 0.0039
    z, p = mp_two_prop(50, 100, 30, 100)
    assert r.statistic == pytest.approx(z, abs=1e-12) and r.p_value == pytest.approx(p, abs=1e-12)


def test_two_prop_errors():
    with pytest.raises(DegeneratePoolError):
        two_prop_z(0, 10, 0, 20)
    with pytest.raises(ValueError):
        two_prop_z(11, 10, 0, 20)


# -- properties ---------------------------------------------------------------------

samples = st.lists(st.integers(-20, 20).map(float), min_size=2, max_size=12)


@settings(max_examples=80, deadline=None)
@given(samples, samples)
def test_symmetric_tests(a, b):
    m1, m2 = mann_whitney_u(a, b), mann_whitney_u(b, a)
    assert 0.0 <= m1.p_value <= 1.0
    assert m1.p_value == pytest.approx(m2.p_value, abs=1e-15)
    assert m1.statistic + m2.statistic == len(a) * len(b)
    if np.var(a) + np.var(b) > 0:
        w1, w2 = welch_t(a, b), welch_t(b, a)
        assert w1.statistic == -w2.statistic
        assert w1.p_value == pytest.approx(w2.p_value, abs=1e-15)
        assert 0.0 <= w1.p_value <= 1.0


@settings(max_examples=50, deadline=None)
@given(samples, samples, st.integers(1, 30))
def test_mwu_shift_monotone(a, b, shift):
    # once b sits at or right of a, shifting b further right cannot weaken the evidence
    base = mann_whitney_u(a, b)
    moved = mann_whitney_u(a, [x + shift for x in b])
    if base.statistic <= len(a) * len(b) / 2:
        assert moved.p_value <= base.p_value + 1e-15


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 50), st.integers(0, 50), st.integers(1, 9))
def test_two_prop_scale_invariance(n1, n2, x1, x2, c):
    x1, x2 = min(x1, n1), min(x2, n2)
    if x1 + x2 in (0, n1 + n2):
        return
    z1 = two_prop_z(x1, n1, x2, n2).statistic
    zc = two_prop_z(c * x1, c * n1, c * x2, c * n2).statistic
    assert zc == pytest.approx(math.sqrt(c) * z1, rel=1e-12, abs=1e-12)
    assert two_prop_z(x2, n2, x1, n1).statistic == pytest.approx(-z1, abs=1e-12)

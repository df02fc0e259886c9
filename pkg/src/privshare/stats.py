"""Hypothesis tests used across the toolkit.

Distribution functions are evaluated here rather than through a statistics
package: the normal tail by ``math.erfc`` and the Student t tail through the
regularized incomplete beta function, computed by a modified Lentz continued
fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegeneratePoolError,
    DegenerateVarianceError,
    EmptySampleError,
    TooFewSamplesError,
)

ALPHA = 0.05
MIN_NORMALITY_N = 8

_TINY = 1e-300
_EPS = 1e-16


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    test_name: str
    n1: int
    n2: int
    df: float | None = None
    z: float | None = None

    __test__ = False  # keep pytest from collecting this class

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA


def _as_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise EmptySampleError(f"sample {name} is empty")
    return arr


# -- special functions -----------------------------------------------------------

def normal_sf(z: float) -> float:
    """Upper tail of the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def normal_two_sided(z: float) -> float:
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with ``df`` degrees of freedom."""
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return min(1.0, betainc_reg(df / 2.0, 0.5, x))


# -- tests -------------------------------------------------------------------------

def jarque_bera(samples: Sequence[float]) -> tuple[float, float]:
    """JB statistic and its chi-square(2) upper-tail probability ``exp(-JB/2)``."""
    x = _as_array(samples, "samples")
    d = x - x.mean()
    m2 = float(np.mean(d ** 2))
    if m2 == 0.0:
        return math.inf, 0.0
    skew = float(np.mean(d ** 3)) / m2 ** 1.5
    kurt = float(np.mean(d ** 4)) / m2 ** 2
    jb = x.size / 6.0 * (skew ** 2 + (kurt - 3.0) ** 2 / 4.0)
    return jb, math.exp(-jb / 2.0)


def normality_gate(samples: Sequence[float]) -> bool:
    """True when Jarque-Bera does not reject normality at the 5% level."""
    x = _as_array(samples, "samples")
    if x.size < MIN_NORMALITY_N:
        raise TooFewSamplesError(f"normality check needs at least {MIN_NORMALITY_N} values, got {x.size}")
    if np.all(x == x[0]):
        return False
    return jarque_bera(x)[1] > ALPHA


def welch_t(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Unequal-variance t-test with Satterthwaite degrees of freedom."""
    xa, xb = _as_array(a, "a"), _as_array(b, "b")
    na, nb = xa.size, xb.size
    if na < 2 or nb < 2:
        raise TooFewSamplesError("Welch t-test needs at least two values per sample")
    va, vb = float(xa.var(ddof=1)) / na, float(xb.var(ddof=1)) / nb
    se2 = va + vb
    if se2 == 0.0:
        raise DegenerateVarianceError("both samples have zero variance")
    diff = float(xa.mean() - xb.mean())
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (na - 1) + vb ** 2 / (nb - 1))
    return TestResult(t, t_two_sided(t, df), "welch_t", na, nb, df=df)


def rankdata(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1 with ties given their average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    i = 0
    n = values.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """Two-sided rank-sum test using the normal approximation.

    ``statistic`` is U for sample ``a``.  The variance is tie-corrected and a
    0.5 continuity correction is applied; a continuity-corrected deviation at
    or below zero gives p = 1.
    """
    xa, xb = _as_array(a, "a"), _as_array(b, "b")
    n1, n2 = xa.size, xb.size
    pooled = np.concatenate([xa, xb])
    ranks = rankdata(pooled)
    u = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2.0
    mean = n1 * n2 / 2.0
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    dev = abs(u - mean) - 0.5
    if var <= 0.0 or dev <= 0.0:
        return TestResult(u, 1.0, "mann_whitney_u", n1, n2, z=0.0)
    z = math.copysign(dev / math.sqrt(var), u - mean)
    return TestResult(u, normal_two_sided(z), "mann_whitney_u", n1, n2, z=z)


def two_prop_z(x1: int, n1: int, x2: int, n2: int) -> TestResult:
    """Pooled two-proportion z-test of ``x1/n1`` against ``x2/n2``."""
    for x, n in ((x1, n1), (x2, n2)):
        if n < 1 or not 0 <= x <= n:
            raise ValueError(f"need 0 <= x <= n and n >= 1, got x={x}, n={n}")
    pooled = (x1 + x2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        raise DegeneratePoolError("pooled proportion is 0 or 1")
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (x1 / n1 - x2 / n2) / se
    return TestResult(z, normal_two_sided(z), "two_prop_z", n1, n2)

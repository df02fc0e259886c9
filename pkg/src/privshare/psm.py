"""Propensity-score matching with score strata and a fixed control ratio.

Scores come from an L2-regularized logistic regression on demographic
covariates.  The pooled scores are cut into quantile strata; inside each
stratum every case repeatedly takes the nearest-score control still
available until it holds ``ratio`` controls or the stratum runs dry.  Cases
take turns (one control per case per round, in a seeded order) so scarcity
is spread evenly rather than starving the last cases.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import chi2_contingency

from .errors import (
    DegenerateVarianceError,
    EmptyFeatureSetError,
    MissingColumnError,
    NoCasesError,
    SingleClassError,
)
from .schema import Cohort, subset
from .stats import ALPHA, welch_t

logger = logging.getLogger(__name__)

DEMOGRAPHIC_COVARIATES = ("age", "gender", "race", "ethnicity")
SMD_THRESHOLD = 0.1


class DegenerateCovariateWarning(UserWarning):
    """An encoded covariate had zero variance and was left out of the fit."""


def default_covariates(schema) -> list[str]:
    """The demographic columns when the schema has them, else every QI."""
    present = [c for c in DEMOGRAPHIC_COVARIATES if c in schema.names]
    return present or list(schema.qi)


# -- propensity model ----------------------------------------------------------------

@dataclass
class _Encoder:
    numeric: dict = field(default_factory=dict)  # name -> (mean, sd)
    categorical: dict = field(default_factory=dict)  # name -> non-reference levels
    feature_names: list = field(default_factory=list)
    order: list = field(default_factory=list)

    @classmethod
    def fit(cls, cohort: Cohort, covariates: Sequence[str]) -> "_Encoder":
        enc = cls(order=list(covariates))
        for name in covariates:
            vals = cohort.frame[name]
            if cohort.schema.is_numeric(name):
                x = vals.to_numpy(dtype=float)
                enc.numeric[name] = (float(x.mean()), float(x.std()))
                enc.feature_names.append(name)
            else:
                levels = sorted(pd.unique(vals.astype(str)))
                enc.categorical[name] = levels[1:]
                enc.feature_names.extend(f"{name}={lvl}" for lvl in levels[1:])
        return enc

    def transform(self, cohort: Cohort) -> np.ndarray:
        cols = []
        for name in self.order:
            vals = cohort.frame[name]
            if name in self.numeric:
                mu, sd = self.numeric[name]
                x = vals.to_numpy(dtype=float) - mu
                cols.append(x / sd if sd > 0 else np.zeros_like(x))
            else:
                s = vals.astype(str).to_numpy()
                for lvl in self.categorical[name]:
                    cols.append((s == lvl).astype(float))
        if not cols:
            return np.zeros((cohort.n, 0))
        return np.column_stack(cols)


@dataclass
class PropensityModel:
    covariates: list
    feature_names: list
    coefficients: np.ndarray
    intercept: float
    base_rate: float
    converged: bool
    n_iter: int
    dropped: list
    encoder: _Encoder = field(repr=False)
    keep: np.ndarray = field(repr=False)

    def predict(self, cohort: Cohort) -> np.ndarray:
        """Propensity score per record, aligned with ``cohort.ids``."""
        if len(self.feature_names) == 0:
            return np.full(cohort.n, self.base_rate)
        x = self.encoder.transform(cohort)[:, self.keep]
        return expit(self.intercept + x @ self.coefficients)

    @property
    def coefficient_map(self) -> dict:
        return dict(zip(self.feature_names, self.coefficients.tolist()))


def _logistic_newton(x: np.ndarray, y: np.ndarray, lam: float, tol: float, max_steps: int):
    """Minimise mean log-loss + lam/2 * |beta|^2 (intercept unpenalised)."""
    n, d = x.shape
    xa = np.hstack([np.ones((n, 1)), x])
    w = np.zeros(d + 1)
    ybar = y.mean()
    w[0] = np.log(ybar / (1 - ybar))
    pen = np.full(d + 1, lam)
    pen[0] = 0.0

    def objective(w):
        eta = xa @ w
        # log(1 + e^eta) - y*eta, computed stably
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + 0.5 * np.sum(pen * w * w))

    f = objective(w)
    for step in range(1, max_steps + 1):
        p = expit(xa @ w)
        grad = xa.T @ (p - y) / n + pen * w
        if np.max(np.abs(grad)) < tol:
            return w, True, step - 1
        wt = p * (1 - p)
        hess = (xa * wt[:, None]).T @ xa / n + np.diag(pen)
        hess[np.diag_indices_from(hess)] += 1e-12
        try:
            direction = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        slope = float(grad @ direction)
        while True:
            w_new = w - t * direction
            f_new = objective(w_new)
            if f_new <= f - 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and f_new >= f:
            return w, False, step
        w, f = w_new, f_new
    p = expit(xa @ w)
    grad = xa.T @ (p - y) / n + pen * w
    return w, bool(np.max(np.abs(grad)) < tol), max_steps


def fit_propensity(
    cohort: Cohort,
    covariates: Sequence[str] | None = None,
    seed: int = 0,
    lam: float = 1e-6,
    tol: float = 1e-8,
    max_steps: int = 10_000,
) -> PropensityModel:
    """Fit case-vs-control propensity on ``covariates``.

    Numeric covariates are z-scored and categorical ones dummy-coded against
    their first sorted level.  Encoded columns without variance are dropped
    with a :class:`DegenerateCovariateWarning`.  The Newton fit is
    deterministic; ``seed`` is accepted for interface symmetry.
    """
    covariates = default_covariates(cohort.schema) if covariates is None else list(covariates)
    for name in covariates:
        if name not in cohort.schema.names:
            raise MissingColumnError(name, "schema")
    y = cohort.labels.astype(float)
    if y.min() == y.max():
        raise SingleClassError("propensity model needs both cases and controls")
    base_rate = float(y.mean())
    enc = _Encoder.fit(cohort, covariates)
    x = enc.transform(cohort)
    keep = np.ones(x.shape[1], dtype=bool)
    dropped = []
    for j, name in enumerate(enc.feature_names):
        if np.all(x[:, j] == x[0, j]):
            keep[j] = False
            dropped.append(name)
            warnings.warn(f"covariate feature {name!r} is constant; dropped", DegenerateCovariateWarning)
    names = [n for n, k in zip(enc.feature_names, keep) if k]
    if not names:
        return PropensityModel(covariates, [], np.zeros(0), float(np.log(base_rate / (1 - base_rate))),
                               base_rate, True, 0, dropped, enc, keep)
    w, converged, n_iter = _logistic_newton(x[:, keep], y, lam, tol, max_steps)
    if not converged:
        logger.warning("propensity fit stopped after %d steps without reaching tolerance", n_iter)
    return PropensityModel(covariates, names, w[1:], float(w[0]), base_rate, converged, n_iter, dropped, enc, keep)


# -- matching -----------------------------------------------------------------------

@dataclass(frozen=True)
class StratumCount:
    cases: int
    controls: int
    matched: int


@dataclass
class MatchResult:
    matched_ids: frozenset
    cases: int
    controls: int
    strata_bounds: tuple
    per_stratum: list
    shortfall: int
    ratio: int
    pairs: dict = field(default_factory=dict, repr=False)

    @property
    def demand(self) -> int:
        return self.ratio * self.cases

    def apply(self, cohort: Cohort) -> Cohort:
        return subset(cohort, sorted(self.matched_ids))


class _Levels:
    """Available controls grouped by distinct score, with skip pointers."""

    def __init__(self, scores: np.ndarray, ids: np.ndarray):
        order = np.lexsort((ids, scores))
        s, i = scores[order], ids[order]
        self.values, starts = np.unique(s, return_index=True)
        bounds = list(starts) + [len(s)]
        self.queues = [list(i[bounds[j]:bounds[j + 1]]) for j in range(len(self.values))]
        self.heads = [0] * len(self.values)
        m = len(self.values)
        self.right = list(range(m + 1))  # next live level >= j (m = none)
        self.left = list(range(m + 1))  # slot j+1 stands for level j; slot 0 = none

    def _find(self, parent, j):
        root = j
        while parent[root] != root:
            root = parent[root]
        while parent[j] != root:
            parent[j], j = root, parent[j]
        return root

    def live_right(self, j):
        return self._find(self.right, j)

    def live_left(self, j):
        return self._find(self.left, j + 1) - 1

    def pop(self, j):
        q = self.queues[j]
        cid = q[self.heads[j]]
        self.heads[j] += 1
        if self.heads[j] == len(q):
            self.right[j] = j + 1
            self.left[j + 1] = j
        return cid

    def nearest(self, s):
        m = len(self.values)
        pos = int(np.searchsorted(self.values, s, side="left"))
        r = self.live_right(pos) if pos < m else m
        l = self.live_left(pos - 1) if pos > 0 else -1
        if r >= m and l < 0:
            return None
        if r >= m:
            return l
        if l < 0:
            return r
        dl, dr = s - self.values[l], self.values[r] - s
        if dl < dr:
            return l
        if dr < dl:
            return r
        return l if self.queues[l][self.heads[l]] < self.queues[r][self.heads[r]] else r


def strata_cuts(scores: np.ndarray, n_strata: int) -> np.ndarray:
    if n_strata == 1:
        return np.zeros(0)
    return np.quantile(scores, np.arange(1, n_strata) / n_strata, method="linear")


def stratified_match(
    cohort: Cohort,
    scores: np.ndarray,
    ratio: int = 5,
    n_strata: int = 5,
    seed: int = 0,
) -> MatchResult:
    """Match every case to up to ``ratio`` controls within its score stratum.

    ``scores`` is aligned with ``cohort.ids``.  Stratum ``j`` holds scores in
    ``(cut[j-1], cut[j]]`` (the first stratum is closed below).  Controls are
    used at most once; unmet demand is reported as ``shortfall`` and never
    filled from other strata.
    """
    if ratio < 1 or n_strata < 1:
        raise ValueError("ratio and n_strata must be >= 1")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (cohort.n,):
        raise ValueError("scores must align with cohort records")
    y = cohort.labels
    ids = cohort.ids
    if not (y == 1).any():
        raise NoCasesError("no cases to match")
    cuts = strata_cuts(scores, n_strata)
    stratum = np.searchsorted(cuts, scores, side="left")
    rng = np.random.default_rng(seed)
    matched = set(ids[y == 1].tolist())
    pairs: dict = {}
    per_stratum = []
    shortfall = 0
    for j in range(n_strata):
        in_j = stratum == j
        case_idx = np.flatnonzero(in_j & (y == 1))
        ctrl_idx = np.flatnonzero(in_j & (y == 0))
        order = case_idx[rng.permutation(case_idx.size)]
        levels = _Levels(scores[ctrl_idx], ids[ctrl_idx]) if ctrl_idx.size else None
        n_matched = 0
        budget = min(ratio * case_idx.size, ctrl_idx.size)
        for cid in ids[order].tolist():
            pairs[cid] = []
        rounds = 0
        while n_matched < budget and rounds < ratio:
            for ci in order:
                if n_matched == budget:
                    break
                lvl = levels.nearest(scores[ci])
                ctrl = int(levels.pop(lvl))
                pairs[int(ids[ci])].append(ctrl)
                matched.add(ctrl)
                n_matched += 1
            rounds += 1
        shortfall += ratio * case_idx.size - n_matched
        per_stratum.append(StratumCount(int(case_idx.size), int(ctrl_idx.size), n_matched))
    n_cases = int((y == 1).sum())
    return MatchResult(
        matched_ids=frozenset(matched),
        cases=n_cases,
        controls=len(matched) - n_cases,
        strata_bounds=tuple(float(c) for c in cuts),
        per_stratum=per_stratum,
        shortfall=int(shortfall),
        ratio=int(ratio),
        pairs=pairs,
    )


def match_cohort(
    cohort: Cohort,
    covariates: Sequence[str] | None = None,
    ratio: int = 5,
    n_strata: int = 5,
    seed: int = 0,
) -> tuple[Cohort, MatchResult, PropensityModel]:
    """Fit, match and return the matched sub-cohort."""
    model = fit_propensity(cohort, covariates, seed=seed)
    result = stratified_match(cohort, model.predict(cohort), ratio, n_strata, seed)
    return result.apply(cohort), result, model


# -- balance ------------------------------------------------------------------------

@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    test: str
    statistic: float
    p_value: float
    smd: float | None
    passed: bool


@dataclass
class BalanceReport:
    rows: list

    COLUMNS = ("covariate", "test", "statistic", "p_value", "smd", "passed")

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[getattr(r, c) for c in self.COLUMNS] for r in self.rows], columns=list(self.COLUMNS))


def standardized_mean_difference(a: np.ndarray, b: np.ndarray) -> float:
    diff = float(a.mean() - b.mean())
    va = float(a.var(ddof=1)) if a.size > 1 else 0.0
    vb = float(b.var(ddof=1)) if b.size > 1 else 0.0
    denom = np.sqrt((va + vb) / 2.0)
    if denom == 0:
        return 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
    return diff / denom


def balance_report(cohort: Cohort, covariates: Sequence[str] | None = None) -> BalanceReport:
    """Compare cases and controls on each covariate.

    Numeric covariates pass when the absolute standardized mean difference is
    below 0.1 (a Welch t-test is reported alongside); categorical covariates
    pass when the chi-square test of independence has p above 0.05.
    """
    covariates = default_covariates(cohort.schema) if covariates is None else list(covariates)
    if not covariates:
        raise EmptyFeatureSetError("no covariates to check")
    y = cohort.labels
    if y.min() == y.max():
        raise SingleClassError("balance check needs both cases and controls")
    rows = []
    for name in covariates:
        vals = cohort.frame[name]
        if cohort.schema.is_numeric(name):
            x = vals.to_numpy(dtype=float)
            a, b = x[y == 1], x[y == 0]
            smd = standardized_mean_difference(a, b)
            try:
                t = welch_t(a, b)
                stat, p = t.statistic, t.p_value
            except (DegenerateVarianceError, ValueError):
                stat, p = 0.0, 1.0 if a.mean() == b.mean() else 0.0
            rows.append(BalanceRow(name, "smd+welch_t", stat, p, smd, bool(abs(smd) < SMD_THRESHOLD)))
        else:
            table = pd.crosstab(vals.astype(str).to_numpy(), y).to_numpy()
            table = table[table.sum(axis=1) > 0]
            if table.shape[0] < 2 or table.shape[1] < 2:
                stat, p = 0.0, 1.0
            else:
                res = chi2_contingency(table)
                stat, p = float(res[0]), float(res[1])
            rows.append(BalanceRow(name, "chi_square", stat, p, None, bool(p > ALPHA)))
    return BalanceReport(rows)

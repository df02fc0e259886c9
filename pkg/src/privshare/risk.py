"""Equivalence classes, linkage/homogeneity vulnerability and subpopulation reports.

Records sharing every quasi-identifier value form an equivalence class C.
Each member carries linkage risk ``1/|C|`` and is linkage-vulnerable at
threshold ``tau`` when that risk is strictly greater than ``tau``.  A class is
homogeneous when its members cannot be told apart on the sensitive
attributes either; every member of a homogeneous class is vulnerable to a
homogeneity attack.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
import pandas as pd

from .errors import (
    EmptyCohortError,
    EmptyInputError,
    InvalidTauError,
    NoSensitiveAttributesError,
    UnknownIdError,
    ZeroBaselineError,
)
from .schema import Cohort, Kind

KEY_SEP = "\x1f"

DEFAULT_TAUS = (0.05, 0.075, 0.1)


class Scope(str, Enum):
    """How sensitive attributes are compared when testing homogeneity."""

    JOINT = "joint"
    PER_ATTRIBUTE = "per_attribute"


@dataclass(frozen=True)
class EquivalenceClass:
    key: str
    member_ids: frozenset
    size: int
    risk: float


@dataclass(frozen=True)
class RiskProfile:
    tau: float
    linkage_vulnerable: frozenset
    homogeneity_vulnerable: frozenset
    per_class: list = field(repr=False)


# -- grouping -------------------------------------------------------------------

def _codes(values: np.ndarray) -> np.ndarray:
    codes, _ = pd.factorize(values, sort=True)
    return codes.astype(np.int64)


def class_labels(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """Class index of every record (cohort order) and the size of each class.

    Classes are numbered in lexicographic order of their QI tuples.
    """
    if cohort.n == 0:
        raise EmptyCohortError("cannot group an empty cohort")
    codes = [_codes(cohort.frame[c].to_numpy()) for c in cohort.schema.qi]
    if len(codes) == 1:
        keyed = codes[0]
    else:
        # mixed-radix composite code; np.unique over rows is the fallback when it would overflow
        radix = [int(c.max()) + 1 for c in codes]
        if np.sum(np.log2(np.maximum(radix, 2))) < 62:
            keyed = np.zeros(cohort.n, dtype=np.int64)
            for c, r in zip(codes, radix):
                keyed = keyed * r + c
        else:
            _, keyed = np.unique(np.column_stack(codes), axis=0, return_inverse=True)
    _, labels, sizes = np.unique(keyed, return_inverse=True, return_counts=True)
    return labels.reshape(-1).astype(np.int64), sizes.astype(np.int64)


def _render_key(row: Iterable) -> str:
    parts = []
    for v in row:
        parts.append(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
    return KEY_SEP.join(parts)


def build_equivalence_classes(cohort: Cohort) -> list[EquivalenceClass]:
    """Partition the cohort into classes of identical QI tuples."""
    labels, sizes = class_labels(cohort)
    ids = cohort.ids
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    qi = cohort.frame[cohort.schema.qi].to_numpy()
    classes = []
    for c, size in enumerate(sizes):
        members = order[bounds[c]:bounds[c + 1]]
        classes.append(
            EquivalenceClass(
                key=_render_key(qi[members[0]]),
                member_ids=frozenset(ids[members].tolist()),
                size=int(size),
                risk=1.0 / int(size),
            )
        )
    return classes


# -- linkage ----------------------------------------------------------------------

def _check_tau(tau: float) -> None:
    if not (0.0 < tau < 1.0):
        raise InvalidTauError(f"tau must lie in (0, 1), got {tau}")


def linkage_mask(sizes_per_record: np.ndarray, tau: float) -> np.ndarray:
    _check_tau(tau)
    return 1.0 / np.asarray(sizes_per_record, dtype=float) > tau


def linkage_vulnerable(classes: Iterable[EquivalenceClass], tau: float) -> set[int]:
    """Ids whose class risk ``1/size`` is strictly above ``tau``."""
    _check_tau(tau)
    out: set[int] = set()
    for c in classes:
        if c.risk > tau:
            out.update(c.member_ids)
    return out


# -- homogeneity ------------------------------------------------------------------

def sensitive_codes(cohort: Cohort, scope: Scope | str = Scope.JOINT) -> np.ndarray:
    """Integer-coded sensitive attributes used for homogeneity tests.

    JOINT yields one column holding the id of each record's full SA vector.
    PER_ATTRIBUTE yields one column per SA that is not constant over the
    cohort (possibly zero columns).
    """
    scope = Scope(scope)
    sa = cohort.schema.sensitive
    if not sa:
        raise NoSensitiveAttributesError("schema declares no sensitive attributes")
    cols = [_codes(cohort.frame[c].to_numpy()) for c in sa]
    if scope is Scope.JOINT:
        _, sig = np.unique(np.column_stack(cols), axis=0, return_inverse=True)
        return sig.reshape(-1, 1).astype(np.int64)
    keep = [c for c in cols if c.max() != c.min()]
    if not keep:
        return np.zeros((cohort.n, 0), dtype=np.int64)
    return np.column_stack(keep).astype(np.int64)


def homogeneous_groups(labels: np.ndarray, codes: np.ndarray, min_size: int = 2) -> np.ndarray:
    """Boolean per group: size >= min_size and some code column constant within it."""
    labels = np.asarray(labels)
    n_groups = int(labels.max()) + 1 if len(labels) else 0
    sizes = np.bincount(labels, minlength=n_groups)
    out = np.zeros(n_groups, dtype=bool)
    if codes.shape[1] == 0 or n_groups == 0:
        return out
    order = np.argsort(labels, kind="stable")
    present = sizes > 0
    starts = np.concatenate([[0], np.cumsum(sizes)])[:-1][present]
    sorted_codes = codes[order]
    lo = np.minimum.reduceat(sorted_codes, starts, axis=0)
    hi = np.maximum.reduceat(sorted_codes, starts, axis=0)
    out[present] = (lo == hi).any(axis=1)
    return out & (sizes >= min_size)


def homogeneity_mask(
    cohort: Cohort,
    labels: np.ndarray,
    scope: Scope | str = Scope.JOINT,
    min_size: int = 2,
) -> np.ndarray:
    codes = sensitive_codes(cohort, scope)
    return homogeneous_groups(labels, codes, min_size)[labels]


def homogeneity_vulnerable(
    cohort: Cohort,
    classes: list[EquivalenceClass],
    sa_scope: Scope | str = Scope.JOINT,
    min_size: int = 2,
) -> set[int]:
    """Members of every homogeneous equivalence class.

    With ``JOINT`` scope a class is homogeneous when all members share the
    full sensitive vector; with ``PER_ATTRIBUTE`` when some non-constant
    sensitive attribute takes one value across the class.  Classes smaller
    than ``min_size`` are never flagged.
    """
    codes = sensitive_codes(cohort, sa_scope)
    pos = pd.Index(cohort.ids)
    labels = np.empty(cohort.n, dtype=np.int64)
    for c, cls in enumerate(classes):
        labels[pos.get_indexer(list(cls.member_ids))] = c
    flagged = homogeneous_groups(labels, codes, min_size)
    out: set[int] = set()
    for c, cls in enumerate(classes):
        if flagged[c]:
            out.update(cls.member_ids)
    return out


def assess(
    cohort: Cohort,
    tau: float = 0.1,
    sa_scope: Scope | str = Scope.JOINT,
    min_size: int = 2,
) -> RiskProfile:
    classes = build_equivalence_classes(cohort)
    return RiskProfile(
        tau=tau,
        linkage_vulnerable=frozenset(linkage_vulnerable(classes, tau)),
        homogeneity_vulnerable=frozenset(homogeneity_vulnerable(cohort, classes, sa_scope, min_size)),
        per_class=classes,
    )


@dataclass(frozen=True)
class RiskCounts:
    """Vulnerable-id sets for several thresholds plus homogeneity."""

    linkage: dict
    homogeneity: frozenset

    def counts(self) -> dict:
        out = {tau: len(ids) for tau, ids in self.linkage.items()}
        out["HA"] = len(self.homogeneity)
        return out

    def indicator(self, which) -> frozenset:
        if isinstance(which, str) and which.upper() == "HA":
            return self.homogeneity
        return self.linkage[float(which)]


def risk_counts(
    cohort: Cohort,
    taus: Iterable[float] = DEFAULT_TAUS,
    sa_scope: Scope | str = Scope.JOINT,
    min_size: int = 2,
) -> RiskCounts:
    """Vectorised vulnerability sets for a grid of thresholds."""
    labels, sizes = class_labels(cohort)
    ids = cohort.ids
    linkage = {}
    for tau in taus:
        linkage[float(tau)] = frozenset(ids[linkage_mask(sizes[labels], tau)].tolist())
    ha = homogeneity_mask(cohort, labels, sa_scope, min_size)
    return RiskCounts(linkage=linkage, homogeneity=frozenset(ids[ha].tolist()))


# -- reporting ----------------------------------------------------------------------

def quartile_bins(values) -> tuple[float, float]:
    """First and third quartile by linear interpolation at h = (n-1)p."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptyInputError("quartile_bins needs at least one value")
    q1, q3 = np.quantile(arr, [0.25, 0.75], method="linear")
    return float(q1), float(q3)


def _fmt(v: float) -> str:
    return np.format_float_positional(float(v), trim="-")


@dataclass(frozen=True)
class SubpopRow:
    qi: str
    bin: str
    population: int
    vulnerable: int
    share: float


@dataclass
class SubpopReport:
    rows: list

    COLUMNS = ("qi", "bin", "population", "vulnerable", "share")

    def for_qi(self, qi: str) -> list[SubpopRow]:
        return [r for r in self.rows if r.qi == qi]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.qi, r.bin, r.population, r.vulnerable, r.share) for r in self.rows],
            columns=list(self.COLUMNS),
        )

    def to_csv(self, path=None) -> str | None:
        return self.to_frame().to_csv(path, index=False, lineterminator="\n")

    def to_text(self) -> str:
        buf = io.StringIO()
        current = None
        for r in self.rows:
            if r.qi != current:
                current = r.qi
                buf.write(f"{r.qi}\n")
            buf.write(
                f"  {r.bin:<28} population={r.population:<8d} vulnerable={r.vulnerable:<8d} "
                f"share={100 * r.share:6.2f}%\n"
            )
        return buf.getvalue()


def numeric_bins(values) -> list[tuple[str, float, float, bool]]:
    """``(label, lo, hi, closed_left)`` for the three quartile ranges."""
    arr = np.asarray(values, dtype=float)
    q1, q3 = quartile_bins(arr)
    lo, hi = float(arr.min()), float(arr.max())
    return [
        (f"[{_fmt(lo)},{_fmt(q1)}]", lo, q1, True),
        (f"({_fmt(q1)},{_fmt(q3)}]", q1, q3, False),
        (f"({_fmt(q3)},{_fmt(hi)}]", q3, hi, False),
    ]


def subpop_report(cohort: Cohort, vulnerable: Iterable[int], reference: Cohort | None = None) -> SubpopReport:
    """Per-QI population and vulnerable counts by bin.

    Numeric QIs use the three quartile ranges, categorical QIs one bin per
    category (most populous first).  ``reference`` supplies the values used
    for binning, for instance the original cohort when ``cohort`` holds
    anonymized QIs for the same record ids.
    """
    vulnerable = np.fromiter((int(i) for i in vulnerable), dtype=np.int64)
    ids = cohort.ids
    unknown = ~np.isin(vulnerable, ids)
    if unknown.any():
        raise UnknownIdError(vulnerable[unknown].tolist())
    source = cohort if reference is None else reference
    src_frame = source.frame.reindex(ids)
    is_vuln = np.isin(ids, vulnerable)
    rows: list[SubpopRow] = []
    for qi in cohort.schema.qi:
        vals = src_frame[qi].to_numpy()
        if cohort.schema.column(qi).kind is not Kind.CATEGORY:
            vals = vals.astype(float)
            for label, lo, hi, closed in numeric_bins(vals):
                inside = (vals >= lo if closed else vals > lo) & (vals <= hi)
                pop, vul = int(inside.sum()), int((inside & is_vuln).sum())
                rows.append(SubpopRow(qi, label, pop, vul, vul / pop if pop else 0.0))
        else:
            cats, counts = np.unique(vals.astype(str), return_counts=True)
            order = sorted(range(len(cats)), key=lambda i: (-counts[i], cats[i]))
            for i in order:
                inside = vals.astype(str) == cats[i]
                pop, vul = int(counts[i]), int((inside & is_vuln).sum())
                rows.append(SubpopRow(qi, str(cats[i]), pop, vul, vul / pop if pop else 0.0))
    return SubpopReport(rows)


def pct_decrease(before: float, after: float) -> float:
    """Percentage decrease from ``before`` to ``after``."""
    if before <= 0:
        raise ZeroBaselineError("baseline count must be positive")
    if after < 0:
        raise ValueError("after must be non-negative")
    return (before - after) / before * 100.0

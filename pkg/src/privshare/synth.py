"""Synthetic inpatient cohorts with realistic demographic marginals.

Each record first draws a latent outcome class; demographics, utilization and
history flags are drawn conditionally on that class.  The released binary
target then follows the latent class through a logistic link whose intercept
differs between records that are linkage-vulnerable at ``risk_tau`` and the
rest, so the vulnerable stratum's positive rate can be lifted above the base
rate while the overall rate stays at ``base_rate``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

from .errors import InvalidSpecError
from .risk import class_labels, linkage_mask
from .schema import Cohort, Schema

GENDER_CONTROLS = {"Female": 0.60484, "Male": 0.39516}
GENDER_CASES = {"Female": 0.49883, "Male": 0.50117}
RACE_CONTROLS = {
    "White": 0.70471,
    "Black or African American": 0.22356,
    "Other Race": 0.03773,
    "Asian": 0.02342,
    "Unavailable": 0.00816,
    "American Indian or Alaska Native": 0.00187,
    "Multiple": 0.00055,
}
RACE_CASES = {
    "White": 0.73461,
    "Black or African American": 0.21008,
    "Other Race": 0.02778,
    "Asian": 0.01792,
    "Unavailable": 0.00623,
    "American Indian or Alaska Native": 0.00338,
    "Multiple": 0.0,
}
ETHNICITY_CONTROLS = {
    "Not Hispanic or Latino": 0.91513,
    "Hispanic or Latino": 0.05773,
    "Unknown": 0.02508,
    "Declined": 0.00206,
}
ETHNICITY_CASES = {
    "Not Hispanic or Latino": 0.92599,
    "Hispanic or Latino": 0.04077,
    "Unknown": 0.03168,
    "Declined": 0.00156,
}

HISTORY_FLAGS = {
    "HX_HTN": 0.38, "HX_DM": 0.22, "HX_CAD": 0.12, "HX_CHF": 0.08, "HX_COPD": 0.09,
    "HX_CKD": 0.08, "HX_AFIB": 0.07, "HX_CVA": 0.05, "HX_CANCER": 0.07, "HX_ASTHMA": 0.08,
    "HX_OBESITY": 0.15, "HX_DEPR": 0.12, "HX_ANX": 0.10, "HX_GERD": 0.12, "HX_HLD": 0.25,
    "HX_THYROID": 0.08, "HX_ANEMIA": 0.06, "HX_OSA": 0.05, "HX_PVD": 0.03, "HX_DEMENTIA": 0.03,
    "HX_LIVER": 0.02, "HX_ALCOHOL": 0.03, "HX_DRUG": 0.03, "HX_SEIZURE": 0.02, "HX_RA": 0.015,
    "HX_HIV": 0.005, "HX_MI": 0.04, "HX_DVT": 0.02, "HX_PARKINSON": 0.01, "HX_TRANSPLANT": 0.004,
}

OTHER_FLAGS = (
    "UTI_FLAG", "PNA_FLAG", "AKI_FLAG", "GIB_FLAG", "FALL_FLAG",
    "DKA_FLAG", "CELL_FLAG", "SYNC_FLAG", "CP_FLAG", "DEHY_FLAG",
)


@dataclass
class SynthSpec:
    n: int = 119_871
    base_rate: float = 3851 / 119_871
    vulnerable_uplift: float = 0.008
    risk_tau: float = 0.1
    signal: float = 4.0
    age_controls: tuple = (54.29807, 19.43443)
    age_cases: tuple = (65.14775, 17.67968)
    age_range: tuple = (18, 90)
    age_step: int = 1
    los_mean: tuple = (2.2, 5.0)
    los_dispersion: float = 2.2
    visits_mean: tuple = (0.62, 1.4)
    visits_dispersion: float = 0.27
    gender: tuple = (GENDER_CONTROLS, GENDER_CASES)
    race: tuple = (RACE_CONTROLS, RACE_CASES)
    ethnicity: tuple = (ETHNICITY_CONTROLS, ETHNICITY_CASES)
    sa_prevalence: Mapping = field(default_factory=lambda: dict(HISTORY_FLAGS))
    sa_case_multiplier: float = 2.0
    n_non_sensitive: int = 10
    nsa_prevalence: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise InvalidSpecError("n must be positive")
        if not 0 < self.base_rate < 1:
            raise InvalidSpecError("base_rate must lie in (0, 1)")
        if not 0 <= self.base_rate + self.vulnerable_uplift <= 1:
            raise InvalidSpecError("base_rate + vulnerable_uplift must lie in [0, 1]")
        lo, hi = self.age_range
        if lo >= hi or self.age_step < 1:
            raise InvalidSpecError("bad age range or step")
        for name in ("gender", "race", "ethnicity"):
            for shares in getattr(self, name):
                total = sum(shares.values())
                if abs(total - 1.0) > 1e-3 or min(shares.values()) < 0:
                    raise InvalidSpecError(f"{name} shares must be non-negative and sum to 1 (got {total})")
        if any(not 0 <= p <= 1 for p in self.sa_prevalence.values()):
            raise InvalidSpecError("sa prevalences must lie in [0, 1]")
        if not 0 <= self.n_non_sensitive <= len(OTHER_FLAGS) * 10:
            raise InvalidSpecError("n_non_sensitive out of range")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpecError(f"unknown synth fields: {sorted(unknown)}")
        kw = dict(d)
        for key in ("age_controls", "age_cases", "age_range", "los_mean", "visits_mean", "gender", "race", "ethnicity"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, tuple):
                out[key] = list(val)
        return out


def nsa_names(count: int) -> list[str]:
    names = list(OTHER_FLAGS[:count])
    i = 1
    while len(names) < count:
        names.append(f"DX{i:02d}_FLAG")
        i += 1
    return names


def synthetic_schema(spec: SynthSpec | None = None) -> Schema:
    spec = spec or SynthSpec()
    return Schema.from_roles(
        qi_numeric=["age", "los", "visits"],
        qi_categorical=["gender", "race", "ethnicity"],
        sensitive=list(spec.sa_prevalence),
        non_sensitive=nsa_names(spec.n_non_sensitive),
        target="sepsis_flag",
    )


def _categorical(rng, shares_by_class, latent) -> np.ndarray:
    out = np.empty(len(latent), dtype=object)
    for cls in (0, 1):
        shares = shares_by_class[cls]
        levels = list(shares)
        p = np.asarray([shares[l] for l in levels], dtype=float)
        idx = np.flatnonzero(latent == cls)
        out[idx] = np.asarray(levels, dtype=object)[rng.choice(len(levels), size=len(idx), p=p / p.sum())]
    return out


def _age(rng, spec, latent) -> np.ndarray:
    lo, hi = spec.age_range
    out = np.empty(len(latent))
    for cls, (mu, sd) in ((0, spec.age_controls), (1, spec.age_cases)):
        idx = np.flatnonzero(latent == cls)
        vals = rng.normal(mu, sd, size=len(idx))
        bad = (vals < lo) | (vals > hi)
        while bad.any():
            vals[bad] = rng.normal(mu, sd, size=int(bad.sum()))
            bad = (vals < lo) | (vals > hi)
        out[idx] = vals
    step = spec.age_step
    out = np.clip(np.round(out / step) * step, lo, hi)
    return out.astype(float)


def _count(rng, means, dispersion, latent) -> np.ndarray:
    out = np.empty(len(latent))
    for cls in (0, 1):
        idx = np.flatnonzero(latent == cls)
        mu = means[cls]
        out[idx] = 1 + rng.negative_binomial(dispersion, dispersion / (dispersion + mu), size=len(idx))
    return out.astype(float)


def _intercept(score: np.ndarray, target_rate: float) -> float:
    if target_rate <= 0.0:
        return -np.inf
    if target_rate >= 1.0:
        return np.inf
    return brentq(lambda a: expit(a + score).mean() - target_rate, -60.0, 60.0, xtol=1e-12)


def generate_synthetic(spec: SynthSpec | None = None) -> Cohort:
    """Draw a cohort following ``spec``; identical specs give identical cohorts."""
    spec = spec or SynthSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    latent = (rng.random(n) < spec.base_rate).astype(np.int64)

    data = {
        "age": _age(rng, spec, latent),
        "los": _count(rng, spec.los_mean, spec.los_dispersion, latent),
        "visits": _count(rng, spec.visits_mean, spec.visits_dispersion, latent),
        "gender": _categorical(rng, spec.gender, latent),
        "race": _categorical(rng, spec.race, latent),
        "ethnicity": _categorical(rng, spec.ethnicity, latent),
    }
    for name, prev in spec.sa_prevalence.items():
        p = np.where(latent == 1, min(0.95, prev * spec.sa_case_multiplier), prev)
        data[name] = np.where(rng.random(n) < p, "1", "0").astype(object)
    for name in nsa_names(spec.n_non_sensitive):
        data[name] = np.where(rng.random(n) < spec.nsa_prevalence, "1", "0").astype(object)

    schema = synthetic_schema(spec)
    data["sepsis_flag"] = np.zeros(n, dtype=np.int64)
    frame = pd.DataFrame(data, index=pd.RangeIndex(n))
    draft = Cohort(schema, frame)

    labels, sizes = class_labels(draft)
    vulnerable = linkage_mask(sizes[labels], spec.risk_tau)
    n_v = int(vulnerable.sum())
    rate_v = spec.base_rate + spec.vulnerable_uplift if n_v else 0.0
    rate_nv = (spec.base_rate * n - rate_v * n_v) / (n - n_v) if n_v < n else spec.base_rate
    if n_v == n:
        if spec.vulnerable_uplift != 0:
            raise InvalidSpecError("uplift infeasible: every record is vulnerable")
        rate_v = spec.base_rate
    if not 0.0 <= rate_nv <= 1.0:
        raise InvalidSpecError(
            f"uplift infeasible: {n_v} of {n} records vulnerable would need a {rate_nv:.3f} rate elsewhere"
        )
    score = spec.signal * latent
    logit = np.empty(n)
    for mask, rate in ((vulnerable, rate_v), (~vulnerable, rate_nv)):
        if mask.any():
            logit[mask] = _intercept(score[mask], rate) + score[mask]
    frame["sepsis_flag"] = (rng.random(n) < expit(logit)).astype(np.int64)
    return Cohort(schema, frame)

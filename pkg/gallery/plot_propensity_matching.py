"""
Propensity-score matching
=========================

Balance a rare outcome by matching every case to five controls inside
propensity quintiles, then check covariate balance.
"""

from privshare.psm import balance_report, match_cohort
from privshare.synth import SynthSpec, generate_synthetic

cohort = generate_synthetic(SynthSpec(n=30_000, seed=3))
print(f"cases: {int(cohort.labels.sum())} of {cohort.n}")

matched, result, model = match_cohort(cohort, ratio=5, n_strata=5, seed=3)
print(f"matched {result.cases} cases to {result.controls} controls (shortfall {result.shortfall})")
for j, s in enumerate(result.per_stratum):
    print(f"  stratum {j}: {s.cases} cases, {s.controls} controls available, {s.matched} used")

# numeric covariates pass on |SMD| < 0.1, categorical ones on chi-square p > 0.05
print(balance_report(matched).to_frame().to_string(index=False))

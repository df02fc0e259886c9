"""
Baseline re-identification risk
===============================

Generate a synthetic cohort, group it into quasi-identifier equivalence
classes and count the records exposed to linkage and homogeneity attacks.
"""

import numpy as np

from privshare.risk import DEFAULT_TAUS, build_equivalence_classes, risk_counts, subpop_report
from privshare.synth import SynthSpec, generate_synthetic

# a 20k cohort with ages in whole years
cohort = generate_synthetic(SynthSpec(n=20_000, seed=1))
print(f"{cohort.n} records, QIs: {cohort.schema.qi}")

# equivalence classes: records sharing every QI value
classes = build_equivalence_classes(cohort)
sizes = np.array([c.size for c in classes])
print(f"{len(classes)} classes, {np.sum(sizes == 1)} singletons, largest {sizes.max()}")

# linkage risk is 1/|class|; a record is exposed when that exceeds tau
rc = risk_counts(cohort, DEFAULT_TAUS)
for tau in DEFAULT_TAUS:
    print(f"tau={tau:<6} linkage-vulnerable: {len(rc.linkage[tau])}")
print(f"homogeneity-vulnerable: {len(rc.homogeneity)}")

# who is exposed: vulnerable share per QI category
report = subpop_report(cohort, rc.linkage[0.1])
print(report.to_text())

import numpy as np
import pytest

from privshare.errors import InvalidSpecError
from privshare.risk import risk_counts
from privshare.synth import GENDER_CASES, GENDER_CONTROLS, RACE_CASES, RACE_CONTROLS, SynthSpec, generate_synthetic


@pytest.fixture(scope="module")
def big():
    spec = SynthSpec(n=100_000, seed=1)
    return spec, generate_synthetic(spec)


def test_female_share(big):
    _, cohort = big
    share = np.mean(cohort.values("gender") == "Female")
    assert abs(share - 0.60484) <= 0.01


@pytest.mark.parametrize("column,controls,cases", [("gender", GENDER_CONTROLS, GENDER_CASES),
                                                   ("race", RACE_CONTROLS, RACE_CASES)])
def test_marginals_match_mixture(big, column, controls, cases):
    spec, cohort = big
    values = cohort.values(column)
    for level in controls:
        expected = (1 - spec.base_rate) * controls[level] + spec.base_rate * cases[level]
        assert abs(np.mean(values == level) - expected) <= 0.01


def test_base_rate_and_ranges(big):
    spec, cohort = big
    y = cohort.labels
    se = np.sqrt(spec.base_rate * (1 - spec.base_rate) / spec.n)
    assert abs(y.mean() - spec.base_rate) <= 4 * se
    age = cohort.values("age")
    assert age.min() >= 18 and age.max() <= 90
    assert np.all(age == np.round(age))
    assert cohort.values("los").min() >= 1 and cohort.values("visits").min() >= 1
    assert len(cohort.schema.sensitive) == 30 and len(cohort.schema.non_sensitive) == 10


def test_same_seed_identical():
    spec = SynthSpec(n=2000, vulnerable_uplift=0.0, seed=4)
    assert generate_synthetic(spec).equals(generate_synthetic(spec))
    other = SynthSpec(n=2000, vulnerable_uplift=0.0, seed=5)
    assert not generate_synthetic(spec).equals(generate_synthetic(other))


def _rate_gap(cohort, mask, base):
    n = int(mask.sum())
    se = np.sqrt(base * (1 - base) / n)
    return abs(cohort.labels[mask].mean() - base) / se


def test_zero_uplift_vulnerability_strata_at_base_rate():
    spec = SynthSpec(n=60_000, vulnerable_uplift=0.0, base_rate=0.1, seed=2)
    cohort = generate_synthetic(spec)
    vuln = np.isin(cohort.ids, list(risk_counts(cohort, [0.1]).linkage[0.1]))
    for mask in (vuln, ~vuln):
        assert _rate_gap(cohort, mask, spec.base_rate) <= 4


def test_null_construction_every_subpopulation_at_base_rate():
    spec = SynthSpec(n=60_000, vulnerable_uplift=0.0, signal=0.0, base_rate=0.1, seed=2)
    cohort = generate_synthetic(spec)
    for column in ("gender", "race", "ethnicity"):
        for level in np.unique(cohort.values(column)):
            mask = cohort.values(column) == level
            if mask.sum() >= 500:
                assert _rate_gap(cohort, mask, spec.base_rate) <= 4
    age = cohort.values("age")
    for lo, hi in ((18, 38), (38, 70), (70, 90)):
        assert _rate_gap(cohort, (age > lo) & (age <= hi), spec.base_rate) <= 4


def test_uplift_lifts_vulnerable_stratum():
    spec = SynthSpec(n=60_000, base_rate=1 / 6, vulnerable_uplift=0.25 - 1 / 6, age_step=1, seed=3)
    cohort = generate_synthetic(spec)
    vuln = np.isin(cohort.ids, list(risk_counts(cohort, [0.1]).linkage[0.1]))
    assert _rate_gap(cohort, vuln, 0.25) <= 4
    assert _rate_gap(cohort, np.ones(cohort.n, bool), 1 / 6) <= 4


def test_invalid_specs():
    with pytest.raises(InvalidSpecError):
        SynthSpec(base_rate=1.2).validate()
    with pytest.raises(InvalidSpecError):
        SynthSpec(gender=({"Female": 0.5, "Male": 0.2}, GENDER_CASES)).validate()
    with pytest.raises(InvalidSpecError):
        SynthSpec.from_dict({"n": 10, "colour": "red"})
    # nearly every record of a small fine-grained cohort is vulnerable, so the uplift cannot be offset
    with pytest.raises(InvalidSpecError):
        generate_synthetic(SynthSpec(n=2000, vulnerable_uplift=0.2, base_rate=0.05))


def test_spec_dict_round_trip():
    spec = SynthSpec(n=123, age_step=5, seed=9)
    assert SynthSpec.from_dict(spec.to_dict()) == spec

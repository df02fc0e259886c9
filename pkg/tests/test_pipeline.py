import json

import numpy as np
import pytest

from privshare.errors import ConfigError, StageError
from privshare.pipeline import PipelineConfig, build_candidates, run_pipeline
from privshare.synth import SynthSpec, generate_synthetic

from conftest import make_cohort

SMALL_SYNTH = {"n": 3000, "age_step": 10, "vulnerable_uplift": 0.0, "base_rate": 0.1}


def small_config(tmp_path, **overrides):
    fields = dict(
        synth=dict(SMALL_SYNTH),
        engines=["kanon", "greedy", "mols"],
        k_list=[5, 10],
        mols_budget=2000,
        ml={"iterations": 1, "classifiers": ["LR", "NB"]},
        out_dir=str(tmp_path / "bundle"),
    )
    fields.update(overrides)
    return PipelineConfig.from_dict(fields)


# 0/1 and 2/3 share QIs; 2/3 also share the full sensitive vector
EIGHT = dict(
    numeric={"age": [30, 30, 40, 40, 50, 60, 70, 80]},
    categorical={"gender": ["F", "F", "M", "M", "F", "M", "F", "M"]},
    sensitive={"s1": [0, 0, 1, 1, 0, 1, 0, 0], "s2": [0, 1, 0, 0, 0, 1, 0, 1]},
    target=[0, 1, 0, 1, 0, 1, 0, 1],
)


def test_eight_record_hand_trace():
    cohort = make_cohort(**EIGHT)
    config = PipelineConfig(engines=["kanon", "greedy"], k_list=[5], risk_indicator="HA")
    cands = {c.key: c for c in build_candidates(cohort, config)}
    assert len(cands) == 6
    assert cands[("OR", None, None)].cohort.equals(cohort)
    assert cands[("OR_NV_ONLY", None, None)].cohort.ids.tolist() == [0, 1, 4, 5, 6, 7]
    for engine in ("kanon", "greedy"):
        fa = cands[("FA", engine, 5)].cohort
        # fewer than 2k records: one cluster; mean age 400/8, gender tie F/M resolved to F
        assert fa.values("age").tolist() == [50.0] * 8
        assert fa.values("gender").tolist() == ["F"] * 8
        assert fa.values("s2").tolist() == EIGHT["sensitive"]["s2"]
        assert cands[("FA_NV_ONLY", engine, 5)].cohort.equals(fa)

    config = PipelineConfig(engines=["kanon"], k_list=[5], risk_indicator=0.1)
    cands = {c.key: c for c in build_candidates(cohort, config)}
    # every OR class is below 10 records and the single FA class has 8
    assert cands[("OR_NV_ONLY", None, None)].cohort.n == 0
    assert cands[("FA_NV_ONLY", "kanon", 5)].cohort.n == 0


def test_kanon_k10_leaves_nothing_to_remove():
    cohort = generate_synthetic(SynthSpec(n=3000, age_step=10, vulnerable_uplift=0.0, seed=1))
    config = PipelineConfig(engines=["kanon"], k_list=[10], risk_indicator=0.1)
    cands = {c.key: c for c in build_candidates(cohort, config)}
    assert cands[("FA_NV_ONLY", "kanon", 10)].cohort.equals(cands[("FA", "kanon", 10)].cohort)


def test_ha_indicator_with_diverse_engines():
    cohort = generate_synthetic(SynthSpec(n=2000, age_step=10, vulnerable_uplift=0.0, seed=2))
    config = PipelineConfig(engines=["greedy", "mols"], k_list=[5], risk_indicator="HA", mols_budget=500)
    cands = {c.key: c for c in build_candidates(cohort, config)}
    for engine in ("greedy", "mols"):
        assert cands[("FA_NV_ONLY", engine, 5)].cohort.equals(cands[("FA", engine, 5)].cohort)


@pytest.mark.parametrize("engines,k_list", [(["kanon"], [5]), (["kanon", "mols"], [5, 10, 15])])
def test_candidate_cardinality(engines, k_list):
    cohort = generate_synthetic(SynthSpec(n=1500, age_step=10, vulnerable_uplift=0.0, seed=3))
    config = PipelineConfig(engines=engines, k_list=k_list, mols_budget=200)
    cands = build_candidates(cohort, config)
    assert len(cands) == 2 + 2 * len(engines) * len(k_list)
    by_key = {c.key: c for c in cands}
    for c in cands:
        if c.tag == "FA_NV_ONLY":
            assert set(c.cohort.ids) <= set(by_key[("FA", c.engine, c.k)].cohort.ids)
    assert set(by_key[("OR_NV_ONLY", None, None)].cohort.ids) <= set(cohort.ids)


def test_single_cell_bundle(tmp_path):
    config = small_config(tmp_path, engines=["kanon"], k_list=[5],
                          ml={"iterations": 1, "classifiers": ["DT", "LR", "NB", "NN", "RF", "SVM"]})
    bundle = run_pipeline(config)
    assert bundle.passed, bundle.manifest["checks"]
    metrics = bundle.tables["metrics.csv"]
    assert len(metrics) == 4 * 6
    out = tmp_path / "bundle"
    names = sorted(p.name for p in out.iterdir())
    expected = {"risk_counts.csv", "prop_tests.csv", "metrics.csv", "pct_change.csv", "manifest.json"}
    assert expected <= set(names)
    assert {f"subpop_{q}.csv" for q in ("age", "los", "visits", "gender", "race", "ethnicity")} <= set(names)
    risk = bundle.tables["risk_counts.csv"]
    assert list(risk.columns) == ["engine", "k", "tau", "count", "HA"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["k_list"] == [5]
    assert set(manifest["files"]) == expected - {"manifest.json"} | {n for n in names if n.startswith("subpop_")}


def test_psm_accounting_in_manifest(tmp_path):
    bundle = run_pipeline(small_config(tmp_path, engines=["kanon"], k_list=[5]), write=False)
    for row in bundle.manifest["psm"]:
        assert row["controls"] + row["shortfall"] == 5 * row["cases"]
    for cand in bundle.manifest["candidates"]:
        assert cand["matched_positives"] <= cand["n"]


def test_rerun_is_bit_identical(tmp_path):
    config = small_config(tmp_path, engines=["kanon", "mols"], k_list=[5])
    out = tmp_path / "bundle"
    run_pipeline(config)
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    run_pipeline(config)
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


def test_shared_ids_mode(tmp_path):
    config = small_config(tmp_path, engines=["kanon"], k_list=[5], psm={"shared_ids": True})
    bundle = run_pipeline(config, write=False)
    assert bundle.passed
    # only OR is matched; the other candidates reuse its ids
    assert [(r["tag"], r["engine"]) for r in bundle.manifest["psm"]] == [("OR", None)]


def test_stage_errors_are_tagged(tmp_path):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"qi_numeric": ["age"], "target": "y"}))
    config = PipelineConfig(schema=str(schema), input=str(tmp_path / "missing.csv"))
    with pytest.raises(StageError, match=r"^\[load\]"):
        run_pipeline(config, write=False)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"engines": ["zheng"]})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"risk_indicator": "LA"})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"k_list": []})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"ml": {"iterations": 0}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"colour": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"input": "x.csv"})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"k_list": [5], "risk_indicator": "HA", "psm": {"ratio": 3}}))
    cfg = PipelineConfig.load(path)
    assert cfg.indicator == "HA" and cfg.psm.ratio == 3
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    defaults = PipelineConfig()
    assert defaults.k_list == [5, 10, 15, 20] and defaults.tau_list == [0.05, 0.075, 0.1]
    assert np.isclose(defaults.indicator, 0.1)

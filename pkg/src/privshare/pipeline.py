"""End-to-end run: baseline risk, anonymization grid, candidate datasets,
matching, classifier evaluation and the report bundle.

For every (engine, k) the original cohort (OR) is clustered and transformed
into a further-anonymized cohort (FA).  Removing the records flagged by the
risk indicator gives OR_NV_ONLY (flags from OR) and FA_NV_ONLY (flags
recomputed on FA).  Each candidate is propensity-matched, then scored by the
classifier harness, and the metric samples are compared pairwise.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from . import __version__
from .anonymize import ClusterAssignment, Engine, anonymize, apply_cluster_transform
from .errors import ConfigError, DegeneratePoolError, StageError
from .ml import CLASSIFIERS, MetricTable, TaggedDataset, compare_cells, run_experiment
from .psm import match_cohort
from .risk import DEFAULT_TAUS, RiskCounts, Scope, pct_decrease, risk_counts, subpop_report
from .schema import Cohort, Schema, drop, load_cohort, subset
from .stats import two_prop_z
from .synth import SynthSpec, generate_synthetic

logger = logging.getLogger(__name__)

TAGS = ("OR", "OR_NV_ONLY", "FA", "FA_NV_ONLY")
ENGINE_ORDER = ("kanon", "greedy", "mols")
COMPARISONS = (("OR", "FA"), ("OR_NV_ONLY", "FA_NV_ONLY"), ("FA", "FA_NV_ONLY"))


# -- configuration ------------------------------------------------------------------

@dataclass
class PsmConfig:
    ratio: int = 5
    strata: int = 5
    covariates: list | None = None
    shared_ids: bool = False


@dataclass
class MlConfig:
    iterations: int = 100
    split: float = 0.8
    classifiers: list = field(default_factory=lambda: list(CLASSIFIERS))
    split_mode: str = "paired"
    n_jobs: int = 1


@dataclass
class PipelineConfig:
    schema: str | None = None
    input: str | None = None
    synth: dict | None = None
    engines: list = field(default_factory=lambda: list(ENGINE_ORDER))
    k_list: list = field(default_factory=lambda: [5, 10, 15, 20])
    tau_list: list = field(default_factory=lambda: list(DEFAULT_TAUS))
    risk_indicator: float | str = 0.1
    sa_scope: str = "joint"
    min_size: int = 2
    categorical_weight: float = 1.0
    mols_budget: int = 10_000
    mols_neighbors: int = 10
    psm: PsmConfig = field(default_factory=PsmConfig)
    ml: MlConfig = field(default_factory=MlConfig)
    seed: int = 0
    out_dir: str = "privshare_out"

    def __post_init__(self):
        if isinstance(self.psm, Mapping):
            self.psm = _build(PsmConfig, self.psm, "psm")
        if isinstance(self.ml, Mapping):
            self.ml = _build(MlConfig, self.ml, "ml")
        self.validate()

    def validate(self) -> None:
        if not self.engines or not self.k_list or not self.tau_list:
            raise ConfigError("engines, k_list and tau_list must be nonempty")
        for e in self.engines:
            if e not in ENGINE_ORDER:
                raise ConfigError(f"unknown engine {e!r}; choose from {ENGINE_ORDER}")
        if len(set(self.engines)) != len(self.engines) or len(set(self.k_list)) != len(self.k_list):
            raise ConfigError("engines and k_list must not repeat")
        for k in self.k_list:
            if int(k) != k or k < 2:
                raise ConfigError(f"k must be an integer >= 2, got {k}")
        for t in self.tau_list:
            if not 0 < float(t) < 1:
                raise ConfigError(f"tau must lie in (0, 1), got {t}")
        ind = self.risk_indicator
        if not (isinstance(ind, str) and ind.upper() == "HA"):
            try:
                ok = 0 < float(ind) < 1
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise ConfigError(f"risk_indicator must be a tau in (0, 1) or 'HA', got {ind!r}")
        Scope(self.sa_scope)
        if self.input is not None and self.schema is None:
            raise ConfigError("an input cohort needs a schema file")
        if self.ml.iterations < 1:
            raise ConfigError("ml.iterations must be >= 1")

    @property
    def indicator(self):
        ind = self.risk_indicator
        return "HA" if isinstance(ind, str) and ind.upper() == "HA" else float(ind)

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def _build(kind, d: Mapping, where: str):
    unknown = set(d) - set(kind.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    return kind(**d)


# -- stage bookkeeping --------------------------------------------------------------

@contextmanager
def _stage(name: str):
    t0 = time.perf_counter()
    logger.info("stage %s: start", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    logger.info("stage %s: done in %.1fs", name, time.perf_counter() - t0)


def _risk_taus(config: PipelineConfig) -> list[float]:
    taus = [float(t) for t in config.tau_list]
    if config.indicator != "HA" and config.indicator not in taus:
        taus.append(config.indicator)
    return taus


def _indicator_label(ind) -> str:
    return "HA" if ind == "HA" else repr(float(ind))


# -- cohort and anonymization grid --------------------------------------------------

def load_input(config: PipelineConfig) -> tuple[Cohort, dict]:
    """Cohort named by the config, plus a description for the manifest."""
    if config.input is not None:
        schema = Schema.load(config.schema)
        return load_cohort(config.input, schema), {"source": "csv", "path": str(config.input)}
    overrides = dict(config.synth or {})
    overrides.setdefault("seed", config.seed)
    spec = SynthSpec.from_dict(overrides)
    return generate_synthetic(spec), {"source": "synthetic", "synth": spec.to_dict()}


@dataclass
class AnonymizedRun:
    engine: str
    k: int
    assignment: ClusterAssignment
    cohort: Cohort
    risk: RiskCounts


def anonymize_grid(cohort: Cohort, config: PipelineConfig) -> dict:
    """(engine, k) -> :class:`AnonymizedRun` for the configured grid.

    The local-search engine starts from the greedy clustering for the same k,
    which is computed once and shared.
    """
    runs = {}
    scope = Scope(config.sa_scope)
    for k in config.k_list:
        greedy = None
        for engine in ENGINE_ORDER:
            wanted = engine in config.engines
            if not wanted and not (engine == "greedy" and "mols" in config.engines):
                continue
            if engine == "kanon":
                a = anonymize(cohort, Engine.MDAV_KANON, k, categorical_weight=config.categorical_weight)
            elif engine == "greedy":
                a = anonymize(cohort, Engine.GREEDY_DIVERSE, k, sa_scope=scope, min_size=config.min_size,
                              categorical_weight=config.categorical_weight)
                greedy = a
            else:
                a = anonymize(cohort, Engine.MULTIOBJ_LOCAL_SEARCH, k, sa_scope=scope,
                              budget=config.mols_budget, seed=config.seed, min_size=config.min_size,
                              categorical_weight=config.categorical_weight,
                              neighbors=config.mols_neighbors, initial=greedy)
            if not wanted:
                continue
            fa = apply_cluster_transform(cohort, a)
            rc = risk_counts(fa, _risk_taus(config), config.sa_scope, config.min_size)
            runs[(engine, int(k))] = AnonymizedRun(engine, int(k), a, fa, rc)
            logger.info("%s k=%d: %s", engine, k, rc.counts())
    return {key: runs[key] for key in sorted(runs, key=lambda ek: (config.engines.index(ek[0]), ek[1]))}


@dataclass
class CandidateDataset:
    tag: str
    engine: str | None
    k: int | None
    cohort: Cohort

    @property
    def key(self) -> tuple:
        return (self.tag, self.engine, self.k)


def build_candidates(cohort: Cohort, config: PipelineConfig, baseline: RiskCounts | None = None,
                     grid: dict | None = None) -> list[CandidateDataset]:
    """OR, OR_NV_ONLY and, per (engine, k), FA and FA_NV_ONLY."""
    ind = config.indicator
    if baseline is None:
        baseline = risk_counts(cohort, _risk_taus(config), config.sa_scope, config.min_size)
    if grid is None:
        grid = anonymize_grid(cohort, config)
    out = [
        CandidateDataset("OR", None, None, cohort),
        CandidateDataset("OR_NV_ONLY", None, None, drop(cohort, baseline.indicator(ind), allow_empty=True)),
    ]
    for (engine, k), run in grid.items():
        out.append(CandidateDataset("FA", engine, k, run.cohort))
        out.append(CandidateDataset("FA_NV_ONLY", engine, k, drop(run.cohort, run.risk.indicator(ind), allow_empty=True)))
    return out


# -- reports ------------------------------------------------------------------------

def risk_count_table(baseline: RiskCounts, grid: dict, taus) -> pd.DataFrame:
    rows = []
    sources = [("OR", "", baseline)] + [(e, k, run.risk) for (e, k), run in grid.items()]
    for engine, k, rc in sources:
        counts = rc.counts()
        for tau in taus:
            rows.append((engine, k, float(tau), counts[float(tau)], counts["HA"]))
    return pd.DataFrame(rows, columns=["engine", "k", "tau", "count", "HA"])


def subpop_tables(cohort: Cohort, baseline: RiskCounts, grid: dict, taus) -> dict:
    indicators = [float(t) for t in taus] + ["HA"]
    frames = {qi: [] for qi in cohort.schema.qi}
    base_counts = {}
    for ind in indicators:
        rep = subpop_report(cohort, baseline.indicator(ind)).to_frame()
        for _, r in rep.iterrows():
            base_counts[(ind, r.qi, r.bin)] = r.vulnerable
        rep.insert(0, "indicator", _indicator_label(ind))
        rep.insert(0, "k", "")
        rep.insert(0, "engine", "OR")
        rep["pct_decrease"] = np.nan
        for qi, part in rep.groupby("qi", sort=False):
            frames[qi].append(part)
    for (engine, k), run in grid.items():
        for ind in indicators:
            rep = subpop_report(run.cohort, run.risk.indicator(ind), reference=cohort).to_frame()
            dec = []
            for _, r in rep.iterrows():
                before = base_counts[(ind, r.qi, r.bin)]
                dec.append(pct_decrease(before, r.vulnerable) if before > 0 else np.nan)
            rep.insert(0, "indicator", _indicator_label(ind))
            rep.insert(0, "k", k)
            rep.insert(0, "engine", engine)
            rep["pct_decrease"] = dec
            for qi, part in rep.groupby("qi", sort=False):
                frames[qi].append(part)
    return {qi: pd.concat(parts, ignore_index=True) for qi, parts in frames.items()}


def proportion_tests(matched: Cohort, baseline: RiskCounts, taus) -> pd.DataFrame:
    """Positive rate of the whole matched cohort against its vulnerable part."""
    y = matched.labels
    ids = matched.ids
    n_all, pos_all = int(y.size), int(y.sum())
    rows = []
    for ind in [float(t) for t in taus] + ["HA"]:
        mask = np.isin(ids, np.fromiter(baseline.indicator(ind), dtype=np.int64))
        n_v, pos_v = int(mask.sum()), int(y[mask].sum())
        z = p = np.nan
        if n_v > 0:
            try:
                res = two_prop_z(pos_v, n_v, pos_all, n_all)
                z, p = res.statistic, res.p_value
            except DegeneratePoolError:
                pass
        rows.append((_indicator_label(ind), n_all, pos_all, pos_all / n_all, n_v, pos_v,
                     pos_v / n_v if n_v else np.nan, z, p))
    return pd.DataFrame(rows, columns=["indicator", "entire_n", "entire_positive", "entire_rate",
                                       "vulnerable_n", "vulnerable_positive", "vulnerable_rate", "z", "p_value"])


def comparison_table(table: MetricTable, grid_keys, classifiers) -> pd.DataFrame:
    pairs = [(("OR", None, None), ("OR_NV_ONLY", None, None))]
    for engine, k in grid_keys:
        for a, b in COMPARISONS:
            ka = (a, None, None) if a.startswith("OR") else (a, engine, k)
            pairs.append((ka, (b, engine, k)))
    rows = []
    for (ta, ea, kka), (tb, eb, kkb) in pairs:
        for cid in classifiers:
            for metric in ("precision", "recall"):
                va = table.values(ta, cid, metric, ea, kka)
                vb = table.values(tb, cid, metric, eb, kkb)
                fa = table.flags(ta, cid, metric, ea, kka)
                fb = table.flags(tb, cid, metric, eb, kkb)
                res = compare_cells(va, vb, fa, fb)
                row = (res.mean_a, res.mean_b, res.pct_change, res.test_name, res.statistic,
                       res.p_value, res.significant)
                engine = eb or ""
                k = "" if kkb is None else kkb
                rows.append((ta, tb, engine, k, cid, metric) + row)
    return pd.DataFrame(rows, columns=["baseline", "other", "engine", "k", "classifier", "metric",
                                       "mean_baseline", "mean_other", "pct_change", "test", "statistic",
                                       "p_value", "significant"])


# -- checks -------------------------------------------------------------------------

def _check(name: str, ok: bool, detail: str = "") -> dict:
    return {"check": name, "status": "PASS" if ok else "FAIL", "detail": detail}


def hard_constraint_checks(config, cohort, candidates, grid, matches, table) -> list[dict]:
    checks = []
    expected = 2 + 2 * len(config.engines) * len(config.k_list)
    checks.append(_check("candidate_count", len(candidates) == expected, f"{len(candidates)} of {expected}"))
    by_key = {c.key: c for c in candidates}
    subset_ok = set(by_key[("OR_NV_ONLY", None, None)].cohort.ids) <= set(cohort.ids)
    for (engine, k) in grid:
        subset_ok &= set(by_key[("FA_NV_ONLY", engine, k)].cohort.ids) <= set(by_key[("FA", engine, k)].cohort.ids)
    checks.append(_check("nv_subset", subset_ok))
    bad_zero = []
    for (engine, k), run in grid.items():
        counts = run.risk.counts()
        for tau in config.tau_list:
            if 1.0 / k <= float(tau) and counts[float(tau)] != 0:
                bad_zero.append(f"{engine}/k={k}/tau={tau}")
    checks.append(_check("linkage_zero_where_1/k<=tau", not bad_zero, ", ".join(bad_zero)))
    bad_ha = [f"{e}/k={k}" for (e, k), run in grid.items() if e != "kanon" and run.risk.counts()["HA"] != 0]
    checks.append(_check("diverse_engines_no_homogeneity", not bad_ha, ", ".join(bad_ha)))
    bad_size = []
    for (e, k), run in grid.items():
        sizes = run.assignment.sizes
        if sizes.min() < k or (e == "kanon" and sizes.max() > 2 * k - 1):
            bad_size.append(f"{e}/k={k}")
    checks.append(_check("cluster_sizes", not bad_size, ", ".join(bad_size)))
    worse = []
    for k in config.k_list:
        if ("mols", k) in grid and ("greedy", k) in grid:
            if grid[("mols", k)].assignment.loss.total > grid[("greedy", k)].assignment.loss.total + 1e-9:
                worse.append(f"k={k}")
    checks.append(_check("local_search_not_worse_than_greedy", not worse, ", ".join(worse)))
    bad_psm = []
    for key, m in matches.items():
        if m.controls > m.ratio * m.cases or m.controls + m.shortfall != m.ratio * m.cases:
            bad_psm.append("/".join(str(x) for x in key if x is not None))
    checks.append(_check("psm_ratio_accounting", not bad_psm, ", ".join(bad_psm)))
    frame = table.to_frame()
    in_range = bool(((frame[["precision", "recall"]] >= 0) & (frame[["precision", "recall"]] <= 1)).all().all())
    checks.append(_check("metric_bounds", in_range))
    per_cell = frame.groupby(["tag", "engine", "k", "classifier"]).size()
    checks.append(_check("samples_per_cell", bool((per_cell == config.ml.iterations).all()),
                         f"expected {config.ml.iterations}"))
    return checks


# -- orchestration ------------------------------------------------------------------

@dataclass
class ReportBundle:
    tables: dict
    manifest: dict
    candidates: list = field(repr=False)
    metrics: MetricTable = field(repr=False)

    @property
    def passed(self) -> bool:
        return all(c["status"] == "PASS" for c in self.manifest["checks"])


def _versions() -> dict:
    import numba
    import scipy
    import sklearn

    return {
        "privshare": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "numba": numba.__version__,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(float(obj)) else float(obj)
    return obj


def run_pipeline(config: PipelineConfig, cohort: Cohort | None = None, write: bool = True) -> ReportBundle:
    """Execute every stage and (by default) write the bundle to ``config.out_dir``."""
    with _stage("load"):
        if cohort is None:
            cohort, source = load_input(config)
        else:
            source = {"source": "in-memory"}
    taus = [float(t) for t in config.tau_list]
    with _stage("risk"):
        baseline = risk_counts(cohort, _risk_taus(config), config.sa_scope, config.min_size)
    with _stage("anonymize"):
        grid = anonymize_grid(cohort, config)
    with _stage("candidates"):
        candidates = build_candidates(cohort, config, baseline, grid)
    with _stage("psm"):
        matches = {}
        matched = {}
        or_matched, or_match, _ = match_cohort(cohort, config.psm.covariates, config.psm.ratio,
                                               config.psm.strata, config.seed)
        for cand in candidates:
            if cand.tag == "OR":
                m_cohort, m = or_matched, or_match
            elif config.psm.shared_ids:
                keep = sorted(or_match.matched_ids & set(cand.cohort.ids.tolist()))
                m_cohort, m = subset(cand.cohort, keep), None
            else:
                m_cohort, m, _ = match_cohort(cand.cohort, config.psm.covariates, config.psm.ratio,
                                              config.psm.strata, config.seed)
            matched[cand.key] = m_cohort
            if m is not None:
                matches[cand.key] = m
    with _stage("ml"):
        datasets = [TaggedDataset(c.tag, matched[c.key], c.engine, c.k) for c in candidates]
        table = run_experiment(datasets, config.ml.iterations, config.ml.split, config.seed,
                               config.ml.classifiers, config.ml.split_mode, config.ml.n_jobs)
    with _stage("compare"):
        classifiers = [c.upper() for c in config.ml.classifiers]
        comparisons = comparison_table(table, list(grid), classifiers)
    with _stage("report"):
        tables = {
            "risk_counts.csv": risk_count_table(baseline, grid, taus),
            "prop_tests.csv": proportion_tests(or_matched, baseline, taus),
            "metrics.csv": table.to_frame(),
            "pct_change.csv": comparisons,
        }
        for qi, frame in subpop_tables(cohort, baseline, grid, taus).items():
            tables[f"subpop_{qi}.csv"] = frame
        manifest = {
            "config": config.to_dict(),
            "seeds": {
                "synth": (source.get("synth") or {}).get("seed"),
                "local_search": config.seed,
                "psm": config.seed,
                "ml_base_seed": config.seed,
                "ml_split_mode": config.ml.split_mode,
            },
            "versions": _versions(),
            "input": source,
            "cohort": {"n": cohort.n, "positives": int(cohort.labels.sum())},
            "candidates": [
                {"tag": c.tag, "engine": c.engine, "k": c.k, "n": c.cohort.n,
                 "matched_n": matched[c.key].n, "matched_positives": int(matched[c.key].labels.sum())}
                for c in candidates
            ],
            "psm": [
                {"tag": key[0], "engine": key[1], "k": key[2], "cases": m.cases, "controls": m.controls,
                 "shortfall": m.shortfall, "strata_bounds": list(m.strata_bounds)}
                for key, m in matches.items()
            ],
            "anonymization": [
                {"engine": e, "k": k, "clusters": run.assignment.n_clusters,
                 "loss": run.assignment.loss.total, "infeasible_clusters": len(run.assignment.infeasible)}
                for (e, k), run in grid.items()
            ],
            "checks": hard_constraint_checks(config, cohort, candidates, grid, matches, table),
        }
        bundle = ReportBundle(tables, _jsonable(manifest), candidates, table)
        if write:
            write_bundle(bundle, config.out_dir)
    return bundle


def _csv_bytes(frame: pd.DataFrame) -> bytes:
    return frame.to_csv(index=False, lineterminator="\n").encode()


def write_bundle(bundle: ReportBundle, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name in sorted(bundle.tables):
        data = _csv_bytes(bundle.tables[name])
        (out / name).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    bundle.manifest["files"] = hashes
    (out / "manifest.json").write_text(json.dumps(bundle.manifest, indent=2, sort_keys=True) + "\n")
    return out

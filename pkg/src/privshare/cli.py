"""Command-line entry point: ``privshare <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

from .anonymize import Engine, anonymize, apply_cluster_transform
from .errors import ConfigError, PrivShareError
from .ml import CLASSIFIERS, TaggedDataset, run_experiment
from .pipeline import PipelineConfig, risk_count_table, run_pipeline, subpop_tables
from .psm import balance_report, match_cohort
from .risk import DEFAULT_TAUS, risk_counts
from .schema import Schema, load_cohort, write_cohort
from .synth import SynthSpec, generate_synthetic, synthetic_schema

logger = logging.getLogger("privshare")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--schema", default=default, help="schema JSON file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="random seed")
    p.add_argument("--out-dir", default=default, help="directory for outputs")
    p.add_argument("--config", default=default, help="JSON config file")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)
    return p


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _out_dir(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config_file(args) -> dict:
    if not args.config:
        return {}
    with open(args.config) as fh:
        return json.load(fh)


def _require_schema(args) -> Schema:
    if not args.schema:
        raise ConfigError("--schema is required")
    return Schema.load(args.schema)


# -- subcommands ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    fields = _load_config_file(args)
    fields = dict(fields.get("synth", fields))
    for key in ("n", "base_rate", "vulnerable_uplift", "age_step"):
        val = getattr(args, key)
        if val is not None:
            fields[key] = val
    if args.seed_given or "seed" not in fields:
        fields["seed"] = args.seed
    spec = SynthSpec.from_dict(fields)
    cohort = generate_synthetic(spec)
    out = _out_dir(args)
    csv_path = Path(args.out) if args.out else out / "cohort.csv"
    schema_path = Path(args.schema) if args.schema else out / "schema.json"
    write_cohort(cohort, csv_path)
    synthetic_schema(spec).dump(schema_path)
    print(f"wrote {cohort.n} records to {csv_path} and schema to {schema_path}")
    return 0


def cmd_risk(args) -> int:
    schema = _require_schema(args)
    cohort = load_cohort(args.input, schema)
    taus = _floats(args.taus)
    rc = risk_counts(cohort, taus, args.scope, args.min_size)
    out = _out_dir(args)
    risk_count_table(rc, {}, taus).to_csv(out / "risk_counts.csv", index=False, lineterminator="\n")
    for qi, frame in subpop_tables(cohort, rc, {}, taus).items():
        frame.to_csv(out / f"subpop_{qi}.csv", index=False, lineterminator="\n")
    for key, count in rc.counts().items():
        label = "HA" if key == "HA" else f"tau={key}"
        print(f"{label:<12} {count}")
    return 0


def cmd_anonymize(args) -> int:
    schema = _require_schema(args)
    cohort = load_cohort(args.input, schema)
    engine = Engine(args.engine)
    kwargs = {}
    if engine is not Engine.MDAV_KANON:
        kwargs.update(sa_scope=args.scope, min_size=args.min_size)
    if engine is Engine.MULTIOBJ_LOCAL_SEARCH:
        kwargs.update(budget=args.budget, seed=args.seed)
    assignment = anonymize(cohort, engine, args.k, **kwargs)
    fa = apply_cluster_transform(cohort, assignment)
    out = _out_dir(args)
    target = Path(args.out) if args.out else out / f"fa_{engine.value}_k{args.k}.csv"
    write_cohort(fa, target)
    if args.assignment:
        pd.DataFrame({"record_id": assignment.record_ids, "cluster": assignment.labels}).to_csv(
            args.assignment, index=False, lineterminator="\n"
        )
    print(
        f"{engine.value} k={args.k}: {assignment.n_clusters} clusters, "
        f"loss={assignment.loss.total:.6g}, wrote {target}"
    )
    return 0


def cmd_match(args) -> int:
    schema = _require_schema(args)
    cohort = load_cohort(args.input, schema)
    covariates = args.covariates.split(",") if args.covariates else None
    matched, result, _ = match_cohort(cohort, covariates, args.ratio, args.strata, args.seed)
    out = _out_dir(args)
    target = Path(args.out) if args.out else out / "matched.csv"
    write_cohort(matched, target)
    report = balance_report(matched, covariates)
    if args.balance:
        report.to_frame().to_csv(args.balance, index=False, lineterminator="\n")
    print(f"cases={result.cases} controls={result.controls} shortfall={result.shortfall} -> {target}")
    print(report.to_frame().to_string(index=False))
    return 0


def cmd_evaluate(args) -> int:
    schema = _require_schema(args)
    paths = [p for p in args.input.split(",") if p]
    tags = args.tags.split(",") if args.tags else [Path(p).stem for p in paths]
    if len(tags) != len(paths):
        raise ConfigError("--tags must name every input")
    datasets = [TaggedDataset(tag, load_cohort(p, schema)) for tag, p in zip(tags, paths)]
    classifiers = [c.strip().upper() for c in args.classifiers.split(",") if c.strip()]
    table = run_experiment(datasets, args.iterations, args.split, args.seed, classifiers,
                           args.split_mode, args.n_jobs)
    out = Path(args.out) if args.out else _out_dir(args) / "metrics.csv"
    table.to_frame().to_csv(out, index=False, lineterminator="\n")
    print(table.means().to_string(index=False))
    return 0


def cmd_pipeline(args) -> int:
    fields = _load_config_file(args)
    if args.schema:
        fields["schema"] = args.schema
    if args.input:
        fields["input"] = args.input
    if args.out_dir:
        fields["out_dir"] = args.out_dir
    if args.seed_given or "seed" not in fields:
        fields["seed"] = args.seed
    if args.iterations is not None:
        fields.setdefault("ml", {})["iterations"] = args.iterations
    config = PipelineConfig.from_dict(fields)
    bundle = run_pipeline(config)
    for check in bundle.manifest["checks"]:
        print(f"{check['status']}  {check['check']}  {check['detail']}".rstrip())
    print(f"report bundle written to {config.out_dir}")
    return 0 if bundle.passed else 1


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privshare",
        description="Re-identification risk, cluster anonymization and utility evaluation for patient cohorts.",
        parents=[_global_flags(False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort and its schema")
    p.add_argument("--n", type=int)
    p.add_argument("--base-rate", type=float)
    p.add_argument("--vulnerable-uplift", type=float)
    p.add_argument("--age-step", type=int)
    p.add_argument("--out", help="cohort CSV path (default <out-dir>/cohort.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("risk", parents=[common], help="count linkage and homogeneity vulnerable records")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--taus", default=",".join(str(t) for t in DEFAULT_TAUS))
    p.add_argument("--scope", default="joint", choices=["joint", "per_attribute"])
    p.add_argument("--min-size", type=int, default=2)
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("anonymize", parents=[common], help="cluster and transform a cohort")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--engine", required=True, choices=[e.value for e in Engine])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--scope", default="joint", choices=["joint", "per_attribute"])
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--out")
    p.add_argument("--assignment", help="optional CSV of record_id -> cluster")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("match", parents=[common], help="propensity-score match cases to controls")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ratio", type=int, default=5)
    p.add_argument("--strata", type=int, default=5)
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--out")
    p.add_argument("--balance", help="balance report CSV path")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("evaluate", parents=[common], help="repeated train/test classifier evaluation")
    p.add_argument("--in", dest="input", required=True, help="comma-separated cohort CSVs")
    p.add_argument("--tags", help="comma-separated dataset tags")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--classifiers", default=",".join(c.lower() for c in CLASSIFIERS))
    p.add_argument("--split-mode", default="paired", choices=["paired", "fixed"])
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", parents=[common], help="run the full flow and write the report bundle")
    p.add_argument("--in", dest="input", help="cohort CSV (default: synthetic cohort)")
    p.add_argument("--iterations", type=int, help="override ml.iterations")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    level = logging.WARNING - 10 * min(args.verbose or 0, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PrivShareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Shared builders for small hand-made cohorts."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from privshare.schema import Cohort, Schema


def make_cohort(numeric=None, categorical=None, sensitive=None, target=None, non_sensitive=None, ids=None):
    """Build a cohort from column dicts; roles follow the argument they are passed in."""
    numeric = dict(numeric or {})
    categorical = dict(categorical or {})
    sensitive = dict(sensitive or {})
    non_sensitive = dict(non_sensitive or {})
    columns = {**numeric, **categorical, **sensitive, **non_sensitive}
    n = len(next(iter(columns.values())))
    if target is None:
        target = [i % 2 for i in range(n)]
    kinds = {name: "real" for name in numeric}
    schema = Schema.from_roles(
        qi_numeric=list(numeric),
        qi_categorical=list(categorical),
        sensitive=list(sensitive),
        non_sensitive=list(non_sensitive),
        target="y",
        kinds=kinds,
    )
    data = {name: np.asarray(vals, dtype=float) for name, vals in numeric.items()}
    data.update({name: np.asarray(vals, dtype=object) for name, vals in categorical.items()})
    data.update({name: np.asarray(vals, dtype=np.int64) for name, vals in sensitive.items()})
    data.update({name: np.asarray(vals, dtype=np.int64) for name, vals in non_sensitive.items()})
    data["y"] = np.asarray(target, dtype=np.int64)
    index = pd.Index(np.arange(n) if ids is None else ids, name="record_id")
    return Cohort(schema, pd.DataFrame(data, index=index))


def random_cohort(rng: np.random.Generator, n: int, n_sa: int = 3, levels: int = 4):
    """Coarse random cohort: small value ranges so classes of every size occur."""
    return make_cohort(
        numeric={"age": rng.integers(0, levels, n), "los": rng.integers(0, 3, n)},
        categorical={"sex": rng.choice(["F", "M"], n), "race": rng.choice(["A", "B", "C"], n)},
        sensitive={f"hx{j}": (rng.random(n) < rng.uniform(0.05, 0.6)).astype(int) for j in range(n_sa)},
        target=(rng.random(n) < 0.3).astype(int),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance outcome; printed as a PASS/FAIL line in the summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        _CRITERIA[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])

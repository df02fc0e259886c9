import json

import numpy as np
import pytest

from privshare.errors import (
    CohortIOError,
    EmptyCohortError,
    MissingColumnError,
    ParseError,
    SchemaError,
    UnknownIdError,
)
from privshare.schema import Role, Schema, load_cohort, subset, write_cohort
from privshare.synth import SynthSpec, generate_synthetic, synthetic_schema

from conftest import make_cohort

HEADER = "Age,LOS,Visits,Gender,Race,Ethnicity,HX_DM,HX_HTN,UtiFlag,SepsisFlag"
ROWS = [
    "50,2,1,Female,White,Non-Hispanic or Latino,0,1,0,0",
    "29,19,2,Female,Asian,Non-Hispanic or Latino,0,0,P,0",
    "38,1,1,Male,White,Non-Hispanic or Latino,1,0,0,0",
    "86,30,10,Male,Black or African American,Hispanic or Latino,1,1,P,1",
]


@pytest.fixture
def sample_schema():
    return Schema.from_roles(
        qi_numeric=["Age", "LOS", "Visits"],
        qi_categorical=["Gender", "Race", "Ethnicity"],
        sensitive=["HX_DM", "HX_HTN"],
        non_sensitive=["UtiFlag"],
        target="SepsisFlag",
        kinds={"UtiFlag": "category"},
    )


def _write(path, header, rows):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_load_four_row_sample(tmp_path, sample_schema):
    cohort = load_cohort(_write(tmp_path / "c.csv", HEADER, ROWS), sample_schema)
    assert cohort.n == 4
    assert cohort.ids.tolist() == [0, 1, 2, 3]
    assert cohort.values("Age").tolist() == [50, 29, 38, 86]
    assert cohort.labels.tolist() == [0, 0, 0, 1]
    assert cohort.values("Race")[3] == "Black or African American"


def test_missing_sensitive_column(tmp_path, sample_schema):
    header = HEADER.replace("HX_HTN,", "")
    rows = [",".join(r.split(",")[:7] + r.split(",")[8:]) for r in ROWS]
    with pytest.raises(MissingColumnError, match="HX_HTN"):
        load_cohort(_write(tmp_path / "c.csv", header, rows), sample_schema)


def test_parse_error_names_row_and_column(tmp_path, sample_schema):
    rows = list(ROWS)
    rows[2] = rows[2].replace("38,", "abc,", 1)
    with pytest.raises(ParseError) as info:
        load_cohort(_write(tmp_path / "c.csv", HEADER, rows), sample_schema)
    assert info.value.row == 3
    assert info.value.column == "Age"
    assert "Age" in str(info.value) and "3" in str(info.value)


def test_empty_and_missing_values(tmp_path, sample_schema):
    with pytest.raises(EmptyCohortError):
        load_cohort(_write(tmp_path / "e.csv", HEADER, []), sample_schema)
    rows = list(ROWS)
    rows[0] = rows[0].replace("Female", "", 1)
    with pytest.raises(ParseError, match="missing"):
        load_cohort(_write(tmp_path / "m.csv", HEADER, rows), sample_schema)


def test_target_must_be_binary(tmp_path, sample_schema):
    rows = list(ROWS)
    rows[0] = rows[0][:-1] + "2"
    with pytest.raises(ParseError, match="0/1"):
        load_cohort(_write(tmp_path / "t.csv", HEADER, rows), sample_schema)


def test_categorical_values_trimmed_case_sensitive(tmp_path, sample_schema):
    rows = list(ROWS)
    rows[0] = rows[0].replace("Female", "  Female ")
    rows[1] = rows[1].replace("Female", "female")
    cohort = load_cohort(_write(tmp_path / "c.csv", HEADER, rows), sample_schema)
    assert cohort.values("Gender")[:2].tolist() == ["Female", "female"]


def test_schema_invariants():
    with pytest.raises(SchemaError):
        Schema.from_roles(qi_numeric=["a"], target=[])
    with pytest.raises(SchemaError):
        Schema.from_roles(sensitive=["s"], target="y")
    with pytest.raises(SchemaError):
        Schema.from_roles(qi_numeric=["a"], sensitive=["a"], target="y")
    with pytest.raises(SchemaError):
        Schema.from_roles(qi_numeric=["a"], target="y", kinds={"a": "category"})


def test_schema_json_round_trip(tmp_path, sample_schema):
    path = tmp_path / "schema.json"
    sample_schema.dump(path)
    spec = json.loads(path.read_text())
    assert set(spec) >= {"qi_numeric", "qi_categorical", "sensitive", "non_sensitive", "target"}
    assert Schema.load(path) == sample_schema
    assert sample_schema.qi == ["Age", "LOS", "Visits", "Gender", "Race", "Ethnicity"]
    assert sample_schema.column("SepsisFlag").role is Role.TARGET


def test_write_load_round_trip_1000_rows(tmp_path):
    spec = SynthSpec(n=1000, vulnerable_uplift=0.0, seed=3)
    cohort = generate_synthetic(spec)
    path = tmp_path / "c.csv"
    write_cohort(cohort, path)
    loaded = load_cohort(path, synthetic_schema(spec))
    assert loaded.equals(cohort)
    # fixed point after the first write
    path2 = tmp_path / "c2.csv"
    write_cohort(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_write_to_missing_directory(tmp_path):
    cohort = make_cohort(numeric={"age": [1.0, 2.0]}, sensitive={"s": [0, 1]})
    with pytest.raises(CohortIOError):
        write_cohort(cohort, tmp_path / "nope" / "c.csv")
    with pytest.raises(CohortIOError):
        write_cohort(cohort, tmp_path)


def test_fractional_age_rendering(tmp_path):
    cohort = make_cohort(numeric={"age": [39.0, 12.5]}, sensitive={"s": [0, 1]})
    path = tmp_path / "c.csv"
    write_cohort(cohort, path)
    lines = path.read_text().splitlines()
    assert lines[1].split(",")[1] == "39.0"
    assert lines[2].split(",")[1] == "12.5"


def test_subset_operations():
    cohort = make_cohort(numeric={"age": [1.0, 2.0, 3.0, 4.0]}, sensitive={"s": [0, 1, 0, 1]})
    assert subset(cohort, cohort.ids).equals(cohort)
    sub = subset(cohort, {0, 2})
    assert sub.ids.tolist() == [0, 2]
    assert sub.values("age").tolist() == [1.0, 3.0]
    with pytest.raises(EmptyCohortError):
        subset(cohort, set())
    assert subset(cohort, set(), allow_empty=True).n == 0
    with pytest.raises(UnknownIdError):
        subset(cohort, {7})


def test_subset_composes(rng):
    cohort = make_cohort(numeric={"age": rng.random(50)}, sensitive={"s": rng.integers(0, 2, 50)})
    a = set(rng.choice(50, 30, replace=False).tolist())
    b = set(rng.choice(sorted(a), 12, replace=False).tolist())
    assert subset(subset(cohort, a), b).equals(subset(cohort, a & b))


def test_cohort_is_immutable():
    cohort = make_cohort(numeric={"age": [1.0, 2.0]}, sensitive={"s": [0, 1]})
    with pytest.raises(AttributeError):
        cohort.schema = None
    with pytest.raises(ValueError):
        cohort.values("age")[0] = 9.0


def test_load_deterministic(tmp_path, sample_schema):
    path = _write(tmp_path / "c.csv", HEADER, ROWS)
    assert load_cohort(path, sample_schema).equals(load_cohort(path, sample_schema))
    assert np.array_equal(load_cohort(path, sample_schema).ids, np.arange(4))


def test_cohort_pickles():
    import pickle

    cohort = make_cohort(numeric={"age": [1.0, 2.0]}, sensitive={"s": [0, 1]})
    assert pickle.loads(pickle.dumps(cohort)).equals(cohort)

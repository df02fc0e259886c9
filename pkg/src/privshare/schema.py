"""Column roles, cohort loading/writing and id-preserving subsets.

A :class:`Schema` declares the role of every column (numeric or categorical
quasi-identifier, sensitive attribute, non-sensitive attribute, binary
target).  A :class:`Cohort` is an immutable table conforming to a schema whose
rows carry stable integer record ids.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    CohortIOError,
    EmptyCohortError,
    MissingColumnError,
    ParseError,
    SchemaError,
    UnknownIdError,
)

RECORD_ID = "record_id"


class Role(str, Enum):
    QI_NUMERIC = "qi_numeric"
    QI_CATEGORICAL = "qi_categorical"
    SENSITIVE = "sensitive"
    NON_SENSITIVE = "non_sensitive"
    TARGET = "target"


class Kind(str, Enum):
    REAL = "real"
    INTEGER = "integer"
    CATEGORY = "category"


_DEFAULT_KIND = {
    Role.QI_NUMERIC: Kind.REAL,
    Role.QI_CATEGORICAL: Kind.CATEGORY,
    Role.SENSITIVE: Kind.CATEGORY,
    Role.NON_SENSITIVE: Kind.CATEGORY,
    Role.TARGET: Kind.INTEGER,
}


@dataclass(frozen=True)
class Column:
    name: str
    role: Role
    kind: Kind


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations.

    Column order is ``qi_numeric + qi_categorical + sensitive + non_sensitive
    + target`` when built from a mapping; equivalence-class keys follow the
    QI order given here.
    """

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")
        if RECORD_ID in names:
            raise SchemaError(f"{RECORD_ID!r} is reserved")
        targets = [c for c in self.columns if c.role is Role.TARGET]
        if len(targets) != 1:
            raise SchemaError(f"exactly one target column required, got {len(targets)}")
        if not any(c.role in (Role.QI_NUMERIC, Role.QI_CATEGORICAL) for c in self.columns):
            raise SchemaError("at least one quasi-identifier column required")
        for c in self.columns:
            if c.role is Role.QI_NUMERIC and c.kind is Kind.CATEGORY:
                raise SchemaError(f"numeric QI {c.name!r} cannot have category kind")
            if c.role is Role.QI_CATEGORICAL and c.kind is not Kind.CATEGORY:
                raise SchemaError(f"categorical QI {c.name!r} must have category kind")
            if c.role is Role.TARGET and c.kind is not Kind.INTEGER:
                raise SchemaError("target column must have integer kind")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_roles(
        cls,
        qi_numeric: Sequence[str] = (),
        qi_categorical: Sequence[str] = (),
        sensitive: Sequence[str] = (),
        non_sensitive: Sequence[str] = (),
        target: str | Sequence[str] = (),
        kinds: Mapping[str, str] | None = None,
    ) -> "Schema":
        kinds = dict(kinds or {})
        if isinstance(target, str):
            target = [target]
        cols = []
        for role, names in (
            (Role.QI_NUMERIC, qi_numeric),
            (Role.QI_CATEGORICAL, qi_categorical),
            (Role.SENSITIVE, sensitive),
            (Role.NON_SENSITIVE, non_sensitive),
            (Role.TARGET, target),
        ):
            for name in names:
                kind = Kind(kinds.pop(name)) if name in kinds else _DEFAULT_KIND[role]
                cols.append(Column(str(name), role, kind))
        if kinds:
            raise SchemaError(f"kinds given for undeclared columns: {sorted(kinds)}")
        return cls(tuple(cols))

    @classmethod
    def from_dict(cls, spec: Mapping) -> "Schema":
        unknown = set(spec) - {r.value for r in Role} - {"kinds"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        return cls.from_roles(
            qi_numeric=spec.get("qi_numeric", ()),
            qi_categorical=spec.get("qi_categorical", ()),
            sensitive=spec.get("sensitive", ()),
            non_sensitive=spec.get("non_sensitive", ()),
            target=spec.get("target", ()),
            kinds=spec.get("kinds"),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Schema":
        try:
            with open(path, encoding="utf-8") as fh:
                spec = json.load(fh)
        except OSError as exc:
            raise CohortIOError(f"cannot read schema {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(spec)

    def to_dict(self) -> dict:
        out: dict = {r.value: [] for r in Role}
        kinds = {}
        for c in self.columns:
            out[c.role.value].append(c.name)
            if c.kind is not _DEFAULT_KIND[c.role]:
                kinds[c.name] = c.kind.value
        out["target"] = out["target"][0]
        if kinds:
            out["kinds"] = kinds
        return out

    def dump(self, path: str | os.PathLike) -> None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(self.to_dict(), fh, indent=2)
                fh.write("\n")
        except OSError as exc:
            raise CohortIOError(f"cannot write schema {path}: {exc}") from exc

    # -- accessors ---------------------------------------------------------

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def _by_role(self, *roles: Role) -> list[str]:
        return [c.name for c in self.columns if c.role in roles]

    @property
    def qi(self) -> list[str]:
        return self._by_role(Role.QI_NUMERIC, Role.QI_CATEGORICAL)

    @property
    def qi_numeric(self) -> list[str]:
        return self._by_role(Role.QI_NUMERIC)

    @property
    def qi_categorical(self) -> list[str]:
        return self._by_role(Role.QI_CATEGORICAL)

    @property
    def sensitive(self) -> list[str]:
        return self._by_role(Role.SENSITIVE)

    @property
    def non_sensitive(self) -> list[str]:
        return self._by_role(Role.NON_SENSITIVE)

    @property
    def target(self) -> str:
        return self._by_role(Role.TARGET)[0]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise MissingColumnError(name, "schema")

    def is_numeric(self, name: str) -> bool:
        return self.column(name).kind is not Kind.CATEGORY


class Cohort:
    """Immutable table of records conforming to a :class:`Schema`.

    The underlying frame is indexed by ``record_id``.  Treat :attr:`frame` as
    read-only; every operation in this package returns a new cohort.
    """

    __slots__ = ("schema", "_frame")

    def __init__(self, schema: Schema, frame: pd.DataFrame):
        missing = [c for c in schema.names if c not in frame.columns]
        if missing:
            raise MissingColumnError(missing[0], "frame")
        ids = frame.index
        if not pd.api.types.is_integer_dtype(ids.dtype) or not ids.is_unique:
            raise ParseError("record ids must be unique integers")
        frame = frame.loc[:, schema.names]
        frame.index = pd.Index(np.asarray(ids, dtype=np.int64), name=RECORD_ID)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "_frame", frame)

    def __setattr__(self, name, value):
        raise AttributeError("Cohort is immutable")

    def __reduce__(self):
        return (Cohort, (self.schema, self._frame))

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    @property
    def n(self) -> int:
        return len(self._frame)

    def __len__(self) -> int:
        return len(self._frame)

    @property
    def ids(self) -> np.ndarray:
        out = self._frame.index.to_numpy()
        out.flags.writeable = False
        return out

    def values(self, name: str) -> np.ndarray:
        out = self._frame[name].to_numpy()
        out.flags.writeable = False
        return out

    @property
    def labels(self) -> np.ndarray:
        return self.values(self.schema.target)

    def with_frame(self, frame: pd.DataFrame) -> "Cohort":
        return Cohort(self.schema, frame)

    def equals(self, other: "Cohort", rtol: float = 1e-9) -> bool:
        if self.schema != other.schema or self.n != other.n:
            return False
        if not np.array_equal(self.ids, other.ids):
            return False
        for name in self.schema.names:
            a, b = self._frame[name].to_numpy(), other._frame[name].to_numpy()
            if self.schema.column(name).kind is Kind.REAL:
                if not np.allclose(a.astype(float), b.astype(float), rtol=rtol, atol=0.0):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True

    def __repr__(self) -> str:
        return f"Cohort(n={self.n}, columns={len(self.schema.columns)})"


# -- loading ------------------------------------------------------------------

def _parse_numeric(raw: pd.Series, name: str, kind: Kind, row_numbers: np.ndarray) -> np.ndarray:
    parsed = pd.to_numeric(raw, errors="coerce")
    bad = parsed.isna().to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(
            f"non-numeric value {raw.iloc[i]!r} in column {name!r} at data row {row_numbers[i]}",
            row=int(row_numbers[i]),
            column=name,
        )
    values = parsed.to_numpy(dtype=float)
    if kind is Kind.INTEGER:
        if not np.all(values == np.round(values)):
            i = int(np.flatnonzero(values != np.round(values))[0])
            raise ParseError(
                f"non-integer value {raw.iloc[i]!r} in column {name!r} at data row {row_numbers[i]}",
                row=int(row_numbers[i]),
                column=name,
            )
        return values.astype(np.int64)
    return values


def load_cohort(csv_path: str | os.PathLike, schema: Schema) -> Cohort:
    """Read a comma-delimited UTF-8 CSV into a :class:`Cohort`.

    The header must contain every schema column (extra columns are ignored).
    Record ids are assigned 0..n-1 in file order unless the file carries a
    ``record_id`` column, in which case those ids are kept.
    """
    try:
        raw = pd.read_csv(
            csv_path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8"
        )
    except FileNotFoundError as exc:
        raise CohortIOError(f"no such file: {csv_path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise EmptyCohortError(f"{csv_path} has no header or rows") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise CohortIOError(f"cannot read {csv_path}: {exc}") from exc

    raw.columns = [c.strip() for c in raw.columns]
    for name in schema.names:
        if name not in raw.columns:
            raise MissingColumnError(name, str(csv_path))
    if len(raw) == 0:
        raise EmptyCohortError(f"{csv_path} has zero data rows")

    row_numbers = np.arange(1, len(raw) + 1)
    if RECORD_ID in raw.columns:
        ids = _parse_numeric(raw[RECORD_ID].str.strip(), RECORD_ID, Kind.INTEGER, row_numbers)
    else:
        ids = np.arange(len(raw), dtype=np.int64)

    data = {}
    for col in schema.columns:
        cells = raw[col.name].str.strip()
        empty = (cells == "").to_numpy()
        if empty.any():
            i = int(np.flatnonzero(empty)[0])
            raise ParseError(
                f"missing value in column {col.name!r} at data row {row_numbers[i]}",
                row=int(row_numbers[i]),
                column=col.name,
            )
        if col.kind is Kind.CATEGORY:
            data[col.name] = cells.to_numpy(dtype=object)
        else:
            data[col.name] = _parse_numeric(cells, col.name, col.kind, row_numbers)
        if col.role is Role.TARGET and not np.isin(data[col.name], (0, 1)).all():
            i = int(np.flatnonzero(~np.isin(data[col.name], (0, 1)))[0])
            raise ParseError(
                f"target {col.name!r} must be 0/1, got {raw[col.name].iloc[i]!r} at data row {row_numbers[i]}",
                row=int(row_numbers[i]),
                column=col.name,
            )
    frame = pd.DataFrame(data, index=pd.Index(ids, name=RECORD_ID))
    return Cohort(schema, frame)


# -- writing ------------------------------------------------------------------

def _render(values: np.ndarray, kind: Kind) -> list[str]:
    if kind is Kind.REAL:
        # repr is the shortest string that round-trips the double
        return [repr(float(v)) for v in values]
    if kind is Kind.INTEGER:
        return [str(int(v)) for v in values]
    return [str(v) for v in values]


def write_cohort(cohort: Cohort, csv_path: str | os.PathLike) -> None:
    """Write ``cohort`` as CSV with a leading ``record_id`` column.

    Reals are written in shortest round-trip form (``39.0`` stays ``39.0``),
    so load -> write -> load is a fixed point.
    """
    path = os.fspath(csv_path)
    if os.path.isdir(path):
        raise CohortIOError(f"{path} is a directory")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise CohortIOError(f"parent directory {parent} does not exist")
    out = {RECORD_ID: [str(int(i)) for i in cohort.ids]}
    for col in cohort.schema.columns:
        out[col.name] = _render(cohort.frame[col.name].to_numpy(), col.kind)
    try:
        pd.DataFrame(out).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as exc:
        raise CohortIOError(f"cannot write {path}: {exc}") from exc


# -- subsets ------------------------------------------------------------------

def subset(cohort: Cohort, ids: Iterable[int], allow_empty: bool = False) -> Cohort:
    """Rows of ``cohort`` whose record id is in ``ids``, in cohort order."""
    wanted = np.unique(np.fromiter((int(i) for i in ids), dtype=np.int64))
    present = np.isin(wanted, cohort.ids)
    if not present.all():
        raise UnknownIdError(wanted[~present].tolist())
    if len(wanted) == 0 and not allow_empty:
        raise EmptyCohortError("subset selects no records")
    keep = np.isin(cohort.ids, wanted)
    return Cohort(cohort.schema, cohort.frame.loc[keep])


def drop(cohort: Cohort, ids: Iterable[int], allow_empty: bool = False) -> Cohort:
    """Complement of :func:`subset`: every row except ``ids``."""
    removed = np.fromiter((int(i) for i in ids), dtype=np.int64)
    keep = cohort.ids[~np.isin(cohort.ids, removed)]
    return subset(cohort, keep, allow_empty=allow_empty)

"""Repeated train/test evaluation of six classifiers on tagged cohorts.

Features are the quasi-identifiers plus the sensitive attributes; the target
and the non-sensitive flags never enter a feature matrix.  Categorical
columns are one-hot encoded over the levels present in the whole cohort and
numeric columns are z-scored with statistics from the training rows only.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.ensemble import RandomForestClassifier
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression, SGDClassifier
from sklearn.naive_bayes import GaussianNB
from sklearn.neural_network import MLPClassifier
from sklearn.tree import DecisionTreeClassifier

from .errors import (
    EmptyFeatureSetError,
    EmptySampleError,
    LengthMismatchError,
    MissingColumnError,
    SingleClassError,
    ZeroBaselineError,
)
from .schema import Cohort, Kind
from .stats import ALPHA, MIN_NORMALITY_N, mann_whitney_u, normality_gate, welch_t

logger = logging.getLogger(__name__)

CLASSIFIERS = ("DT", "LR", "NB", "NN", "RF", "SVM")
FLAG_NO_POSITIVE_PREDICTIONS = "no_positive_predictions"
FLAG_NO_POSITIVE_LABELS = "no_positive_labels"
FLAGGED_SHARE_FOR_EXCLUSION = 0.10


# -- encoding ------------------------------------------------------------------------

def feature_columns(schema) -> list[str]:
    """Quasi-identifiers followed by sensitive attributes."""
    cols = list(schema.qi) + list(schema.sensitive)
    if not cols:
        raise EmptyFeatureSetError("schema declares no QI or sensitive columns")
    return cols


def _assert_no_leakage(schema, columns: Sequence[str]) -> None:
    banned = {schema.target, *schema.non_sensitive}
    leaked = banned.intersection(columns)
    if leaked:
        raise AssertionError(f"label or non-sensitive columns in feature set: {sorted(leaked)}")


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    labels: np.ndarray
    encoding: dict  # column name -> (start, stop) feature index range
    feature_names: list
    record_ids: np.ndarray

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def take(self, positions: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.rows[positions], self.labels[positions], self.encoding,
                             self.feature_names, self.record_ids[positions])

    def source_column(self, index: int) -> str:
        """Name of the cohort column that produced feature ``index``."""
        for name, (lo, hi) in self.encoding.items():
            if lo <= index < hi:
                return name
        raise IndexError(index)


def encode(
    cohort: Cohort,
    features: Sequence[str] | None = None,
    fit_rows: np.ndarray | None = None,
) -> FeatureMatrix:
    """Numeric matrix for ``cohort``.

    ``fit_rows`` (boolean mask or positions) selects the rows whose mean and
    standard deviation standardize numeric features; by default all rows.
    A column with zero standard deviation encodes as zeros.
    """
    schema = cohort.schema
    features = feature_columns(schema) if features is None else list(features)
    if not features:
        raise EmptyFeatureSetError("no feature columns given")
    for name in features:
        if name not in schema.names:
            raise MissingColumnError(name, "schema")
    _assert_no_leakage(schema, features)
    sel = np.arange(cohort.n) if fit_rows is None else np.asarray(fit_rows)
    if sel.dtype == bool:
        sel = np.flatnonzero(sel)
    blocks, names, encoding = [], [], {}
    start = 0
    for name in features:
        vals = cohort.frame[name]
        if schema.column(name).kind is Kind.CATEGORY:
            s = vals.astype(str).to_numpy()
            levels = sorted(set(s.tolist()))
            block = (s[:, None] == np.asarray(levels, dtype=object)[None, :]).astype(float)
            names.extend(f"{name}={lvl}" for lvl in levels)
        else:
            x = vals.to_numpy(dtype=float)
            mu, sd = (float(x[sel].mean()), float(x[sel].std())) if sel.size else (0.0, 0.0)
            z = (x - mu) / sd if sd > 0 else np.zeros_like(x)
            block = z[:, None]
            names.append(name)
        blocks.append(block)
        encoding[name] = (start, start + block.shape[1])
        start += block.shape[1]
    return FeatureMatrix(np.hstack(blocks), cohort.labels.astype(np.int64), encoding, names, cohort.ids.copy())


# -- classifiers ----------------------------------------------------------------------

def make_classifier(classifier_id: str, seed: int, n_train: int):
    """Estimator with the fixed hyperparameters for ``classifier_id``."""
    cid = classifier_id.upper()
    if cid == "DT":
        return DecisionTreeClassifier(criterion="gini", max_depth=10, min_samples_split=2, random_state=seed)
    if cid == "LR":
        # L2 strength 1e-4 on the mean log-loss; sklearn penalizes the summed loss.
        return LogisticRegression(C=1.0 / (1e-4 * max(n_train, 1)), max_iter=2000, tol=1e-6, solver="lbfgs")
    if cid == "NB":
        return GaussianNB(var_smoothing=1e-9)
    if cid == "RF":
        return RandomForestClassifier(n_estimators=100, bootstrap=True, max_features="sqrt",
                                      random_state=seed, n_jobs=1)
    if cid == "NN":
        return MLPClassifier(hidden_layer_sizes=(32,), activation="relu", solver="adam",
                             learning_rate_init=1e-2, max_iter=200, random_state=seed)
    if cid == "SVM":
        return SGDClassifier(loss="hinge", alpha=1e-4, max_iter=50, tol=None, random_state=seed)
    raise ValueError(f"unknown classifier {classifier_id!r}; choose from {CLASSIFIERS}")


def train_predict(classifier_id: str, train: FeatureMatrix, test: FeatureMatrix, seed: int = 0) -> np.ndarray:
    """Fit on ``train`` and return 0/1 predictions for ``test``.

    Probabilistic models predict 1 when the positive-class probability is at
    least 0.5; the linear SVM predicts 1 when its margin is positive.
    """
    if np.unique(train.labels).size < 2:
        raise SingleClassError("training fold holds a single class")
    model = make_classifier(classifier_id, seed, train.n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit(train.rows, train.labels)
    if classifier_id.upper() == "SVM":
        return (model.decision_function(test.rows) > 0).astype(np.int64)
    pos = list(model.classes_).index(1)
    return (model.predict_proba(test.rows)[:, pos] >= 0.5).astype(np.int64)


def precision_recall(predictions, labels) -> tuple[float, float, tuple]:
    """Precision and recall for the positive class, plus flags for undefined cases."""
    pred = np.asarray(predictions).astype(np.int64)
    lab = np.asarray(labels).astype(np.int64)
    if pred.shape != lab.shape:
        raise LengthMismatchError(f"{pred.size} predictions for {lab.size} labels")
    tp = int(np.sum((pred == 1) & (lab == 1)))
    fp = int(np.sum((pred == 1) & (lab == 0)))
    fn = int(np.sum((pred == 0) & (lab == 1)))
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append(FLAG_NO_POSITIVE_PREDICTIONS)
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append(FLAG_NO_POSITIVE_LABELS)
    else:
        recall = tp / (tp + fn)
    return precision, recall, tuple(flags)


# -- experiment ---------------------------------------------------------------------

@dataclass(frozen=True)
class TaggedDataset:
    tag: str
    cohort: Cohort
    engine: str | None = None
    k: int | None = None


@dataclass(frozen=True)
class MetricSample:
    tag: str
    engine: str | None
    k: int | None
    classifier: str
    iteration: int
    precision: float
    recall: float
    flags: tuple = ()


@dataclass
class MetricTable:
    samples: list = field(default_factory=list)

    COLUMNS = ("tag", "engine", "k", "classifier", "iteration", "precision", "recall", "flags")

    def cell(self, tag: str, classifier: str, engine=None, k=None) -> list[MetricSample]:
        return [
            s for s in self.samples
            if s.tag == tag and s.classifier == classifier and s.engine == engine and s.k == k
        ]

    def values(self, tag: str, classifier: str, metric: str, engine=None, k=None) -> np.ndarray:
        return np.array([getattr(s, metric) for s in self.cell(tag, classifier, engine, k)])

    def flags(self, tag: str, classifier: str, metric: str, engine=None, k=None) -> np.ndarray:
        flag = FLAG_NO_POSITIVE_PREDICTIONS if metric == "precision" else FLAG_NO_POSITIVE_LABELS
        return np.array([flag in s.flags for s in self.cell(tag, classifier, engine, k)])

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (s.tag, s.engine or "", "" if s.k is None else s.k, s.classifier, s.iteration,
             s.precision, s.recall, ";".join(s.flags))
            for s in self.samples
        ]
        return pd.DataFrame(rows, columns=list(self.COLUMNS))

    def means(self) -> pd.DataFrame:
        frame = self.to_frame()
        return (
            frame.groupby(["tag", "engine", "k", "classifier"], sort=True)[["precision", "recall"]]
            .mean()
            .reset_index()
        )


def stratified_split(labels: np.ndarray, seed: int, train_frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Train/test row positions keeping each class's share."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(train_frac * idx.size))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _one_iteration(ds: TaggedDataset, i: int, seed: int, train_frac: float, classifiers: Sequence[str]):
    labels = ds.cohort.labels
    tr, te = stratified_split(labels, seed, train_frac)
    fm = encode(ds.cohort, fit_rows=tr)
    train, test = fm.take(tr), fm.take(te)
    out = []
    for cid in classifiers:
        pred = train_predict(cid, train, test, seed)
        p, r, flags = precision_recall(pred, test.labels)
        out.append(MetricSample(ds.tag, ds.engine, ds.k, cid, i, p, r, flags))
    return out


def run_experiment(
    datasets: Iterable[TaggedDataset],
    iterations: int = 100,
    split: float = 0.8,
    base_seed: int = 0,
    classifiers: Sequence[str] = CLASSIFIERS,
    split_mode: str = "paired",
    n_jobs: int = 1,
) -> MetricTable:
    """Evaluate every classifier on every dataset over ``iterations`` splits.

    With ``split_mode="paired"`` iteration ``i`` uses seed ``base_seed + i``
    for the split and the models, identically across datasets and
    classifiers; ``"fixed"`` reuses ``base_seed`` for every iteration.
    """
    datasets = list(datasets)
    classifiers = [c.upper() for c in classifiers]
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {c!r}")
    if split_mode not in ("paired", "fixed"):
        raise ValueError("split_mode must be 'paired' or 'fixed'")
    for ds in datasets:
        if ds.cohort.n == 0:
            raise EmptySampleError(f"dataset {ds.tag} is empty")
        if np.unique(ds.cohort.labels).size < 2:
            raise SingleClassError(f"dataset {ds.tag} holds a single class")
    jobs = [
        (ds, i, base_seed + i if split_mode == "paired" else base_seed)
        for ds in datasets
        for i in range(iterations)
    ]
    if n_jobs == 1:
        results = [_one_iteration(ds, i, seed, split, classifiers) for ds, i, seed in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_one_iteration)(ds, i, seed, split, classifiers) for ds, i, seed in jobs
        )
    table = MetricTable()
    for chunk in results:
        table.samples.extend(chunk)
    return table


# -- comparison ---------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonResult:
    test_name: str
    statistic: float
    p_value: float
    significant: bool
    pct_change: float
    mean_a: float
    mean_b: float


def pct_change(baseline: float, other: float) -> float:
    """Percentage change from ``baseline`` to ``other``."""
    if baseline == 0:
        raise ZeroBaselineError("baseline mean is zero")
    return (other - baseline) / baseline * 100.0


def _gate_values(values: np.ndarray, flagged: np.ndarray | None) -> np.ndarray:
    if flagged is None or not flagged.any():
        return values
    if flagged.mean() > FLAGGED_SHARE_FOR_EXCLUSION:
        return values[~flagged]
    return values


def _is_normal(values: np.ndarray) -> bool:
    if values.size < MIN_NORMALITY_N:
        return False
    return normality_gate(values)


def compare_cells(
    samples_a: Sequence[float],
    samples_b: Sequence[float],
    flagged_a: Sequence[bool] | None = None,
    flagged_b: Sequence[bool] | None = None,
) -> ComparisonResult:
    """Test whether two metric samples differ and report the change of means.

    Welch's t-test is used when both samples pass the normality gate,
    otherwise the Mann-Whitney U test.  The change is relative to the mean of
    ``samples_a`` (NaN when that mean is zero).  Flagged samples (undefined
    metric recorded as 0) are left out of the normality gate when more than
    10% of a sample is flagged.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptySampleError("both samples must be nonempty")
    fa = None if flagged_a is None else np.asarray(flagged_a, dtype=bool)
    fb = None if flagged_b is None else np.asarray(flagged_b, dtype=bool)
    normal = _is_normal(_gate_values(a, fa)) and _is_normal(_gate_values(b, fb))
    if normal and a.size >= 2 and b.size >= 2:
        res = welch_t(a, b)
    else:
        res = mann_whitney_u(a, b)
    mean_a, mean_b = float(a.mean()), float(b.mean())
    change = pct_change(mean_a, mean_b) if mean_a != 0 else float("nan")
    return ComparisonResult(res.test_name, res.statistic, res.p_value, res.p_value < ALPHA, change, mean_a, mean_b)

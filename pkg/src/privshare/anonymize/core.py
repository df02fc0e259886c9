"""Cluster assignments, information loss and the mean/mode cluster transform."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from ..risk import Scope
from ..schema import Cohort


class Engine(str, Enum):
    MDAV_KANON = "kanon"
    GREEDY_DIVERSE = "greedy"
    MULTIOBJ_LOCAL_SEARCH = "mols"


@dataclass(frozen=True)
class QISpace:
    """QI values prepared for distance computations.

    ``num`` is z-scored over the cohort (zero-variance columns become 0) and
    ``cat`` holds sorted-level integer codes.
    """

    num: np.ndarray
    cat: np.ndarray
    n_levels: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "QISpace":
        schema = cohort.schema
        num = np.zeros((cohort.n, len(schema.qi_numeric)))
        for j, name in enumerate(schema.qi_numeric):
            num[:, j] = standardize(cohort.frame[name].to_numpy(dtype=float))
        cat = np.zeros((cohort.n, len(schema.qi_categorical)), dtype=np.int64)
        levels = []
        for j, name in enumerate(schema.qi_categorical):
            codes, uniques = pd.factorize(cohort.frame[name].to_numpy(), sort=True)
            cat[:, j] = codes
            levels.append(len(uniques))
        n_levels = np.asarray(levels, dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(n_levels)])[:-1].astype(np.int64)
        return cls(np.ascontiguousarray(num), np.ascontiguousarray(cat), n_levels, offsets)

    @property
    def n(self) -> int:
        return self.num.shape[0]

    def embedding(self) -> np.ndarray:
        """Euclidean embedding reproducing the mixed distance (one-hot / sqrt 2)."""
        parts = [self.num]
        for j, nl in enumerate(self.n_levels):
            onehot = np.zeros((self.n, int(nl)))
            onehot[np.arange(self.n), self.cat[:, j]] = 1.0 / np.sqrt(2.0)
            parts.append(onehot)
        return np.hstack(parts)

    def centroids(self, labels: np.ndarray, n_clusters: int) -> np.ndarray:
        emb = self.embedding()
        sums = np.zeros((n_clusters, emb.shape[1]))
        np.add.at(sums, labels, emb)
        return sums / np.bincount(labels, minlength=n_clusters)[:, None]


def standardize(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd == 0 or not np.isfinite(sd):
        return np.zeros_like(values, dtype=float)
    return (values - values.mean()) / sd


@dataclass(frozen=True)
class LossBreakdown:
    numeric_sse: float
    categorical_mismatch: int
    weight: float = 1.0

    @property
    def total(self) -> float:
        return self.numeric_sse + self.weight * self.categorical_mismatch


@dataclass
class ClusterAssignment:
    """Partition of a cohort's records into clusters.

    ``labels[i]`` is the cluster of the record ``record_ids[i]``; clusters are
    numbered densely from 0.
    """

    record_ids: np.ndarray
    labels: np.ndarray
    k: int
    engine: Engine
    loss: LossBreakdown | None = None
    sa_scope: Scope | None = None
    infeasible: frozenset = frozenset()
    meta: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    @property
    def cluster_of(self) -> dict:
        return dict(zip(self.record_ids.tolist(), self.labels.tolist()))

    @property
    def clusters(self) -> dict:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        ids = self.record_ids[order]
        return {c: ids[bounds[c]:bounds[c + 1]] for c in range(self.n_clusters)}

    def size_histogram(self) -> dict:
        sizes, counts = np.unique(self.sizes, return_counts=True)
        return {int(s): int(c) for s, c in zip(sizes, counts)}


def relabel(labels: np.ndarray) -> np.ndarray:
    """Dense 0..m-1 labels numbered by first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse.reshape(-1)]


def _aligned_labels(cohort: Cohort, assignment: ClusterAssignment) -> np.ndarray:
    if np.array_equal(cohort.ids, assignment.record_ids):
        return assignment.labels
    pos = pd.Index(assignment.record_ids).get_indexer(cohort.ids)
    if (pos < 0).any() or len(assignment.record_ids) != cohort.n:
        raise ValueError("assignment does not partition this cohort")
    return assignment.labels[pos]


def info_loss(cohort: Cohort, assignment: ClusterAssignment, categorical_weight: float = 1.0) -> LossBreakdown:
    """Distortion of replacing each QI cell by its cluster mean or mode.

    Numeric distortion is the within-cluster sum of squared deviations of the
    cohort-wide z-scores; categorical distortion counts cells that differ from
    their cluster's mode.
    """
    labels = _aligned_labels(cohort, assignment)
    m = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=m)
    space = QISpace.from_cohort(cohort)
    sse = 0.0
    for j in range(space.num.shape[1]):
        z = space.num[:, j]
        means = np.bincount(labels, weights=z, minlength=m) / counts
        sse += float(np.sum((z - means[labels]) ** 2))
    mismatch = 0
    for j in range(space.cat.shape[1]):
        nl = int(space.n_levels[j])
        table = np.bincount(labels * nl + space.cat[:, j], minlength=m * nl).reshape(m, nl)
        mismatch += int(cohort.n - table.max(axis=1).sum())
    return LossBreakdown(sse, mismatch, categorical_weight)


def cluster_mean(values: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Per-cluster mean summed in sorted order so equal multisets give equal means."""
    order = np.lexsort((values, labels))
    counts = np.bincount(labels, minlength=m)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    sums = np.add.reduceat(values[order], starts)
    return sums / counts


def cluster_mode(values: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Per-cluster most frequent value; ties go to the lexicographically smallest."""
    codes, uniques = pd.factorize(values, sort=True)
    nl = len(uniques)
    keys, counts = np.unique(labels.astype(np.int64) * nl + codes, return_counts=True)
    cl, code = keys // nl, keys % nl
    order = np.lexsort((code, -counts, cl))
    cl, code = cl[order], code[order]
    first = np.concatenate([[True], cl[1:] != cl[:-1]])
    mode = np.empty(m, dtype=np.int64)
    mode[cl[first]] = code[first]
    return np.asarray(uniques, dtype=object)[mode]


def apply_cluster_transform(cohort: Cohort, assignment: ClusterAssignment) -> Cohort:
    """Replace numeric QIs by their cluster mean and categorical QIs by the mode.

    Means are not rounded.  Sensitive, non-sensitive and target columns are
    left untouched.
    """
    labels = _aligned_labels(cohort, assignment)
    m = int(labels.max()) + 1
    frame = cohort.frame.copy()
    for name in cohort.schema.qi_numeric:
        means = cluster_mean(frame[name].to_numpy(dtype=float), labels, m)
        frame[name] = means[labels]
    for name in cohort.schema.qi_categorical:
        modes = cluster_mode(frame[name].to_numpy(), labels, m)
        frame[name] = modes[labels]
    return Cohort(cohort.schema, frame)

"""Plain k-anonymity by MDAV microaggregation."""

from __future__ import annotations

from ..errors import CohortTooSmallError
from ..schema import Cohort
from . import _kernels
from .core import ClusterAssignment, Engine, QISpace, info_loss, relabel


def check_k(cohort: Cohort, k: int) -> None:
    if int(k) != k or k < 2:
        raise ValueError(f"k must be an integer >= 2, got {k}")
    if cohort.n < k:
        raise CohortTooSmallError(f"cohort has {cohort.n} records, fewer than k={k}")


def mdav_k_anonymize(cohort: Cohort, k: int, categorical_weight: float = 1.0) -> ClusterAssignment:
    """Cluster records into groups of ``k`` to ``2k - 1`` by MDAV.

    While at least ``3k`` records remain, the record farthest from the
    centroid and its ``k - 1`` nearest neighbours form a cluster, then the
    record farthest from that one does the same.  With ``2k..3k-1`` left one
    more cluster is built around the farthest record and the rest form the
    last cluster.
    """
    check_k(cohort, k)
    space = QISpace.from_cohort(cohort)
    labels = _kernels.mdav(space.num, space.cat, space.offsets, space.n_levels, int(k))
    out = ClusterAssignment(cohort.ids.copy(), relabel(labels), int(k), Engine.MDAV_KANON)
    out.loss = info_loss(cohort, out, categorical_weight)
    return out

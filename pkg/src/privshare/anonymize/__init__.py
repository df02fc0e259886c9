"""Cluster-based anonymization engines and the mean/mode transform."""

from .core import (
    ClusterAssignment,
    Engine,
    LossBreakdown,
    QISpace,
    apply_cluster_transform,
    info_loss,
)
from .diverse import greedy_diverse_anonymize
from .local_search import multiobj_local_search_anonymize
from .mdav import mdav_k_anonymize

_SEARCH_OPTIONS = ("budget", "seed", "neighbors", "initial")


def anonymize(cohort, engine, k, **kwargs) -> ClusterAssignment:
    """Dispatch to the engine named by ``engine``.

    Options that only apply to other engines (``sa_scope`` for MDAV, the
    search settings for the non-search engines) are ignored.
    """
    engine = Engine(engine)
    if engine is not Engine.MULTIOBJ_LOCAL_SEARCH:
        for key in _SEARCH_OPTIONS:
            kwargs.pop(key, None)
    if engine is Engine.MDAV_KANON:
        kwargs.pop("sa_scope", None)
        kwargs.pop("min_size", None)
        return mdav_k_anonymize(cohort, k, **kwargs)
    if engine is Engine.GREEDY_DIVERSE:
        return greedy_diverse_anonymize(cohort, k, **kwargs)
    return multiobj_local_search_anonymize(cohort, k, **kwargs)


__all__ = [
    "ClusterAssignment",
    "Engine",
    "LossBreakdown",
    "QISpace",
    "anonymize",
    "apply_cluster_transform",
    "greedy_diverse_anonymize",
    "info_loss",
    "mdav_k_anonymize",
    "multiobj_local_search_anonymize",
]

"""Greedy k-member clustering with a sensitive-attribute diversity constraint."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import DiversityInfeasibleError
from ..risk import Scope, homogeneous_groups, sensitive_codes
from ..schema import Cohort
from . import _kernels
from .core import ClusterAssignment, Engine, QISpace, info_loss, relabel
from .mdav import check_k

logger = logging.getLogger(__name__)

_MAX_EXCHANGE_TRIES = 200


def diversity_codes(cohort: Cohort, sa_scope: Scope | str) -> np.ndarray:
    """SA code matrix for the diversity constraint, raising when it cannot hold."""
    codes = sensitive_codes(cohort, sa_scope)
    if Scope(sa_scope) is Scope.JOINT and codes.min() == codes.max():
        raise DiversityInfeasibleError(
            "every record has the same sensitive vector; no cluster can be non-homogeneous"
        )
    return codes


class _Clusters:
    """Mutable membership bookkeeping for the repair pass."""

    def __init__(self, labels, emb, codes, min_size):
        self.labels = labels
        self.emb = emb
        self.codes = codes
        self.min_size = min_size
        m = int(labels.max()) + 1
        order = np.argsort(labels, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(np.bincount(labels, minlength=m))])
        self.members = {c: order[bounds[c]:bounds[c + 1]].tolist() for c in range(m)}
        self.sums = np.zeros((m, emb.shape[1]))
        np.add.at(self.sums, labels, emb)

    def centroid(self, c):
        return self.sums[c] / len(self.members[c])

    def hom_attrs(self, idx):
        block = self.codes[idx]
        return (block == block[0]).all(axis=0)

    def is_hom(self, idx):
        return len(idx) >= self.min_size and bool(self.hom_attrs(idx).any())

    def move(self, i, dst):
        src = int(self.labels[i])
        self.members[src].remove(i)
        self.members[dst].append(i)
        self.labels[i] = dst
        self.sums[src] -= self.emb[i]
        self.sums[dst] += self.emb[i]

    def merge(self, src, dst):
        for i in list(self.members[src]):
            self.move(i, dst)
        del self.members[src]


def _try_exchange(cl: _Clusters, h: int, k: int) -> bool:
    """Pull in a record that breaks cluster ``h``'s homogeneity, by move or swap."""
    hm = cl.members[h]
    hom = cl.hom_attrs(hm)
    before = int(hom.sum())
    ref = cl.codes[hm[0]]
    mask = (cl.codes[:, hom] != ref[hom]).any(axis=1) & (cl.labels != h)
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return False
    d = ((cl.emb[cand] - cl.centroid(h)) ** 2).sum(axis=1)
    cand = cand[np.lexsort((cand, d))][:_MAX_EXCHANGE_TRIES]
    for x in cand.tolist():
        b = int(cl.labels[x])
        rest = [i for i in cl.members[b] if i != x]
        if len(cl.members[b]) > k and not cl.is_hom(rest):
            cl.move(x, h)
            return True
        dy = ((cl.emb[hm] - cl.centroid(b)) ** 2).sum(axis=1)
        for j in np.lexsort((np.asarray(hm), dy)).tolist():
            y = hm[j]
            if cl.is_hom(rest + [y]):
                continue
            new_h = [i for i in hm if i != y] + [x]
            if int(cl.hom_attrs(new_h).sum()) < before:
                cl.move(x, h)
                cl.move(y, b)
                return True
    return False


def repair(space: QISpace, labels: np.ndarray, codes: np.ndarray, k: int, min_size: int) -> np.ndarray:
    """Remove homogeneous clusters by record exchange, merging as a last resort."""
    hom = homogeneous_groups(labels, codes, min_size)
    if not hom.any():
        return labels
    cl = _Clusters(labels.copy(), space.embedding(), codes, min_size)
    queue = np.flatnonzero(hom).tolist()
    merges = exchanges = 0
    while queue:
        h = queue.pop(0)
        if h not in cl.members or not cl.is_hom(cl.members[h]):
            continue
        if _try_exchange(cl, h, k):
            exchanges += 1
        else:
            live = np.array(sorted(c for c in cl.members if c != h))
            cents = cl.sums[live] / np.array([len(cl.members[c]) for c in live])[:, None]
            d = ((cents - cl.centroid(h)) ** 2).sum(axis=1)
            dst = int(live[np.lexsort((live, d))[0]])
            cl.merge(h, dst)
            merges += 1
            h = dst
        queue.insert(0, h)
    logger.debug("repair: %d exchanges, %d merges", exchanges, merges)
    return relabel(cl.labels)


def place_leftovers(space: QISpace, labels: np.ndarray) -> np.ndarray:
    """Attach unlabelled records to the cluster with the nearest centroid."""
    left = np.flatnonzero(labels < 0)
    if left.size == 0:
        return labels
    labels = labels.copy()
    done = labels >= 0
    m = int(labels[done].max()) + 1
    emb = space.embedding()
    sums = np.zeros((m, emb.shape[1]))
    np.add.at(sums, labels[done], emb[done])
    cents = sums / np.bincount(labels[done], minlength=m)[:, None]
    for i in left:
        d = ((cents - emb[i]) ** 2).sum(axis=1)
        labels[i] = int(np.argmin(d))
    return labels


def greedy_diverse_anonymize(
    cohort: Cohort,
    k: int,
    sa_scope: Scope | str = Scope.JOINT,
    min_size: int = 2,
    categorical_weight: float = 1.0,
) -> ClusterAssignment:
    """k-member clustering whose clusters are never SA-homogeneous.

    Clusters are seeded with the unassigned record farthest from the previous
    cluster's centroid and filled with the records nearest the seed, taking
    one that breaks SA homogeneity first.  A repair pass then exchanges
    records between homogeneous and heterogeneous clusters, merging a
    cluster into its nearest neighbour only when no exchange exists.
    """
    check_k(cohort, k)
    scope = Scope(sa_scope)
    codes = diversity_codes(cohort, scope)
    space = QISpace.from_cohort(cohort)
    pool = 4 * int(k) + 8
    labels = _kernels.greedy_kmember(
        space.num, space.cat, space.offsets, space.n_levels, np.ascontiguousarray(codes), int(k), pool
    )
    labels = place_leftovers(space, labels)
    labels = repair(space, labels, codes, int(k), min_size)
    still = homogeneous_groups(labels, codes, min_size)
    out = ClusterAssignment(
        cohort.ids.copy(),
        relabel(labels),
        int(k),
        Engine.GREEDY_DIVERSE,
        sa_scope=scope,
        infeasible=frozenset(np.flatnonzero(still).tolist()),
        meta={"min_size": min_size},
    )
    out.loss = info_loss(cohort, out, categorical_weight)
    return out

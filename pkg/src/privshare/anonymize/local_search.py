"""Constraint-preserving local search over a diverse clustering.

Starting from the greedy solution, the search proposes relocating a record
into a neighbouring record's cluster, the reverse relocation, or swapping the
two.  A proposal is taken only when it strictly lowers the combined
numeric/categorical loss and keeps every cluster at size >= k and
non-homogeneous.  The loss therefore never rises above the starting point.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..risk import Scope, homogeneous_groups
from ..schema import Cohort
from .core import ClusterAssignment, Engine, QISpace, info_loss, relabel
from .diverse import diversity_codes, greedy_diverse_anonymize
from .mdav import check_k

_ACCEPT_EPS = 1e-9


class _State:
    def __init__(self, space: QISpace, codes: np.ndarray, labels: np.ndarray, weight: float, min_size: int):
        self.z = space.num
        self.cat = space.cat
        self.offsets = space.offsets
        self.n_levels = space.n_levels
        self.codes = codes
        self.weight = weight
        self.min_size = min_size
        self.labels = labels.copy()
        m = int(labels.max()) + 1
        self.cnt = np.bincount(labels, minlength=m)
        p = self.z.shape[1]
        self.s1 = np.zeros((m, p))
        np.add.at(self.s1, labels, self.z)
        self.s2 = np.bincount(labels, weights=(self.z ** 2).sum(axis=1), minlength=m)
        total = int(self.n_levels.sum())
        self.catcnt = np.zeros((m, total), dtype=np.int64)
        cols = self.cat + self.offsets
        for j in range(cols.shape[1]):
            np.add.at(self.catcnt, (labels, cols[:, j]), 1)
        self.cols = cols
        self.slices = [slice(int(o), int(o + nl)) for o, nl in zip(self.offsets, self.n_levels)]
        # per attribute: value counts per cluster and distinct-value counts
        self.sa_count = [dict() for _ in range(codes.shape[1])]
        self.sa_distinct = np.zeros((m, codes.shape[1]), dtype=np.int64)
        for j in range(codes.shape[1]):
            keys, counts = np.unique(np.column_stack([labels, codes[:, j]]), axis=0, return_counts=True)
            d = self.sa_count[j]
            for (c, v), n in zip(keys.tolist(), counts.tolist()):
                d[(c, v)] = n
                self.sa_distinct[c, j] += 1
        self.hom = homogeneous_groups(labels, codes, min_size)

    def cost(self, cnt, s1, s2, catrow) -> float:
        if cnt == 0:
            return 0.0
        sse = s2 - float(s1 @ s1) / cnt
        mis = 0
        for sl in self.slices:
            mis += cnt - int(catrow[sl].max())
        return sse + self.weight * mis

    def cluster_cost(self, c) -> float:
        return self.cost(self.cnt[c], self.s1[c], self.s2[c], self.catcnt[c])

    def changed_cost(self, c, out_rec, in_rec) -> float:
        cnt = self.cnt[c]
        s1 = self.s1[c].copy()
        s2 = self.s2[c]
        row = self.catcnt[c].copy()
        if out_rec >= 0:
            cnt -= 1
            s1 -= self.z[out_rec]
            s2 -= float(self.z[out_rec] @ self.z[out_rec])
            row[self.cols[out_rec]] -= 1
        if in_rec >= 0:
            cnt += 1
            s1 += self.z[in_rec]
            s2 += float(self.z[in_rec] @ self.z[in_rec])
            row[self.cols[in_rec]] += 1
        return self.cost(cnt, s1, s2, row)

    def homogeneous_after(self, c, out_rec, in_rec) -> bool:
        size = self.cnt[c] - (out_rec >= 0) + (in_rec >= 0)
        if size < self.min_size:
            return False
        for j in range(self.codes.shape[1]):
            d = self.sa_distinct[c, j]
            vo = self.codes[out_rec, j] if out_rec >= 0 else None
            vi = self.codes[in_rec, j] if in_rec >= 0 else None
            if vo is not None and vo == vi:
                pass
            else:
                if vo is not None and self.sa_count[j][(c, vo)] == 1:
                    d -= 1
                if vi is not None and self.sa_count[j].get((c, vi), 0) == 0:
                    d += 1
            if d == 1:
                return True
        return False

    def allowed(self, c, out_rec, in_rec) -> bool:
        return self.hom[c] or not self.homogeneous_after(c, out_rec, in_rec)

    def _sa_update(self, c, rec, delta):
        for j in range(self.codes.shape[1]):
            key = (c, int(self.codes[rec, j]))
            n = self.sa_count[j].get(key, 0) + delta
            if n == 0:
                del self.sa_count[j][key]
                self.sa_distinct[c, j] -= 1
            else:
                if n == 1 and delta > 0:
                    self.sa_distinct[c, j] += 1
                self.sa_count[j][key] = n

    def relocate(self, rec, dst):
        src = self.labels[rec]
        self.cnt[src] -= 1
        self.cnt[dst] += 1
        self.s1[src] -= self.z[rec]
        self.s1[dst] += self.z[rec]
        sq = float(self.z[rec] @ self.z[rec])
        self.s2[src] -= sq
        self.s2[dst] += sq
        self.catcnt[src, self.cols[rec]] -= 1
        self.catcnt[dst, self.cols[rec]] += 1
        self._sa_update(src, rec, -1)
        self._sa_update(dst, rec, +1)
        self.labels[rec] = dst


def multiobj_local_search_anonymize(
    cohort: Cohort,
    k: int,
    sa_scope: Scope | str = Scope.JOINT,
    budget: int = 10_000,
    seed: int = 0,
    min_size: int = 2,
    categorical_weight: float = 1.0,
    neighbors: int = 10,
    initial: ClusterAssignment | None = None,
) -> ClusterAssignment:
    """Improve the greedy diverse clustering by relocation/swap local search.

    ``budget`` counts proposals.  ``initial`` may carry a precomputed greedy
    assignment for the same cohort, k and scope.
    """
    check_k(cohort, k)
    scope = Scope(sa_scope)
    if budget < 0:
        raise ValueError("budget must be non-negative")
    codes = diversity_codes(cohort, scope)
    if initial is None:
        initial = greedy_diverse_anonymize(cohort, k, scope, min_size, categorical_weight)
    start_loss = initial.loss if initial.loss is not None else info_loss(cohort, initial, categorical_weight)
    meta = {"budget": int(budget), "seed": int(seed), "min_size": min_size, "initial_loss": start_loss.total}
    if budget == 0 or cohort.n < 2:
        out = ClusterAssignment(
            initial.record_ids.copy(), initial.labels.copy(), int(k), Engine.MULTIOBJ_LOCAL_SEARCH,
            loss=start_loss, sa_scope=scope, infeasible=initial.infeasible, meta={**meta, "accepted": 0},
        )
        return out

    space = QISpace.from_cohort(cohort)
    state = _State(space, codes, initial.labels, categorical_weight, min_size)
    kk = min(int(neighbors) + 1, cohort.n)
    _, nbrs = cKDTree(space.embedding()).query(space.embedding(), k=kk)
    nbrs = np.asarray(nbrs).reshape(cohort.n, kk)

    rng = np.random.default_rng(seed)
    picks = rng.integers(cohort.n, size=budget)
    slots = rng.integers(kk, size=budget)
    accepted = 0
    for r, slot in zip(picks.tolist(), slots.tolist()):
        s = int(nbrs[r, slot])
        a, b = int(state.labels[r]), int(state.labels[s])
        if a == b:
            continue
        base = state.cluster_cost(a) + state.cluster_cost(b)
        best, action = -_ACCEPT_EPS, None
        if state.cnt[a] > k and state.allowed(a, r, -1) and state.allowed(b, -1, r):
            delta = state.changed_cost(a, r, -1) + state.changed_cost(b, -1, r) - base
            if delta < best:
                best, action = delta, "move_r"
        if state.cnt[b] > k and state.allowed(b, s, -1) and state.allowed(a, -1, s):
            delta = state.changed_cost(b, s, -1) + state.changed_cost(a, -1, s) - base
            if delta < best:
                best, action = delta, "move_s"
        if state.allowed(a, r, s) and state.allowed(b, s, r):
            delta = state.changed_cost(a, r, s) + state.changed_cost(b, s, r) - base
            if delta < best:
                best, action = delta, "swap"
        if action is None:
            continue
        if action == "move_r":
            state.relocate(r, b)
        elif action == "move_s":
            state.relocate(s, a)
        else:
            state.relocate(r, b)
            state.relocate(s, a)
        accepted += 1

    labels = relabel(state.labels)
    still = homogeneous_groups(labels, codes, min_size)
    out = ClusterAssignment(
        cohort.ids.copy(), labels, int(k), Engine.MULTIOBJ_LOCAL_SEARCH,
        sa_scope=scope, infeasible=frozenset(np.flatnonzero(still).tolist()),
        meta={**meta, "accepted": accepted},
    )
    out.loss = info_loss(cohort, out, categorical_weight)
    return out

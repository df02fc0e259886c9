"""Compiled inner loops for the clustering engines.

Records live in a mixed space: ``num`` holds z-scored numeric QIs and ``cat``
integer category codes.  The squared distance between two records is the
squared Euclidean distance on ``num`` plus one per mismatching categorical
column.  A centroid carries the numeric mean and, per categorical column, the
vector of level proportions ``p`` (flattened with ``offsets``); the squared
distance from a record with level ``c`` to it adds ``(1 - 2 p[c] + sum(p**2)) / 2``
per column, which is the one-hot embedding scaled by ``1/sqrt(2)``.

Unassigned records are kept in a compacted working copy (rows in ascending
record order) so every scan reads contiguous memory.  All tie-breaks fall to
the smaller record index.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _dist_to(wn, wc, t, xn, xc):
    d = 0.0
    for j in range(wn.shape[1]):
        u = wn[t, j] - xn[j]
        d += u * u
    for j in range(wc.shape[1]):
        if wc[t, j] != xc[j]:
            d += 1.0
    return d


@njit(cache=True)
def _centroid_from_sums(sum_num, counts, offsets, n_levels, m):
    p = sum_num.shape[0]
    cen_num = np.empty(p)
    for j in range(p):
        cen_num[j] = sum_num[j] / m
    cen_p = counts.astype(np.float64) / m
    q = offsets.shape[0]
    cen_sq = np.zeros(q)
    for j in range(q):
        s = 0.0
        for l in range(n_levels[j]):
            v = cen_p[offsets[j] + l]
            s += v * v
        cen_sq[j] = s
    return cen_num, cen_p, cen_sq


@njit(cache=True)
def _farthest_from_centroid(wn, wc, m, cen_num, cen_p, offsets, cen_sq):
    """Position of the working record farthest from the centroid."""
    best = -1
    best_d = -1.0
    p = wn.shape[1]
    q = wc.shape[1]
    for t in range(m):
        d = 0.0
        for j in range(p):
            u = wn[t, j] - cen_num[j]
            d += u * u
        for j in range(q):
            d += 0.5 * (1.0 - 2.0 * cen_p[offsets[j] + wc[t, j]] + cen_sq[j])
        if d > best_d:
            best_d = d
            best = t
    return best


@njit(cache=True)
def _farthest_from_point(wn, wc, m, xn, xc):
    best = -1
    best_d = -1.0
    for t in range(m):
        d = _dist_to(wn, wc, t, xn, xc)
        if d > best_d:
            best_d = d
            best = t
    return best


@njit(cache=True)
def _worse(d1, i1, d2, i2):
    return d1 > d2 or (d1 == d2 and i1 > i2)


@njit(cache=True)
def _k_nearest(wn, wc, m, xn, xc, kk, taken):
    """Up to ``kk`` untaken working positions nearest to ``(xn, xc)``, ascending."""
    hd = np.empty(kk)
    hi = np.empty(kk, dtype=np.int64)
    size = 0
    for t in range(m):
        if taken[t]:
            continue
        d = _dist_to(wn, wc, t, xn, xc)
        if size < kk:
            j = size
            hd[j] = d
            hi[j] = t
            size += 1
            while j > 0:
                par = (j - 1) // 2
                if _worse(hd[j], hi[j], hd[par], hi[par]):
                    hd[j], hd[par] = hd[par], hd[j]
                    hi[j], hi[par] = hi[par], hi[j]
                    j = par
                else:
                    break
        elif _worse(hd[0], hi[0], d, t):
            hd[0] = d
            hi[0] = t
            j = 0
            while True:
                lft = 2 * j + 1
                rgt = lft + 1
                big = j
                if lft < size and _worse(hd[lft], hi[lft], hd[big], hi[big]):
                    big = lft
                if rgt < size and _worse(hd[rgt], hi[rgt], hd[big], hi[big]):
                    big = rgt
                if big == j:
                    break
                hd[j], hd[big] = hd[big], hd[j]
                hi[j], hi[big] = hi[big], hi[j]
                j = big
    # insertion sort ascending on (d, position)
    for i in range(1, size):
        dv = hd[i]
        iv = hi[i]
        j = i - 1
        while j >= 0 and _worse(hd[j], hi[j], dv, iv):
            hd[j + 1] = hd[j]
            hi[j + 1] = hi[j]
            j -= 1
        hd[j + 1] = dv
        hi[j + 1] = iv
    return hi[:size]


@njit(cache=True)
def _compact(wn, wc, ws, wid, m, taken):
    """Drop taken rows from the working copy, preserving order."""
    w = 0
    for t in range(m):
        if not taken[t]:
            if w != t:
                for j in range(wn.shape[1]):
                    wn[w, j] = wn[t, j]
                for j in range(wc.shape[1]):
                    wc[w, j] = wc[t, j]
                for j in range(ws.shape[1]):
                    ws[w, j] = ws[t, j]
                wid[w] = wid[t]
            w += 1
    for t in range(w, m):
        taken[t] = False
    for t in range(w):
        taken[t] = False
    return w


@njit(cache=True)
def _take(members, count, labels, label, taken, wn, wc, wid, sum_num, counts, offsets):
    for t in range(count):
        a = members[t]
        labels[wid[a]] = label
        taken[a] = True
        for j in range(wn.shape[1]):
            sum_num[j] -= wn[a, j]
        for j in range(wc.shape[1]):
            counts[offsets[j] + wc[a, j]] -= 1


@njit(cache=True)
def _init(num, cat, offsets, n_levels):
    n = num.shape[0]
    total_levels = 0
    for j in range(n_levels.shape[0]):
        total_levels += n_levels[j]
    sum_num = np.zeros(num.shape[1])
    counts = np.zeros(total_levels, dtype=np.int64)
    for a in range(n):
        for j in range(num.shape[1]):
            sum_num[j] += num[a, j]
        for j in range(cat.shape[1]):
            counts[offsets[j] + cat[a, j]] += 1
    return sum_num, counts, total_levels


@njit(cache=True)
def mdav(num, cat, offsets, n_levels, k):
    """Maximum-distance-to-average-vector microaggregation.

    Returns a cluster label per record.  Every cluster has between ``k`` and
    ``2k - 1`` members (the caller guarantees ``n >= k``).
    """
    n = num.shape[0]
    wn = num.copy()
    wc = cat.copy()
    ws = np.empty((n, 0), dtype=np.int64)
    wid = np.arange(n)
    taken = np.zeros(n, dtype=np.bool_)
    labels = np.full(n, -1, dtype=np.int64)
    sum_num, counts, _ = _init(num, cat, offsets, n_levels)
    m = n
    label = 0
    members = np.empty(k, dtype=np.int64)
    xn = np.empty(num.shape[1])
    xc = np.empty(cat.shape[1], dtype=cat.dtype)
    while m >= 3 * k:
        cen_num, cen_p, cen_sq = _centroid_from_sums(sum_num, counts, offsets, n_levels, m)
        r = _farthest_from_centroid(wn, wc, m, cen_num, cen_p, offsets, cen_sq)
        xn[:] = wn[r]
        xc[:] = wc[r]
        taken[r] = True
        near = _k_nearest(wn, wc, m, xn, xc, k - 1, taken)
        members[0] = r
        members[1:] = near
        _take(members, k, labels, label, taken, wn, wc, wid, sum_num, counts, offsets)
        label += 1
        m = _compact(wn, wc, ws, wid, m, taken)
        s = _farthest_from_point(wn, wc, m, xn, xc)
        xn[:] = wn[s]
        xc[:] = wc[s]
        taken[s] = True
        near = _k_nearest(wn, wc, m, xn, xc, k - 1, taken)
        members[0] = s
        members[1:] = near
        _take(members, k, labels, label, taken, wn, wc, wid, sum_num, counts, offsets)
        label += 1
        m = _compact(wn, wc, ws, wid, m, taken)
    if m >= 2 * k:
        cen_num, cen_p, cen_sq = _centroid_from_sums(sum_num, counts, offsets, n_levels, m)
        r = _farthest_from_centroid(wn, wc, m, cen_num, cen_p, offsets, cen_sq)
        xn[:] = wn[r]
        xc[:] = wc[r]
        taken[r] = True
        near = _k_nearest(wn, wc, m, xn, xc, k - 1, taken)
        members[0] = r
        members[1:] = near
        _take(members, k, labels, label, taken, wn, wc, wid, sum_num, counts, offsets)
        label += 1
        m = _compact(wn, wc, ws, wid, m, taken)
    if m > 0:
        for t in range(m):
            labels[wid[t]] = label
        label += 1
    return labels


@njit(cache=True)
def _improves(ws, t, xs, hom):
    for j in range(ws.shape[1]):
        if hom[j] and ws[t, j] != xs[j]:
            return True
    return False


@njit(cache=True)
def greedy_kmember(num, cat, offsets, n_levels, sa, k, pool):
    """Diversity-aware k-member clustering.

    Each cluster is seeded with the unassigned record farthest from the
    previous cluster's centroid and grown to ``k`` records nearest the seed,
    taking a record that breaks the cluster's remaining sensitive-attribute
    homogeneity first whenever one exists.  Fewer than ``k`` leftover records
    keep label -1 for the caller to place.
    """
    n = num.shape[0]
    n_sa = sa.shape[1]
    wn = num.copy()
    wc = cat.copy()
    ws = sa.copy()
    wid = np.arange(n)
    taken = np.zeros(n, dtype=np.bool_)
    labels = np.full(n, -1, dtype=np.int64)
    sum_num, counts, total_levels = _init(num, cat, offsets, n_levels)
    cen_num, cen_p, cen_sq = _centroid_from_sums(sum_num, counts, offsets, n_levels, n)
    m = n
    label = 0
    members = np.empty(k, dtype=np.int64)
    hom = np.ones(n_sa, dtype=np.bool_)
    c_sum = np.zeros(num.shape[1])
    c_counts = np.zeros(total_levels, dtype=np.int64)
    xn = np.empty(num.shape[1])
    xc = np.empty(cat.shape[1], dtype=cat.dtype)
    xs = np.empty(n_sa, dtype=sa.dtype)
    while m >= k:
        s = _farthest_from_centroid(wn, wc, m, cen_num, cen_p, offsets, cen_sq)
        xn[:] = wn[s]
        xc[:] = wc[s]
        xs[:] = ws[s]
        taken[s] = True
        members[0] = s
        cand = _k_nearest(wn, wc, m, xn, xc, min(pool, m - 1), taken)
        used = np.zeros(cand.shape[0], dtype=np.bool_)
        for j in range(n_sa):
            hom[j] = True
        any_hom = n_sa > 0
        for pick in range(1, k):
            chosen = -1
            if any_hom:
                for t in range(cand.shape[0]):
                    if not used[t] and _improves(ws, cand[t], xs, hom):
                        chosen = cand[t]
                        used[t] = True
                        break
                if chosen == -1:
                    best_d = np.inf
                    for t in range(m):
                        if taken[t] or not _improves(ws, t, xs, hom):
                            continue
                        d = _dist_to(wn, wc, t, xn, xc)
                        if d < best_d:
                            best_d = d
                            chosen = t
                    if chosen != -1:
                        for t in range(cand.shape[0]):
                            if cand[t] == chosen:
                                used[t] = True
            if chosen == -1:
                for t in range(cand.shape[0]):
                    if not used[t] and not taken[cand[t]]:
                        chosen = cand[t]
                        used[t] = True
                        break
            taken[chosen] = True
            members[pick] = chosen
            if any_hom:
                any_hom = False
                for j in range(n_sa):
                    hom[j] = hom[j] and ws[chosen, j] == xs[j]
                    any_hom = any_hom or hom[j]
        for j in range(num.shape[1]):
            c_sum[j] = 0.0
        for j in range(total_levels):
            c_counts[j] = 0
        for t in range(k):
            a = members[t]
            for j in range(num.shape[1]):
                c_sum[j] += wn[a, j]
            for j in range(cat.shape[1]):
                c_counts[offsets[j] + wc[a, j]] += 1
        cen_num, cen_p, cen_sq = _centroid_from_sums(c_sum, c_counts, offsets, n_levels, k)
        _take(members, k, labels, label, taken, wn, wc, wid, sum_num, counts, offsets)
        label += 1
        m = _compact(wn, wc, ws, wid, m, taken)
    return labels

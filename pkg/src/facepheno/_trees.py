"""Compiled tree-growing kernels.

Exact greedy splits (no histograms): every boundary between distinct sorted
feature values is a candidate. Ties in gain keep the earliest candidate, so
the lowest feature index and lowest threshold win deterministically. All
kernels are single-threaded and allocation-light; numba caches the compiled
artifacts next to this module.

Two growers live here: a leaf-wise regression tree on (gradient, hessian)
pairs for boosting, and a depth-first Gini classification tree whose only
output of interest is the split-importance vector.

The boosting grower avoids per-node sorting. The caller presorts each
feature once per fit; every tree then keeps a working copy of that order
matrix in which each node owns one contiguous segment per feature row.
Split search is a prefix-sum walk along the segment, and applying a split
re-partitions every feature's segment stably, so the candidate set and tie
behavior are identical to sorting inside the node. Values are read from the
transposed matrix to keep each feature's column contiguous.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_TIE_EPS = 1e-15


@njit(cache=True)
def _best_split_seg(Xt, g, ordw, s, e, S, min_leaf):
    """Best squared-error split of the presorted segment [s:e).

    Xt is the transposed (feature-major) matrix, ordw the per-feature row
    order, S the gradient sum of the segment. Returns (gain, feature, thr).
    """
    m = e - s
    best_gain = -1.0
    best_f = -1
    best_t = 0.0
    parent = S * S / m
    for f in range(Xt.shape[0]):
        col = Xt[f]
        row = ordw[f]
        SL = 0.0
        for i in range(s, e - 1):
            r = row[i]
            SL += g[r]
            lo = col[r]
            hi = col[row[i + 1]]
            if lo == hi:
                continue
            nl = i - s + 1
            nr = m - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            SR = S - SL
            gain = SL * SL / nl + SR * SR / nr - parent
            if gain > best_gain + _TIE_EPS:
                best_gain = gain
                best_f = f
                best_t = 0.5 * (lo + hi)
    return best_gain, best_f, best_t


@njit(cache=True)
def _partition_seg(Xt, ordw, buf, s, e, f, t):
    """Stable partition of every feature's segment [s:e) by Xt[f] <= t."""
    col = Xt[f]
    mid = s
    for ff in range(ordw.shape[0]):
        row = ordw[ff]
        nl = 0
        for i in range(s, e):
            if col[row[i]] <= t:
                buf[nl] = row[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if col[row[i]] > t:
                buf[nr] = row[i]
                nr += 1
        for i in range(e - s):
            row[s + i] = buf[i]
        mid = s + nl
    return mid


@njit(cache=True)
def _partition(X, idx, buf, s, e, f, t):
    """Stable partition of idx[s:e] by X[., f] <= t; returns the boundary."""
    nl = 0
    for i in range(s, e):
        if X[idx[i], f] <= t:
            buf[nl] = idx[i]
            nl += 1
    nr = nl
    for i in range(s, e):
        if X[idx[i], f] > t:
            buf[nr] = idx[i]
            nr += 1
    for i in range(e - s):
        idx[s + i] = buf[i]
    return s + nl


@njit(cache=True)
def build_gbdt_tree(Xt, ord0, g, h, max_leaves, min_leaf, value_clip):
    """Leaf-wise tree on negative gradients with Newton leaf values.

    Repeatedly splits the open leaf with the largest squared-error gain
    until max_leaves is reached or nothing is splittable. A leaf is
    splittable when it has 2*min_leaf rows, its gradients are not all equal,
    and some feature still separates it. Xt is the (features, rows) matrix
    and ord0 the matching presorted row order from presort_columns. Returns
    parallel node arrays (feature == -1 marks a leaf).
    """
    n = Xt.shape[1]
    max_nodes = 2 * max_leaves - 1
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    ns = np.zeros(max_nodes, np.int64)
    ne = np.zeros(max_nodes, np.int64)
    cand_gain = np.full(max_nodes, -1.0)
    cand_f = np.full(max_nodes, -1, np.int64)
    cand_t = np.zeros(max_nodes)
    open_cand = np.zeros(max_nodes, np.uint8)

    ordw = ord0.copy()
    buf = np.empty(n, np.int64)
    row0 = ordw[0]

    def _finish_node(node):
        s = ns[node]
        e = ne[node]
        sg = 0.0
        sh = 0.0
        gmin = g[row0[s]]
        gmax = gmin
        for i in range(s, e):
            gi = g[row0[i]]
            sg += gi
            sh += h[row0[i]]
            if gi < gmin:
                gmin = gi
            if gi > gmax:
                gmax = gi
        v = sg / (sh + 1e-12)
        if v > value_clip:
            v = value_clip
        elif v < -value_clip:
            v = -value_clip
        value[node] = v
        if (e - s) >= 2 * min_leaf and (gmax - gmin) > 1e-12:
            gain, f, t = _best_split_seg(Xt, g, ordw, s, e, sg, min_leaf)
            if f >= 0:
                cand_gain[node] = gain
                cand_f[node] = f
                cand_t[node] = t
                open_cand[node] = 1

    ns[0] = 0
    ne[0] = n
    _finish_node(0)
    n_nodes = 1
    n_leaves = 1
    while n_leaves < max_leaves:
        best = -1
        bg = -1.0
        for node in range(n_nodes):
            if open_cand[node] == 1 and cand_gain[node] > bg + _TIE_EPS:
                bg = cand_gain[node]
                best = node
        if best < 0:
            break
        f = cand_f[best]
        t = cand_t[best]
        mid = _partition_seg(Xt, ordw, buf, ns[best], ne[best], f, t)
        feat[best] = f
        thr[best] = t
        open_cand[best] = 0
        lchild = n_nodes
        rchild = n_nodes + 1
        left[best] = lchild
        right[best] = rchild
        ns[lchild] = ns[best]
        ne[lchild] = mid
        ns[rchild] = mid
        ne[rchild] = ne[best]
        _finish_node(lchild)
        _finish_node(rchild)
        n_nodes += 2
        n_leaves += 1
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def presort_columns(X):
    """Feature-major copy of X plus the per-feature presorted row order.

    Computed once per fit and shared by every tree. A zero-feature fit
    still needs one order row so leaf sums have rows to walk.
    """
    Xt = np.ascontiguousarray(X.T)
    if X.shape[1] == 0:
        ord0 = np.arange(X.shape[0], dtype=np.int64)[None, :]
    else:
        ord0 = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    return Xt, ord0


@njit(cache=True)
def predict_tree(feat, thr, left, right, value, X, out):
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]


@njit(cache=True)
def gini_importances(X, y, min_split):
    """Split importances of one fully grown Gini CART tree.

    Depth-first growth until nodes are pure, smaller than min_split, or
    unsplittable. importance[f] accumulates node_weight * impurity decrease
    for every node split on f; the caller normalizes.
    """
    n, d = X.shape
    imp = np.zeros(d)
    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    vals = np.empty(n)
    stack_s = np.empty(n + 2, np.int64)
    stack_e = np.empty(n + 2, np.int64)
    sp = 0
    stack_s[sp] = 0
    stack_e[sp] = n
    sp += 1
    while sp > 0:
        sp -= 1
        s = stack_s[sp]
        e = stack_e[sp]
        m = e - s
        pos = 0
        for i in range(s, e):
            pos += y[idx[i]]
        if pos == 0 or pos == m or m < min_split:
            continue
        pm = pos / m
        parent_gini = 1.0 - pm * pm - (1.0 - pm) * (1.0 - pm)
        best_gain = -1.0
        best_f = -1
        best_t = 0.0
        for f in range(d):
            for i in range(m):
                vals[i] = X[idx[s + i], f]
            order = np.argsort(vals[:m])
            lpos = 0
            for i in range(m - 1):
                lpos += y[idx[s + order[i]]]
                lo = vals[order[i]]
                hi = vals[order[i + 1]]
                if lo == hi:
                    continue
                nl = i + 1
                nr = m - nl
                pl = lpos / nl
                pr = (pos - lpos) / nr
                gl = 1.0 - pl * pl - (1.0 - pl) * (1.0 - pl)
                gr = 1.0 - pr * pr - (1.0 - pr) * (1.0 - pr)
                gain = parent_gini - (nl * gl + nr * gr) / m
                if gain > best_gain + _TIE_EPS:
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (lo + hi)
        if best_f < 0:
            continue
        imp[best_f] += (m / n) * best_gain
        mid = _partition(X, idx, buf, s, e, best_f, best_t)
        stack_s[sp] = s
        stack_e[sp] = mid
        sp += 1
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
    return imp

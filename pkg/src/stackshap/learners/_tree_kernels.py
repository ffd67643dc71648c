"""Compiled CART kernels shared by the forest and the boosting learner.

One split criterion serves both: for a target ``t`` with weights ``w`` a
child's score is ``S**2 / W`` (``S`` = weighted sum of ``t``, ``W`` = total
weight).  Maximizing the summed child score minimizes weighted squared
error, and for a 0/1 target it also minimizes weighted Gini impurity
because ``W * 2p(1 - p) = 2(S - S**2 / W)``.

Trees are stored as flat arrays; a node is a leaf iff ``feature == -1``.
Rows go left iff ``x[feature] <= threshold``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def build_tree(X, t, w, rows, max_depth, min_samples_leaf, max_features, seed):
    """Grow one tree on ``rows`` (indices into X with positive weight).

    Returns ``(feature, threshold, left, right, value, n_nodes, leaf_of_row)``;
    ``leaf_of_row`` maps each entry of ``rows`` to its leaf node.
    """
    np.random.seed(seed)
    n = rows.shape[0]
    n_feat = X.shape[1]
    cap = 2 * n + 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1) + 1)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    idx = rows.copy()
    buf = np.empty(n, dtype=np.int64)
    leaf_pos = np.empty(n, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(n_feat)
    n_try = min(max_features, n_feat)

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        m = end - start

        W = 0.0
        S = 0.0
        tmin = np.inf
        tmax = -np.inf
        for a in range(start, end):
            r = idx[a]
            W += w[r]
            S += w[r] * t[r]
            if t[r] < tmin:
                tmin = t[r]
            if t[r] > tmax:
                tmax = t[r]
        value[node] = S / W if W > 0 else 0.0

        is_leaf = depth >= max_depth or m < 2 * min_samples_leaf or tmin == tmax or W <= 0
        best_f = -1
        best_thr = 0.0
        if not is_leaf:
            parent = S * S / W
            best = parent + 1e-12 * abs(parent) + 1e-300
            # partial Fisher-Yates draw of the candidate features
            if n_try < n_feat:
                for a in range(n_try):
                    b = a + np.random.randint(0, n_feat - a)
                    tmp = feats[a]
                    feats[a] = feats[b]
                    feats[b] = tmp
                cand = np.sort(feats[:n_try])
            else:
                cand = feats[:n_feat].copy()
            vals = np.empty(m)
            for f in cand:
                for a in range(m):
                    vals[a] = X[idx[start + a], f]
                order = np.argsort(vals, kind="mergesort")
                WL = 0.0
                SL = 0.0
                for a in range(m - 1):
                    r = idx[start + order[a]]
                    WL += w[r]
                    SL += w[r] * t[r]
                    v_here = vals[order[a]]
                    v_next = vals[order[a + 1]]
                    if v_here == v_next:
                        continue
                    nl = a + 1
                    if nl < min_samples_leaf or m - nl < min_samples_leaf:
                        continue
                    WR = W - WL
                    if WL <= 0 or WR <= 0:
                        continue
                    SR = S - SL
                    score = SL * SL / WL + SR * SR / WR
                    if score > best:
                        best = score
                        best_f = f
                        thr = 0.5 * (v_here + v_next)
                        if thr >= v_next:
                            thr = v_here
                        best_thr = thr

        if best_f == -1:
            for a in range(start, end):
                buf[a] = node
            continue

        # stable partition of idx[start:end]
        nl = 0
        for a in range(start, end):
            if X[idx[a], best_f] <= best_thr:
                nl += 1
        li = start
        ri = start + nl
        for a in range(start, end):
            r = idx[a]
            if X[r, best_f] <= best_thr:
                leaf_pos[li] = r
                li += 1
            else:
                leaf_pos[ri] = r
                ri += 1
        for a in range(start, end):
            idx[a] = leaf_pos[a]

        feature[node] = best_f
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[top] = rc
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        top += 1

    # buf[a] holds the leaf of idx[a]; map back to the order of ``rows``
    pos_of_row = np.empty(X.shape[0], dtype=np.int64)
    for a in range(n):
        pos_of_row[idx[a]] = buf[a]
    leaf_of_row = np.empty(n, dtype=np.int64)
    for a in range(n):
        leaf_of_row[a] = pos_of_row[rows[a]]
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), n_nodes, leaf_of_row)


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def predict_ensemble(X, feature, threshold, left, right, value, roots):
    """Sum of tree outputs; trees are concatenated with node indices local to each tree."""
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(roots.shape[0]):
            base = roots[k]
            node = 0
            while feature[base + node] != -1:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc
    return out

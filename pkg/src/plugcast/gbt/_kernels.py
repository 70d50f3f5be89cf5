"""Numba kernels for exact greedy tree growth and ensemble evaluation.

Trees are stored as flat arrays indexed by node id; ``feature[k] == -1`` marks
a leaf. A sample goes left when ``x[feature] < threshold``.
"""
import numpy as np
from numba import njit

# gains below this fraction of the parent score are treated as round-off
REL_GAIN_TOL = 1e-12


@njit(cache=True, nogil=True)
def _score(g, h, l2):
    d = h + l2
    if d <= 0.0:
        return 0.0
    return g * g / d


@njit(cache=True, nogil=True)
def grow_tree(X, order, sorted_x, gw, hw, max_depth, min_samples_leaf, l2):
    """Grow one tree level by level.

    ``gw``/``hw`` are weighted gradients/hessians; ``order[j]`` lists the rows
    sorted by feature ``j`` (stable) and ``sorted_x[j]`` the matching values.
    Returns the node arrays and the leaf id reached by every training row.
    """
    n, f = X.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)

    width = 2 ** max_depth
    G = np.zeros(width)
    H = np.zeros(width)
    C = np.zeros(width, dtype=np.int64)
    GL = np.zeros(width)
    HL = np.zeros(width)
    CL = np.zeros(width, dtype=np.int64)
    last_x = np.zeros(width)
    parent_score = np.zeros(width)
    best_gain = np.zeros(width)
    best_feat = np.full(width, -1, dtype=np.int64)
    best_thr = np.zeros(width)

    # node ids of one level are contiguous: [level_start, level_stop)
    node_of = np.zeros(n, dtype=np.int64)
    n_nodes = 1
    level_start, level_stop = 0, 1

    for d in range(max_depth + 1):
        m = level_stop - level_start
        for kk in range(m):
            G[kk] = 0.0
            H[kk] = 0.0
            C[kk] = 0
        for i in range(n):
            kk = node_of[i] - level_start
            if kk >= 0:
                G[kk] += gw[i]
                H[kk] += hw[i]
                C[kk] += 1
        for kk in range(m):
            value[level_start + kk] = -G[kk] / (H[kk] + l2) if H[kk] + l2 > 0.0 else 0.0
        if d == max_depth:
            break

        for kk in range(m):
            parent_score[kk] = _score(G[kk], H[kk], l2)
            best_gain[kk] = REL_GAIN_TOL * parent_score[kk]
            best_feat[kk] = -1
        for j in range(f):
            for kk in range(m):
                GL[kk] = 0.0
                HL[kk] = 0.0
                CL[kk] = 0
            for idx in range(n):
                i = order[j, idx]
                kk = node_of[i] - level_start
                if kk < 0:
                    continue
                x = sorted_x[j, idx]
                cl = CL[kk]
                if cl > 0 and x != last_x[kk] and cl >= min_samples_leaf and C[kk] - cl >= min_samples_leaf:
                    gl = GL[kk]
                    hl = HL[kk]
                    gain = _score(gl, hl, l2) + _score(G[kk] - gl, H[kk] - hl, l2) - parent_score[kk]
                    if gain > best_gain[kk]:
                        best_gain[kk] = gain
                        best_feat[kk] = j
                        mid = last_x[kk] + (x - last_x[kk]) * 0.5
                        if mid <= last_x[kk]:
                            mid = x
                        best_thr[kk] = mid
                GL[kk] += gw[i]
                HL[kk] += hw[i]
                CL[kk] = cl + 1
                last_x[kk] = x

        next_start = n_nodes
        for kk in range(m):
            k = level_start + kk
            if best_feat[kk] >= 0:
                feature[k] = best_feat[kk]
                threshold[k] = best_thr[kk]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                n_nodes += 2
        if n_nodes == next_start:
            break
        for i in range(n):
            k = node_of[i]
            if k >= level_start and feature[k] >= 0:
                node_of[i] = left[k] if X[i, feature[k]] < threshold[k] else right[k]
            else:
                # rows in closed leaves drop out of later levels
                node_of[i] = -1 - k if k >= 0 else k
        level_start, level_stop = next_start, n_nodes

    for i in range(n):
        if node_of[i] < 0:
            node_of[i] = -1 - node_of[i]
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], node_of


@njit(cache=True, nogil=True)
def leaf_index(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        k = 0
        while feature[k] >= 0:
            k = left[k] if X[i, feature[k]] < threshold[k] else right[k]
        out[i] = k
    return out


@njit(cache=True, nogil=True)
def ensemble_sum(X, base, lr, feature, threshold, left, right, value):
    """Accumulate ``base + lr * tree_m(x)`` over trees in fitting order.

    Tree arrays are ``(n_trees, n_outputs, max_nodes)``; returns ``(n, n_outputs)``.
    """
    n = X.shape[0]
    m, k_out, _ = feature.shape
    out = np.empty((n, k_out))
    for i in range(n):
        for c in range(k_out):
            acc = base[c]
            for t in range(m):
                k = 0
                while feature[t, c, k] >= 0:
                    k = left[t, c, k] if X[i, feature[t, c, k]] < threshold[t, c, k] else right[t, c, k]
                acc = acc + lr * value[t, c, k]
            out[i, c] = acc
    return out


@njit(cache=True, nogil=True)
def rollout(lags, exog, base, lr, feature, threshold, left, right, value):
    """Recursive forecast of a single-output ensemble over rows ``[lags, exog[h]]``.

    ``lags[0]`` is the most recent value; each prediction is pushed in front.
    """
    n_lags = lags.shape[0]
    horizon, n_exog = exog.shape
    m = feature.shape[0]
    x = np.empty(n_lags + n_exog)
    hist = lags.copy()
    out = np.empty(horizon)
    for h in range(horizon):
        for i in range(n_lags):
            x[i] = hist[i]
        for j in range(n_exog):
            x[n_lags + j] = exog[h, j]
        acc = base
        for t in range(m):
            k = 0
            while feature[t, 0, k] >= 0:
                k = left[t, 0, k] if x[feature[t, 0, k]] < threshold[t, 0, k] else right[t, 0, k]
            acc = acc + lr * value[t, 0, k]
        out[h] = acc
        for i in range(n_lags - 1, 0, -1):
            hist[i] = hist[i - 1]
        if n_lags:
            hist[0] = acc
    return out

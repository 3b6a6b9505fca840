"""Compiled inner loops: CART split search, routing and leaf co-occurrence counting.

All kernels release the GIL so callers can fan out over a thread pool.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(nogil=True, cache=True)
def build_tree(X, y, w, support, max_depth, min_samples_split, max_features, seed):
    """Greedy depth-first CART on the rows in ``support`` weighted by ``w``.

    ``max_depth < 0`` means unbounded. ``max_features >= p`` searches every
    feature; otherwise a fresh subset is drawn per node from numba's
    thread-local generator seeded with ``seed``.
    Returns node arrays truncated to the number of nodes built.
    """
    n_support = support.shape[0]
    p = X.shape[1]
    max_nodes = 2 * n_support - 1
    feature = np.full(max_nodes, LEAF, dtype=np.int64)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, LEAF, dtype=np.int64)
    right = np.full(max_nodes, LEAF, dtype=np.int64)
    value = np.zeros(max_nodes, dtype=np.float64)
    weight = np.zeros(max_nodes, dtype=np.float64)
    depth = np.zeros(max_nodes, dtype=np.int64)

    np.random.seed(seed)
    subset = max_features < p
    candidates = np.arange(p)

    idx = support.copy()
    # stack entries: start, end, depth, parent, is_left
    st_start = np.empty(max_nodes, dtype=np.int64)
    st_end = np.empty(max_nodes, dtype=np.int64)
    st_depth = np.empty(max_nodes, dtype=np.int64)
    st_parent = np.empty(max_nodes, dtype=np.int64)
    st_left = np.empty(max_nodes, dtype=np.bool_)
    top = 0
    st_start[0] = 0
    st_end[0] = n_support
    st_depth[0] = 0
    st_parent[0] = -1
    st_left[0] = False
    top = 1
    n_nodes = 0
    vals = np.empty(n_support, dtype=np.float64)

    while top > 0:
        top -= 1
        s = st_start[top]
        e = st_end[top]
        d = st_depth[top]
        parent = st_parent[top]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_left[top]:
                left[parent] = node
            else:
                right[parent] = node
        depth[node] = d

        wsum = 0.0
        wysum = 0.0
        ymin = np.inf
        ymax = -np.inf
        for a in range(s, e):
            r = idx[a]
            wsum += w[r]
            wysum += w[r] * y[r]
            if y[r] < ymin:
                ymin = y[r]
            if y[r] > ymax:
                ymax = y[r]
        weight[node] = wsum
        value[node] = wysum / wsum

        if (max_depth >= 0 and d >= max_depth) or wsum < min_samples_split or ymin == ymax:
            continue

        if subset:
            perm = np.random.permutation(p)
            candidates = np.sort(perm[:max_features])

        # gains within a relative 1e-12 of the node SSE count as ties, so
        # rounding noise cannot override the lowest-feature/threshold rule
        mean = wysum / wsum
        sse = 0.0
        for a in range(s, e):
            r = idx[a]
            sse += w[r] * (y[r] - mean) * (y[r] - mean)
        tol = 1e-12 * sse
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        m = e - s
        for ci in range(candidates.shape[0]):
            f = candidates[ci]
            for a in range(m):
                vals[a] = X[idx[s + a], f]
            order = np.argsort(vals[:m], kind="mergesort")
            if vals[order[0]] == vals[order[m - 1]]:
                continue
            wl = 0.0
            wyl = 0.0
            for a in range(m - 1):
                r = idx[s + order[a]]
                wl += w[r]
                wyl += w[r] * y[r]
                lo = vals[order[a]]
                hi = vals[order[a + 1]]
                if lo < hi:
                    wr = wsum - wl
                    diff = wyl / wl - (wysum - wyl) / wr
                    gain = wl * wr / wsum * diff * diff
                    if gain > best_gain + tol:
                        best_gain = gain
                        best_f = f
                        thr = 0.5 * (lo + hi)
                        if thr >= hi:
                            thr = lo
                        best_thr = thr

        if best_f < 0:
            continue

        feature[node] = best_f
        threshold[node] = best_thr
        # partition idx[s:e] into <= thr | > thr, both halves keep relative order
        n_left = 0
        for a in range(s, e):
            if X[idx[a], best_f] <= best_thr:
                n_left += 1
        buf = idx[s:e].copy()
        li = s
        ri = s + n_left
        for a in range(m):
            r = buf[a]
            if X[r, best_f] <= best_thr:
                idx[li] = r
                li += 1
            else:
                idx[ri] = r
                ri += 1
        # push right first so the left child gets the next id (preorder)
        st_start[top] = s + n_left
        st_end[top] = e
        st_depth[top] = d + 1
        st_parent[top] = node
        st_left[top] = False
        top += 1
        st_start[top] = s
        st_end[top] = s + n_left
        st_depth[top] = d + 1
        st_parent[top] = node
        st_left[top] = True
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        depth[:n_nodes].copy(),
    )


@njit(nogil=True, cache=True)
def route(X, feature, threshold, left, right):
    """Terminal node id for each row; ``x[f] <= t`` goes left."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(nogil=True, cache=True)
def _bucket_order(col):
    order = np.argsort(col, kind="mergesort")
    n = col.shape[0]
    starts = np.empty(n + 1, dtype=np.int64)
    n_buckets = 0
    for a in range(n):
        if a == 0 or col[order[a]] != col[order[a - 1]]:
            starts[n_buckets] = a
            n_buckets += 1
    starts[n_buckets] = n
    return order, starts[: n_buckets + 1].copy()


@njit(nogil=True, cache=True)
def cooccurrence_rows(row_leaves, col_leaves, row_mask, col_mask, counts):
    """Accumulate leaf co-membership counts tree by tree.

    ``counts[a, j] += 1`` for every tree ``t`` where row ``a`` and column
    ``j`` share a leaf and both ``row_mask[a, t]`` and ``col_mask[j, t]``
    hold. Columns are bucketed by leaf id per tree, so the work per tree is
    the sum of bucket sizes over the rows rather than all row/column pairs.
    """
    m = row_leaves.shape[0]
    T = row_leaves.shape[1]
    for t in range(T):
        col = col_leaves[:, t]
        mask = col_mask[:, t]
        n_keep = 0
        for j in range(col.shape[0]):
            if mask[j]:
                n_keep += 1
        keep = np.empty(n_keep, dtype=np.int64)
        k = 0
        for j in range(col.shape[0]):
            if mask[j]:
                keep[k] = j
                k += 1
        if n_keep == 0:
            continue
        kept_leaves = col[keep]
        order, starts = _bucket_order(kept_leaves)
        n_buckets = starts.shape[0] - 1
        for a in range(m):
            if not row_mask[a, t]:
                continue
            leaf = row_leaves[a, t]
            # binary search for the bucket holding this leaf id
            lo = 0
            hi = n_buckets
            while lo < hi:
                mid = (lo + hi) // 2
                if kept_leaves[order[starts[mid]]] < leaf:
                    lo = mid + 1
                else:
                    hi = mid
            if lo == n_buckets or kept_leaves[order[starts[lo]]] != leaf:
                continue
            for b in range(starts[lo], starts[lo + 1]):
                counts[a, keep[order[b]]] += 1
    return counts

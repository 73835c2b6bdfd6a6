"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``SWAPCON_DISABLE_NUMBA`` is unset (or ``0``).  Both paths are
always importable as ``numpy_impl`` / ``numba_impl`` so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("SWAPCON_DISABLE_NUMBA", "0").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# AUC: doubled Mann-Whitney U over score-sorted runs
# ---------------------------------------------------------------------------

def _auc_counts_np(sorted_scores, sorted_labels):
    """Return (2*U, tied_pairs) for scores sorted ascending.

    2*U counts each correctly ordered (pos, neg) pair as 2 and each tied
    pair as 1, so it stays an exact integer.
    """
    n = sorted_scores.shape[0]
    if n == 0:
        return 0, 0
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    pos = np.add.reduceat(sorted_labels.astype(np.int64), starts)
    size = np.diff(np.r_[starts, n])
    neg = size - pos
    neg_below = np.cumsum(neg) - neg
    twice_u = int(2 * np.sum(pos * neg_below) + np.sum(pos * neg))
    ties = int(np.sum(pos * neg))
    return twice_u, ties


def _auc_counts_loop(sorted_scores, sorted_labels):
    n = sorted_scores.shape[0]
    twice_u = 0
    ties = 0
    neg_below = 0
    i = 0
    while i < n:
        j = i
        p = 0
        q = 0
        while j < n and sorted_scores[j] == sorted_scores[i]:
            if sorted_labels[j] != 0:
                p += 1
            else:
                q += 1
            j += 1
        twice_u += 2 * p * neg_below + p * q
        ties += p * q
        neg_below += q
        i = j
    return twice_u, ties


# ---------------------------------------------------------------------------
# KNN: k nearest training rows per query, ties broken by training index
# ---------------------------------------------------------------------------

def _knn_np(train, queries, k, chunk=64):
    m = queries.shape[0]
    out = np.empty((m, k), dtype=np.int64)
    for lo in range(0, m, chunk):
        q = queries[lo:lo + chunk]
        # feature-by-feature accumulation: same summation order as the loop kernel
        d2 = np.zeros((q.shape[0], train.shape[0]))
        for j in range(train.shape[1]):
            t = q[:, j, None] - train[None, :, j]
            d2 += t * t
        out[lo:lo + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def _knn_loop(train, queries, k):
    m = queries.shape[0]
    n, f = train.shape
    out = np.empty((m, k), dtype=np.int64)
    best_d = np.empty(k, dtype=np.float64)
    best_i = np.empty(k, dtype=np.int64)
    for qi in range(m):
        best_d[:] = np.inf
        best_i[:] = -1
        for i in range(n):
            s = 0.0
            for j in range(f):
                t = queries[qi, j] - train[i, j]
                s += t * t
            # strict < keeps the earlier index on equal distances
            if s < best_d[k - 1]:
                c = k - 1
                while c > 0 and s < best_d[c - 1]:
                    best_d[c] = best_d[c - 1]
                    best_i[c] = best_i[c - 1]
                    c -= 1
                best_d[c] = s
                best_i[c] = i
        out[qi, :] = best_i
    return out


# ---------------------------------------------------------------------------
# GBDT: exact greedy split scan over one presorted feature
# ---------------------------------------------------------------------------

def _split_scan_np(xs, g, h, lam, min_child_weight):
    """Best split of presorted values; returns (gain, threshold, n_left).

    Gain is the usual second-order objective reduction (without the 1/2
    factor and complexity penalty applied by the caller).  Ties keep the
    lowest threshold.
    """
    n = xs.shape[0]
    if n < 2:
        return -np.inf, np.nan, 0
    gl = np.cumsum(g)[:-1]
    hl = np.cumsum(h)[:-1]
    gt = gl[-1] + g[-1]
    ht = hl[-1] + h[-1]
    gr = gt - gl
    hr = ht - hl
    valid = (xs[1:] != xs[:-1]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    if not valid.any():
        return -np.inf, np.nan, 0
    gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - gt * gt / (ht + lam)
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), 0.5 * (xs[i] + xs[i + 1]), i + 1


def _split_scan_loop(xs, g, h, lam, min_child_weight):
    n = xs.shape[0]
    best = -np.inf
    thr = np.nan
    n_left = 0
    if n < 2:
        return best, thr, n_left
    gt = 0.0
    ht = 0.0
    for i in range(n):
        gt += g[i]
        ht += h[i]
    gl = 0.0
    hl = 0.0
    parent = gt * gt / (ht + lam)
    for i in range(n - 1):
        gl += g[i]
        hl += h[i]
        if xs[i + 1] == xs[i]:
            continue
        hr = ht - hl
        if hl < min_child_weight or hr < min_child_weight:
            continue
        gr = gt - gl
        gain = gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent
        if gain > best:
            best = gain
            thr = 0.5 * (xs[i] + xs[i + 1])
            n_left = i + 1
    return best, thr, n_left


# ---------------------------------------------------------------------------
# GBDT: flat-array tree traversal (NaN goes to the node's default child)
# ---------------------------------------------------------------------------

def _tree_predict_np(X, feature, threshold, left, right, default_left, value):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        nd = node[idx]
        x = X[idx, feature[nd]]
        go_left = np.where(np.isnan(x), default_left[nd], x < threshold[nd])
        node[idx] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return value[node]


def _tree_predict_loop(X, feature, threshold, left, right, default_left, value):
    m = X.shape[0]
    out = np.empty(m, dtype=np.float64)
    for r in range(m):
        nd = 0
        while feature[nd] >= 0:
            x = X[r, feature[nd]]
            if np.isnan(x):
                go_left = default_left[nd]
            else:
                go_left = x < threshold[nd]
            nd = left[nd] if go_left else right[nd]
        out[r] = value[nd]
    return out


numpy_impl = SimpleNamespace(
    auc_counts=_auc_counts_np,
    knn=_knn_np,
    split_scan=_split_scan_np,
    tree_predict=_tree_predict_np,
    name="numpy",
)

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    numba_impl = SimpleNamespace(
        auc_counts=_jit(_auc_counts_loop),
        knn=_jit(_knn_loop),
        split_scan=_jit(_split_scan_loop),
        tree_predict=_jit(_tree_predict_loop),
        name="numba",
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if USE_NUMBA else numpy_impl


def auc_counts(sorted_scores, sorted_labels):
    return active.auc_counts(
        np.ascontiguousarray(sorted_scores, dtype=np.float64),
        np.ascontiguousarray(sorted_labels, dtype=np.int64),
    )


def knn(train, queries, k):
    return active.knn(
        np.ascontiguousarray(train, dtype=np.float64),
        np.ascontiguousarray(queries, dtype=np.float64),
        int(k),
    )


def split_scan(xs, g, h, lam, min_child_weight):
    return active.split_scan(
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(g, dtype=np.float64),
        np.ascontiguousarray(h, dtype=np.float64),
        float(lam),
        float(min_child_weight),
    )


def tree_predict(X, feature, threshold, left, right, default_left, value):
    return active.tree_predict(
        np.ascontiguousarray(X, dtype=np.float64),
        feature, threshold, left, right, default_left, value,
    )

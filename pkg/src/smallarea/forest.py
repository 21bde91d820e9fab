"""Bagged regression forest on areal rows.

Each tree is grown on a with-replacement bootstrap of the ``m`` training
rows. A row drawn ``k`` times enters the tree with multiplicity ``k``, which
is equivalent to growing on the bootstrap multiset. At every node ``mtry``
covariates are drawn without replacement and the split ``x_j <= t`` that
minimises the two-node sum of squared deviations is chosen among midpoints
between consecutive distinct values. A node becomes a leaf once it holds at
most ``nodesize`` responses, or when no split lowers the sum of squares.

A tree predicts the multiplicity-weighted mean of its leaf, so the forest
prediction is a convex combination of training responses,

    yhat(x) = sum_c w_c(x) * y_c,   w_c(x) = mean_b w_c^(b)(x),

where ``w_c^(b)(x)`` is row ``c``'s share of the bootstrap multiplicity in
the leaf of tree ``b`` containing ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numba
import numpy as np

from . import rng


@dataclass(frozen=True)
class ForestHyper:
    B: int = 500
    mtry: int = 2
    nodesize: int = 5
    seed: int = 0
    always: int | None = None  # covariate considered at every split, on top of mtry

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.nodesize < 1:
            raise ValueError("nodesize must be >= 1")


@numba.njit(cache=True)
def _grow_tree(X, y, mult, mtry, nodesize, seed, always):
    np.random.seed(seed)
    m, p = X.shape
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    leaf_start = np.full(cap, -1, np.int64)
    leaf_len = np.zeros(cap, np.int64)
    leaf_rows = np.empty(m, np.int64)
    n_leaf_rows = 0

    # Work buffer: each node owns a contiguous segment of `order`.
    order = np.empty(m, np.int64)
    k = 0
    for i in range(m):
        if mult[i] > 0:
            order[k] = i
            k += 1
    seg_start = np.zeros(cap, np.int64)
    seg_end = np.zeros(cap, np.int64)
    seg_end[0] = k
    stack = np.empty(cap, np.int64)
    stack[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(p)
    buf = np.empty(m, np.int64)
    xs = np.empty(m)
    dev = np.zeros(m)

    while top > 0:
        top -= 1
        node = stack[top]
        a = seg_start[node]
        b = seg_end[node]
        W = 0.0
        S = 0.0
        for t in range(a, b):
            i = order[t]
            W += mult[i]
            S += mult[i] * y[i]
        # scores use deviations from the node mean, so they do not depend on
        # the outcome's offset; `tol` makes near-ties keep the earliest
        # (lowest covariate, lowest threshold) candidate
        mu = S / W
        SS = 0.0
        for t in range(a, b):
            i = order[t]
            dev[i] = y[i] - mu
            SS += mult[i] * dev[i] * dev[i]
        best_j = -1
        best_t = 0.0
        if W > nodesize:
            tol = 1e-9 * SS
            best = tol
            # partial Fisher-Yates draw of mtry covariates (excluding `always`)
            pool = 0
            for t in range(p):
                if t != always:
                    feats[pool] = t
                    pool += 1
            for t in range(mtry):
                r = t + int(np.random.random() * (pool - t))
                tmp = feats[t]
                feats[t] = feats[r]
                feats[r] = tmp
            n_try = mtry
            if always >= 0:
                feats[mtry] = always
                n_try = mtry + 1
            chosen = np.sort(feats[:n_try].copy())
            nseg = b - a
            for jj in range(n_try):
                j = chosen[jj]
                for t in range(nseg):
                    xs[t] = X[order[a + t], j]
                srt = np.argsort(xs[:nseg], kind="mergesort")
                wl = 0.0
                sl = 0.0
                for t in range(nseg - 1):
                    i = order[a + srt[t]]
                    wl += mult[i]
                    sl += mult[i] * dev[i]
                    x0 = xs[srt[t]]
                    x1 = xs[srt[t + 1]]
                    if x1 <= x0:
                        continue
                    wr = W - wl
                    # right-hand deviation sum is -sl
                    score = sl * sl / wl + sl * sl / wr
                    if score > best + (tol if best_j >= 0 else 0.0):
                        best = score
                        best_j = j
                        best_t = 0.5 * (x0 + x1)
        if best_j < 0:
            leaf_start[node] = n_leaf_rows
            for t in range(a, b):
                leaf_rows[n_leaf_rows] = order[t]
                n_leaf_rows += 1
            leaf_len[node] = b - a
            continue
        # stable partition of the segment
        nl = 0
        for t in range(a, b):
            if X[order[t], best_j] <= best_t:
                buf[nl] = order[t]
                nl += 1
        nr = nl
        for t in range(a, b):
            if X[order[t], best_j] > best_t:
                buf[nr] = order[t]
                nr += 1
        for t in range(b - a):
            order[a + t] = buf[t]
        feature[node] = best_j
        threshold[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        seg_start[lc] = a
        seg_end[lc] = a + nl
        seg_start[rc] = a + nl
        seg_end[rc] = b
        stack[top] = rc
        stack[top + 1] = lc
        top += 2
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], leaf_start[:n_nodes], leaf_len[:n_nodes],
            leaf_rows[:n_leaf_rows])


@numba.njit(cache=True)
def _leaf_of(feature, threshold, left, right, x):
    node = 0
    while feature[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@numba.njit(cache=True)
def _forest_weights(node_off, feature, threshold, left, right, leaf_start,
                    leaf_len, row_off, leaf_rows, mult, Q, m):
    B = len(node_off) - 1
    nq = Q.shape[0]
    Wt = np.zeros((nq, m))
    for b in range(B):
        no = node_off[b]
        ne = node_off[b + 1]
        ro = row_off[b]
        for q in range(nq):
            leaf = _leaf_of(feature[no:ne], threshold[no:ne], left[no:ne],
                            right[no:ne], Q[q])
            s = leaf_start[no + leaf]
            L = leaf_len[no + leaf]
            tot = 0.0
            for t in range(L):
                tot += mult[b, leaf_rows[ro + s + t]]
            for t in range(L):
                i = leaf_rows[ro + s + t]
                Wt[q, i] += mult[b, i] / tot
    for q in range(nq):
        for i in range(m):
            Wt[q, i] /= B
    return Wt


@numba.njit(cache=True)
def _tree_value(no, ne, ro, feature, threshold, left, right, leaf_start,
                leaf_len, leaf_rows, mult_b, y, X, i, j, v):
    """Tree prediction for training row ``i`` with covariate ``j`` set to ``v``
    (``j < 0`` leaves the row unchanged)."""
    node = 0
    while feature[no + node] >= 0:
        f = feature[no + node]
        xv = v if f == j else X[i, f]
        if xv <= threshold[no + node]:
            node = left[no + node]
        else:
            node = right[no + node]
    s = leaf_start[no + node]
    L = leaf_len[no + node]
    tot = 0.0
    acc = 0.0
    for t in range(L):
        r = leaf_rows[ro + s + t]
        tot += mult_b[r]
        acc += mult_b[r] * y[r]
    return acc / tot


@numba.njit(cache=True)
def _oob_importance(node_off, feature, threshold, left, right, leaf_start,
                    leaf_len, row_off, leaf_rows, mult, X, y, perm_seed):
    """Mean over trees of the OOB MSE increase when one covariate is permuted
    among the tree's OOB rows. Covariates a tree never splits on contribute 0."""
    np.random.seed(perm_seed)
    B = len(node_off) - 1
    m, p = X.shape
    imp = np.zeros(p)
    used = 0
    in_tree = np.zeros(p, np.bool_)
    for b in range(B):
        oob = np.flatnonzero(mult[b] == 0)
        k = len(oob)
        if k < 2:
            continue
        used += 1
        no = node_off[b]
        ne = node_off[b + 1]
        ro = row_off[b]
        in_tree[:] = False
        for node in range(no, ne):
            if feature[node] >= 0:
                in_tree[feature[node]] = True
        base = 0.0
        for t in range(k):
            i = oob[t]
            r = y[i] - _tree_value(no, ne, ro, feature, threshold, left, right,
                                   leaf_start, leaf_len, leaf_rows, mult[b], y,
                                   X, i, -1, 0.0)
            base += r * r
        base /= k
        for j in range(p):
            if not in_tree[j]:
                continue
            perm = oob[np.random.permutation(k)]
            err = 0.0
            for t in range(k):
                i = oob[t]
                r = y[i] - _tree_value(no, ne, ro, feature, threshold, left,
                                       right, leaf_start, leaf_len, leaf_rows,
                                       mult[b], y, X, i, j, X[perm[t], j])
                err += r * r
            imp[j] += err / k - base
    if used > 0:
        imp /= used
    return imp


class Forest:
    """A fitted forest. Build with :func:`fit`."""

    def __init__(self, X, y, hyper, mult, trees, canon):
        self.X = X            # training covariates, canonical row order
        self.y = y
        self.hyper = hyper
        self.mult = mult      # (B, m) bootstrap multiplicities
        self._canon = canon   # canonical position -> caller's row index
        (self.node_off, self.feature, self.threshold, self.left, self.right,
         self.leaf_start, self.leaf_len, self.row_off, self.leaf_rows) = trees

    @property
    def m(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def B(self) -> int:
        return len(self.node_off) - 1

    def weights(self, Q) -> np.ndarray:
        """Prediction weights ``(n_query, m)`` over training rows, in the
        row order given to :func:`fit`."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[1] != self.p:
            raise ValueError(f"query has {Q.shape[1]} covariates, forest has {self.p}")
        Wc = _forest_weights(self.node_off, self.feature, self.threshold,
                             self.left, self.right, self.leaf_start, self.leaf_len,
                             self.row_off, self.leaf_rows, self.mult,
                             np.ascontiguousarray(Q), self.m)
        out = np.empty_like(Wc)
        out[:, self._canon] = Wc
        return out

    def predict(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        Wc = self.weights(Q)[:, self._canon]
        return Wc @ self.y

    def oob_importance(self, seed: int = 0) -> np.ndarray:
        """Permutation importance per covariate (mean OOB MSE increase)."""
        g = rng.stream(seed, rng.PERMUTATION, 0)
        return _oob_importance(self.node_off, self.feature, self.threshold,
                               self.left, self.right, self.leaf_start,
                               self.leaf_len, self.row_off, self.leaf_rows,
                               self.mult, self.X, self.y,
                               int(g.integers(2**31 - 1)))


def fit(X, y, hyper: ForestHyper, multiplicities=None) -> Forest:
    """Grow ``hyper.B`` trees on bootstrap resamples of ``(X, y)``.

    Rows are put in a canonical (lexicographic) order before resampling, so
    the fitted forest does not depend on the order in which rows are given.
    ``multiplicities`` (``(B, m)`` counts in the given row order) replaces the
    random bootstrap.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(y) == 0:
        raise ValueError("empty training set")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("training data must be finite")
    m, p = X.shape
    always = -1 if hyper.always is None else int(hyper.always)
    if hyper.mtry > p - (always >= 0):
        raise ValueError(f"mtry={hyper.mtry} exceeds the {p - (always >= 0)} "
                         "candidate covariates")
    canon = np.lexsort(np.column_stack([X, y]).T[::-1])
    Xc = np.ascontiguousarray(X[canon])
    yc = y[canon]
    g = rng.stream(hyper.seed, rng.FOREST)
    boot = g.integers(0, m, size=(hyper.B, m))
    if multiplicities is None:
        mult = np.zeros((hyper.B, m), dtype=np.float64)
        for b in range(hyper.B):
            mult[b] = np.bincount(boot[b], minlength=m)
    else:
        given = np.asarray(multiplicities, dtype=np.float64)
        if given.shape != (hyper.B, m) or np.any(given < 0) or np.any(given.sum(1) == 0):
            raise ValueError("multiplicities must be non-negative (B, m) counts, "
                             "each tree using at least one row")
        mult = np.ascontiguousarray(given[:, canon])
    seeds = g.integers(0, 2**31 - 1, size=hyper.B)
    parts = [_grow_tree(Xc, yc, mult[b], hyper.mtry, hyper.nodesize, int(seeds[b]),
                        always)
             for b in range(hyper.B)]
    node_off = np.concatenate([[0], np.cumsum([len(t[0]) for t in parts])])
    row_off = np.concatenate([[0], np.cumsum([len(t[6]) for t in parts])])
    cat = [np.concatenate([t[k] for t in parts]) for k in range(7)]
    trees = (node_off, *cat[:6], row_off, cat[6])
    return Forest(Xc, yc, hyper, mult, trees, canon)


def predict(forest: Forest, xbar) -> tuple[float, np.ndarray]:
    """Point prediction and weights over training rows for one covariate vector."""
    xbar = np.asarray(xbar, dtype=float)
    if xbar.ndim != 1 or len(xbar) != forest.p:
        raise ValueError(f"expected a vector of length {forest.p}")
    w = forest.weights(xbar[None, :])[0]
    return float(w @ forest.y[np.argsort(forest._canon)]), w


def importance_pvalues(X, y, hyper: ForestHyper, n_perm: int = 100,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Permutation p-values for covariate importance.

    The observed OOB permutation importance of each covariate is compared with
    importances from ``n_perm`` forests refitted on permuted outcomes;
    ``p_j = (1 + #{null_j >= observed_j}) / (n_perm + 1)``.

    Returns ``(pvalues, observed_importance)``.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    y = np.asarray(y, dtype=float)
    observed = fit(X, y, hyper).oob_importance(seed)
    exceed = np.zeros(len(observed))
    for r in range(n_perm):
        g = rng.stream(seed, rng.PERMUTATION, 1, r)
        y_perm = y[g.permutation(len(y))]
        null_h = replace(hyper, seed=rng.derive_seed(hyper.seed, rng.PERMUTATION, r))
        null = fit(X, y_perm, null_h).oob_importance(rng.derive_seed(seed, r))
        exceed += null >= observed
    return (1.0 + exceed) / (n_perm + 1.0), observed

"""CART regression trees with cost-complexity pruning.

Trees are stored as flat node arrays. Internal nodes send rows with
``x[feature] <= threshold`` to the left child. Every node keeps the mean
output vector of its training members and their sum of squared deviations
(summed over outputs), which is what the split criterion, pruning and
feature importances work from.

With several outputs the impurity is the trace of the output covariance,
i.e. the sum of per-output variances.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import numba as nb

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_depth: int | None = None
    impurity: str | None = None  # "variance" (q=1) or "covariance_trace"; inferred when None
    rng_seed: int = 0
    feature_subset_m: int | None = None

    def __post_init__(self):
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.feature_subset_m is not None and self.feature_subset_m < 1:
            raise ValueError("feature_subset_m must be >= 1")
        if self.impurity not in (None, "variance", "covariance_trace"):
            raise ValueError(f"unknown impurity {self.impurity!r}")

    def replace(self, **kw) -> "TreeParams":
        return TreeParams(**{**asdict(self), **kw})


# ------------------------------------------------------------------ kernels


@nb.njit(cache=True, nogil=True)
def _presort(X):
    n, p = X.shape
    srt = np.empty((p, n), np.int64)
    for f in range(p):
        srt[f] = np.argsort(X[:, f], kind="mergesort")
    return srt


@nb.njit(cache=True, nogil=True)
def _resample_order(srt, rows):
    """Sorted order of ``X[rows]`` from the sorted order of ``X``, in O(p n)."""
    p, n_full = srt.shape
    n = rows.shape[0]
    # bucket the resampled positions by source row, ascending
    start = np.zeros(n_full + 1, np.int64)
    for j in range(n):
        start[rows[j] + 1] += 1
    for i in range(n_full):
        start[i + 1] += start[i]
    fill = start[:-1].copy()
    pos = np.empty(n, np.int64)
    for j in range(n):
        pos[fill[rows[j]]] = j
        fill[rows[j]] += 1
    out = np.empty((p, n), np.int64)
    for f in range(p):
        a = 0
        for i in srt[f]:
            for t in range(start[i], start[i + 1]):
                out[f, a] = pos[t]
                a += 1
    return out


@nb.njit(cache=True, nogil=True)
def _grow(X, Y, srt, min_leaf, min_split, max_depth, m_features, seed):
    n, p = X.shape
    Xt = np.ascontiguousarray(X.T)
    inv = np.zeros(n + 1)
    for i in range(1, n + 1):
        inv[i] = 1.0 / i
    q = Y.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    count = np.zeros(cap, np.int64)
    sse = np.zeros(cap)
    value = np.zeros((cap, q))

    np.random.seed(seed)
    # srt: per-feature row order; every node owns the same [start, end) slice of each row
    buf = np.empty(n, np.int64)
    goes_left = np.zeros(n, np.bool_)
    feats = np.arange(p)
    chosen = np.arange(p)
    yc = np.empty((n, q))
    s_left = np.empty(q)
    mean = np.empty(q)

    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node = np.empty(cap, np.int64)
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    st_node[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        node = st_node[top]
        nn = end - start
        count[node] = nn

        rows = srt[0, start:end]
        for k in range(q):
            mean[k] = 0.0
        for r in rows:
            for k in range(q):
                mean[k] += Y[r, k]
        for k in range(q):
            mean[k] /= nn
            value[node, k] = mean[k]
        s = 0.0
        for r in rows:
            for k in range(q):
                d = Y[r, k] - mean[k]
                yc[r, k] = d
                s += d * d
        sse[node] = s

        if nn < min_split or nn < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth) or s <= 0.0:
            continue

        # m candidate features drawn without replacement, scanned in index order
        if m_features < p:
            for j in range(m_features):
                k = j + np.random.randint(p - j)
                t = feats[j]
                feats[j] = feats[k]
                feats[k] = t
            chosen[:m_features] = np.sort(feats[:m_features])
        n_chosen = m_features if m_features < p else p

        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for c in range(n_chosen):
            f = chosen[c]
            seg = srt[f, start:end]
            for k in range(q):
                s_left[k] = 0.0
            for i in range(nn - 1):
                r = seg[i]
                for k in range(q):
                    s_left[k] += yc[r, k]
                n_l = i + 1
                n_r = nn - n_l
                if n_l < min_leaf:
                    continue
                if n_r < min_leaf:
                    break
                v0 = Xt[f, r]
                v1 = Xt[f, seg[i + 1]]
                if not v0 < v1:
                    continue
                acc = 0.0
                for k in range(q):
                    acc += s_left[k] * s_left[k]
                gain = acc * (inv[n_l] + inv[n_r])
                if gain > best_gain * (1.0 + 1e-12) and gain > 1e-12 * s:
                    best_gain = gain
                    best_f = f
                    thr = 0.5 * (v0 + v1)
                    if not thr < v1:
                        thr = v0
                    best_thr = thr

        if best_f < 0:
            continue

        nl = 0
        for r in srt[best_f, start:end]:
            gl = Xt[best_f, r] <= best_thr
            goes_left[r] = gl
            if gl:
                nl += 1
        # stable partition of every feature's slice keeps each side sorted;
        # if neither child can split again only the row set matters
        last = depth + 1 == max_depth
        terminal_l = nl < min_split or nl < 2 * min_leaf or last
        terminal_r = nn - nl < min_split or nn - nl < 2 * min_leaf or last
        n_part = 1 if terminal_l and terminal_r else p
        for f in range(n_part):
            seg = srt[f, start:end]
            a = 0
            b = 0
            for i in range(nn):
                r = seg[i]
                if goes_left[r]:
                    seg[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for i in range(b):
                seg[a + i] = buf[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        # right pushed first so the left subtree grows first
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        st_node[top] = rid
        top += 1
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        st_node[top] = lid
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), count[:n_nodes].copy(), sse[:n_nodes].copy(),
            value[:n_nodes].copy())


@nb.njit(cache=True, nogil=True)
def _apply(X, feature, threshold, left, right):
    m = X.shape[0]
    out = np.empty(m, np.int64)
    for i in range(m):
        node = 0
        while left[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@nb.njit(cache=True, nogil=True)
def _collapse_alphas(left, right, sse_norm):
    """Weakest-link pruning: alpha at which each internal node becomes a leaf."""
    n = left.shape[0]
    alpha = np.full(n, np.inf)
    is_leaf = left == -1
    r_sub = np.zeros(n)
    leaves = np.zeros(n, np.int64)
    reach = np.zeros(n, np.bool_)
    while not is_leaf[0]:
        for t in range(n - 1, -1, -1):
            if is_leaf[t]:
                r_sub[t] = sse_norm[t]
                leaves[t] = 1
            else:
                r_sub[t] = r_sub[left[t]] + r_sub[right[t]]
                leaves[t] = leaves[left[t]] + leaves[right[t]]
        reach[:] = False
        reach[0] = True
        g_min = np.inf
        for t in range(n):
            if reach[t] and not is_leaf[t]:
                reach[left[t]] = True
                reach[right[t]] = True
                g = (sse_norm[t] - r_sub[t]) / (leaves[t] - 1)
                if g < g_min:
                    g_min = g
        if g_min < 0.0:
            g_min = 0.0
        tol = g_min * 1e-10 + 1e-300
        for t in range(n):
            if reach[t] and not is_leaf[t]:
                g = (sse_norm[t] - r_sub[t]) / (leaves[t] - 1)
                if g <= g_min + tol:
                    alpha[t] = g_min
                    is_leaf[t] = True
    return alpha


@nb.njit(cache=True, nogil=True)
def _pruned_sse(X, Y, feature, threshold, left, right, value, alphas, candidates):
    """Held-out SSE of the tree pruned at each candidate alpha."""
    out = np.zeros(candidates.shape[0])
    path = np.empty(left.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        depth = 0
        path[0] = 0
        while left[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            depth += 1
            path[depth] = node
        for j in range(candidates.shape[0]):
            a = candidates[j]
            stop = path[depth]
            for d in range(depth):
                if alphas[path[d]] <= a:
                    stop = path[d]
                    break
            for k in range(Y.shape[1]):
                e = value[stop, k] - Y[i, k]
                out[j] += e * e
    return out


# -------------------------------------------------------------------- tree


class RegressionTree:
    """A fitted CART tree (immutable by convention)."""

    def __init__(self, feature, threshold, left, right, n_node_samples, sse, value, n_features):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.n_node_samples = np.asarray(n_node_samples, dtype=np.int64)
        self.sse = np.asarray(sse, dtype=float)
        self.value = np.asarray(value, dtype=float).reshape(len(self.feature), -1)
        self.n_features = int(n_features)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_outputs(self) -> int:
        return self.value.shape[1]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left == LEAF

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for t in range(self.n_nodes):
            if self.left[t] != LEAF:
                d[self.left[t]] = d[self.right[t]] = d[t] + 1
        return int(d.max())

    def _check(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature value")
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row."""
        X = self._check(X)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def impurity_decrease(self) -> np.ndarray:
        """Total SSE decrease contributed by each feature's splits."""
        out = np.zeros(self.n_features)
        internal = np.flatnonzero(~self.is_leaf)
        gain = self.sse[internal] - self.sse[self.left[internal]] - self.sse[self.right[internal]]
        np.add.at(out, self.feature[internal], gain)
        return out

    def to_dict(self) -> dict:
        nodes = []
        for t in range(self.n_nodes):
            node = {"n": int(self.n_node_samples[t]), "sse": float(self.sse[t]),
                    "value": [float(v) for v in self.value[t]]}
            if self.left[t] != LEAF:
                node.update(feature=int(self.feature[t]), threshold=float(self.threshold[t]),
                            left=int(self.left[t]), right=int(self.right[t]))
            nodes.append(node)
        return {"n_features": self.n_features, "n_outputs": self.n_outputs, "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        nodes = d["nodes"]
        return cls(
            feature=[nd.get("feature", LEAF) for nd in nodes],
            threshold=[nd.get("threshold", 0.0) for nd in nodes],
            left=[nd.get("left", LEAF) for nd in nodes],
            right=[nd.get("right", LEAF) for nd in nodes],
            n_node_samples=[nd["n"] for nd in nodes],
            sse=[nd["sse"] for nd in nodes],
            value=[nd["value"] for nd in nodes],
            n_features=d["n_features"],
        )


def _as_2d(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    return np.ascontiguousarray(Y)


def cart_fit(X, Y, params: TreeParams | None = None, *, presorted=None) -> RegressionTree:
    """Grow a regression tree greedily.

    At each node every candidate feature is scanned over the midpoints of
    consecutive distinct sorted values, and the split with the largest
    impurity decrease wins (ties: lowest feature index, then smallest
    threshold). Growth stops below ``min_samples_split`` rows, at
    ``max_depth``, or when no split leaves ``min_samples_leaf`` rows on both
    sides.

    ``presorted`` optionally supplies the per-feature stable argsort of ``X``
    (shape ``p x n``), e.g. from :func:`resample_order`.
    """
    params = params or TreeParams()
    X = np.ascontiguousarray(X, dtype=float)
    Y = _as_2d(Y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty dataset")
    if Y.shape[1] == 0:
        raise ValueError("Y has no output columns")
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y differ in row count")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("missing or non-finite values in training data")
    if params.impurity == "variance" and Y.shape[1] != 1:
        raise ValueError("variance impurity needs a single output; use covariance_trace")
    p = X.shape[1]
    m = p if params.feature_subset_m is None else params.feature_subset_m
    if m > p:
        raise ValueError(f"feature_subset_m={m} exceeds the {p} available features")
    depth = -1 if params.max_depth is None else params.max_depth
    if presorted is None:
        srt = _presort(X)
    else:
        srt = np.array(presorted, dtype=np.int64, order="C")
        if srt.shape != (p, X.shape[0]):
            raise ValueError("presorted order has the wrong shape")
    arrays = _grow(X, Y, srt, params.min_samples_leaf, params.min_samples_split, depth, m,
                   int(params.rng_seed) % (2**32))
    return RegressionTree(*arrays, n_features=p)


def presort(X) -> np.ndarray:
    """Per-feature stable argsort of ``X``, shape ``p x n``."""
    return _presort(np.ascontiguousarray(X, dtype=float))


def resample_order(order, rows) -> np.ndarray:
    """Presorted order of ``X[rows]`` given ``order = presort(X)``."""
    return _resample_order(np.ascontiguousarray(order, dtype=np.int64),
                           np.ascontiguousarray(rows, dtype=np.int64))


def cart_predict(tree: RegressionTree, X) -> np.ndarray:
    return tree.predict(X)


# ------------------------------------------------------------------ pruning


def collapse_alphas(tree: RegressionTree) -> np.ndarray:
    """Per-node alpha at which weakest-link pruning turns the node into a leaf.

    Costs are node SSE divided by the root sample count (MSE units), so
    alphas from trees grown on different sample sizes are comparable.
    """
    return _collapse_alphas(tree.left, tree.right, tree.sse / tree.n_node_samples[0])


def pruning_path(tree: RegressionTree) -> np.ndarray:
    """Increasing sequence of effective alphas, starting at 0."""
    a = collapse_alphas(tree)
    return np.unique(np.concatenate([[0.0], a[np.isfinite(a)]]))


def prune(tree: RegressionTree, alpha: float, _alphas=None) -> RegressionTree:
    """Minimal cost-complexity subtree for ``alpha`` (compacted copy)."""
    alphas = collapse_alphas(tree) if _alphas is None else _alphas
    keep = []
    new_id = {}
    stack = [0]
    leaf_now = set()
    while stack:
        t = stack.pop()
        new_id[t] = len(keep)
        keep.append(t)
        if tree.left[t] != LEAF and not alphas[t] <= alpha:
            stack.append(tree.right[t])
            stack.append(tree.left[t])
        else:
            leaf_now.add(t)
    keep = np.array(keep)
    left = np.array([LEAF if t in leaf_now else new_id[tree.left[t]] for t in keep], dtype=np.int64)
    right = np.array([LEAF if t in leaf_now else new_id[tree.right[t]] for t in keep], dtype=np.int64)
    feature = np.where(left == LEAF, LEAF, tree.feature[keep])
    threshold = np.where(left == LEAF, 0.0, tree.threshold[keep])
    return RegressionTree(feature, threshold, left, right, tree.n_node_samples[keep],
                          tree.sse[keep], tree.value[keep], tree.n_features)


@dataclass
class PruningResult:
    tree: RegressionTree
    alpha: float
    candidates: np.ndarray
    cv_mse: np.ndarray


def prune_cost_complexity(tree: RegressionTree, X, Y, folds: int = 5,
                          params: TreeParams | None = None, seed: int = 0,
                          return_details: bool = False):
    """Cost-complexity pruning with the penalty chosen by k-fold CV MSE.

    Candidate alphas are 0 and the geometric midpoints of consecutive
    alphas on the full tree's pruning path. For each fold a tree is regrown
    with ``params`` on the remaining rows, pruned at every candidate, and
    scored on the held-out rows. Ties in CV MSE go to the larger alpha.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = _as_2d(Y)
    n = X.shape[0]
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > n:
        raise ValueError(f"folds={folds} exceeds the {n} available rows")
    params = params or TreeParams()
    full_alphas = collapse_alphas(tree)
    path = pruning_path(tree)
    if tree.n_leaves == 1:
        res = PruningResult(tree, 0.0, np.array([0.0]), np.array([np.nan]))
        return res if return_details else tree
    candidates = np.concatenate([[0.0], np.sqrt(path[1:-1] * path[2:]), [path[-1]]])
    candidates = np.unique(candidates)

    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(n) % folds
    cv = np.zeros(len(candidates))
    for k in range(folds):
        tr, te = fold_of != k, fold_of == k
        sub = cart_fit(X[tr], Y[tr], params)
        sub_alphas = collapse_alphas(sub)
        cv += _pruned_sse(np.ascontiguousarray(X[te]), np.ascontiguousarray(Y[te]), sub.feature,
                          sub.threshold, sub.left, sub.right, sub.value, sub_alphas,
                          candidates)
    cv /= n * Y.shape[1]
    best = np.flatnonzero(cv <= cv.min() * (1 + 1e-12))[-1]
    pruned = prune(tree, candidates[best], full_alphas)
    if return_details:
        return PruningResult(pruned, float(candidates[best]), candidates, cv)
    return pruned

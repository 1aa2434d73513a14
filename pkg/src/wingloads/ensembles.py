"""Tree ensembles: bagging, random forest, gradient boosting, AdaBoost.R2.

All estimators follow the ``fit(X, y) -> self`` / ``predict(X)`` convention.
Randomness comes from an integer ``seed``; every machine draws from its own
substream derived from ``(seed, machine index)``, so changing the number of
machines leaves the earlier ones untouched.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Sequence

import numba as nb
import numpy as np

from .trees import (RegressionTree, TreeParams, cart_fit, presort, prune_cost_complexity,
                    resample_order)

# smallest confidence stored for a machine that fits its sample perfectly
BETA_FLOOR = 1e-300


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit child seed for ``(seed, *keys)``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def _column(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise ValueError("expected a single output column")
    return y


def _check_X(X, n_features=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    return X


# ------------------------------------------------------ packed forest eval


@nb.njit(cache=True, nogil=True)
def _forest_mean(X, roots, feature, threshold, left, right, value):
    m = X.shape[0]
    q = value.shape[1]
    n_trees = roots.shape[0]
    out = np.zeros((m, q))
    for i in range(m):
        for t in range(n_trees):
            node = roots[t]
            while left[node] != -1:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            for k in range(q):
                out[i, k] += value[node, k]
        for k in range(q):
            out[i, k] /= n_trees
    return out


class _PackedForest:
    """All trees of an ensemble in one set of node arrays."""

    def __init__(self, trees: Sequence[RegressionTree]):
        sizes = np.array([t.n_nodes for t in trees])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        shift = lambda a, off: np.where(a < 0, -1, a + off)
        self.roots = offsets.astype(np.int64)
        self.feature = np.concatenate([t.feature for t in trees])
        self.threshold = np.concatenate([t.threshold for t in trees])
        self.left = np.concatenate([shift(t.left, o) for t, o in zip(trees, offsets)])
        self.right = np.concatenate([shift(t.right, o) for t, o in zip(trees, offsets)])
        self.value = np.ascontiguousarray(np.concatenate([t.value for t in trees]))

    def mean(self, X) -> np.ndarray:
        return _forest_mean(X, self.roots, self.feature, self.threshold, self.left,
                            self.right, self.value)


# ------------------------------------------------------- bagging / forest


class BaggingRegressor:
    """Trees grown on bootstrap resamples, averaged at prediction time.

    Parameters
    ----------
    n_estimators : int
        Number of trees ``t``.
    tree_params : TreeParams
        Growth limits for every member tree; ``rng_seed`` is overridden.
    bootstrap : bool
        Draw ``n`` rows with replacement per tree (otherwise use all rows).
    prune_folds : int or None
        If set, each member is cost-complexity pruned with this many CV folds.
    seed : int
    """

    def __init__(self, n_estimators=10, tree_params: TreeParams | None = None,
                 bootstrap=True, prune_folds=None, seed=0):
        self.n_estimators = n_estimators
        self.tree_params = tree_params or TreeParams()
        self.bootstrap = bootstrap
        self.prune_folds = prune_folds
        self.seed = seed

    def _member_params(self, p):
        return self.tree_params

    def fit(self, X, Y, presorted=None):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        X = _check_X(X)
        Y = np.asarray(Y, dtype=float)
        self.single_output_ = Y.ndim == 1
        n, p = X.shape
        params = self._member_params(p)
        order = presort(X) if presorted is None else presorted
        self.trees_ = []
        self.bootstrap_seeds_ = []
        for u in range(self.n_estimators):
            s = derive_seed(self.seed, u)
            rng = np.random.default_rng(s)
            rows = rng.integers(n, size=n) if self.bootstrap else np.arange(n)
            tp = params.replace(rng_seed=derive_seed(s, 1))
            tree = cart_fit(X[rows], Y[rows], tp, presorted=resample_order(order, rows))
            if self.prune_folds:
                tree = prune_cost_complexity(tree, X[rows], Y[rows], self.prune_folds, tp,
                                             seed=derive_seed(s, 2))
            self.trees_.append(tree)
            self.bootstrap_seeds_.append(s)
        self.n_features_ = p
        self._packed = _PackedForest(self.trees_)
        return self

    def predict(self, X) -> np.ndarray:
        """Unweighted mean of member predictions."""
        out = self._packed.mean(_check_X(X, self.n_features_))
        return out[:, 0] if self.single_output_ else out

    def member_predictions(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features_)
        preds = np.stack([t.predict(X) for t in self.trees_])
        return preds[..., 0] if self.single_output_ else preds


class RandomForestRegressor(BaggingRegressor):
    """Bagging with ``max_features`` features drawn at every node.

    Trees are grown to the ``tree_params`` limits and never pruned. A 2-D
    ``Y`` is fitted natively with the covariance-trace impurity.
    """

    def __init__(self, n_estimators=100, tree_params: TreeParams | None = None,
                 max_features: int | None = None, bootstrap=True, seed=0):
        super().__init__(n_estimators, tree_params, bootstrap, None, seed)
        self.max_features = max_features

    def _member_params(self, p):
        m = self.max_features if self.max_features is not None else max(1, p // 3)
        if not 1 <= m <= p:
            raise ValueError(f"max_features={m} must lie in [1, {p}]")
        return self.tree_params.replace(feature_subset_m=m)

    @property
    def feature_importances_(self) -> np.ndarray:
        return rf_feature_importance(self)


def bagging_fit(X, y, params: TreeParams | None = None, t: int = 10, seed: int = 0,
                prune_folds=None) -> BaggingRegressor:
    return BaggingRegressor(t, params, prune_folds=prune_folds, seed=seed).fit(X, y)


def rf_fit(X, Y, params: TreeParams | None = None, t: int = 100, m: int | None = None,
           seed: int = 0, bootstrap=True) -> RandomForestRegressor:
    return RandomForestRegressor(t, params, m, bootstrap, seed).fit(X, Y)


def rf_feature_importance(model: BaggingRegressor) -> np.ndarray:
    """Mean over trees of normalized impurity decrease per feature."""
    p = model.n_features_
    total = np.zeros(p)
    for tree in model.trees_:
        dec = tree.impurity_decrease()
        s = dec.sum()
        if s > 0:
            total += dec / s
    if total.sum() == 0:
        return np.full(p, 1.0 / p)
    return total / total.sum()


# --------------------------------------------------------- gradient boost


class GradientBoostingRegressor:
    """Least-squares boosting of regression trees.

    The first tree is fitted on ``y`` itself; each later tree is fitted on
    the current residuals and added with shrinkage ``learning_rate``.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1,
                 tree_params: TreeParams | None = None, seed=0):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.tree_params = tree_params or TreeParams(max_depth=3)
        self.seed = seed

    def fit(self, X, y):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        X = _check_X(X)
        y = _column(y)
        self.n_features_ = X.shape[1]
        first = cart_fit(X, y, self.tree_params.replace(rng_seed=derive_seed(self.seed, 0)))
        fitted = first.predict(X)[:, 0]
        self.initial_ = first
        self.stages_ = []
        self.train_mse_ = [float(np.mean((y - fitted) ** 2))]
        for t in range(1, self.n_estimators):
            resid = y - fitted
            if not np.all(np.isfinite(resid)):
                raise FloatingPointError(f"non-finite residuals at stage {t + 1}")
            tree = cart_fit(X, resid, self.tree_params.replace(rng_seed=derive_seed(self.seed, t)))
            fitted = fitted + self.learning_rate * tree.predict(X)[:, 0]
            self.stages_.append(tree)
            self.train_mse_.append(float(np.mean((y - fitted) ** 2)))
        self._packed = _PackedForest(self.stages_) if self.stages_ else None
        self.train_fitted_ = fitted
        return self

    def predict_training(self) -> np.ndarray:
        return self.train_fitted_.copy()

    def predict(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features_)
        out = self.initial_.predict(X)[:, 0]
        if self._packed is not None:
            out = out + self.learning_rate * len(self.stages_) * self._packed.mean(X)[:, 0]
        return out


def gbm_fit(X, y, params: TreeParams | None = None, T: int = 100, learning_rate: float = 0.1,
            seed: int = 0) -> GradientBoostingRegressor:
    return GradientBoostingRegressor(T, learning_rate, params, seed).fit(X, y)


# ------------------------------------------------------------ AdaBoost.R2


def weighted_median(preds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted median of ``preds`` (rows x machines).

    The smallest prediction whose cumulative weight reaches half the total.
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(preds, axis=1, kind="stable")
    cum = np.cumsum(weights[order], axis=1)
    pos = np.argmax(cum >= 0.5 * cum[:, -1:], axis=1)
    return np.take_along_axis(preds, order[np.arange(len(preds)), pos][:, None], axis=1)[:, 0]


_LOSSES = {
    "linear": lambda r: r,
    "square": lambda r: r * r,
    "exponential": lambda r: 1.0 - np.exp(-r),
}


class AdaBoostR2Regressor:
    """Drucker's AdaBoost.R2 with tree or random-forest base machines.

    Parameters
    ----------
    n_estimators : int
        Maximum number of machines.
    learning_rate : float
        Exponent multiplier in the weight update ``w *= beta ** ((1 - L) * lr)``.
    base : {"tree", "forest"}
    tree_params : TreeParams
        Parameters of the base tree (or of every tree of a base forest).
    forest_estimators, max_features : int
        Size and feature-subset of base forests.
    prune_folds : int or None
        Cost-complexity prune base trees with this many folds.
    loss : {"linear", "square", "exponential"}
    seed : int
    """

    def __init__(self, n_estimators=50, learning_rate=1.0, base="tree",
                 tree_params: TreeParams | None = None, forest_estimators=10,
                 max_features=None, prune_folds=None, loss="linear", seed=0):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.base = base
        self.tree_params = tree_params or TreeParams()
        self.forest_estimators = forest_estimators
        self.max_features = max_features
        self.prune_folds = prune_folds
        self.loss = loss
        self.seed = seed

    def _make_machine(self, seed):
        if self.base == "tree":
            return _TreeMachine(self.tree_params.replace(rng_seed=derive_seed(seed, 1)),
                                self.prune_folds, derive_seed(seed, 2))
        if self.base == "forest":
            return RandomForestRegressor(self.forest_estimators, self.tree_params,
                                         self.max_features, seed=derive_seed(seed, 1))
        raise ValueError(f"unknown base machine {self.base!r}")

    def fit(self, X, y):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.loss not in _LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        X = _check_X(X)
        y = _column(y)
        n = len(y)
        if n == 0:
            raise ValueError("empty training set")
        self.n_features_ = X.shape[1]
        order = presort(X)
        loss_fn = _LOSSES[self.loss]
        log_w = np.zeros(n)
        self.machines_, self.betas_, self.avg_losses_ = [], [], []
        self.sample_weights_, self.sample_indices_ = [], []
        train_preds = []
        for u in range(self.n_estimators):
            p = np.exp(log_w - log_w.max())
            p /= p.sum()
            s = derive_seed(self.seed, u)
            rows = np.random.default_rng(s).choice(n, size=n, replace=True, p=p)
            machine = self._make_machine(s).fit(X[rows], y[rows], resample_order(order, rows))
            pred = machine.predict(X)
            err = np.abs(pred - y)
            D = err.max()
            if D == 0.0:
                self._store(machine, BETA_FLOOR, 0.0, p, rows, pred, train_preds)
                break
            L = loss_fn(err / D)
            avg = float(np.sum(L * p))
            if avg >= 0.5:
                if not self.machines_:
                    warnings.warn(f"first machine has average loss {avg:.3f} >= 0.5; kept alone",
                                  RuntimeWarning, stacklevel=2)
                    self._store(machine, 1.0 - 1e-12, avg, p, rows, pred, train_preds)
                break
            beta = max(avg / (1.0 - avg), BETA_FLOOR)
            self._store(machine, beta, avg, p, rows, pred, train_preds)
            log_w = log_w + (1.0 - L) * self.learning_rate * math.log(beta)
        self.train_predictions_ = np.stack(train_preds, axis=1)
        return self

    def _store(self, machine, beta, avg, p, rows, pred, train_preds):
        self.machines_.append(machine)
        self.betas_.append(beta)
        self.avg_losses_.append(avg)
        self.sample_weights_.append(p)
        self.sample_indices_.append(rows)
        train_preds.append(pred)

    @property
    def machine_weights_(self) -> np.ndarray:
        return np.log(1.0 / np.asarray(self.betas_))

    def machine_predictions(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features_)
        return np.stack([m.predict(X) for m in self.machines_], axis=1)

    def predict(self, X) -> np.ndarray:
        return weighted_median(self.machine_predictions(X), self.machine_weights_)

    def predict_training(self) -> np.ndarray:
        """Predictions on the fitting rows, reusing the per-round evaluations."""
        return weighted_median(self.train_predictions_, self.machine_weights_)


class _TreeMachine:
    def __init__(self, params, prune_folds, seed):
        self.params = params
        self.prune_folds = prune_folds
        self.seed = seed

    def fit(self, X, y, presorted=None):
        tree = cart_fit(X, y, self.params, presorted=presorted)
        if self.prune_folds:
            tree = prune_cost_complexity(tree, X, y, self.prune_folds, self.params, seed=self.seed)
        self.tree_ = tree
        return self

    def predict(self, X):
        return self.tree_.predict(X)[:, 0]


def adaboost_r2_fit(X, y, base_kind="tree", params: TreeParams | None = None,
                    max_machines=50, learning_rate=1.0, seed=0, **kw) -> AdaBoostR2Regressor:
    return AdaBoostR2Regressor(max_machines, learning_rate, base_kind, params, seed=seed,
                               **kw).fit(X, y)


def adaboost_predict(model: AdaBoostR2Regressor, rows) -> np.ndarray:
    return model.predict(rows)


# ------------------------------------------------------------ multi-output


class MultiOutputRegressor:
    """One independent single-output model per column of ``Y``.

    ``factory(seed)`` builds an unfitted model; column ``j`` gets
    ``derive_seed(seed, j)``.
    """

    def __init__(self, factory: Callable[[int], object], seed=0):
        self.factory = factory
        self.seed = seed

    def fit(self, X, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[1] < 1:
            raise ValueError("Y has no columns")
        self.estimators_ = [self.factory(derive_seed(self.seed, j)).fit(X, Y[:, j])
                            for j in range(Y.shape[1])]
        return self

    @property
    def n_outputs_(self):
        return len(self.estimators_)

    def predict(self, X) -> np.ndarray:
        return np.column_stack([e.predict(X) for e in self.estimators_])

    def predict_training(self) -> np.ndarray:
        return np.column_stack([e.predict_training() for e in self.estimators_])


def multioutput_fit(X, Y, factory: Callable[[int], object], seed=0) -> MultiOutputRegressor:
    Y = np.asarray(Y, dtype=float)
    return MultiOutputRegressor(factory, seed).fit(X, Y)


def multioutput_predict(model: MultiOutputRegressor, rows, n_outputs: int | None = None):
    if n_outputs is not None and n_outputs != model.n_outputs_:
        raise ValueError(f"model has {model.n_outputs_} outputs, expected {n_outputs}")
    return model.predict(rows)

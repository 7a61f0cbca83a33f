"""Base learners written from scratch: OLS, logistic regression, random forest.

The classes follow the scikit-learn estimator protocol (``fit`` returns
``self``, hyperparameters live in ``__init__`` and are reachable through
``get_params``) so they can be cloned and nested inside the meta-learners.
"""

from __future__ import annotations

import math
import warnings

import numba
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from ._random import make_rng
from ._validation import check_binary, check_features, check_target

__all__ = [
    "CollinearityWarning",
    "LinearRegression",
    "LogisticRegression",
    "RandomForestRegressor",
    "fit_forest",
    "fit_logistic",
    "fit_ols",
    "predict",
]


class CollinearityWarning(UserWarning):
    pass


def _design(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


class LinearRegression(BaseEstimator, RegressorMixin):
    """Ordinary least squares solved by a QR factorization.

    ``coefficients_`` holds one entry per feature followed by the intercept.
    A rank-deficient design triggers a :class:`CollinearityWarning` naming
    the first dependent column and falls back to a ridge solve with
    penalty ``ridge``.
    """

    def __init__(self, ridge: float = 1e-8, rank_tol: float = 1e-10):
        self.ridge = ridge
        self.rank_tol = rank_tol

    def fit(self, X, y):
        X = check_features(X)
        y = check_target(y)
        check_consistent_length(X, y)
        n, p = X.shape
        if n < p + 1:
            raise ValueError(f"need at least {p + 1} rows for {p} features, got {n}")
        A = _design(X)
        Q, R = np.linalg.qr(A)
        diag = np.abs(np.diag(R))
        scale = max(diag.max(initial=0.0), 1.0)
        weak = np.flatnonzero(diag <= self.rank_tol * scale)
        if weak.size:
            col = int(weak[0])
            label = "intercept" if col == p else f"feature {col}"
            warnings.warn(
                f"design matrix is rank deficient: {label} is collinear with earlier "
                f"columns; using ridge fallback (penalty {self.ridge:g})",
                CollinearityWarning, stacklevel=2)
            penalty = np.sqrt(self.ridge) * np.eye(p + 1)
            penalty[p, p] = 0.0
            beta = np.linalg.lstsq(np.vstack([A, penalty]),
                                   np.concatenate([y, np.zeros(p + 1)]), rcond=None)[0]
            self.rank_deficient_ = True
        else:
            beta = _back_substitute(R, Q.T @ y)
            self.rank_deficient_ = False
        self.coefficients_ = beta
        self.coef_ = beta[:p]
        self.intercept_ = float(beta[p])
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "coefficients_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def dump(self) -> str:
        check_is_fitted(self, "coefficients_")
        lines = [f"LinearRegression features={self.n_features_in_}"]
        lines += [f"  coef[{i}] = {c!r}" for i, c in enumerate(self.coef_)]
        lines.append(f"  intercept = {self.intercept_!r}")
        return "\n".join(lines)


def _back_substitute(R, b):
    m = R.shape[0]
    x = np.zeros(m)
    for i in range(m - 1, -1, -1):
        x[i] = (b[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def bernoulli_loglik(beta, A, y) -> float:
    """Bernoulli log-likelihood of logistic coefficients on design ``A``."""
    eta = A @ beta
    return float(np.sum(y * _log_sigmoid(eta) + (1.0 - y) * _log_sigmoid(-eta)))


def bernoulli_gradient(beta, A, y) -> np.ndarray:
    eta = A @ beta
    return A.T @ (y - 0.5 * (1.0 + np.tanh(0.5 * eta)))


class LogisticRegression(BaseEstimator, ClassifierMixin):
    """Logistic regression fitted by iteratively reweighted least squares.

    Newton steps are halved until the log-likelihood does not decrease, so
    ``loglik_path_`` is monotone. Iteration stops once the gradient max-norm
    drops below ``tol`` or after ``max_iter`` steps. When the linear
    predictor saturates (``|eta| > saturation``) the data are treated as
    separable and ``converged_`` is False.
    """

    def __init__(self, tol: float = 1e-8, max_iter: int = 100, saturation: float = 30.0):
        self.tol = tol
        self.max_iter = max_iter
        self.saturation = saturation

    def fit(self, X, y):
        X = check_features(X)
        y = check_binary(y, "y").astype(float)
        check_consistent_length(X, y)
        if y.min() == y.max():
            raise ValueError("logistic regression needs both classes in y")
        A = _design(X)
        p = A.shape[1]
        beta = np.zeros(p)
        ll = bernoulli_loglik(beta, A, y)
        path = [ll]
        iterations = 0
        for _ in range(self.max_iter):
            grad = bernoulli_gradient(beta, A, y)
            if np.max(np.abs(grad)) < self.tol:
                break
            eta = A @ beta
            mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
            H = A.T @ (A * (mu * (1.0 - mu))[:, None])
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            t = 1.0
            candidate = beta + step
            ll_new = bernoulli_loglik(candidate, A, y)
            while ll_new < ll and t > 1e-10:
                t *= 0.5
                candidate = beta + t * step
                ll_new = bernoulli_loglik(candidate, A, y)
            if ll_new < ll:
                break
            beta, ll = candidate, ll_new
            path.append(ll)
            iterations += 1
        converged = bool(np.max(np.abs(bernoulli_gradient(beta, A, y))) < self.tol)

        if np.max(np.abs(A @ beta)) > self.saturation:
            converged = False
        if not converged:
            warnings.warn("logistic regression did not converge (possible separation)",
                          RuntimeWarning, stacklevel=2)
        self.coefficients_ = beta
        self.coef_ = beta[:-1]
        self.intercept_ = float(beta[-1])
        self.converged_ = converged
        self.n_iter_ = iterations
        self.loglik_path_ = path
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coefficients_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X, clip: tuple[float, float] | None = None):
        """Class probabilities; ``clip`` bounds P(y=1) when given."""
        eta = self.decision_function(X)
        p1 = 0.5 * (1.0 + np.tanh(0.5 * eta))
        eps = np.finfo(float).eps
        lo, hi = clip if clip is not None else (eps, 1.0 - eps)
        p1 = np.clip(p1, lo, hi)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)

    def dump(self) -> str:
        check_is_fitted(self, "coefficients_")
        lines = [f"LogisticRegression features={self.n_features_in_} "
                 f"converged={self.converged_} iterations={self.n_iter_}"]
        lines += [f"  coef[{i}] = {c!r}" for i, c in enumerate(self.coef_)]
        lines.append(f"  intercept = {self.intercept_!r}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# regression trees

@numba.njit(cache=True)
def _grow_tree(X, y, rows, max_depth, min_leaf, m_try, feature_keys):
    capacity = feature_keys.shape[0]
    feature = np.full(capacity, -1, dtype=np.int64)
    threshold = np.zeros(capacity)
    left = np.full(capacity, -1, dtype=np.int64)
    right = np.full(capacity, -1, dtype=np.int64)
    value = np.zeros(capacity)
    count = np.zeros(capacity, dtype=np.int64)

    idx = rows.copy()
    scratch = np.empty_like(idx)
    st_node = np.empty(capacity, dtype=np.int64)
    st_lo = np.empty(capacity, dtype=np.int64)
    st_hi = np.empty(capacity, dtype=np.int64)
    st_depth = np.empty(capacity, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = idx.shape[0]
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        m = hi - lo

        total = 0.0
        for k in range(lo, hi):
            total += y[idx[k]]
        value[node] = total / m
        count[node] = m
        if depth >= max_depth or m < 2 * min_leaf or n_nodes + 2 > capacity:
            continue
        first = y[idx[lo]]
        constant = True
        for k in range(lo + 1, hi):
            if y[idx[k]] != first:
                constant = False
                break
        if constant:
            continue

        candidates = np.argsort(feature_keys[node])[:m_try]
        best_score = total * total / m
        best_feature = -1
        best_threshold = 0.0
        xs = np.empty(m)
        ys = np.empty(m)
        for f in candidates:
            for k in range(m):
                xs[k] = X[idx[lo + k], f]
            order = np.argsort(xs, kind="mergesort")
            xs_sorted = xs[order]
            for k in range(m):
                ys[k] = y[idx[lo + order[k]]]
            left_sum = 0.0
            for k in range(min_leaf - 1):
                left_sum += ys[k]
            for i in range(min_leaf, m - min_leaf + 1):
                left_sum += ys[i - 1]
                if xs_sorted[i - 1] < xs_sorted[i]:
                    right_sum = total - left_sum
                    score = left_sum * left_sum / i + right_sum * right_sum / (m - i)
                    if score > best_score * (1.0 + 1e-12) + 1e-300:
                        best_score = score
                        best_feature = f
                        mid = 0.5 * (xs_sorted[i - 1] + xs_sorted[i])
                        if mid >= xs_sorted[i]:
                            mid = xs_sorted[i - 1]
                        best_threshold = mid
        if best_feature < 0:
            continue

        n_left = 0
        n_right = 0
        for k in range(lo, hi):
            r = idx[k]
            if X[r, best_feature] <= best_threshold:
                idx[lo + n_left] = r
                n_left += 1
            else:
                scratch[n_right] = r
                n_right += 1
        for k in range(n_right):
            idx[lo + n_left + k] = scratch[k]

        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes + 1
        st_lo[top] = lo + n_left
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = lo + n_left
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes], count[:n_nodes])


@numba.njit(cache=True)
def _apply_tree(X, feature, threshold, left, right, value, out):
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += value[node]


class RandomForestRegressor(BaseEstimator, RegressorMixin):
    """Bagged regression trees with random feature subsets per split.

    Each tree is grown on a bootstrap resample. At every node a subset of
    ``ceil(feature_fraction * n_features)`` features is drawn and the split
    maximising the reduction in squared error is taken, subject to both
    children holding at least ``min_leaf`` samples. Nodes with a constant
    target or no admissible split become leaves. Predictions average the
    trees in order, so a fixed ``random_state`` gives bit-identical output.
    """

    def __init__(self, n_trees: int = 200, max_depth: int | None = 8, min_leaf: int = 5,
                 feature_fraction: float = 1 / 3, bootstrap: bool = True,
                 random_state: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature_fraction = feature_fraction
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        X = check_features(X)
        y = check_target(y)
        check_consistent_length(X, y)
        n, p = X.shape
        if n == 0:
            raise ValueError("cannot fit a forest on empty data")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.min_leaf > n:
            raise ValueError(f"min_leaf={self.min_leaf} exceeds the number of rows ({n})")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must be in (0, 1]")

        depth = n if self.max_depth is None else int(self.max_depth)
        capacity = 2 * n - 1 if depth >= 30 else min(2 ** (depth + 1) - 1, 2 * n - 1)
        m_try = max(1, math.ceil(self.feature_fraction * p - 1e-9)) if p else 0
        rng = make_rng(self.random_state)
        Xf = X if p else np.zeros((n, 1))
        trees = []
        for _ in range(self.n_trees):
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            keys = rng.random((capacity, max(p, 1)))
            trees.append(_grow_tree(Xf, y, rows.astype(np.int64), depth, int(self.min_leaf),
                                    m_try, keys))
        self.trees_ = trees
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if self.n_features_in_ == 0:
            X = np.zeros((X.shape[0], 1))
        out = np.zeros(X.shape[0])
        for feature, threshold, left, right, value, _ in self.trees_:
            _apply_tree(X, feature, threshold, left, right, value, out)
        return out / len(self.trees_)

    def dump(self) -> str:
        check_is_fitted(self, "trees_")
        sizes = [len(t[0]) for t in self.trees_]
        leaves = [int(np.sum(t[0] < 0)) for t in self.trees_]
        return (f"RandomForestRegressor trees={len(self.trees_)} "
                f"features={self.n_features_in_} params={self.get_params()}\n"
                f"  nodes/tree: min={min(sizes)} max={max(sizes)}\n"
                f"  leaves/tree: min={min(leaves)} max={max(leaves)}")


def fit_ols(X, y) -> LinearRegression:
    return LinearRegression().fit(X, y)


def fit_logistic(X, y) -> LogisticRegression:
    return LogisticRegression().fit(X, y)


def fit_forest(X, y, **params) -> RandomForestRegressor:
    return RandomForestRegressor(**params).fit(X, y)


def predict(model, X) -> np.ndarray:
    return model.predict(X)

"""Average treatment effect estimators and bootstrap inference.

Every estimator is a scikit-learn style object: hyperparameters in
``__init__``, ``fit(X, t, y)`` stores ``ate_``. ``estimate(frame)`` is the
StudyFrame shortcut used by the refutation tests and the study runner.

Rows are put in a canonical (value-sorted) order before fitting, so a
permutation of the input rows never changes an estimate. Covariate
columns that are constant in the data being fitted carry no
adjustment information and are dropped before fitting. With no covariates
left, every estimator returns the difference of arm means.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator, clone

from ._random import derive_seed, make_rng
from ._validation import check_xty
from .learners import (CollinearityWarning, LinearRegression, LogisticRegression,
                       RandomForestRegressor)
from .tabular import StudyFrame, TableError

__all__ = [
    "EffectEstimate",
    "IPSW",
    "InestimableError",
    "LinearAdjustment",
    "METHODS",
    "NearestNeighborMatching",
    "TLearner",
    "XLearner",
    "ate_ipsw",
    "ate_linear",
    "ate_matching",
    "ate_tlearner",
    "ate_xlearner",
    "bootstrap_inference",
    "make_estimator",
    "naive_difference",
]


class InestimableError(RuntimeError):
    """An effect could not be estimated (e.g. too many degenerate resamples)."""


def naive_difference(t, y) -> float:
    t = np.asarray(t)
    y = np.asarray(y, dtype=float)
    return float(y[t == 1].mean() - y[t == 0].mean())


class ATEEstimator(BaseEstimator):
    method = "ATE"

    def fit(self, X, t, y):
        X, t, y = check_xty(X, t, y)
        # canonical row order: estimates cannot depend on how rows arrive
        order = np.lexsort(np.vstack([y, X.T, t]))
        X, t, y = X[order], t[order], y[order]
        keep = np.ptp(X, axis=0) > 0 if X.shape[1] else np.zeros(0, dtype=bool)
        if not keep.all():
            self._on_constant_columns(np.flatnonzero(~keep))
            X = X[:, keep]
        if X.shape[1] == 0:
            self.ate_ = naive_difference(t, y)
        else:
            self.ate_ = float(self._estimate(X, t, y))
        self.n_used_ = len(y)
        return self

    def _on_constant_columns(self, columns):
        pass

    def _estimate(self, X, t, y):
        raise NotImplementedError

    def estimate(self, frame: StudyFrame) -> float:
        return self.fit(frame.covariates, frame.treatment, frame.outcome).ate_


class LinearAdjustment(ATEEstimator):
    """Coefficient on the treatment in an OLS fit of y on [t, X, 1]."""

    method = "LR"

    def _estimate(self, X, t, y):
        return LinearRegression().fit(np.column_stack([t, X]), y).coef_[0]


class NearestNeighborMatching(ATEEstimator):
    """k-nearest-neighbour matching with replacement on standardized covariates.

    Every unit is matched to its ``k`` closest units in the other arm
    (Euclidean distance, ties to the first row in canonical order); the unobserved
    potential outcome is the neighbours' mean outcome.
    """

    method = "Matching"

    def __init__(self, k: int = 1, chunk_size: int = 512):
        self.k = k
        self.chunk_size = chunk_size

    def _on_constant_columns(self, columns):
        warnings.warn(f"matching drops zero-variance covariate column(s) {list(columns)}",
                      RuntimeWarning, stacklevel=3)

    def _estimate(self, X, t, y):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        Xs = (X - X.mean(axis=0)) / X.std(axis=0)
        treated = np.flatnonzero(t == 1)
        control = np.flatnonzero(t == 0)
        if self.k > min(len(treated), len(control)):
            raise ValueError(
                f"k={self.k} exceeds the size of an arm "
                f"(treated={len(treated)}, control={len(control)})")
        y1 = y.copy()
        y0 = y.copy()
        y0[treated] = self._neighbour_means(Xs[treated], Xs[control], y[control])
        y1[control] = self._neighbour_means(Xs[control], Xs[treated], y[treated])
        return np.mean(y1 - y0)

    def _neighbour_means(self, queries, pool, pool_y):
        out = np.empty(len(queries))
        for start in range(0, len(queries), self.chunk_size):
            q = queries[start:start + self.chunk_size]
            dist = np.zeros((len(q), len(pool)))
            for j in range(pool.shape[1]):
                dist += (q[:, j, None] - pool[None, :, j]) ** 2
            if self.k == 1:
                nearest = np.argmin(dist, axis=1)[:, None]
            else:
                nearest = np.argsort(dist, axis=1, kind="stable")[:, :self.k]
            out[start:start + len(q)] = pool_y[nearest].mean(axis=1)
        return out


def _propensity(X, t, clip):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = LogisticRegression().fit(X, t)
    return model.predict_proba(X, clip=clip)[:, 1]


class IPSW(ATEEstimator):
    """Self-normalized (Hajek) inverse propensity weighting with a logistic
    propensity model clipped to ``clip``."""

    method = "IPSW"

    def __init__(self, clip: tuple[float, float] = (0.01, 0.99)):
        self.clip = clip

    def _estimate(self, X, t, y):
        e = _propensity(X, t, self.clip)
        w1 = t / e
        w0 = (1 - t) / (1.0 - e)
        return np.sum(w1 * y) / np.sum(w1) - np.sum(w0 * y) / np.sum(w0)

    def fit(self, X, t, y):
        lo, hi = self.clip
        if not 0 < lo < hi < 1:
            raise ValueError("clip must satisfy 0 < low < high < 1")
        return super().fit(X, t, y)


def _seeded(base, seed, label):
    model = clone(base)
    if "random_state" in model.get_params():
        model.set_params(random_state=derive_seed(seed, label))
    return model


def _check_arm_sizes(base, t):
    n1 = int(t.sum())
    n0 = len(t) - n1
    need = 2
    if "min_leaf" in base.get_params():
        need = max(need, 2 * base.get_params()["min_leaf"])
    if min(n0, n1) < need:
        raise ValueError(f"each arm needs at least {need} rows for {type(base).__name__} "
                         f"(treated={n1}, control={n0})")


class TLearner(ATEEstimator):
    """Separate outcome models per arm; ATE is the mean predicted difference."""

    method = "TLearner"

    def __init__(self, base=None, random_state: int = 0):
        self.base = base
        self.random_state = random_state

    def _base(self):
        return RandomForestRegressor() if self.base is None else self.base

    def _arm_models(self, X, t, y):
        base = self._base()
        _check_arm_sizes(base, t)
        mu0 = _seeded(base, self.random_state, "mu0").fit(X[t == 0], y[t == 0])
        mu1 = _seeded(base, self.random_state, "mu1").fit(X[t == 1], y[t == 1])
        return mu0, mu1

    def _estimate(self, X, t, y):
        mu0, mu1 = self._arm_models(X, t, y)
        return np.mean(mu1.predict(X) - mu0.predict(X))


class XLearner(TLearner):
    """X-learner: regress imputed individual effects in each arm, then blend
    the two effect models with the clipped propensity score ``g``:
    ``tau(x) = g(x) * tau0(x) + (1 - g(x)) * tau1(x)``."""

    method = "XLearner"

    def __init__(self, base=None, clip: tuple[float, float] = (0.01, 0.99),
                 random_state: int = 0):
        super().__init__(base=base, random_state=random_state)
        self.clip = clip

    def _estimate(self, X, t, y):
        mu0, mu1 = self._arm_models(X, t, y)
        base = self._base()
        on1, on0 = t == 1, t == 0
        d1 = y[on1] - mu0.predict(X[on1])
        d0 = mu1.predict(X[on0]) - y[on0]
        tau1 = _seeded(base, self.random_state, "tau1").fit(X[on1], d1)
        tau0 = _seeded(base, self.random_state, "tau0").fit(X[on0], d0)
        g = _propensity(X, t, self.clip)
        return np.mean(g * tau0.predict(X) + (1.0 - g) * tau1.predict(X))


METHODS = {
    "LR": LinearAdjustment,
    "Matching": NearestNeighborMatching,
    "IPSW": IPSW,
    "TLearner": TLearner,
    "XLearner": XLearner,
}


def make_estimator(method: str, **params) -> ATEEstimator:
    try:
        cls = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}") from None
    return cls(**params)


def ate_linear(frame: StudyFrame) -> float:
    return LinearAdjustment().estimate(frame)


def ate_matching(frame: StudyFrame, k: int = 1) -> float:
    return NearestNeighborMatching(k=k).estimate(frame)


def ate_ipsw(frame: StudyFrame, clip: tuple[float, float] = (0.01, 0.99)) -> float:
    return IPSW(clip=clip).estimate(frame)


def ate_tlearner(frame: StudyFrame, base=None, random_state: int = 0) -> float:
    return TLearner(base=base, random_state=random_state).estimate(frame)


def ate_xlearner(frame: StudyFrame, base=None, random_state: int = 0) -> float:
    return XLearner(base=base, random_state=random_state).estimate(frame)


@dataclass(frozen=True)
class EffectEstimate:
    ate: float
    method: str
    ci_low: float
    ci_high: float
    p_value: float
    threshold_percentile: float | None
    n_used: int
    std_error: float
    n_bootstrap: int
    n_redrawn: int = 0

    def __post_init__(self):
        for name in ("ate", "ci_low", "ci_high", "p_value", "std_error"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value must lie in [0, 1]")
        if self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")


def normal_p_value(estimate: float, reference: float, sd: float) -> float:
    """Two-sided normal p-value of ``estimate`` against ``reference``.

    A zero spread gives 1 when the two agree and 0 otherwise.
    """
    gap = abs(estimate - reference)
    scale = max(abs(estimate), abs(reference), 1.0)
    if sd <= 1e-12 * scale:
        return 1.0 if gap <= 1e-12 * scale else 0.0
    return float(min(1.0, 2.0 * norm.sf(gap / sd)))


def _quiet_estimate(estimator, frame):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        warnings.simplefilter("ignore", CollinearityWarning)
        return estimator.estimate(frame)


_RECOVERABLE = (ValueError, TableError, np.linalg.LinAlgError, FloatingPointError)


def bootstrap_inference(estimator: ATEEstimator, frame: StudyFrame, B: int = 1000,
                        alpha: float = 0.05, seed: int = 0,
                        ate: float | None = None) -> EffectEstimate:
    """Percentile bootstrap CI and normal-approximation p-value for ATE = 0.

    Rows are resampled with replacement; a resample the estimator cannot
    handle (an arm too small) is redrawn, up to ``10 * B`` draws in total.
    Replicate ``b`` refits a clone whose ``random_state`` (if any) is derived
    from ``(seed, b)``, so results do not depend on execution order.
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if ate is None:
        ate = _quiet_estimate(clone(estimator), frame)
    has_seed = "random_state" in estimator.get_params()
    n = frame.n
    replicates = np.empty(B)
    draws = 0
    for b in range(B):
        while True:
            if draws >= 10 * B:
                raise InestimableError(f"more than {10 * B} bootstrap draws needed "
                                       f"for {B} usable replicates")
            rows = make_rng(seed, "bootstrap", draws).integers(0, n, size=n)
            draws += 1
            t = frame.treatment[rows]
            if t.sum() < 2 or n - t.sum() < 2:
                continue
            model = clone(estimator)
            if has_seed:
                model.set_params(random_state=derive_seed(seed, "bootstrap-model", b))
            try:
                replicates[b] = _quiet_estimate(model, frame.subset(rows))
            except _RECOVERABLE:
                continue
            if np.isfinite(replicates[b]):
                break
    lo, hi = np.quantile(replicates, [alpha / 2, 1 - alpha / 2])
    sd = float(np.std(replicates, ddof=1))
    return EffectEstimate(
        ate=float(ate), method=estimator.method, ci_low=float(lo), ci_high=float(hi),
        p_value=normal_p_value(ate, 0.0, sd), threshold_percentile=frame.threshold_percentile,
        n_used=n, std_error=sd, n_bootstrap=B, n_redrawn=draws - B)

"""Scikit-learn style wrapper around the exact conformal machinery.

The estimator holds the training data, its Gram matrix, and the base
solution so repeated queries share the expensive pieces.  Note the penalty
convention: the objective carries no 1/n factor, so
``sklearn.linear_model.Lasso(alpha=a)`` matches ``lam = n * a`` here.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .conformal import (
    PredictionSet,
    exact_set,
    exact_set_fast,
    grid_set,
    split_set,
)
from .homotopy import online_update
from .lasso import Dataset, PenaltyConfig, fit as lasso_fit

__all__ = ["ConformalLasso"]

_METHODS = ("exact", "exact-fast", "grid", "split")


class ConformalLasso(RegressorMixin, BaseEstimator):
    """Lasso / elastic net point predictions with exact conformal sets.

    Parameters
    ----------
    lam : penalty weight on the l1 term (un-normalized objective; see the
        module docstring for the sklearn correspondence).
    rho : ridge weight; positive values give the elastic net.
    alpha : miscoverage level of the prediction sets (NOT the sklearn
        penalty of the same name).
    method : one of "exact" (path trace, full enumeration), "exact-fast"
        (path trace, monotone classification), "grid", "split".
    y_range : explicit (lo, hi) search range, or None for the data-driven
        default.
    grid_step : spacing of candidate responses for method="grid".
    split_frac, seed : split-baseline controls.
    early_stop_anchor : truncate exact traces at the component containing
        the anchor prediction.
    """

    def __init__(
        self,
        lam: float = 1.0,
        rho: float = 0.0,
        alpha: float = 0.1,
        method: str = "exact",
        y_range=None,
        grid_step: float = 1e-3,
        split_frac: float = 0.5,
        seed: int = 0,
        early_stop_anchor: bool = False,
    ):
        self.lam = lam
        self.rho = rho
        self.alpha = alpha
        self.method = method
        self.y_range = y_range
        self.grid_step = grid_step
        self.split_frac = split_frac
        self.seed = seed
        self.early_stop_anchor = early_stop_anchor

    def fit(self, X, y):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.dataset_ = Dataset(X, np.asarray(y, dtype=np.float64))
        self.penalty_ = PenaltyConfig(lam=self.lam, rho=self.rho)
        self.gram_ = self.dataset_.X.T @ self.dataset_.X
        self.base_ = lasso_fit(self.dataset_, self.penalty_, gram=self.gram_)
        self.coef_ = self.base_.beta.copy()
        self.intercept_ = 0.0  # the model is fit without an intercept
        return self

    def partial_fit(self, X, y):
        """Absorb observations one path walk at a time.

        The first call behaves like ``fit``; afterwards each row is folded
        in by the online updater, so no cold refit happens.
        """
        if not hasattr(self, "coef_"):
            return self.fit(X, y)
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fit saw {self.n_features_in_}"
            )
        for row, y_val in zip(X, y):
            self.base_ = online_update(
                self.dataset_, self.base_, (row, float(y_val)), self.penalty_,
                gram=self.gram_,
            )
            self.dataset_ = self.dataset_.append(row, float(y_val))
            self.gram_ = self.gram_ + np.outer(row, row)
        self.coef_ = self.base_.beta.copy()
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fit saw {self.n_features_in_}"
            )
        return X @ self.coef_

    def predict_set(self, X) -> list[PredictionSet]:
        """One prediction set per row of ``X`` at level ``alpha``."""
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, fit saw {self.n_features_in_}"
            )
        out = []
        for row in X:
            if self.method == "exact":
                out.append(
                    exact_set(
                        self.dataset_, row, self.penalty_, self.alpha, self.y_range,
                        base=self.base_, gram=self.gram_,
                        early_stop_anchor=self.early_stop_anchor,
                    )
                )
            elif self.method == "exact-fast":
                out.append(
                    exact_set_fast(
                        self.dataset_, row, self.penalty_, self.alpha, self.y_range,
                        base=self.base_, gram=self.gram_,
                        early_stop_anchor=self.early_stop_anchor,
                    )
                )
            elif self.method == "grid":
                ge = grid_set(
                    self.dataset_, row, self.penalty_, self.alpha, self.y_range,
                    self.grid_step, base=self.base_, gram=self.gram_,
                )
                out.append(ge.to_prediction_set())
            else:
                out.append(
                    split_set(
                        self.dataset_, row, self.penalty_, self.alpha,
                        self.split_frac, self.seed, y_range=self.y_range,
                    )
                )
        return out

    def predict_interval(self, X) -> np.ndarray:
        """(n, 2) array of [lo, hi]; the convex hull when a set is split."""
        sets = self.predict_set(X)
        out = np.empty((len(sets), 2))
        for i, ps in enumerate(sets):
            out[i, 0] = min(iv.lo for iv in ps.intervals)
            out[i, 1] = max(iv.hi for iv in ps.intervals)
        return out

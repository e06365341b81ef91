"""scikit-learn compatible wrappers around the count-regression engine.

``PoissonGLM`` and ``NegativeBinomialGLM`` take a numeric feature matrix plus
an optional ``offset`` (or ``exposure``) and follow the usual
``fit`` / ``predict`` / ``get_params`` protocol. ``SegmentDesign`` turns
:class:`~hbesafety.core.AnalysisRow` records into that matrix, and
``CrashFrequencyModel`` chains both with the Poisson-then-NB selection rule.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from . import glm


def _offset(n, offset, exposure):
    if offset is not None and exposure is not None:
        raise ValueError("pass offset or exposure, not both")
    if exposure is not None:
        exposure = np.asarray(exposure, dtype=float).ravel()
        if np.any(exposure <= 0):
            raise ValueError("exposure must be > 0")
        offset = np.log(exposure)
    if offset is None:
        return np.zeros(n)
    offset = np.asarray(offset, dtype=float).ravel()
    if offset.shape != (n,):
        raise ValueError(f"offset must have shape ({n},)")
    return offset


class _CountGLM(RegressorMixin, BaseEstimator):
    def __init__(self, fit_intercept=True, tol=1e-8, max_iter=100):
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter

    def _design(self, X):
        return np.column_stack([np.ones(X.shape[0]), X]) if self.fit_intercept else X

    def _names(self, X):
        names = getattr(self, "feature_names_in_", None)
        names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
        return (["intercept"] if self.fit_intercept else []) + [str(n) for n in names]

    def _fit_design(self, X, y, offset, names):
        raise NotImplementedError

    def fit(self, X, y, offset=None, exposure=None):
        X, y = validate_data(self, X, y, dtype=float, y_numeric=True)
        off = _offset(X.shape[0], offset, exposure)
        self.result_ = self._fit_design(self._design(X), y, off, self._names(X))
        beta = self.result_.beta
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:].copy() if self.fit_intercept else beta.copy()
        self.n_iter_ = self.result_.iterations
        return self

    def linear_predictor(self, X, offset=None, exposure=None):
        check_is_fitted(self, "result_")
        X = validate_data(self, X, dtype=float, reset=False)
        return X @ self.coef_ + self.intercept_ + _offset(X.shape[0], offset, exposure)

    def predict(self, X, offset=None, exposure=None):
        """Expected counts ``exp(intercept + X @ coef + offset)``."""
        return np.exp(self.linear_predictor(X, offset, exposure))

    def summary(self) -> glm.InferenceTable:
        check_is_fitted(self, "result_")
        return glm.wald_inference(self.result_)


class PoissonGLM(_CountGLM):
    """Poisson regression with log link, fitted by IRLS."""

    def _fit_design(self, X, y, offset, names):
        return glm.fit_poisson(X, y, offset, tol=self.tol, max_iter=self.max_iter, column_names=names)


class NegativeBinomialGLM(_CountGLM):
    """Negative binomial regression, variance ``mu + kappa * mu**2``.

    Parameters
    ----------
    kappa : float or None
        Fixed overdispersion; ``None`` estimates it by maximum likelihood.
    """

    def __init__(self, kappa=None, fit_intercept=True, tol=1e-8, max_iter=100):
        super().__init__(fit_intercept=fit_intercept, tol=tol, max_iter=max_iter)
        self.kappa = kappa

    def _fit_design(self, X, y, offset, names):
        return glm.fit_negbin(X, y, offset, kappa=self.kappa, tol=self.tol, max_iter=self.max_iter, column_names=names)

    def fit(self, X, y, offset=None, exposure=None):
        super().fit(X, y, offset, exposure)
        self.kappa_ = self.result_.kappa
        return self


class SegmentDesign(TransformerMixin, BaseEstimator):
    """Analysis rows to a predictor matrix (no intercept column)."""

    def __init__(self, predictors=glm.PREDICTORS, hbe_transform="log1p_scaled", hbe_epsilon=1e-3):
        self.predictors = predictors
        self.hbe_transform = hbe_transform
        self.hbe_epsilon = hbe_epsilon

    @property
    def spec(self) -> glm.ModelSpec:
        return glm.ModelSpec(tuple(self.predictors), self.hbe_transform, self.hbe_epsilon)

    def fit(self, rows, y=None):
        self.spec_ = self.spec
        self.feature_names_out_ = np.array(self.spec_.column_names[1:], dtype=object)
        self.n_features_out_ = self.feature_names_out_.size
        return self

    def transform(self, rows):
        check_is_fitted(self, "spec_")
        X, _, _ = glm.build_design(rows, self.spec_)
        return X[:, 1:]

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "spec_")
        return self.feature_names_out_.copy()

    def targets(self, rows):
        """``(crash_counts, log_vehicle_miles_offset)`` for ``rows``."""
        _, y, offset = glm.build_design(rows, self.spec)
        return y, offset


class CrashFrequencyModel(BaseEstimator):
    """Segment crash-frequency model on analysis rows.

    ``family="auto"`` fits Poisson first and refits a negative binomial when
    the Pearson chi-square per degree of freedom exceeds
    ``overdispersion_threshold``.
    """

    def __init__(
        self,
        family="auto",
        predictors=glm.PREDICTORS,
        hbe_transform="log1p_scaled",
        hbe_epsilon=1e-3,
        overdispersion_threshold=1.5,
        tol=1e-8,
        max_iter=100,
    ):
        self.family = family
        self.predictors = predictors
        self.hbe_transform = hbe_transform
        self.hbe_epsilon = hbe_epsilon
        self.overdispersion_threshold = overdispersion_threshold
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, rows, y=None):
        if self.family not in ("auto", "poisson", "negbin"):
            raise ValueError("family must be 'auto', 'poisson' or 'negbin'")
        self.design_ = SegmentDesign(self.predictors, self.hbe_transform, self.hbe_epsilon).fit(rows)
        spec = self.design_.spec_
        X, y, offset = glm.build_design(rows, spec)
        names = spec.column_names
        kw = dict(tol=self.tol, max_iter=self.max_iter, column_names=names)
        self.poisson_result_ = None
        self.pearson_ratio_ = None
        self.overdispersed_ = None
        if self.family in ("auto", "poisson"):
            self.poisson_result_ = glm.fit_poisson(X, y, offset, **kw)
            self.pearson_ratio_, self.overdispersed_ = glm.dispersion_check(
                self.poisson_result_, threshold=self.overdispersion_threshold
            )
        if self.family == "negbin" or (self.family == "auto" and self.overdispersed_):
            self.result_ = glm.fit_negbin(X, y, offset, **kw)
        else:
            self.result_ = self.poisson_result_
        self.coef_ = self.result_.beta.copy()
        self.feature_names_ = names
        return self

    def predict(self, rows):
        """Expected crash counts for ``rows`` over their exposure."""
        check_is_fitted(self, "result_")
        X, _, offset = glm.build_design(rows, self.design_.spec_)
        return np.exp(X @ self.coef_ + offset)

    def summary(self) -> glm.InferenceTable:
        check_is_fitted(self, "result_")
        return glm.wald_inference(self.result_)

    def summary_dict(self) -> dict:
        check_is_fitted(self, "result_")
        out = glm.summary_dict(self.result_, self.design_.spec_)
        out["selection"] = self.family
        if self.pearson_ratio_ is not None:
            out["poisson_pearson_ratio"] = self.pearson_ratio_
            out["overdispersed"] = self.overdispersed_
        return out

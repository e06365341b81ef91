"""Poisson and negative binomial regression with a log-exposure offset.

The negative binomial uses the quadratic variance ``Var = mu + kappa * mu**2``
so ``kappa -> 0`` is the Poisson limit. Coefficients are fitted by IRLS
(Fisher scoring, log link); for the negative binomial, IRLS at fixed kappa
alternates with a one-dimensional maximisation of the profile likelihood in
kappa.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, special, stats

from ._io import csv_text, fmt_float
from .core import VMT_PER_MVMT, AnalysisRow, RoadType

KAPPA_MIN = 1e-8
KAPPA_MAX = 1e4
RANK_TOL = 1e-10
_ETA_MAX = 700.0

PREDICTORS = ("hbe_rate", "road_type", "num_lanes", "has_ramp", "lane_changes", "cum_turn_angle")
HBE_TRANSFORMS = ("identity", "log1p_scaled")
_ROAD_DUMMIES = (
    (RoadType.LOCAL, "road_type_local"),
    (RoadType.ARTERIAL, "road_type_arterial"),
    (RoadType.NONCONTROLLED_HIGHWAY, "road_type_noncontrolled"),
)


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Which predictors enter the design and how the HBE rate is transformed.

    ``road_type`` expands to three indicators with controlled-access
    highways as the reference level. ``log1p_scaled`` maps a rate ``r`` to
    ``log(1 + r / hbe_epsilon)``.
    """

    predictors: tuple[str, ...] = PREDICTORS
    hbe_transform: str = "log1p_scaled"
    hbe_epsilon: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if len(set(self.predictors)) != len(self.predictors):
            raise ValueError("predictor names must be unique")
        unknown = set(self.predictors) - set(PREDICTORS)
        if unknown:
            raise ValueError(f"unknown predictor(s): {', '.join(sorted(unknown))}")
        if self.hbe_transform not in HBE_TRANSFORMS:
            raise ValueError(f"hbe_transform must be one of {HBE_TRANSFORMS}")
        if not self.hbe_epsilon > 0:
            raise ValueError("hbe_epsilon must be > 0")

    @property
    def column_names(self) -> list[str]:
        names = ["intercept"]
        for p in self.predictors:
            if p == "road_type":
                names.extend(name for _, name in _ROAD_DUMMIES)
            else:
                names.append(p)
        return names

    def transform_hbe(self, rate):
        rate = np.asarray(rate, dtype=float)
        if self.hbe_transform == "identity":
            return rate
        return np.log1p(rate / self.hbe_epsilon)


def build_design(rows: Sequence[AnalysisRow], spec: ModelSpec | None = None):
    """Return ``(X, y, offset)``; column 0 of ``X`` is the intercept.

    ``offset`` is the log of exposure in vehicle-miles.
    """
    spec = spec or ModelSpec()
    if len(rows) == 0:
        raise ValueError("cannot build a design from zero rows")
    exposure = np.array([r.exposure_mvmt for r in rows], dtype=float)
    if not np.all(exposure > 0):
        raise ValueError("all exposures must be > 0")
    cols = [np.ones(len(rows))]
    for p in spec.predictors:
        if p == "road_type":
            rt = np.array([int(r.road_type) for r in rows])
            cols.extend((rt == int(level)).astype(float) for level, _ in _ROAD_DUMMIES)
        elif p == "hbe_rate":
            cols.append(spec.transform_hbe([r.hbe_rate for r in rows]))
        elif p == "cum_turn_angle":
            cols.append(np.array([r.cum_turn_angle for r in rows], dtype=float))
        else:
            cols.append(np.array([float(getattr(r, p)) for r in rows]))
    X = np.column_stack(cols)
    names = spec.column_names
    for j in range(1, X.shape[1]):
        if np.ptp(X[:, j]) == 0:
            warnings.warn(f"design column {names[j]!r} is constant", stacklevel=2)
    y = np.array([r.crash_count for r in rows], dtype=float)
    offset = np.log(exposure * VMT_PER_MVMT)
    return X, y, offset


@dataclass
class FitResult:
    family: str  # "Poisson" or "NegBin"
    beta: np.ndarray
    covariance: np.ndarray
    kappa: float
    log_likelihood: float
    deviance: float
    pearson_chi2: float
    iterations: int
    converged: bool
    n_obs: int
    mu: np.ndarray = field(repr=False)
    column_names: list[str] | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return self.beta.size

    @property
    def pearson_ratio(self) -> float:
        return self.pearson_chi2 / (self.n_obs - self.n_params)

    @property
    def kappa_at_lower_bound(self) -> bool:
        return self.family == "NegBin" and self.kappa <= KAPPA_MIN


def _check_inputs(X, y, offset):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if X.ndim != 2 or X.shape[0] != n or offset.shape != (n,):
        raise ValueError("X must be n x p with y and offset of length n")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(offset))):
        raise ValueError("inputs must be finite")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("y must be non-negative integer counts")
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more observations than parameters (n={n}, p={p})")
    return X, y, offset


def check_rank(X, tol: float = RANK_TOL) -> None:
    """Raise :class:`RankDeficientError` if ``X`` lacks full column rank."""
    R, perm = linalg.qr(X, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0 or np.any(diag < tol * diag[0]):
        raise RankDeficientError("design matrix is rank deficient")


def _mean(X, beta, offset):
    eta = np.minimum(X @ beta + offset, _ETA_MAX)
    return np.exp(eta)


def nb_loglik(beta, kappa, X, y, offset) -> float:
    """Exact log-likelihood with mean ``exp(offset + X @ beta)``.

    ``kappa == 0`` gives the Poisson log-likelihood.
    """
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if not (np.isfinite(kappa) and np.all(np.isfinite(beta))):
        raise ValueError("non-finite parameters")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return _loglik(y, _mean(X, beta, offset), kappa)


def _loglik_terms(y, mu, kappa):
    if kappa == 0:
        return special.xlogy(y, mu) - mu - special.gammaln(y + 1)
    theta = 1.0 / kappa
    # log Gamma(y+theta) - log Gamma(theta) - y log(theta), stable for large theta
    pos = y > 0
    lg = np.zeros_like(mu)
    yp = y[pos]
    lg[pos] = special.gammaln(yp) - special.betaln(theta, yp) - yp * math.log(theta)
    log1p_km = np.log1p(kappa * mu)
    return lg + special.xlogy(y, mu) - y * log1p_km - log1p_km / kappa - special.gammaln(y + 1)


def _loglik(y, mu, kappa) -> float:
    return math.fsum(_loglik_terms(y, mu, kappa))


def _deviance(y, mu, kappa) -> float:
    if kappa == 0:
        d = special.xlogy(y, y / mu) - (y - mu)
    else:
        theta = 1.0 / kappa
        d = special.xlogy(y, y / mu) - (y + theta) * np.log1p((y - mu) / (mu + theta))
    return 2.0 * math.fsum(d)


def _pearson(y, mu, kappa) -> float:
    return math.fsum((y - mu) ** 2 / (mu + kappa * mu * mu))


def _wls_step(X, z, w):
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(X * sw[:, None])
    beta = linalg.solve_triangular(R, Q.T @ (sw * z))
    return beta, R


def _covariance(R):
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    cov = Rinv @ Rinv.T
    return 0.5 * (cov + cov.T)


def _start_beta(X, y, offset):
    beta = np.zeros(X.shape[1])
    beta[0] = math.log((y.sum() + 0.5) / np.exp(offset).sum())
    return beta


def _irls(X, y, offset, kappa, beta, tol, max_iter):
    """Fisher scoring at fixed kappa. Returns (beta, mu, R, deviance, iterations, converged)."""
    mu = _mean(X, beta, offset)
    dev = _deviance(y, mu, kappa)
    converged = False
    it = 0
    R = None
    for it in range(1, max_iter + 1):
        eta = np.log(mu)
        w = mu / (1.0 + kappa * mu)
        z = eta - offset + (y - mu) / mu
        new_beta, R = _wls_step(X, z, w)
        new_mu = _mean(X, new_beta, offset)
        new_dev = _deviance(y, new_mu, kappa)
        halvings = 0
        while not np.isfinite(new_dev) or new_dev > dev + 1e-12 * (abs(dev) + 1.0):
            if halvings >= 30:
                break
            new_beta = 0.5 * (new_beta + beta)
            new_mu = _mean(X, new_beta, offset)
            new_dev = _deviance(y, new_mu, kappa)
            halvings += 1
        change = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, mu, dev = new_beta, new_mu, new_dev
        if change < tol:
            converged = True
            break
    # weights and factor at the final estimate
    w = mu / (1.0 + kappa * mu)
    _, R = np.linalg.qr(X * np.sqrt(w)[:, None])
    return beta, mu, R, dev, it, converged


def fit_poisson(X, y, offset=None, *, tol: float = 1e-8, max_iter: int = 100, column_names=None) -> FitResult:
    """Maximum-likelihood Poisson regression with log link and offset.

    Non-convergence is reported through ``converged=False``, not raised.
    """
    X, y, offset = _check_inputs(X, y, offset)
    check_rank(X)
    beta, mu, R, dev, it, converged = _irls(X, y, offset, 0.0, _start_beta(X, y, offset), tol, max_iter)
    return FitResult(
        family="Poisson",
        beta=beta,
        covariance=_covariance(R),
        kappa=0.0,
        log_likelihood=_loglik(y, mu, 0.0),
        deviance=dev,
        pearson_chi2=_pearson(y, mu, 0.0),
        iterations=it,
        converged=converged,
        n_obs=y.size,
        mu=mu,
        column_names=list(column_names) if column_names is not None else None,
    )


def _profile_kappa(y, mu) -> float:
    """Maximise the log-likelihood over kappa in [KAPPA_MIN, KAPPA_MAX] at fixed means."""
    lo, hi = math.log(KAPPA_MIN), math.log(KAPPA_MAX)

    def neg(u):
        return -_loglik(y, mu, math.exp(u))

    res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    best_u, best = res.x, res.fun
    for edge in (lo, hi):
        f = neg(edge)
        if f <= best:
            best_u, best = edge, f
    return math.exp(best_u)


def _moment_kappa(y, mu) -> float:
    k = math.fsum((y - mu) ** 2 - mu) / math.fsum(mu * mu)
    return min(max(k, 1e-4), 1e2)


def fit_negbin(
    X,
    y,
    offset=None,
    *,
    kappa: float | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    column_names=None,
) -> FitResult:
    """Negative binomial regression, ``Var = mu + kappa mu^2``.

    With ``kappa`` given, only the coefficients are fitted at that value
    (``kappa=0`` reproduces :func:`fit_poisson`). Otherwise IRLS in beta
    alternates with a profile maximisation in kappa until the relative
    log-likelihood change drops below ``tol``. The covariance is the inverse
    Fisher information for beta at the final kappa.
    """
    X, y, offset = _check_inputs(X, y, offset)
    check_rank(X)
    names = list(column_names) if column_names is not None else None
    beta = _start_beta(X, y, offset)
    diagnostics = []

    if kappa is not None:
        if not kappa >= 0:
            raise ValueError("kappa must be >= 0")
        beta, mu, R, dev, it, converged = _irls(X, y, offset, float(kappa), beta, tol, max_iter)
        k = float(kappa)
    else:
        beta, mu, _, _, it_total, ok = _irls(X, y, offset, 0.0, beta, tol, max_iter)
        k = _moment_kappa(y, mu)
        ll_old = -math.inf
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            beta_new, mu, R, dev, _, ok = _irls(X, y, offset, k, beta, tol * 1e-2, max_iter)
            k_new = _profile_kappa(y, mu)
            ll = _loglik(y, mu, k_new)
            d_ll = abs(ll - ll_old) / (abs(ll) + 0.1)
            d_par = max(
                float(np.max(np.abs(beta_new - beta) / (1.0 + np.abs(beta)))),
                abs(math.log(k_new) - math.log(k)),
            )
            beta, k, ll_old = beta_new, k_new, ll
            if d_ll < tol and d_par < 1e-7:
                converged = ok
                break
        # final coefficients at the converged kappa
        beta, mu, R, dev, _, ok = _irls(X, y, offset, k, beta, tol * 1e-2, max_iter)
        converged = converged and ok
        if k <= KAPPA_MIN:
            diagnostics.append("kappa at lower bound: effectively Poisson")
        if k >= KAPPA_MAX:
            diagnostics.append("kappa at upper bound: severe overdispersion")
            warnings.warn("kappa reached its upper bound (severe overdispersion)", stacklevel=2)

    return FitResult(
        family="NegBin",
        beta=beta,
        covariance=_covariance(R),
        kappa=k,
        log_likelihood=_loglik(y, mu, k),
        deviance=dev,
        pearson_chi2=_pearson(y, mu, k),
        iterations=it,
        converged=converged,
        n_obs=y.size,
        mu=mu,
        column_names=names,
        diagnostics=diagnostics,
    )


def dispersion_check(fit: FitResult, n: int | None = None, p: int | None = None, threshold: float = 1.5):
    """Pearson chi-square per residual degree of freedom and an overdispersion flag."""
    n = fit.n_obs if n is None else n
    p = fit.n_params if p is None else p
    if n <= p:
        raise ValueError(f"dispersion undefined for n <= p (n={n}, p={p})")
    ratio = fit.pearson_chi2 / (n - p)
    return ratio, bool(ratio > threshold)


def significance_code(p_value: float) -> str:
    if p_value < 0.001:
        return "***"
    if p_value < 0.01:
        return "**"
    if p_value < 0.05:
        return "*"
    if p_value < 0.1:
        return "."
    return ""


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    std_error: float
    z: float
    p_value: float
    signif: str


COEF_FIELDS = ("name", "estimate", "std_error", "z", "p_value", "signif")


class InferenceTable(list):
    """List of :class:`Coefficient` rows with lookup by name and CSV rendering."""

    def __getitem__(self, key):
        if isinstance(key, str):
            for row in self:
                if row.name == key:
                    return row
            raise KeyError(key)
        return super().__getitem__(key)

    def to_csv(self) -> str:
        return csv_text(
            COEF_FIELDS,
            (
                (c.name, fmt_float(c.estimate), fmt_float(c.std_error), fmt_float(c.z), fmt_float(c.p_value), c.signif)
                for c in self
            ),
        )


def wald_test(estimate: float, std_error: float, name: str = "") -> Coefficient:
    if not std_error > 0:
        raise ValueError(f"standard error of {name or 'coefficient'} must be > 0")
    z = estimate / std_error
    p = float(2.0 * stats.norm.sf(abs(z)))
    return Coefficient(name, float(estimate), float(std_error), float(z), p, significance_code(p))


def wald_inference(fit: FitResult, names: Sequence[str] | None = None) -> InferenceTable:
    names = list(names or fit.column_names or [f"x{j}" for j in range(fit.n_params)])
    se = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))
    return InferenceTable(wald_test(b, s, nm) for nm, b, s in zip(names, fit.beta, se))


def summary_dict(fit: FitResult, spec: ModelSpec | None = None) -> dict:
    out = {
        "family": fit.family,
        "kappa": fit.kappa,
        "log_likelihood": fit.log_likelihood,
        "deviance": fit.deviance,
        "pearson_chi2": fit.pearson_chi2,
        "pearson_ratio": fit.pearson_ratio,
        "n": fit.n_obs,
        "p": fit.n_params,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "diagnostics": list(fit.diagnostics),
    }
    if spec is not None:
        out["hbe_transform"] = spec.hbe_transform
        out["hbe_epsilon"] = spec.hbe_epsilon
        out["predictors"] = list(spec.predictors)
    return out

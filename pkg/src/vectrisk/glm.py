"""Unpenalized Poisson regression: deviance algebra, IRLS fitting, prediction.

The unit deviance of a count y against a mean mu > 0 is

    d(y | mu) = 2 * [ y*log(y/mu) - (y - mu) ]        (y*log y := 0 at y = 0)

which is non-negative and vanishes exactly at mu = y.  Model deviance is the
sum of unit deviances; the model with only an intercept (mu_i = mean(y)) is
the null model, and for any fitted model

    deviance(model) = deviance(null) - residual_deviance(model)

where residual_deviance = 2 * (loglik(model) - loglik(null)).  Both sides are
computed independently here, so the identity is a genuine numerical check.

Fitting maximizes the Poisson log-likelihood with a log link by iteratively
reweighted least squares (Fisher scoring): working response
z = eta + (y - mu)/mu, weights w = mu, with step halving whenever a full step
would increase the deviance.  Rank-deficient working systems are solved by
the least-norm solution and the fit is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import NumericalError, ValidationError
from .interactions import DesignMatrix, GroupIndex

_ETA_BOUND = 30.0


def _check_mu(mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu <= 0):
        raise ValidationError("mu must be positive")
    return mu


def deviance_unit(y, mu):
    """Unit Poisson deviance d(y | mu); scalar or elementwise on arrays."""
    mu = _check_mu(mu)
    y = np.asarray(y, dtype=np.float64)
    out = 2.0 * (special.xlogy(y, y / mu) - (y - mu))
    # clip tiny negative round-off at mu ~ y
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def log_density(y, mu):
    """Log of the Poisson probability mass P(y | mu)."""
    mu = _check_mu(mu)
    y = np.asarray(y, dtype=np.float64)
    out = special.xlogy(y, mu) - mu - special.gammaln(y + 1.0)
    return float(out) if out.ndim == 0 else out


def poisson_loglik(y, mu) -> float:
    """Total Poisson log-likelihood of counts y under means mu."""
    return float(np.sum(log_density(y, mu)))


def poisson_deviance(y, mu) -> float:
    """Total Poisson deviance of counts y against means mu."""
    return float(np.sum(deviance_unit(y, mu)))


def null_deviance(y) -> float:
    """Deviance of the intercept-only model, mu_i = mean(y)."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValidationError("empty target")
    ybar = float(y.mean())
    if ybar <= 0:
        raise NumericalError("degenerate null model: target mean is zero")
    return poisson_deviance(y, np.full_like(y, ybar))


@dataclass
class FitResult:
    """A fitted Poisson GLM with its deviance decomposition."""

    intercept: float
    coef: np.ndarray
    mu: np.ndarray
    deviance: float
    null_deviance: float
    resid_deviance: float
    converged: bool
    n_iter: int
    rank_deficient: bool = False
    group: GroupIndex | None = None
    column_names: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        if self.group is not None:
            coefficients = {
                name: [float(c) for c in self.coef[self.group.slice_of(g)]]
                for g, name in enumerate(self.group.names)
            }
        elif self.column_names is not None:
            coefficients = {n: float(c) for n, c in zip(self.column_names, self.coef)}
        else:
            coefficients = [float(c) for c in self.coef]
        return {
            "intercept": float(self.intercept),
            "coefficients": coefficients,
            "deviance": float(self.deviance),
            "null_deviance": float(self.null_deviance),
            "resid_deviance": float(self.resid_deviance),
            "converged": bool(self.converged),
            "iterations": int(self.n_iter),
        }


def _as_matrix(X) -> tuple[np.ndarray, GroupIndex | None]:
    if isinstance(X, DesignMatrix):
        return np.asarray(X.X, dtype=np.float64), X.group
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X, None


def fit_glm(X, y, tol: float = 1e-8, max_iter: int = 100) -> FitResult:
    """Fit an unpenalized Poisson GLM by IRLS.

    ``X`` is a DesignMatrix or a plain (n, p) array (p = 0 gives the
    intercept-only model).  Convergence is a relative deviance change below
    ``tol``.  A non-converged fit is returned with ``converged=False``, never
    silently.
    """
    X, group = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if X.shape[0] != n:
        raise ValidationError("length mismatch between design and target")
    ybar = float(y.mean()) if n else 0.0
    if ybar <= 0:
        raise NumericalError("degenerate target: all counts are zero")

    p = X.shape[1]
    beta = np.zeros(p + 1)
    beta[0] = np.log(ybar)
    X1 = np.concatenate([np.ones((n, 1)), X], axis=1)

    null_dev = null_deviance(y)
    loglik_null = poisson_loglik(y, np.full(n, ybar))

    eta = X1 @ beta
    mu = np.exp(np.clip(eta, -_ETA_BOUND, _ETA_BOUND))
    dev = poisson_deviance(y, mu)
    converged = False
    rank_deficient = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mu
        z = eta + (y - mu) / mu
        sw = np.sqrt(w)
        sol, _, rank, _ = np.linalg.lstsq(sw[:, None] * X1, sw * z, rcond=None)
        if rank < p + 1:
            rank_deficient = True
        step = 1.0
        for _ in range(11):
            cand = beta + step * (sol - beta)
            eta_c = X1 @ cand
            mu_c = np.exp(np.clip(eta_c, -_ETA_BOUND, _ETA_BOUND))
            dev_c = poisson_deviance(y, mu_c)
            if np.isfinite(dev_c) and dev_c <= dev + 1e-12:
                break
            step *= 0.5
        beta, eta, mu = cand, eta_c, mu_c
        rel = abs(dev - dev_c) / (abs(dev) + 1e-8)
        dev = dev_c
        if rel < tol:
            converged = True
            break

    # a linear predictor pinned at the clip bound means the MLE ran away
    # (separation-style divergence); such a fit must not claim convergence
    if np.abs(eta).max() >= _ETA_BOUND:
        converged = False
    loglik_model = poisson_loglik(y, mu)
    return FitResult(
        intercept=float(beta[0]),
        coef=beta[1:].copy(),
        mu=mu,
        deviance=dev,
        null_deviance=null_dev,
        resid_deviance=2.0 * (loglik_model - loglik_null),
        converged=converged,
        n_iter=it,
        rank_deficient=rank_deficient,
        group=group,
    )


def predict_mu(intercept: float, coef: np.ndarray, X_new) -> np.ndarray:
    """Predicted means exp(intercept + X_new @ coef).

    Linear predictors are bounded to the same range the fitting routines
    use, so downstream squared errors cannot overflow.
    """
    X_new, _ = _as_matrix(X_new)
    coef = np.asarray(coef, dtype=np.float64)
    if X_new.shape[1] != coef.size:
        raise ValidationError(
            f"layout mismatch: design has {X_new.shape[1]} columns, "
            f"coefficients have {coef.size}"
        )
    return np.exp(np.clip(intercept + X_new @ coef, -_ETA_BOUND, _ETA_BOUND))


def predict(fit: FitResult, X_new) -> np.ndarray:
    """Predicted means for a fitted model on new rows with the same layout."""
    return predict_mu(fit.intercept, fit.coef, X_new)


def deviance_ratio(fit: FitResult) -> tuple[float, float]:
    """(R, r): deviance ratio and residual-deviance ratio, with R + r = 1."""
    if fit.null_deviance <= 0:
        raise NumericalError("null deviance is zero")
    big_r = fit.deviance / fit.null_deviance
    small_r = fit.resid_deviance / fit.null_deviance
    return big_r, small_r


def score_gradient(X, y, intercept: float, coef: np.ndarray) -> np.ndarray:
    """Gradient of the log-likelihood in (intercept, columns) at a fit."""
    X, _ = _as_matrix(X)
    resid = np.asarray(y, dtype=np.float64) - predict_mu(intercept, coef, X)
    return np.concatenate([[resid.sum()], X.T @ resid])


class PoissonGLM(BaseEstimator, RegressorMixin):
    """Scikit-learn style unpenalized Poisson regressor (log link, IRLS).

    Parameters
    ----------
    tol : float
        Relative deviance change declaring convergence.
    max_iter : int
        IRLS iteration cap.

    Attributes
    ----------
    intercept_ : float
    coef_ : ndarray of shape (n_features,)
    deviance_, null_deviance_, resid_deviance_ : float
    converged_ : bool
    n_iter_ : int
    """

    def __init__(self, tol: float = 1e-8, max_iter: int = 100):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        fit = fit_glm(X, y, tol=self.tol, max_iter=self.max_iter)
        self.intercept_ = fit.intercept
        self.coef_ = fit.coef
        self.deviance_ = fit.deviance
        self.null_deviance_ = fit.null_deviance
        self.resid_deviance_ = fit.resid_deviance
        self.converged_ = fit.converged
        self.n_iter_ = fit.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return predict_mu(self.intercept_, self.coef_, X)

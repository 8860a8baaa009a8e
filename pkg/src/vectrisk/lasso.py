"""L1-penalized Poisson regression: penalty grid, coordinate descent, KKT.

The penalized problem, on columns standardized to zero mean and unit
variance over the training rows, is

    maximize  (1/n) * loglik(b0 + Xs @ beta)  -  lam * sum_j |beta_j|

with an unpenalized intercept b0.  At

    lam_max = max_j | <xs_j, y - mean(y)> | / n

the all-zero coefficient vector is optimal, which anchors the log-spaced
penalty grid.  The solver runs cyclic coordinate descent with
soft-threshold updates on the IRLS quadratic approximation (working
response z = eta + (y - mu)/mu, weights w = mu), iterating an active set
and sweeping in new columns whenever the full stationarity check finds a
violation.  Returned coefficients are mapped back to the original column
scale, so rescaling an input column by c > 0 rescales its coefficient by
1/c and changes nothing else.

Stationarity certificate (standardized scale, per-observation gradient
g_j = <xs_j, y - mu> / n):

    beta_j  = 0:  |g_j| <= lam * (1 + eps)
    beta_j != 0:  |g_j - lam * sign(beta_j)| <= eps * max(lam, 1)

Columns that are constant within the training rows are excluded from the
problem and their coefficients fixed at zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import NumericalError, ValidationError
from .glm import poisson_deviance, poisson_loglik
from .interactions import DesignMatrix, GroupIndex

_ETA_BOUND = 30.0
_ACTIVE_TOL = 1e-12


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0)."""
    if gamma < 0:
        raise ValidationError("soft threshold needs gamma >= 0")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def standardize_columns(X) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Center/scale columns; returns (Xs, means, sds, allowed mask).

    Standard deviations use the 1/n convention.  Zero-variance columns get
    sd = 1, stay zero after centering, and are excluded via the mask.
    """
    X = np.asarray(X, dtype=np.float64)
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    allowed = sds > 0
    safe = np.where(allowed, sds, 1.0)
    Xs = np.asfortranarray((X - means) / safe)
    return Xs, means, safe, allowed


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly decreasing, log-spaced penalty values."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size < 2 or np.any(vals <= 0) or np.any(np.diff(vals) >= 0):
            raise ValidationError("grid must be >= 2 strictly decreasing positive values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def lambda_max(self) -> float:
        return float(self.values[0])

    @property
    def ratio(self) -> float:
        return float(self.values[-1] / self.values[0])

    @property
    def size(self) -> int:
        return self.values.size


def lambda_grid(X, y, size: int = 100, ratio: float = 1e-3) -> LambdaGrid:
    """Penalty grid anchored at the smallest lambda zeroing every coefficient."""
    if size < 2:
        raise ValidationError("grid size must be >= 2")
    if not 0 < ratio < 1:
        raise ValidationError("grid ratio must be in (0, 1)")
    X = X.X if isinstance(X, DesignMatrix) else X
    Xs, _, _, allowed = standardize_columns(X)
    y = np.asarray(y, dtype=np.float64)
    if Xs.shape[0] != y.size:
        raise ValidationError("length mismatch between design and target")
    resid = y - y.mean()
    scores = np.abs(Xs.T @ resid) / y.size
    scores[~allowed] = 0.0
    lam_max = float(scores.max()) if scores.size else 0.0
    if lam_max <= 0:
        raise NumericalError("no signal: every column is orthogonal to the centered target")
    return LambdaGrid(np.geomspace(lam_max, ratio * lam_max, size))


@njit(cache=True, nogil=True, fastmath=True)
def _cd_active(Xs, w, r, b0, beta, active, curv, lam, tol,
               max_updates, max_sweeps):  # pragma: no cover
    """Cyclic soft-threshold sweeps over the given working columns.

    Minimizes the weighted working least squares plus L1 at fixed weights,
    updating the residual r and the coefficients beta in place.  ``curv``
    holds the per-column quadratic terms <w, x_j^2>/n for the working
    columns.  Coordinates that stop moving are dropped from the cycle and
    re-checked by periodic full passes; exit requires a full pass whose
    largest change is below ``tol`` (or hitting a budget).  Returns
    (b0, updates used).
    """
    n = Xs.shape[0]
    m = active.shape[0]
    sw = 0.0
    for i in range(n):
        sw += w[i]
    movers = np.ones(m, dtype=np.bool_)
    updates = 0
    sweeps = 0
    out_of_budget = False
    while True:
        full_pass = True
        while True:
            sweeps += 1
            max_delta = 0.0
            for a in range(m):
                if not (full_pass or movers[a]):
                    continue
                j = active[a]
                if curv[a] <= 0.0:
                    movers[a] = False
                    continue
                g = 0.0
                for i in range(n):
                    g += w[i] * Xs[i, j] * r[i]
                u = g / n + curv[a] * beta[j]
                if u > lam:
                    new = (u - lam) / curv[a]
                elif u < -lam:
                    new = (u + lam) / curv[a]
                else:
                    new = 0.0
                delta = new - beta[j]
                if delta != 0.0:
                    for i in range(n):
                        r[i] -= Xs[i, j] * delta
                    beta[j] = new
                    if abs(delta) > max_delta:
                        max_delta = abs(delta)
                movers[a] = abs(delta) >= tol
                updates += 1
            sr = 0.0
            for i in range(n):
                sr += w[i] * r[i]
            d0 = sr / sw
            if d0 != 0.0:
                b0 += d0
                for i in range(n):
                    r[i] -= d0
                if abs(d0) > max_delta:
                    max_delta = abs(d0)
            converged = max_delta < tol
            out_of_budget = updates >= max_updates or sweeps >= max_sweeps
            if converged or out_of_budget:
                break
            full_pass = False
        if m == 0 or out_of_budget:
            break
        if full_pass:
            # the converging pass was itself a full pass: done
            break
        full_pass = True
        movers[:] = False
    return b0, updates


@dataclass
class PenalizedFit:
    """One penalized solution, reported on the original covariable scale."""

    lam: float
    intercept: float
    coef: np.ndarray
    deviance: float
    converged: bool
    n_irls: int
    n_updates: int
    excluded: np.ndarray
    group: GroupIndex | None = None

    @property
    def active_columns(self) -> np.ndarray:
        return np.flatnonzero(np.abs(self.coef) > _ACTIVE_TOL)

    def active_groups(self) -> list[int]:
        """Indices of variable groups with any nonzero coefficient."""
        if self.group is None:
            raise ValidationError("fit carries no group index")
        hits = np.abs(self.coef) > _ACTIVE_TOL
        return [g for g in range(self.group.n_cov) if hits[self.group.slice_of(g)].any()]


_KKT_MARGIN = 0.05  # internal certificate margin under the public epsilon
_MAX_SWEEPS_PER_CALL = 200
_MAX_UPDATES_PER_CALL = 12_000  # keep calls short so certificate checks interleave
_MAX_POLISH_ROUNDS = 3  # extra reweightings allowed once the deviance is flat


def _kkt_violation(grad, beta, allowed, lam, eps, grad_intercept=None) -> float:
    """Worst subdifferential violation; <= 0 means the certificate holds.

    ``grad_intercept`` adds the unpenalized intercept stationarity condition
    (used by the solver's internal convergence check).
    """
    zero = beta == 0.0
    v = np.where(zero, np.abs(grad) - lam * (1.0 + eps),
                 np.abs(grad - lam * np.sign(beta)) - eps * max(lam, 1.0))
    v[~allowed] = -np.inf
    worst = float(v.max()) if v.size else -np.inf
    if grad_intercept is not None:
        worst = max(worst, abs(grad_intercept) - eps * max(lam, 1.0))
    return worst


def _solve_std(Xs, Xs2, y, lam, allowed, b0, beta, tol_cd, tol_irls,
               max_updates, max_irls, kkt_eps=1e-4):
    """Penalized solve on a pre-standardized design; mutates beta in place.

    ``Xs2`` is the elementwise square of ``Xs`` (shared across penalty
    values), so the per-column quadratic terms per reweighting are a single
    matrix-vector product.  Within one reweighting, each working-set solve
    runs on the currently nonzero columns and the full stationarity scan
    admits violators until none remain.  Reweighting stops when the
    exact-gradient stationarity certificate (including intercept
    stationarity) holds at a margin under ``kkt_eps``; a fit that instead
    stalls at flat deviance or exhausts the update budget is returned
    flagged, never silently.
    """
    n = y.size
    eps_int = _KKT_MARGIN * kkt_eps
    # sweeps only need enough precision for the certificate to settle
    sweep_tol = max(tol_cd, eps_int / 50.0)
    converged = False
    total_updates = 0
    dev_prev = np.inf
    polish_rounds = 0
    n_irls = 0
    entrants = np.zeros(Xs.shape[1], dtype=bool)
    for n_irls in range(1, max_irls + 1):
        eta = np.clip(b0 + Xs @ beta, -_ETA_BOUND, _ETA_BOUND)
        mu = np.exp(eta)
        w = mu
        r = (y - mu) / mu
        curv = (w @ Xs2) / n
        while True:
            work = np.flatnonzero((beta != 0.0) | entrants)
            entrants[:] = False
            budget = min(max_updates - total_updates, _MAX_UPDATES_PER_CALL)
            if budget <= 0:
                break
            b0, used = _cd_active(Xs, w, r, b0, beta, work, curv[work],
                                  lam, sweep_tol, budget, _MAX_SWEEPS_PER_CALL)
            total_updates += used
            grad = (w * r) @ Xs / n
            viol = allowed & (beta == 0.0) & (np.abs(grad) > lam * (1.0 + 1e-9) + 1e-12)
            if not viol.any():
                break
            entrants = viol
        eta = np.clip(b0 + Xs @ beta, -_ETA_BOUND, _ETA_BOUND)
        mu = np.exp(eta)
        dev = poisson_deviance(y, mu)
        resid = (y - mu) / n
        viol_true = _kkt_violation(resid @ Xs, beta, allowed, lam, eps_int,
                                   grad_intercept=float(resid.sum()))
        if viol_true <= 0.0:
            converged = True
            break
        if total_updates >= max_updates:
            break
        if abs(dev_prev - dev) / (abs(dev_prev) + 1e-8) < tol_irls:
            # deviance is flat but stationarity lags: allow a few more
            # reweightings for the certificate, then return flagged
            polish_rounds += 1
            if polish_rounds > _MAX_POLISH_ROUNDS:
                break
        dev_prev = dev
    return b0, dev, converged, n_irls, total_updates


def fit_penalized(X, y, lam: float, warm_start: tuple | None = None,
                  tol_cd: float = 1e-7, tol_irls: float = 1e-7,
                  max_updates: int = 100_000, max_irls: int = 50) -> PenalizedFit:
    """Fit the L1-penalized Poisson model at one penalty value.

    ``warm_start`` is a previous (intercept, coef) pair on the original
    scale.  Non-convergence is flagged, never silent.
    """
    group = X.group if isinstance(X, DesignMatrix) else None
    X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.size:
        raise ValidationError("length mismatch between design and target")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    ybar = float(y.mean())
    if ybar <= 0:
        raise NumericalError("degenerate target: all counts are zero")

    Xs, means, sds, allowed = standardize_columns(X)
    if warm_start is None:
        b0 = float(np.log(ybar))
        beta_std = np.zeros(X.shape[1])
    else:
        w_int, w_coef = warm_start
        w_coef = np.asarray(w_coef, dtype=np.float64)
        beta_std = np.where(allowed, w_coef * sds, 0.0)
        b0 = float(w_int) + float((w_coef * means).sum())

    b0, dev, converged, n_irls, n_updates = _solve_std(
        Xs, Xs * Xs, y, lam, allowed, b0, beta_std,
        tol_cd, tol_irls, max_updates, max_irls)

    coef = np.where(allowed, beta_std / sds, 0.0)
    intercept = b0 - float((beta_std / sds * means)[allowed].sum())
    return PenalizedFit(
        lam=float(lam), intercept=float(intercept), coef=coef,
        deviance=float(dev), converged=bool(converged),
        n_irls=n_irls, n_updates=n_updates, excluded=~allowed, group=group,
    )


def penalized_objective(X, y, intercept: float, coef, lam: float) -> float:
    """Log-likelihood minus lam * L1(coefficients), intercept unpenalized."""
    X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    eta = intercept + X @ coef
    if np.any(eta > 700):
        raise NumericalError("diverged linear predictor")
    mu = np.exp(eta)
    return poisson_loglik(y, mu) - lam * float(np.abs(coef).sum())


@dataclass
class KktReport:
    max_violation: float
    ok: bool
    lam: float
    eps: float


def kkt_check(X, y, intercept: float, coef, lam: float, eps: float = 1e-4) -> KktReport:
    """Stationarity certificate for a penalized solution.

    Works on the standardized scale: coefficients are rescaled by the column
    standard deviations and the per-observation likelihood gradient is
    compared against the subdifferential conditions stated in the module
    docstring.  Excluded (constant) columns are skipped.
    """
    X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    Xs, _, sds, allowed = standardize_columns(X)
    beta_std = coef * sds
    eta = np.clip(intercept + X @ coef, -_ETA_BOUND, _ETA_BOUND)
    mu = np.exp(eta)
    grad = Xs.T @ (y - mu) / y.size
    viol = np.zeros_like(grad)
    zero = np.abs(beta_std) <= _ACTIVE_TOL
    viol[zero] = np.abs(grad[zero]) - lam * (1.0 + eps)
    nz = ~zero
    viol[nz] = np.abs(grad[nz] - lam * np.sign(beta_std[nz])) - eps * max(lam, 1.0)
    viol[~allowed] = -np.inf
    worst = float(viol.max()) if viol.size else -np.inf
    return KktReport(max_violation=worst, ok=worst <= 0.0, lam=float(lam), eps=eps)


@dataclass
class PathFit:
    """Penalized fits along a decreasing penalty grid (warm-started)."""

    lambdas: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray
    deviances: np.ndarray
    n_active: np.ndarray
    converged: np.ndarray
    group: GroupIndex | None = None

    def at(self, lam: float) -> tuple[float, np.ndarray]:
        """(intercept, coef) at a grid value."""
        idx = int(np.argmin(np.abs(self.lambdas - lam)))
        if not np.isclose(self.lambdas[idx], lam, rtol=1e-12, atol=0.0):
            raise ValidationError(f"lambda {lam!r} is not on the fitted grid")
        return float(self.intercepts[idx]), self.coefs[idx]

    def to_csv(self, path) -> None:
        """One row per penalty value: lambda, deviance, n_active, coefficients."""
        names = (self.group.column_names if self.group is not None
                 else [f"c{j}" for j in range(self.coefs.shape[1])])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "deviance", "n_active", "converged",
                             "intercept", *names])
            for k in range(self.lambdas.size):
                writer.writerow([
                    repr(float(self.lambdas[k])), repr(float(self.deviances[k])),
                    int(self.n_active[k]), bool(self.converged[k]),
                    repr(float(self.intercepts[k])),
                    *[repr(float(c)) for c in self.coefs[k]],
                ])


def fit_path(X, y, grid: LambdaGrid, tol_cd: float = 1e-7, tol_irls: float = 1e-7,
             max_updates: int = 100_000, max_irls: int = 50,
             kkt_eps: float = 1e-4) -> PathFit:
    """Fit the whole penalty path with warm starts, largest lambda first.

    ``kkt_eps`` is the stationarity tolerance each fit is certified against;
    resampling loops that only consume the fitted deviances may pass a looser
    value.
    """
    group = X.group if isinstance(X, DesignMatrix) else None
    X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ybar = float(y.mean())
    if ybar <= 0:
        raise NumericalError("degenerate target: all counts are zero")
    n, p = X.shape
    Xs, means, sds, allowed = standardize_columns(X)
    Xs2 = Xs * Xs

    K = grid.size
    intercepts = np.zeros(K)
    coefs = np.zeros((K, p))
    deviances = np.zeros(K)
    n_active = np.zeros(K, dtype=np.int64)
    conv = np.zeros(K, dtype=bool)

    b0 = np.log(ybar)
    beta = np.zeros(p)
    for k, lam in enumerate(grid.values):
        b0, dev, ok, _, _ = _solve_std(Xs, Xs2, y, float(lam), allowed, b0, beta,
                                       tol_cd, tol_irls, max_updates, max_irls,
                                       kkt_eps=kkt_eps)
        coef = np.where(allowed, beta / sds, 0.0)
        intercepts[k] = b0 - float((beta / sds * means)[allowed].sum())
        coefs[k] = coef
        deviances[k] = dev
        conv[k] = ok
        if group is not None:
            hits = np.abs(coef) > _ACTIVE_TOL
            n_active[k] = sum(
                1 for g in range(group.n_cov) if hits[group.slice_of(g)].any()
            )
        else:
            n_active[k] = int((np.abs(coef) > _ACTIVE_TOL).sum())
    return PathFit(lambdas=grid.values.copy(), intercepts=intercepts, coefs=coefs,
                   deviances=deviances, n_active=n_active, converged=conv, group=group)


class PoissonLasso(BaseEstimator, RegressorMixin):
    """Scikit-learn style L1-penalized Poisson regressor.

    Parameters
    ----------
    lam : float
        Penalty strength in the per-observation convention used by
        :func:`lambda_grid`.
    tol : float
        Coordinate-descent tolerance on standardized coefficients.
    max_iter : int
        Coordinate-update budget per fit.

    Attributes
    ----------
    intercept_ : float
    coef_ : ndarray on the original column scale
    converged_ : bool
    """

    def __init__(self, lam: float = 0.01, tol: float = 1e-7, max_iter: int = 100_000):
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        fit = fit_penalized(X, y, self.lam, tol_cd=self.tol, max_updates=self.max_iter)
        self.intercept_ = fit.intercept
        self.coef_ = fit.coef
        self.converged_ = fit.converged
        self.deviance_ = fit.deviance
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.coef_.size:
            raise ValidationError("layout mismatch with the fitted design")
        return np.exp(self.intercept_ + X @ self.coef_)

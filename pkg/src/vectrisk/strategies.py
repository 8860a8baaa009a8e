"""Variable-selection strategies, quality criteria, and the backward baseline.

Four strategies consume one cross-validation report:

* ``ldlm`` / ``ldls`` report the assembled held-out predictions under the
  minimum-deviance / deviance-plus-std penalty rules, with the union of
  per-fold active sets as the selected variables.
* ``fvm`` / ``fvs`` extract the frequent variables - groups present in at
  least ``w`` percent of the outer folds under the respective rule - and
  then rerun the held-out prediction pass with an unpenalized GLM refit on
  that fixed subset per fold.

Every strategy is scored on held-out predictions only, with four criteria:
mean prediction, quadratic risk (mean squared error), absolute risk (mean
absolute error), and the total Poisson deviance of predictions against
observations.

The reference method is backward elimination combined with an unpenalized
GLM on the base covariables (treatment coding): repeatedly drop the
variable group whose best Wald p-value is worst, until every remaining
group is significant at ``alpha``; the survivors are scored by the same
held-out K-fold protocol so the criteria are comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset, GroupSpec, Variable, assemble_group, quartile_bins
from .dcv import (
    CvReport,
    DcvConfig,
    debias,
    derive_seed,
    make_stratified_folds,
    run_lolo_dcv,
)
from .errors import ValidationError
from .glm import deviance_unit, fit_glm, predict_mu
from .interactions import DesignMatrix, encode_base, encode_variable, expand_interactions

STRATEGIES = ("ldlm", "ldls", "fvm", "fvs")


@dataclass
class QualityCriteria:
    """The four comparison criteria, risks as means and deviance as a sum."""

    mean: float
    quadratic_risk: float
    absolute_risk: float
    deviance: float

    def to_dict(self) -> dict:
        return {
            "mean": float(self.mean),
            "quadratic_risk": float(self.quadratic_risk),
            "absolute_risk": float(self.absolute_risk),
            "deviance": float(self.deviance),
        }


def quality_criteria(y, y_hat) -> QualityCriteria:
    """Score predictions against observed counts."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValidationError("length mismatch between observations and predictions")
    if np.any(y_hat <= 0):
        raise ValidationError("predictions must be positive for the deviance criterion")
    err = y - y_hat
    return QualityCriteria(
        mean=float(y_hat.mean()),
        quadratic_risk=float((err ** 2).mean()),
        absolute_risk=float(np.abs(err).mean()),
        deviance=float(deviance_unit(y, y_hat).sum()),
    )


def frequent_variables(presence_matrix, names, w: float = 100.0) -> tuple[str, ...]:
    """Variable groups present in at least w percent of the folds."""
    if not 1 <= w <= 100:
        raise ValidationError("threshold w must be in [1, 100]")
    mat = np.asarray(presence_matrix, dtype=np.float64)
    pct = 100.0 * mat.mean(axis=0)
    return tuple(n for n, p in zip(names, pct) if p >= w)


@dataclass
class SelectionResult:
    """A strategy's chosen variables, held-out predictions, and criteria."""

    strategy: str
    variables: tuple[str, ...]
    predictions: np.ndarray
    criteria: QualityCriteria
    flags: tuple[str, ...] = ()
    details: dict | None = None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "variables": list(self.variables),
            "predictions": [float(v) for v in self.predictions],
            "criteria": self.criteria.to_dict(),
            "flags": list(self.flags),
            "details": self.details or {},
        }


def _village_breakdown(dataset: Dataset, y_hat) -> dict | None:
    if dataset.village is None:
        return None
    err = np.abs(dataset.target - np.asarray(y_hat))
    out = {}
    for i, mod in enumerate(dataset.village.modalities):
        mask = dataset.village.codes == i
        if mask.any():
            out[mod] = float(err[mask].mean())
    return out


def _fv_predictions(design: DesignMatrix, y, report: CvReport, fv: tuple[str, ...]):
    """Held-out predictions from per-fold unpenalized refits on a fixed subset."""
    groups = [design.group.index_of(name) for name in fv]
    preds = np.empty(y.size)
    flags: list[str] = []
    for rec in report.folds:
        tr = report.plan.train_rows(rec.fold)
        te = rec.test_idx
        deb = debias(design.X[tr], y[tr], design.group, groups)
        if not deb.converged:
            flags.append(f"fold {rec.fold}: refit did not converge")
        preds[te] = predict_mu(deb.intercept, deb.coef, design.X[te])
    return preds, tuple(flags)


def run_strategy(strategy: str, dataset: Dataset, group_spec: GroupSpec,
                 config: DcvConfig, report: CvReport | None = None,
                 w: float = 100.0) -> SelectionResult:
    """Apply one selection strategy, computing the cross-validation on demand."""
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    design = expand_interactions(assemble_group(dataset, group_spec))
    if report is None:
        report = run_lolo_dcv(dataset, group_spec, config, design=design)
    if report.group.names != design.group.names:
        raise ValidationError("report does not match the dataset/group layout")
    y = dataset.target

    if strategy in ("ldlm", "ldls"):
        rule = "min" if strategy == "ldlm" else "1se"
        preds = report.predictions_min if rule == "min" else report.predictions_1se
        active_sets = [
            rec.active_min if rule == "min" else rec.active_1se for rec in report.folds
        ]
        union = tuple(n for n in design.group.names
                      if any(n in s for s in active_sets))
        flags = tuple(f"fold {rec.fold}: {m}" for rec in report.folds for m in rec.flags)
        details = {
            "lambda_per_fold": [
                rec.lambda_min if rule == "min" else rec.lambda_1se
                for rec in report.folds
            ],
            "village_abs_error": _village_breakdown(dataset, preds),
        }
        return SelectionResult(strategy, union, preds, quality_criteria(y, preds),
                               flags=flags, details=details)

    rule = "min" if strategy == "fvm" else "1se"
    mat = report.presence_min if rule == "min" else report.presence_1se
    fv = frequent_variables(mat, design.group.names, w)
    flags: tuple[str, ...] = ()
    if not fv:
        flags = ("empty frequent-variable set: intercept-only predictions",)
    preds, refit_flags = _fv_predictions(design, np.asarray(y, dtype=np.float64),
                                         report, fv)
    details = {
        "w": w,
        "presence_percent": {
            n: float(p) for n, p in zip(design.group.names, 100.0 * mat.mean(axis=0))
            if p > 0
        },
        "village_abs_error": _village_breakdown(dataset, preds),
    }
    return SelectionResult(strategy, fv, preds, quality_criteria(y, preds),
                           flags=flags + refit_flags, details=details)


# ---------------------------------------------------------------------------
# Backward-elimination GLM baseline
# ---------------------------------------------------------------------------

def _interaction_block(vk: Variable, vl: Variable):
    """Treatment-coded interaction columns for an expert-chosen pair."""
    bk, nk = encode_variable(vk, drop_first=vk.kind == "categorical")
    bl, nl = encode_variable(vl, drop_first=vl.kind == "categorical")
    cols = []
    names = []
    for i, ni in enumerate(nk):
        for j, nj in enumerate(nl):
            cols.append(bk[:, i] * bl[:, j])
            names.append(f"{ni}:{nj}")
    return np.column_stack(cols), names


def _wald_pvalues(X1, fit) -> np.ndarray:
    """Two-sided Wald p-value per column of the intercept-augmented design."""
    w = fit.mu
    info = X1.T @ (w[:, None] * X1)
    cov = np.linalg.pinv(info)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    beta = np.concatenate([[fit.intercept], fit.coef])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.inf)
    return 2.0 * stats.norm.sf(np.abs(z))


def backward_glm(dataset: Dataset, group_spec: GroupSpec, alpha: float = 0.05,
                 n_folds: int = 10, seed: int = 0,
                 interactions: tuple[tuple[str, str], ...] = ()) -> SelectionResult:
    """Backward elimination on the base covariables, scored by held-out refits.

    Each round fits the unpenalized GLM on the remaining groups and drops the
    group whose smallest per-column Wald p-value is the largest, provided it
    exceeds ``alpha``.  A drop whose refit fails to converge is undone and
    the group is flagged and retained.  Survivors are scored with the same
    stratified K-fold held-out protocol used by the other strategies.
    """
    if not 0 < alpha <= 1:
        raise ValidationError("alpha must be in (0, 1]")
    base = assemble_group(dataset, group_spec)
    design = encode_base(base, drop_first=True)
    blocks = [design.X]
    names = list(design.group.names)
    dims = list(design.group.dims)
    by_name = {v.name: v for v in base}
    for a, b in interactions:
        if a not in by_name or b not in by_name:
            raise ValidationError(f"unknown interaction pair {a!r}:{b!r}")
        block, _ = _interaction_block(by_name[a], by_name[b])
        blocks.append(block)
        names.append(f"{a}:{b}")
        dims.append(block.shape[1])
    X = np.concatenate(blocks, axis=1)
    offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
    y = np.asarray(dataset.target, dtype=np.float64)

    def cols_of(groups: list[int]) -> np.ndarray:
        idx: list[int] = []
        for g in groups:
            idx.extend(range(offsets[g], offsets[g] + dims[g]))
        return np.asarray(idx, dtype=np.int64)

    t0 = time.perf_counter()
    current = list(range(len(names)))
    retained_flagged: set[int] = set()
    flags: list[str] = []
    trace: list[dict] = []

    fit = fit_glm(X[:, cols_of(current)], y)
    if not fit.converged:
        flags.append("initial fit did not converge")
    while current:
        cols = cols_of(current)
        X1 = np.concatenate([np.ones((y.size, 1)), X[:, cols]], axis=1)
        pvals = _wald_pvalues(X1, fit)[1:]
        group_p = {}
        pos = 0
        for g in current:
            group_p[g] = float(pvals[pos:pos + dims[g]].min())
            pos += dims[g]
        candidates = [g for g in current if g not in retained_flagged]
        if not candidates:
            break
        worst = max(candidates, key=lambda g: group_p[g])
        if group_p[worst] <= alpha:
            break
        trial = [g for g in current if g != worst]
        trace.append({"dropped": names[worst], "p": group_p[worst]})
        if trial:
            refit = fit_glm(X[:, cols_of(trial)], y)
            if not refit.converged:
                flags.append(f"refit without {names[worst]!r} did not converge; retained")
                retained_flagged.add(worst)
                trace[-1]["undone"] = True
                continue
            current, fit = trial, refit
        else:
            current = []
            break

    survivors = tuple(names[g] for g in current)
    empty = not survivors
    if empty:
        flags.append("empty survivor set: intercept-only predictions")

    strata = (quartile_bins(y)[0] if np.unique(y).size >= 2
              else np.zeros(y.size, dtype=np.int64))
    plan = make_stratified_folds(y, n_folds, derive_seed(seed, 0), strata=strata)
    preds = np.empty(y.size)
    cols = cols_of(current)
    for k in range(n_folds):
        tr, te = plan.train_rows(k), plan.test_rows(k)
        Xtr = X[np.ix_(tr, cols)] if cols.size else np.empty((tr.size, 0))
        keep = np.array([np.ptp(Xtr[:, c]) > 0 for c in range(Xtr.shape[1])], dtype=bool)
        fold_fit = fit_glm(Xtr[:, keep], y[tr])
        if not fold_fit.converged:
            flags.append(f"fold {k}: held-out refit did not converge")
        coef = np.zeros(cols.size)
        coef[keep] = fold_fit.coef
        Xte = X[np.ix_(te, cols)] if cols.size else np.empty((te.size, 0))
        preds[te] = predict_mu(fold_fit.intercept, coef, Xte)
    elapsed = time.perf_counter() - t0

    details = {
        "alpha": alpha,
        "elimination_trace": trace,
        "surviving_min_p": {names[g]: group_p[g] for g in current} if current else {},
        "elapsed_seconds": elapsed,
        "village_abs_error": _village_breakdown(dataset, preds),
    }
    return SelectionResult("b-glm", survivors, preds, quality_criteria(y, preds),
                           flags=tuple(flags), details=details)

"""Two-level stratified cross-validation with held-out debiased prediction.

Outer level: observations are stratified (by target quartile bin, or by
village) and dealt round-robin into N_f folds.  For each outer fold k the
held-out part E_k never touches anything fitted on the training part A_k:
the penalty grid, the inner cross-validation, the standardization
statistics, and the debiasing refit are all computed from A_k alone.

Inner level, per outer fold: a full cross-validation on A_k fits the
penalty path on each inner-training set and scores held-out Poisson
deviance per penalty value.  Two penalties are read off the aggregated
curve:

* ``lambda_min``  - smallest mean held-out deviance;
* ``lambda_1se``  - smallest (mean + standard deviation) of the held-out
  deviance, with an optional glmnet-flavoured alternative (largest penalty
  whose mean is within one standard error of the minimum).

The active variable groups at each chosen penalty are refit by an
unpenalized GLM (dropping one reference indicator per indicator group for
identifiability) and those debiased fits predict E_k.  Per fold and per
penalty rule, each variable group records a presence bit: whether its
penalized coefficient vector was nonzero on A_k.  Pooling fold predictions
gives one prediction per observation per rule.

Everything is deterministic given (data, group, config): fold seeds derive
from the run seed through fixed spawn keys.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, GroupSpec, assemble_group, quartile_bins
from .errors import NumericalError, ValidationError
from .glm import FitResult, deviance_unit, fit_glm, predict_mu
from .interactions import DesignMatrix, GroupIndex, expand_interactions
from .lasso import LambdaGrid, fit_path, lambda_grid

_ACTIVE_TOL = 1e-12


@dataclass(frozen=True)
class DcvConfig:
    """Knobs of one cross-validation run; the seed is mandatory."""

    seed: int
    n_outer: int = 10
    n_inner: int = 10
    grid_size: int = 100
    grid_ratio: float = 1e-3
    lambda_1se_rule: str = "paper"
    stratify_by: str = "target"
    workers: int = 1

    def __post_init__(self):
        if self.lambda_1se_rule not in ("paper", "within-1se"):
            raise ValidationError(f"unknown lambda_1se_rule {self.lambda_1se_rule!r}")
        if self.stratify_by not in ("target", "village"):
            raise ValidationError(f"unknown stratify_by {self.stratify_by!r}")
        if self.n_outer < 2 or self.n_inner < 2:
            raise ValidationError("need at least 2 folds at both levels")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "n_outer": self.n_outer, "n_inner": self.n_inner,
            "grid_size": self.grid_size, "grid_ratio": self.grid_ratio,
            "lambda_1se_rule": self.lambda_1se_rule, "stratify_by": self.stratify_by,
            "workers": self.workers,
        }


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for stream splitting."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1)[0])


@dataclass(frozen=True)
class FoldPlan:
    """Per-observation fold ids from stratified round-robin dealing."""

    n_folds: int
    assignment: np.ndarray
    seed: int
    strata: np.ndarray

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)


def make_stratified_folds(y, n_folds: int, seed: int, strata=None) -> FoldPlan:
    """Deal observations into folds, stratum by stratum, round-robin.

    Strata default to quartile bins of the target.  Within each stratum the
    members are shuffled with the seeded generator and dealt onto a single
    rotating fold counter, so fold sizes differ by at most one and each
    stratum spreads as evenly as the arithmetic allows.
    """
    y = np.asarray(y)
    n = y.size
    if n_folds < 2:
        raise ValidationError("need at least 2 folds")
    if n_folds > n:
        raise ValidationError(f"more folds ({n_folds}) than observations ({n})")
    if strata is None:
        if np.unique(y).size < 2:
            strata = np.zeros(n, dtype=np.int64)
        else:
            strata, _ = quartile_bins(y)
    strata = np.asarray(strata)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    assignment = np.empty(n, dtype=np.int64)
    counter = 0
    for s in np.unique(strata):
        members = np.flatnonzero(strata == s)
        for idx in rng.permutation(members):
            assignment[idx] = counter % n_folds
            counter += 1
    assignment.flags.writeable = False
    return FoldPlan(n_folds=n_folds, assignment=assignment, seed=seed, strata=strata)


@dataclass
class CvCurve:
    """Held-out deviance curve aggregated over inner folds."""

    lambdas: np.ndarray
    mean_deviance: np.ndarray
    std_deviance: np.ndarray
    skipped_folds: tuple[int, ...] = ()

    def __post_init__(self):
        if not (len(self.lambdas) == len(self.mean_deviance) == len(self.std_deviance)):
            raise ValidationError("curve arrays must share one length")

    def to_dict(self) -> dict:
        return {
            "lambdas": [float(v) for v in self.lambdas],
            "mean_deviance": [float(v) for v in self.mean_deviance],
            "std_deviance": [float(v) for v in self.std_deviance],
            "skipped_folds": list(self.skipped_folds),
        }


_INNER_KKT_EPS = 1e-2  # inner fits only feed the deviance curve


def inner_cv(X, y, grid: LambdaGrid, n_inner: int, seed: int, strata=None) -> CvCurve:
    """Cross-validated held-out deviance along the penalty grid.

    A fold whose training part has an all-zero target cannot be fit and is
    skipped (and recorded); if every fold is degenerate the curve is
    undefined.  The per-fold path fits are certified at a looser
    stationarity tolerance than coefficient-bearing fits, since only their
    held-out deviances enter the curve.
    """
    X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    plan = make_stratified_folds(y, n_inner, seed, strata=strata)
    per_fold = np.full((n_inner, grid.size), np.nan)
    skipped = []
    for f in range(n_inner):
        tr = plan.train_rows(f)
        te = plan.test_rows(f)
        if y[tr].sum() <= 0:
            skipped.append(f)
            continue
        path = fit_path(X[tr], y[tr], grid, kkt_eps=_INNER_KKT_EPS)
        eta = path.intercepts[:, None] + path.coefs @ X[te].T
        mu = np.exp(np.clip(eta, -30.0, 30.0))
        per_fold[f] = deviance_unit(y[te][None, :], mu).sum(axis=1)
    used = ~np.isnan(per_fold[:, 0])
    if not used.any():
        raise NumericalError("every inner fold had a degenerate (all-zero) target")
    mean = per_fold[used].mean(axis=0)
    if used.sum() >= 2:
        std = per_fold[used].std(axis=0, ddof=1)
    else:
        std = np.zeros(grid.size)
    return CvCurve(lambdas=grid.values.copy(), mean_deviance=mean,
                   std_deviance=std, skipped_folds=tuple(skipped))


def select_lambdas(curve: CvCurve, rule: str = "paper") -> tuple[float, float]:
    """Pick (lambda_min, lambda_1se) off a curve; ties favour the larger penalty.

    ``paper`` minimizes mean + std directly; ``within-1se`` takes the largest
    penalty whose mean deviance stays within one standard deviation of the
    minimum.
    """
    if curve.lambdas.size == 0:
        raise ValidationError("empty curve")
    imin = int(np.argmin(curve.mean_deviance))
    lam_min = float(curve.lambdas[imin])
    if rule == "paper":
        i1se = int(np.argmin(curve.mean_deviance + curve.std_deviance))
    elif rule == "within-1se":
        threshold = curve.mean_deviance[imin] + curve.std_deviance[imin]
        i1se = int(np.flatnonzero(curve.mean_deviance <= threshold)[0])
    else:
        raise ValidationError(f"unknown lambda selection rule {rule!r}")
    return lam_min, float(curve.lambdas[i1se])


def active_group_indices(coef, group: GroupIndex) -> list[int]:
    hits = np.abs(np.asarray(coef)) > _ACTIVE_TOL
    return [g for g in range(group.n_cov) if hits[group.slice_of(g)].any()]


def presence(coef, group: GroupIndex) -> np.ndarray:
    """Presence bit per variable group: 1 iff its coefficient vector is nonzero."""
    hits = np.abs(np.asarray(coef)) > _ACTIVE_TOL
    return np.array(
        [1 if hits[group.slice_of(g)].any() else 0 for g in range(group.n_cov)],
        dtype=np.uint8,
    )


@dataclass
class DebiasFit:
    """Unpenalized refit on the active groups, in full-design coordinates."""

    intercept: float
    coef: np.ndarray
    converged: bool
    used_columns: np.ndarray
    fit: FitResult | None = None


def debias(X, y, group: GroupIndex, active_groups) -> DebiasFit:
    """Refit an unpenalized GLM on the active groups' columns.

    One reference indicator per indicator group is dropped so the refit is
    identifiable; columns constant within the given rows are dropped too.
    An empty active set gives the intercept-only model.
    """
    X = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    cols: list[int] = []
    for g in active_groups:
        sl = group.slice_of(g)
        start = sl.start + 1 if (group.is_indicator(g) and group.dims[g] >= 2) else sl.start
        cols.extend(range(start, sl.stop))
    cols = [c for c in cols if np.ptp(X[:, c]) > 0]
    used = np.asarray(cols, dtype=np.int64)
    sub = X[:, used] if used.size else np.empty((y.size, 0))
    fit = fit_glm(sub, y)
    coef = np.zeros(X.shape[1])
    coef[used] = fit.coef
    return DebiasFit(intercept=fit.intercept, coef=coef,
                     converged=fit.converged, used_columns=used, fit=fit)


@dataclass
class FoldRecord:
    """Everything one outer fold produced."""

    fold: int
    test_idx: np.ndarray
    lambda_min: float
    lambda_1se: float
    curve: CvCurve
    active_min: tuple[str, ...]
    active_1se: tuple[str, ...]
    coef_min: np.ndarray
    coef_1se: np.ndarray
    intercept_min: float
    intercept_1se: float
    debias_min: DebiasFit
    debias_1se: DebiasFit
    pred_min: np.ndarray
    pred_1se: np.ndarray
    presence_min: np.ndarray
    presence_1se: np.ndarray
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def _deb(d: DebiasFit) -> dict:
            return {
                "intercept": float(d.intercept),
                "coef": [float(c) for c in d.coef],
                "converged": bool(d.converged),
                "used_columns": [int(c) for c in d.used_columns],
            }

        return {
            "fold": self.fold,
            "test_idx": [int(i) for i in self.test_idx],
            "lambda_min": float(self.lambda_min),
            "lambda_1se": float(self.lambda_1se),
            "curve": self.curve.to_dict(),
            "active_min": list(self.active_min),
            "active_1se": list(self.active_1se),
            "coef_min": [float(c) for c in self.coef_min],
            "coef_1se": [float(c) for c in self.coef_1se],
            "intercept_min": float(self.intercept_min),
            "intercept_1se": float(self.intercept_1se),
            "debias_min": _deb(self.debias_min),
            "debias_1se": _deb(self.debias_1se),
            "pred_min": [float(v) for v in self.pred_min],
            "pred_1se": [float(v) for v in self.pred_1se],
            "presence_min": [int(v) for v in self.presence_min],
            "presence_1se": [int(v) for v in self.presence_1se],
            "flags": list(self.flags),
        }


@dataclass
class CvReport:
    """Assembled output of one LOLO-DCV run."""

    config: DcvConfig
    group: GroupIndex
    plan: FoldPlan
    folds: list[FoldRecord]
    predictions_min: np.ndarray
    predictions_1se: np.ndarray
    presence_min: np.ndarray
    presence_1se: np.ndarray

    @property
    def group_names(self) -> tuple[str, ...]:
        return self.group.names

    def presence_percent(self, rule: str) -> np.ndarray:
        mat = self.presence_min if rule == "min" else self.presence_1se
        return 100.0 * mat.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "group_index": self.group.to_dict(),
            "plan": {
                "n_folds": self.plan.n_folds,
                "assignment": [int(a) for a in self.plan.assignment],
                "seed": int(self.plan.seed),
                "strata": [int(s) for s in self.plan.strata],
            },
            "folds": [f.to_dict() for f in self.folds],
            "predictions_min": [float(v) for v in self.predictions_min],
            "predictions_1se": [float(v) for v in self.predictions_1se],
            "presence_min": [[int(v) for v in row] for row in self.presence_min],
            "presence_1se": [[int(v) for v in row] for row in self.presence_1se],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CvReport":
        gi = doc["group_index"]
        group = GroupIndex(
            names=tuple(g["name"] for g in gi["groups"]),
            dims=tuple(g["dimension"] for g in gi["groups"]),
            offsets=tuple(g["offset"] for g in gi["groups"]),
            kinds=tuple(g["kind"] for g in gi["groups"]),
            column_names=tuple(gi["columns"]),
        )
        plan = FoldPlan(
            n_folds=doc["plan"]["n_folds"],
            assignment=np.asarray(doc["plan"]["assignment"], dtype=np.int64),
            seed=doc["plan"]["seed"],
            strata=np.asarray(doc["plan"]["strata"], dtype=np.int64),
        )
        folds = []
        for fd in doc["folds"]:
            def _deb(d: dict) -> DebiasFit:
                return DebiasFit(
                    intercept=d["intercept"],
                    coef=np.asarray(d["coef"], dtype=np.float64),
                    converged=d["converged"],
                    used_columns=np.asarray(d["used_columns"], dtype=np.int64),
                )

            folds.append(FoldRecord(
                fold=fd["fold"],
                test_idx=np.asarray(fd["test_idx"], dtype=np.int64),
                lambda_min=fd["lambda_min"],
                lambda_1se=fd["lambda_1se"],
                curve=CvCurve(
                    lambdas=np.asarray(fd["curve"]["lambdas"]),
                    mean_deviance=np.asarray(fd["curve"]["mean_deviance"]),
                    std_deviance=np.asarray(fd["curve"]["std_deviance"]),
                    skipped_folds=tuple(fd["curve"]["skipped_folds"]),
                ),
                active_min=tuple(fd["active_min"]),
                active_1se=tuple(fd["active_1se"]),
                coef_min=np.asarray(fd["coef_min"], dtype=np.float64),
                coef_1se=np.asarray(fd["coef_1se"], dtype=np.float64),
                intercept_min=fd["intercept_min"],
                intercept_1se=fd["intercept_1se"],
                debias_min=_deb(fd["debias_min"]),
                debias_1se=_deb(fd["debias_1se"]),
                pred_min=np.asarray(fd["pred_min"], dtype=np.float64),
                pred_1se=np.asarray(fd["pred_1se"], dtype=np.float64),
                presence_min=np.asarray(fd["presence_min"], dtype=np.uint8),
                presence_1se=np.asarray(fd["presence_1se"], dtype=np.uint8),
                flags=tuple(fd["flags"]),
            ))
        return cls(
            config=DcvConfig(**doc["config"]),
            group=group,
            plan=plan,
            folds=folds,
            predictions_min=np.asarray(doc["predictions_min"], dtype=np.float64),
            predictions_1se=np.asarray(doc["predictions_1se"], dtype=np.float64),
            presence_min=np.asarray(doc["presence_min"], dtype=np.uint8),
            presence_1se=np.asarray(doc["presence_1se"], dtype=np.uint8),
        )


def _strata_codes(dataset: Dataset, config: DcvConfig) -> np.ndarray:
    if config.stratify_by == "village":
        if dataset.village is None:
            raise ValidationError("stratify_by=village but the dataset has no village column")
        return dataset.village.codes
    y = dataset.target
    if np.unique(y).size < 2:
        return np.zeros(dataset.n_obs, dtype=np.int64)
    return quartile_bins(y)[0]


def _rule_artifacts(Xtr, ytr, Xte, path, lam, group):
    intercept, coef = path.at(lam)
    act = active_group_indices(coef, group)
    flags: list[str] = []
    deb = debias(Xtr, ytr, group, act)
    if deb.converged:
        pred = predict_mu(deb.intercept, deb.coef, Xte)
    else:
        flags.append("debias refit did not converge; penalized coefficients used")
        pred = predict_mu(intercept, coef, Xte)
    return intercept, coef, act, deb, pred, flags


def _run_fold(k: int, design: DesignMatrix, y: np.ndarray, strata: np.ndarray,
              config: DcvConfig, plan: FoldPlan) -> FoldRecord:
    tr = plan.train_rows(k)
    te = plan.test_rows(k)
    Xtr, ytr = design.X[tr], y[tr]
    Xte = design.X[te]
    grid = lambda_grid(Xtr, ytr, size=config.grid_size, ratio=config.grid_ratio)
    # inner stratification must not see held-out targets: target-quartile
    # strata are recomputed on the training rows (village strata are
    # target-independent and restrict cleanly)
    strata_tr = strata[tr] if config.stratify_by == "village" else None
    curve = inner_cv(Xtr, ytr, grid, config.n_inner,
                     derive_seed(config.seed, 1, k), strata=strata_tr)
    lam_min, lam_1se = select_lambdas(curve, config.lambda_1se_rule)
    # the fold only reads coefficients at the two chosen penalties, so the
    # warm-started training path can stop there instead of walking the tail
    stop = max(int(np.flatnonzero(np.isclose(grid.values, lam_min))[0]),
               int(np.flatnonzero(np.isclose(grid.values, lam_1se))[0]), 1)
    path = fit_path(Xtr, ytr, LambdaGrid(grid.values[:stop + 1]))
    group = design.group

    flags: list[str] = []
    int_min, coef_min, act_min, deb_min, pred_min, f1 = _rule_artifacts(
        Xtr, ytr, Xte, path, lam_min, group)
    int_1se, coef_1se, act_1se, deb_1se, pred_1se, f2 = _rule_artifacts(
        Xtr, ytr, Xte, path, lam_1se, group)
    flags.extend(f"lambda_min: {m}" for m in f1)
    flags.extend(f"lambda_1se: {m}" for m in f2)

    return FoldRecord(
        fold=k, test_idx=te,
        lambda_min=lam_min, lambda_1se=lam_1se, curve=curve,
        active_min=tuple(group.names[g] for g in act_min),
        active_1se=tuple(group.names[g] for g in act_1se),
        coef_min=coef_min, coef_1se=coef_1se,
        intercept_min=int_min, intercept_1se=int_1se,
        debias_min=deb_min, debias_1se=deb_1se,
        pred_min=pred_min, pred_1se=pred_1se,
        presence_min=presence(coef_min, group),
        presence_1se=presence(coef_1se, group),
        flags=tuple(flags),
    )


def run_lolo_dcv(dataset: Dataset, group_spec: GroupSpec, config: DcvConfig,
                 plan: FoldPlan | None = None,
                 design: DesignMatrix | None = None) -> CvReport:
    """Run the full two-level cross-validation and assemble the report.

    ``plan`` and ``design`` are normally derived from the inputs; passing
    them explicitly supports leakage tests (fixed fold plan under target
    perturbation) and reuse across strategy passes.
    """
    if design is None:
        design = expand_interactions(assemble_group(dataset, group_spec))
    y = np.asarray(dataset.target, dtype=np.float64)
    strata = _strata_codes(dataset, config)
    if plan is None:
        plan = make_stratified_folds(y, config.n_outer, derive_seed(config.seed, 0),
                                     strata=strata)

    folds_idx = list(range(plan.n_folds))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(
                lambda k: _run_fold(k, design, y, strata, config, plan), folds_idx))
    else:
        records = [_run_fold(k, design, y, strata, config, plan) for k in folds_idx]
    records.sort(key=lambda r: r.fold)

    n = dataset.n_obs
    pred_min = np.empty(n)
    pred_1se = np.empty(n)
    pres_min = np.zeros((plan.n_folds, design.group.n_cov), dtype=np.uint8)
    pres_1se = np.zeros_like(pres_min)
    for rec in records:
        pred_min[rec.test_idx] = rec.pred_min
        pred_1se[rec.test_idx] = rec.pred_1se
        pres_min[rec.fold] = rec.presence_min
        pres_1se[rec.fold] = rec.presence_1se

    return CvReport(
        config=config, group=design.group, plan=plan, folds=records,
        predictions_min=pred_min, predictions_1se=pred_1se,
        presence_min=pres_min, presence_1se=pres_1se,
    )

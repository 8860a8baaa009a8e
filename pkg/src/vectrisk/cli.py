"""Command-line surface: expand, fit, cv, select, baseline, simulate, chart, report.

Every subcommand writes its artifacts into ``--out`` together with a
``manifest.json`` (parameter echo, seed, sha256 of each artifact, wall-clock
timings).  The manifest is the only file allowed to contain nondeterministic
content; rerunning a subcommand with the same inputs reproduces every other
artifact byte for byte.

Exit codes: 0 success, 1 input/validation error, 2 numerical failure.
Worker concurrency for the cross-validation is capped by the
``VECTRISK_THREADS`` environment variable (default: one worker).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .chart import emit_frequency_chart
from .data import GroupSpec, assemble_group, read_dataset, write_dataset
from .dcv import CvReport, DcvConfig, run_lolo_dcv
from .errors import NumericalError, ValidationError, VectriskError
from .glm import fit_glm
from .interactions import expand_interactions
from .lasso import fit_penalized
from .simulate import default_scenario, simulate_dataset
from .strategies import STRATEGIES, backward_glm, run_strategy


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(c) for c in row])


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out: Path, command: str, params: dict, artifacts: list[Path],
                    timings: dict) -> None:
    manifest = {
        "command": command,
        "parameters": params,
        "seed": params.get("seed"),
        "outputs": {p.name: _sha256(p) for p in artifacts},
        "timings_seconds": timings,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    _write_json(out / "manifest.json", manifest)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers() -> int:
    raw = os.environ.get("VECTRISK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"VECTRISK_THREADS must be an integer, got {raw!r}") from None


def _load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "lambda_rule" in doc:  # accepted alias
        doc["lambda_1se_rule"] = doc.pop("lambda_rule")
    known = {"n_outer", "n_inner", "seed", "grid_size", "grid_ratio",
             "lambda_1se_rule", "stratify_by"}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _dcv_config(args) -> DcvConfig:
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    seed = pick(args.seed, "seed", None)
    if seed is None:
        raise ValidationError("a seed is required (flag --seed or config file)")
    return DcvConfig(
        seed=int(seed),
        n_outer=int(pick(args.n_outer, "n_outer", 10)),
        n_inner=int(pick(args.n_inner, "n_inner", 10)),
        grid_size=int(pick(args.grid_size, "grid_size", 100)),
        grid_ratio=float(pick(args.grid_ratio, "grid_ratio", 1e-3)),
        lambda_1se_rule=pick(args.lambda_1se_rule, "lambda_1se_rule", "paper"),
        stratify_by=pick(args.stratify_by, "stratify_by", "target"),
        workers=_workers(),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    out = _outdir(args)
    t0 = time.perf_counter()
    spec = default_scenario(seed=args.seed, planted=args.scenario == "planted",
                            n_obs=args.n_obs, village=not args.no_village)
    dataset, truth = simulate_dataset(spec)
    data_path, meta_path = out / "data.csv", out / "meta.json"
    write_dataset(dataset, data_path, meta_path)
    truth_path = out / "truth.json"
    _write_json(truth_path, truth.to_dict())
    _write_manifest(out, "simulate",
                    {"seed": args.seed, "scenario": args.scenario, "n_obs": args.n_obs,
                     "village": not args.no_village},
                    [data_path, meta_path, truth_path],
                    {"simulate": time.perf_counter() - t0})
    print(f"wrote {data_path} {meta_path} {truth_path}")
    return 0


def _cmd_expand(args) -> int:
    out = _outdir(args)
    t0 = time.perf_counter()
    dataset = read_dataset(args.data, args.meta)
    design = expand_interactions(assemble_group(dataset, GroupSpec(args.group)))
    design_path = out / "design.csv"
    _write_csv(design_path, design.group.column_names, design.X)
    groups_path = out / "groups.json"
    _write_json(groups_path, design.group.to_dict())
    _write_manifest(out, "expand", {"data": str(args.data), "meta": str(args.meta),
                                    "group": args.group},
                    [design_path, groups_path], {"expand": time.perf_counter() - t0})
    print(f"expanded {design.group.n_cov} variable groups, "
          f"{design.group.n_columns} columns")
    print(f"wrote {design_path} {groups_path}")
    return 0


def _cmd_fit(args) -> int:
    out = _outdir(args)
    t0 = time.perf_counter()
    dataset = read_dataset(args.data, args.meta)
    design = expand_interactions(assemble_group(dataset, GroupSpec(args.group)))
    if args.lam is None:
        fit = fit_glm(design, dataset.target)
        doc = fit.to_dict()
    else:
        fit = fit_penalized(design, dataset.target, args.lam)
        groups = fit.active_groups()
        doc = {
            "lambda": fit.lam,
            "intercept": fit.intercept,
            "coefficients": {
                name: [float(c) for c in fit.coef[design.group.slice_of(g)]]
                for g, name in enumerate(design.group.names)
            },
            "active_groups": [design.group.names[g] for g in groups],
            "deviance": fit.deviance,
            "converged": fit.converged,
        }
    fit_path = out / "fit.json"
    _write_json(fit_path, doc)
    _write_manifest(out, "fit", {"data": str(args.data), "meta": str(args.meta),
                                 "group": args.group, "lambda": args.lam},
                    [fit_path], {"fit": time.perf_counter() - t0})
    print(f"wrote {fit_path}")
    return 0


def _cv_artifacts(out: Path, report: CvReport, y) -> list[Path]:
    report_path = out / "cv_report.json"
    _write_json(report_path, report.to_dict())
    pred_path = out / "predictions.csv"
    _write_csv(pred_path, ["index", "observed", "pred_lambda_min", "pred_lambda_1se"],
               [(i, int(y[i]), report.predictions_min[i], report.predictions_1se[i])
                for i in range(len(y))])
    lam_path = out / "fold_lambdas.csv"
    _write_csv(lam_path,
               ["fold", "lambda_min", "lambda_1se", "n_active_min", "n_active_1se"],
               [(r.fold, r.lambda_min, r.lambda_1se, len(r.active_min), len(r.active_1se))
                for r in report.folds])
    presence_paths = []
    for rule in ("min", "1se"):
        mat = report.presence_min if rule == "min" else report.presence_1se
        path = out / f"presence_{rule}.csv"
        pct = 100.0 * mat.mean(axis=0)
        rows = [
            (name, pct[i], *[int(v) for v in mat[:, i]])
            for i, name in enumerate(report.group_names)
        ]
        _write_csv(path, ["variable", "percent",
                          *[f"fold_{k}" for k in range(report.plan.n_folds)]], rows)
        presence_paths.append(path)
    return [report_path, pred_path, lam_path, *presence_paths]


def _cmd_cv(args) -> int:
    out = _outdir(args)
    config = _dcv_config(args)
    dataset = read_dataset(args.data, args.meta)
    t0 = time.perf_counter()
    report = run_lolo_dcv(dataset, GroupSpec(args.group), config)
    elapsed = time.perf_counter() - t0
    artifacts = _cv_artifacts(out, report, dataset.target)
    _write_manifest(out, "cv", {"data": str(args.data), "meta": str(args.meta),
                                "group": args.group, **config.to_dict()},
                    artifacts, {"cv": elapsed})
    print(f"wrote {artifacts[0]}")
    return 0


def _cmd_select(args) -> int:
    out = _outdir(args)
    config = _dcv_config(args)
    dataset = read_dataset(args.data, args.meta)
    strategies = [s.strip().lower() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ValidationError(f"unknown strategy {s!r}")
    report = None
    timings: dict[str, float] = {}
    if args.cv_report:
        with open(args.cv_report, encoding="utf-8") as fh:
            report = CvReport.from_dict(json.load(fh))
    else:
        t0 = time.perf_counter()
        report = run_lolo_dcv(dataset, GroupSpec(args.group), config)
        timings["cv"] = time.perf_counter() - t0
    artifacts = []
    for s in strategies:
        t0 = time.perf_counter()
        result = run_strategy(s, dataset, GroupSpec(args.group), config,
                              report=report, w=args.w)
        timings[s] = time.perf_counter() - t0
        path = out / f"selection_{s}.json"
        _write_json(path, result.to_dict())
        artifacts.append(path)
    _write_manifest(out, "select", {"data": str(args.data), "meta": str(args.meta),
                                    "group": args.group, "strategies": strategies,
                                    "w": args.w, **config.to_dict()},
                    artifacts, timings)
    print("wrote " + " ".join(str(p) for p in artifacts))
    return 0


def _cmd_baseline(args) -> int:
    out = _outdir(args)
    dataset = read_dataset(args.data, args.meta)
    t0 = time.perf_counter()
    result = backward_glm(dataset, GroupSpec(args.group), alpha=args.alpha,
                          n_folds=args.n_outer or 10, seed=args.seed)
    elapsed = time.perf_counter() - t0
    path = out / "bglm.json"
    _write_json(path, result.to_dict())
    _write_manifest(out, "baseline", {"data": str(args.data), "meta": str(args.meta),
                                      "group": args.group, "alpha": args.alpha,
                                      "seed": args.seed},
                    [path], {"baseline": elapsed})
    print(f"wrote {path}")
    return 0


def _cmd_chart(args) -> int:
    out = _outdir(args)
    t0 = time.perf_counter()
    with open(args.cv_report, encoding="utf-8") as fh:
        report = CvReport.from_dict(json.load(fh))
    svg = emit_frequency_chart(report.group_names,
                               report.presence_percent("min"),
                               report.presence_percent("1se"), w=args.w)
    path = out / "frequency.svg"
    path.write_text(svg, encoding="utf-8")
    _write_manifest(out, "chart", {"cv_report": str(args.cv_report), "w": args.w},
                    [path], {"chart": time.perf_counter() - t0})
    print(f"wrote {path}")
    return 0


_CRITERIA_COLS = ("mean", "quadratic_risk", "absolute_risk", "deviance")


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    sources = sorted(run_dir.glob("selection_*.json")) + \
        ([run_dir / "bglm.json"] if (run_dir / "bglm.json").exists() else [])
    if not sources:
        raise ValidationError(f"no selection or baseline artifacts under {run_dir}")
    docs = []
    for path in sources:
        with open(path, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    for doc in docs:
        crit = doc["criteria"]
        rows.append((doc["strategy"], len(doc["variables"]),
                     *[crit[c] for c in _CRITERIA_COLS]))
    cmp_path = out / "comparison.csv"
    _write_csv(cmp_path, ["strategy", "n_selected", *_CRITERIA_COLS], rows)

    lines = ["# Strategy comparison", "",
             "| strategy | selected | mean | quadratic risk | absolute risk | deviance |",
             "|---|---|---|---|---|---|"]
    for doc in docs:
        crit = doc["criteria"]
        lines.append(
            f"| {doc['strategy']} | {len(doc['variables'])} "
            f"| {crit['mean']:.4f} | {crit['quadratic_risk']:.4f} "
            f"| {crit['absolute_risk']:.4f} | {crit['deviance']:.2f} |"
        )
    lines += ["", "## Selected variables", ""]
    for doc in docs:
        sel = ", ".join(doc["variables"]) if doc["variables"] else "(none)"
        lines.append(f"- **{doc['strategy']}**: {sel}")
        for flag in doc.get("flags", []):
            lines.append(f"  - flag: {flag}")
    timing_lines = _collect_timings(run_dir)
    if timing_lines:
        lines += ["", "## Timings", ""] + timing_lines
    md_path = out / "report.md"
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, "report", {"run_dir": str(run_dir)},
                    [cmp_path, md_path], {})
    print(f"wrote {cmp_path} {md_path}")
    return 0


def _collect_timings(run_dir: Path) -> list[str]:
    lines = []
    for manifest in sorted(run_dir.glob("**/manifest.json")):
        try:
            with open(manifest, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        for key, value in doc.get("timings_seconds", {}).items():
            lines.append(f"- {doc.get('command', '?')}/{key}: {value:.2f} s")
    # the backward baseline also records its own elimination time
    bglm = run_dir / "bglm.json"
    if bglm.exists():
        with open(bglm, encoding="utf-8") as fh:
            doc = json.load(fh)
        elapsed = doc.get("details", {}).get("elapsed_seconds")
        if elapsed is not None:
            lines.append(f"- b-glm/elimination+refits: {elapsed:.2f} s")
    return lines


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV data file")
    p.add_argument("--meta", required=True, help="JSON metadata file")
    p.add_argument("--group", type=int, default=1, choices=(1, 2, 3, 4),
                   help="covariable group id")


def _add_cv_flags(p: argparse.ArgumentParser, seed_required: bool = True) -> None:
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--n-outer", type=int, default=None)
    p.add_argument("--n-inner", type=int, default=None)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--grid-ratio", type=float, default=None)
    p.add_argument("--lambda-1se-rule", choices=("paper", "within-1se"), default=None)
    p.add_argument("--stratify-by", choices=("target", "village"), default=None)
    p.add_argument("--config", default=None, help="JSON config file (flags override)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vectrisk",
        description="Sparse Poisson count prediction with interaction expansion, "
                    "penalized fitting, and two-level cross-validation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the bundled synthetic scenario")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-obs", type=int, default=600)
    p.add_argument("--scenario", choices=("planted", "noise"), default="planted")
    p.add_argument("--no-village", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("expand", help="export the expanded design and group map")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_expand)

    p = sub.add_parser("fit", help="single unpenalized or penalized fit")
    _add_data_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("cv", help="run the two-level cross-validation")
    _add_data_flags(p)
    _add_cv_flags(p, seed_required=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("select", help="run selection strategies")
    _add_data_flags(p)
    _add_cv_flags(p, seed_required=False)
    p.add_argument("--strategies", default="ldlm,ldls,fvm,fvs")
    p.add_argument("--w", type=float, default=100.0)
    p.add_argument("--cv-report", default=None,
                   help="reuse an existing cv_report.json instead of recomputing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("baseline", help="backward-elimination GLM baseline")
    _add_data_flags(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-outer", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("chart", help="presence-frequency SVG chart")
    p.add_argument("--cv-report", required=True)
    p.add_argument("--w", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_chart)

    p = sub.add_parser("report", help="assemble the comparison table and summary")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def _error_module(exc: BaseException) -> str:
    tb = exc.__traceback__
    module = "vectrisk"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("vectrisk"):
            module = name
        tb = tb.tb_next
    return module


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"{_error_module(exc)}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"{_error_module(exc)}: {exc}", file=sys.stderr)
        return 2
    except VectriskError as exc:
        print(f"{_error_module(exc)}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"vectrisk: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Typed survey data: variables, datasets, quartile recoding, covariable groups.

A :class:`Variable` is one named column, either numeric or categorical with an
ordered modality set.  A :class:`Dataset` bundles a non-negative integer count
target with covariables (and optionally a village factor).  Four covariable
groups are derived from one dataset:

====== ========== ================
group  coding     village included
====== ========== ================
1      original   no
2      original   yes
3      recoded    no
4      recoded    yes
====== ========== ================

"Recoded" replaces every covariable that declares a recoding rule by its
quartile-binned (or explicit-edge-binned) categorical version.

On-disk format: a CSV with a header row, one observation per row, plus a JSON
metadata file declaring per column ``{name, kind, role, modalities?, closed?,
recode, recode_edges?}`` where role is ``target``, ``covariable`` or
``village``.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

_RECODE_KINDS = ("none", "quartile", "edges")


def _frozen_array(values, dtype=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Variable:
    """One named covariable column.

    Numeric variables hold finite floats.  Categorical variables hold labels
    drawn from ``modalities`` (at least two, all distinct); ``codes`` gives the
    0-based modality index per observation.  ``recode`` marks how the variable
    is binned when a recoded covariable group is assembled.
    """

    name: str
    kind: str
    values: np.ndarray
    modalities: tuple[str, ...] | None = None
    recode: str = "none"
    recode_edges: tuple[float, ...] | None = None
    codes: np.ndarray | None = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValidationError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.recode not in _RECODE_KINDS:
            raise ValidationError(f"variable {self.name!r}: unknown recode {self.recode!r}")
        if self.recode == "edges" and not self.recode_edges:
            raise ValidationError(f"variable {self.name!r}: recode 'edges' needs recode_edges")
        if self.kind == NUMERIC:
            vals = _frozen_array(self.values, dtype=np.float64)
            if vals.ndim != 1:
                raise ValidationError(f"variable {self.name!r}: values must be 1-D")
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"variable {self.name!r}: non-finite value")
            object.__setattr__(self, "values", vals)
        else:
            labels = [str(v) for v in self.values]
            mods = self.modalities
            if mods is None:
                mods = tuple(dict.fromkeys(labels))
            else:
                mods = tuple(str(m) for m in mods)
            if len(mods) < 2:
                raise ValidationError(
                    f"variable {self.name!r}: categorical needs at least 2 modalities"
                )
            if len(set(mods)) != len(mods):
                raise ValidationError(f"variable {self.name!r}: duplicate modalities")
            index = {m: i for i, m in enumerate(mods)}
            try:
                codes = np.array([index[v] for v in labels], dtype=np.int64)
            except KeyError as exc:
                raise ValidationError(
                    f"variable {self.name!r}: undeclared modality {exc.args[0]!r}"
                ) from None
            codes.flags.writeable = False
            object.__setattr__(self, "values", _frozen_array(labels, dtype=object))
            object.__setattr__(self, "modalities", mods)
            object.__setattr__(self, "codes", codes)

    @property
    def n_obs(self) -> int:
        return len(self.values)

    @property
    def n_modalities(self) -> int:
        return 0 if self.modalities is None else len(self.modalities)

    @classmethod
    def numeric(cls, name, values, recode="none", recode_edges=None) -> "Variable":
        return cls(name, NUMERIC, np.asarray(values, dtype=np.float64),
                   recode=recode, recode_edges=recode_edges)

    @classmethod
    def categorical(cls, name, values, modalities=None) -> "Variable":
        return cls(name, CATEGORICAL, np.asarray(values, dtype=object), modalities=modalities)


@dataclass(frozen=True)
class Dataset:
    """A count target plus covariables, all sharing one observation count."""

    target: np.ndarray
    covariables: tuple[Variable, ...]
    village: Variable | None = None
    target_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.target)
        if y.ndim != 1:
            raise ValidationError("target must be a 1-D column")
        yf = y.astype(np.float64)
        if not np.all(np.isfinite(yf)):
            raise ValidationError("target: non-finite value")
        if np.any(yf < 0):
            raise ValidationError("negative count in target")
        if np.any(yf != np.round(yf)):
            raise ValidationError("non-integer count in target")
        y = _frozen_array(yf, dtype=np.int64)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "covariables", tuple(self.covariables))
        n = len(y)
        for v in self.covariables:
            if v.n_obs != n:
                raise ValidationError(f"length mismatch: column {v.name!r}")
        if self.village is not None:
            if self.village.kind != CATEGORICAL:
                raise ValidationError("village column must be categorical")
            if self.village.n_obs != n:
                raise ValidationError(f"length mismatch: column {self.village.name!r}")

    @property
    def n_obs(self) -> int:
        return len(self.target)


@dataclass(frozen=True)
class GroupSpec:
    """Which of the four covariable groups to analyse."""

    group_id: int

    def __post_init__(self):
        if self.group_id not in (1, 2, 3, 4):
            raise ValidationError(f"group id must be 1..4, got {self.group_id}")

    @property
    def coding(self) -> str:
        return "original" if self.group_id in (1, 2) else "recoded"

    @property
    def include_village(self) -> bool:
        return self.group_id in (2, 4)


def quartile_bins(values) -> tuple[np.ndarray, int]:
    """Bin values at the empirical 25/50/75 percentiles.

    Percentiles use linear interpolation between order statistics; values equal
    to an edge fall in the lower bin.  Bins left empty (coincident edges, or
    gaps in the data) are dropped, so the returned bin count is between 2 and 4.

    Returns ``(codes, n_bins)`` with codes in ``0..n_bins-1``.
    """
    vals = np.asarray(values, dtype=np.float64)
    if len(np.unique(vals)) < 2:
        raise ValidationError("degenerate recode: fewer than 2 distinct values")
    edges = np.unique(np.percentile(vals, [25.0, 50.0, 75.0], method="linear"))
    raw = np.searchsorted(edges, vals, side="left")
    occupied = np.unique(raw)
    remap = {b: i for i, b in enumerate(occupied)}
    codes = np.array([remap[b] for b in raw], dtype=np.int64)
    return codes, len(occupied)


def recode_quartiles(v: Variable) -> Variable:
    """Recode a numeric variable into quartile classes Q1..Qm (m <= 4)."""
    if v.kind != NUMERIC:
        raise ValidationError(f"variable {v.name!r}: quartile recode needs a numeric variable")
    if v.n_obs < 4:
        raise ValidationError(f"variable {v.name!r}: quartile recode needs at least 4 observations")
    codes, n_bins = quartile_bins(v.values)
    labels = tuple(f"Q{i + 1}" for i in range(n_bins))
    return Variable.categorical(v.name, [labels[c] for c in codes], modalities=labels)


def recode_with_edges(v: Variable, edges: Sequence[float], labels=None) -> Variable:
    """Recode a numeric variable with explicit bin edges (value <= edge: lower bin)."""
    if v.kind != NUMERIC:
        raise ValidationError(f"variable {v.name!r}: edge recode needs a numeric variable")
    e = np.asarray(sorted(edges), dtype=np.float64)
    if e.size < 1 or np.unique(e).size != e.size:
        raise ValidationError(f"variable {v.name!r}: edges must be distinct, at least one")
    if labels is None:
        labels = tuple(f"C{i + 1}" for i in range(e.size + 1))
    labels = tuple(labels)
    if len(labels) != e.size + 1:
        raise ValidationError(f"variable {v.name!r}: need {e.size + 1} labels for {e.size} edges")
    codes = np.searchsorted(e, v.values, side="left")
    return Variable.categorical(v.name, [labels[c] for c in codes], modalities=labels)


def _recoded(v: Variable) -> Variable:
    if v.recode == "quartile":
        return recode_quartiles(v)
    if v.recode == "edges":
        return recode_with_edges(v, v.recode_edges)
    return v


def assemble_group(dataset: Dataset, spec: GroupSpec) -> list[Variable]:
    """Base covariable list for one group, before interaction expansion."""
    if spec.coding == "original":
        out = list(dataset.covariables)
    else:
        out = [_recoded(v) for v in dataset.covariables]
    if spec.include_village:
        if dataset.village is None:
            raise ValidationError(f"group {spec.group_id} requires a village column, none present")
        out.append(dataset.village)
    return out


# ---------------------------------------------------------------------------
# Raw table validation and file I/O
# ---------------------------------------------------------------------------

def _parse_float(name, raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"column {name!r}: cannot parse {raw!r} as a number") from None


def validate_dataset(columns: Mapping[str, Sequence], metadata: Mapping) -> Dataset:
    """Build a typed Dataset from a raw column table and its metadata.

    ``columns`` maps column name to a sequence of raw cell values (strings are
    fine).  ``metadata`` declares each column; exactly one column must have
    role ``target``.  Categorical modality sets are the union of declared and
    observed labels unless the column is marked ``closed``.  Missing cells are
    rejected: no imputation happens here.
    """
    decls = metadata.get("columns")
    if not decls:
        raise ValidationError("metadata declares no columns")
    target_decls = [d for d in decls if d.get("role") == "target"]
    if len(target_decls) != 1:
        raise ValidationError("metadata must designate exactly one target column")

    n_obs = None
    target = None
    target_name = target_decls[0]["name"]
    covariables: list[Variable] = []
    village = None

    for decl in decls:
        name = decl.get("name")
        if name is None:
            raise ValidationError("metadata column without a name")
        if name not in columns:
            raise ValidationError(f"missing column: {name!r}")
        raw = list(columns[name])
        if n_obs is None:
            n_obs = len(raw)
        elif len(raw) != n_obs:
            raise ValidationError(f"length mismatch: column {name!r}")
        for cell in raw:
            if cell is None or (isinstance(cell, str) and cell.strip() == ""):
                raise ValidationError(f"missing value in column {name!r}")

        role = decl.get("role", "covariable")
        if role == "target":
            vals = np.array([_parse_float(name, c) for c in raw])
            if np.any(vals < 0):
                raise ValidationError(f"negative count in target column {name!r}")
            if np.any(vals != np.round(vals)):
                raise ValidationError(f"non-integer count in target column {name!r}")
            target = vals.astype(np.int64)
            continue

        kind = decl.get("kind")
        if kind == NUMERIC:
            var = Variable.numeric(
                name,
                [_parse_float(name, c) for c in raw],
                recode=decl.get("recode", "none"),
                recode_edges=tuple(decl["recode_edges"]) if decl.get("recode_edges") else None,
            )
        elif kind == CATEGORICAL:
            declared = [str(m) for m in decl.get("modalities", [])]
            observed = [str(c) for c in raw]
            extra = [m for m in dict.fromkeys(observed) if m not in declared]
            if extra and decl.get("closed", False):
                raise ValidationError(
                    f"undeclared modality {extra[0]!r} in closed column {name!r}"
                )
            modalities = tuple(declared) + tuple(extra) if declared else None
            var = Variable.categorical(name, observed, modalities=modalities)
        else:
            raise ValidationError(f"column {name!r}: unknown kind {kind!r}")

        if role == "village":
            if village is not None:
                raise ValidationError("more than one village column declared")
            village = var
        elif role == "covariable":
            covariables.append(var)
        else:
            raise ValidationError(f"column {name!r}: unknown role {role!r}")

    if target is None:
        raise ValidationError("target column missing from table")
    return Dataset(target=target, covariables=tuple(covariables),
                   village=village, target_name=target_name)


def load_csv_columns(path) -> dict[str, list[str]]:
    """Read a header-row CSV into a name -> cells mapping (RFC-4180 quoting)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"empty CSV file: {path}") from None
        cols: dict[str, list[str]] = {h: [] for h in header}
        if len(cols) != len(header):
            raise ValidationError(f"duplicate column names in {path}")
        for row in reader:
            if len(row) != len(header):
                raise ValidationError(f"ragged row in {path}")
            for h, cell in zip(header, row):
                cols[h].append(cell)
    return cols


def read_dataset(data_path, meta_path) -> Dataset:
    """Load and validate a CSV + JSON metadata pair."""
    with open(meta_path, encoding="utf-8") as fh:
        metadata = json.load(fh)
    return validate_dataset(load_csv_columns(data_path), metadata)


def dataset_metadata(dataset: Dataset) -> dict:
    """Reconstruct the JSON metadata document describing a dataset."""
    cols = [{"name": dataset.target_name, "kind": NUMERIC, "role": "target", "recode": "none"}]
    for v in dataset.covariables:
        entry = {"name": v.name, "kind": v.kind, "role": "covariable", "recode": v.recode}
        if v.kind == CATEGORICAL:
            entry["modalities"] = list(v.modalities)
        if v.recode_edges:
            entry["recode_edges"] = list(v.recode_edges)
        cols.append(entry)
    if dataset.village is not None:
        cols.append({
            "name": dataset.village.name, "kind": CATEGORICAL, "role": "village",
            "modalities": list(dataset.village.modalities), "recode": "none",
        })
    return {"columns": cols}


def write_dataset(dataset: Dataset, data_path, meta_path) -> None:
    """Write a dataset as the standard CSV + metadata JSON pair."""
    names = [dataset.target_name] + [v.name for v in dataset.covariables]
    columns = [dataset.target] + [v.values for v in dataset.covariables]
    if dataset.village is not None:
        names.append(dataset.village.name)
        columns.append(dataset.village.values)
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(dataset.n_obs):
            writer.writerow([_cell(col[i]) for col in columns])
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(dataset_metadata(dataset), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cell(value):
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    return value

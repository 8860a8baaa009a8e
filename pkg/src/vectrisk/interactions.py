"""Pairwise interaction expansion and the grouped numeric design matrix.

Every base covariable becomes one column group: a numeric variable
contributes a single column, a categorical variable with d modalities
contributes the full set of d indicator columns (no reference level is
dropped; the unpenalized intercept absorbs the induced collinearity).  All
p(p-1)/2 unordered pairs then contribute one interaction group each, in
lexicographic pair order over the base list:

* numeric x numeric: the elementwise product, one column;
* numeric x categorical: the numeric column masked by each modality
  indicator, d columns;
* categorical x categorical: the joint modality indicators, d_k * d_l
  columns.

The per-group column dimensions form the identifiability vector ``dims``
(one entry per variable group), which is what lets indicator columns be
regrouped into their source variable after fitting.  For p base covariables
the design holds ``p + p(p-1)/2`` groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CATEGORICAL, NUMERIC, Variable
from .errors import ValidationError

KIND_NUMERIC = "numeric"
KIND_CATEGORICAL = "categorical"
KIND_NUM_NUM = "num:num"
KIND_NUM_CAT = "num:cat"
KIND_CAT_CAT = "cat:cat"

_INDICATOR_KINDS = (KIND_CATEGORICAL, KIND_CAT_CAT)


@dataclass(frozen=True)
class GroupIndex:
    """Column layout of a grouped design: one entry per variable group."""

    names: tuple[str, ...]
    dims: tuple[int, ...]
    offsets: tuple[int, ...]
    kinds: tuple[str, ...]
    column_names: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.dims) == len(self.offsets) == len(self.kinds)):
            raise ValidationError("group index fields must have equal length")
        if sum(self.dims) != len(self.column_names):
            raise ValidationError("group dimensions do not sum to the column count")

    @property
    def n_cov(self) -> int:
        return len(self.names)

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    def slice_of(self, group: int) -> slice:
        return slice(self.offsets[group], self.offsets[group] + self.dims[group])

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown variable group {name!r}") from None

    def is_indicator(self, group: int) -> bool:
        """True when the group's columns are a partition-of-unity indicator set."""
        return self.kinds[group] in _INDICATOR_KINDS

    def to_dict(self) -> dict:
        return {
            "groups": [
                {"name": n, "offset": o, "dimension": d, "kind": k}
                for n, o, d, k in zip(self.names, self.offsets, self.dims, self.kinds)
            ],
            "columns": list(self.column_names),
        }


@dataclass(frozen=True)
class DesignMatrix:
    """Expanded numeric design with its group layout.

    The intercept is not a column; fitting routines handle it separately.
    ``constant_mask`` flags columns that are constant over the full data;
    they stay in the matrix, and fitting routines exclude whatever is
    constant within their own training rows.
    """

    X: np.ndarray
    group: GroupIndex
    constant_mask: np.ndarray

    def __post_init__(self):
        if self.X.shape[1] != self.group.n_columns:
            raise ValidationError("design width does not match the group index")

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]


def _check_lengths(vk: Variable, vl: Variable) -> None:
    if vk.n_obs != vl.n_obs:
        raise ValidationError(f"length mismatch crossing {vk.name!r} with {vl.name!r}")


def _indicators(v: Variable) -> np.ndarray:
    out = np.zeros((v.n_obs, v.n_modalities))
    out[np.arange(v.n_obs), v.codes] = 1.0
    return out


def cross_numeric_numeric(vk: Variable, vl: Variable) -> np.ndarray:
    """Elementwise product column, shape (n, 1)."""
    _check_lengths(vk, vl)
    return (vk.values * vl.values)[:, None]


def cross_numeric_categorical(vk: Variable, vl: Variable) -> np.ndarray:
    """Numeric column masked per modality of the categorical, shape (n, d_l)."""
    _check_lengths(vk, vl)
    return _indicators(vl) * vk.values[:, None]


def cross_categorical_categorical(vk: Variable, vl: Variable) -> np.ndarray:
    """Joint modality indicators in (p, q) order, shape (n, d_k * d_l)."""
    _check_lengths(vk, vl)
    ik = _indicators(vk)
    il = _indicators(vl)
    return (ik[:, :, None] * il[:, None, :]).reshape(vk.n_obs, -1)


def encode_variable(v: Variable, drop_first: bool = False) -> tuple[np.ndarray, list[str]]:
    """Numeric column or indicator block for one base variable.

    ``drop_first`` drops the first modality indicator (treatment coding),
    used by unpenalized refits that need an identifiable parameterization.
    """
    if v.kind == NUMERIC:
        return v.values[:, None].astype(np.float64), [v.name]
    block = _indicators(v)
    names = [f"{v.name}={m}" for m in v.modalities]
    if drop_first:
        return block[:, 1:], names[1:]
    return block, names


def _cross_block(vk: Variable, vl: Variable) -> tuple[np.ndarray, str, list[str]]:
    name = f"{vk.name}:{vl.name}"
    if vk.kind == NUMERIC and vl.kind == NUMERIC:
        return cross_numeric_numeric(vk, vl), KIND_NUM_NUM, [name]
    if vk.kind == NUMERIC and vl.kind == CATEGORICAL:
        cols = [f"{vk.name}:{vl.name}={m}" for m in vl.modalities]
        return cross_numeric_categorical(vk, vl), KIND_NUM_CAT, cols
    if vk.kind == CATEGORICAL and vl.kind == NUMERIC:
        cols = [f"{vk.name}={m}:{vl.name}" for m in vk.modalities]
        return cross_numeric_categorical(vl, vk), KIND_NUM_CAT, cols
    cols = [
        f"{vk.name}={mk}:{vl.name}={ml}"
        for mk in vk.modalities
        for ml in vl.modalities
    ]
    return cross_categorical_categorical(vk, vl), KIND_CAT_CAT, cols


def expand_interactions(base: list[Variable] | tuple[Variable, ...]) -> DesignMatrix:
    """Expand base covariables into the full grouped interaction design.

    Layout: each base group first (in the given order), then one group per
    pair (i, j), i < j, in lexicographic order.  The expansion is a pure
    function of the base list, so identical inputs give bit-identical
    designs.
    """
    base = list(base)
    if not base:
        raise ValidationError("need at least one base covariable")
    n = base[0].n_obs
    for v in base[1:]:
        if v.n_obs != n:
            raise ValidationError(f"length mismatch: column {v.name!r}")
    names = [v.name for v in base]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate base variable names")

    blocks: list[np.ndarray] = []
    group_names: list[str] = []
    dims: list[int] = []
    kinds: list[str] = []
    column_names: list[str] = []

    for v in base:
        block, cols = encode_variable(v)
        blocks.append(block)
        group_names.append(v.name)
        dims.append(block.shape[1])
        kinds.append(KIND_NUMERIC if v.kind == NUMERIC else KIND_CATEGORICAL)
        column_names.extend(cols)

    p = len(base)
    for i in range(p):
        for j in range(i + 1, p):
            block, kind, cols = _cross_block(base[i], base[j])
            blocks.append(block)
            group_names.append(f"{base[i].name}:{base[j].name}")
            dims.append(block.shape[1])
            kinds.append(kind)
            column_names.extend(cols)

    offsets = [0]
    for d in dims[:-1]:
        offsets.append(offsets[-1] + d)

    X = np.asfortranarray(np.concatenate(blocks, axis=1))
    X.flags.writeable = False
    constant = np.array([np.all(X[:, c] == X[0, c]) for c in range(X.shape[1])])
    constant.flags.writeable = False
    group = GroupIndex(
        names=tuple(group_names),
        dims=tuple(dims),
        offsets=tuple(offsets),
        kinds=tuple(kinds),
        column_names=tuple(column_names),
    )
    return DesignMatrix(X=X, group=group, constant_mask=constant)


def encode_base(base, drop_first: bool = True) -> DesignMatrix:
    """Encode base covariables without interactions (treatment coding option).

    Used by the backward-elimination baseline, which works on the raw base
    variables with an identifiable (reference-dropped) parameterization.
    """
    base = list(base)
    if not base:
        raise ValidationError("need at least one base covariable")
    blocks, group_names, dims, kinds, column_names = [], [], [], [], []
    for v in base:
        block, cols = encode_variable(v, drop_first=drop_first)
        if block.shape[1] == 0:
            raise ValidationError(f"variable {v.name!r}: no columns after reference drop")
        blocks.append(block)
        group_names.append(v.name)
        dims.append(block.shape[1])
        kinds.append(KIND_NUMERIC if v.kind == NUMERIC else KIND_CATEGORICAL)
        column_names.extend(cols)
    offsets = [0]
    for d in dims[:-1]:
        offsets.append(offsets[-1] + d)
    X = np.asfortranarray(np.concatenate(blocks, axis=1))
    X.flags.writeable = False
    constant = np.array([np.all(X[:, c] == X[0, c]) for c in range(X.shape[1])])
    group = GroupIndex(tuple(group_names), tuple(dims), tuple(offsets),
                       tuple(kinds), tuple(column_names))
    return DesignMatrix(X=X, group=group, constant_mask=constant)

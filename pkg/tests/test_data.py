import numpy as np
import pytest

from vectrisk import (
    Dataset,
    GroupSpec,
    ValidationError,
    Variable,
    assemble_group,
    read_dataset,
    recode_quartiles,
    recode_with_edges,
    validate_dataset,
    write_dataset,
)

META3 = {
    "columns": [
        {"name": "y", "kind": "numeric", "role": "target"},
        {"name": "x", "kind": "numeric", "role": "covariable"},
    ]
}


def test_validate_dataset_basic():
    ds = validate_dataset({"y": ["0", "2", "4"], "x": ["1.5", "2.0", "3.5"]}, META3)
    assert ds.n_obs == 3
    assert list(ds.target) == [0, 2, 4]
    assert ds.covariables[0].kind == "numeric"


def test_validate_dataset_negative_count():
    with pytest.raises(ValidationError, match="negative count"):
        validate_dataset({"y": ["0", "-1", "4"], "x": ["1", "2", "3"]}, META3)


def test_validate_dataset_non_integer_count():
    with pytest.raises(ValidationError, match="non-integer"):
        validate_dataset({"y": ["0", "1.5", "4"], "x": ["1", "2", "3"]}, META3)


def test_validate_dataset_length_mismatch():
    with pytest.raises(ValidationError, match="length mismatch"):
        validate_dataset({"y": ["0", "2", "4"], "x": ["1", "2"]}, META3)


def test_validate_dataset_missing_column():
    with pytest.raises(ValidationError, match="missing column"):
        validate_dataset({"y": ["0", "2", "4"]}, META3)


def test_validate_dataset_missing_value_rejected():
    with pytest.raises(ValidationError, match="missing value"):
        validate_dataset({"y": ["0", "2", "4"], "x": ["1", "", "3"]}, META3)


def test_validate_dataset_closed_modalities():
    meta = {
        "columns": [
            {"name": "y", "kind": "numeric", "role": "target"},
            {"name": "c", "kind": "categorical", "role": "covariable",
             "modalities": ["a", "b"], "closed": True},
        ]
    }
    with pytest.raises(ValidationError, match="undeclared modality"):
        validate_dataset({"y": ["1", "2"], "c": ["a", "z"]}, meta)
    # open set: union of declared and observed
    meta["columns"][1]["closed"] = False
    ds = validate_dataset({"y": ["1", "2"], "c": ["a", "z"]}, meta)
    assert ds.covariables[0].modalities == ("a", "b", "z")


def test_variable_invariants():
    with pytest.raises(ValidationError):
        Variable.categorical("c", ["a", "a"], modalities=("a",))  # d >= 2
    with pytest.raises(ValidationError):
        Variable.categorical("c", ["a", "b"], modalities=("a", "a"))  # distinct
    with pytest.raises(ValidationError):
        Variable.numeric("x", [1.0, np.inf])


def test_recode_quartiles_symmetric_eight_points():
    v = Variable.numeric("x", [1, 2, 3, 4, 5, 6, 7, 8])
    r = recode_quartiles(v)
    assert r.modalities == ("Q1", "Q2", "Q3", "Q4")
    assert list(r.values) == ["Q1", "Q1", "Q2", "Q2", "Q3", "Q3", "Q4", "Q4"]


def test_recode_quartiles_degenerate():
    with pytest.raises(ValidationError, match="degenerate recode"):
        recode_quartiles(Variable.numeric("x", [3.0, 3.0, 3.0, 3.0]))


def test_recode_quartiles_merges_empty_bins():
    # oracle: empirical percentiles with linear interpolation, lower-closed bins
    values = np.array([0, 0, 0, 0, 1, 2, 3, 9], dtype=float)
    edges = np.unique(np.percentile(values, [25, 50, 75], method="linear"))
    raw = np.searchsorted(edges, values, side="left")
    occupied = sorted(set(raw))
    expected_bins = [occupied.index(b) for b in raw]

    r = recode_quartiles(Variable.numeric("x", values))
    assert len(r.modalities) == len(occupied) <= 3
    assert [r.modalities.index(lbl) for lbl in r.values] == expected_bins


@pytest.mark.parametrize("seed", range(6))
def test_recode_quartiles_properties(seed):
    g = np.random.default_rng(seed)
    values = np.round(g.gamma(2.0, 2.0, size=37), 1)
    if len(np.unique(values)) < 2:
        return
    r = recode_quartiles(Variable.numeric("x", values))
    assert r.kind == "categorical"
    assert 2 <= len(r.modalities) <= 4
    # order preservation: x_i <= x_j implies bin(x_i) <= bin(x_j)
    order = np.argsort(values, kind="stable")
    codes = np.array([r.modalities.index(lbl) for lbl in r.values])
    assert np.all(np.diff(codes[order]) >= 0)
    # every declared modality is observed
    assert set(codes) == set(range(len(r.modalities)))


def test_recode_needs_four_observations():
    with pytest.raises(ValidationError, match="at least 4"):
        recode_quartiles(Variable.numeric("x", [1.0, 2.0, 3.0]))


def test_recode_with_edges():
    v = Variable.numeric("x", [0, 1, 2, 4, 5, 9])
    r = recode_with_edges(v, [1, 4], labels=("low", "mid", "high"))
    assert list(r.values) == ["low", "low", "mid", "mid", "high", "high"]


def _dataset_16(n=40, with_village=True):
    g = np.random.default_rng(3)
    covs = []
    for i in range(12):
        covs.append(Variable.numeric(f"x{i}", g.standard_normal(n), recode="quartile"))
    for i in range(4):
        covs.append(Variable.categorical(f"c{i}", g.choice(["a", "b"], size=n)))
    village = Variable.categorical("village", g.choice(["v1", "v2", "v3"], size=n)) \
        if with_village else None
    return Dataset(target=g.poisson(2.0, size=n), covariables=tuple(covs),
                   village=village)


def test_assemble_group_counts():
    ds = _dataset_16()
    assert len(assemble_group(ds, GroupSpec(1))) == 16
    assert len(assemble_group(ds, GroupSpec(2))) == 17
    assert len(assemble_group(ds, GroupSpec(3))) == 16
    assert len(assemble_group(ds, GroupSpec(4))) == 17


def test_assemble_group_recodes_starred_variables():
    ds = _dataset_16()
    g3 = assemble_group(ds, GroupSpec(3))
    assert all(v.kind == "categorical" for v in g3[:12])
    assert all(v.kind == "categorical" for v in g3[12:])


def test_assemble_group_village_missing():
    ds = _dataset_16(with_village=False)
    with pytest.raises(ValidationError, match="village"):
        assemble_group(ds, GroupSpec(2))


def test_group_spec_codings():
    assert GroupSpec(1).coding == "original" and not GroupSpec(1).include_village
    assert GroupSpec(2).coding == "original" and GroupSpec(2).include_village
    assert GroupSpec(3).coding == "recoded" and not GroupSpec(3).include_village
    assert GroupSpec(4).coding == "recoded" and GroupSpec(4).include_village
    with pytest.raises(ValidationError):
        GroupSpec(5)


def test_dataset_roundtrip(tmp_path):
    ds = _dataset_16(n=25)
    write_dataset(ds, tmp_path / "d.csv", tmp_path / "m.json")
    back = read_dataset(tmp_path / "d.csv", tmp_path / "m.json")
    assert back.n_obs == ds.n_obs
    assert np.array_equal(back.target, ds.target)
    assert [v.name for v in back.covariables] == [v.name for v in ds.covariables]
    assert back.covariables[0].recode == "quartile"
    assert np.allclose(back.covariables[0].values, ds.covariables[0].values)
    assert list(back.village.values) == list(ds.village.values)

import dataclasses
import math

import numpy as np
import pytest

import vectrisk as vk
from vectrisk import (
    NumericalError,
    default_scenario,
    fit_glm,
    score_recovery,
    simulate_dataset,
)


def test_zero_signal_sample_mean():
    spec = dataclasses.replace(default_scenario(seed=5, n_obs=10_000),
                               planted={}, intercept=math.log(2.0))
    ds, truth = simulate_dataset(spec)
    se = math.sqrt(2.0 / 10_000)
    assert abs(ds.target.mean() - 2.0) < 3 * se
    assert truth.support == ()


def test_simulation_deterministic():
    spec = default_scenario(seed=99, n_obs=300)
    a, _ = simulate_dataset(spec)
    b, _ = simulate_dataset(spec)
    assert np.array_equal(a.target, b.target)
    for va, vb in zip(a.covariables, b.covariables):
        assert np.array_equal(va.values, vb.values)
    c, _ = simulate_dataset(dataclasses.replace(spec, seed=100))
    assert not np.array_equal(a.target, c.target)


def test_adding_a_column_does_not_disturb_earlier_streams():
    spec = default_scenario(seed=42, n_obs=150, village=False)
    a, _ = simulate_dataset(spec)
    b, _ = simulate_dataset(dataclasses.replace(spec, village_levels=9))
    for va, vb in zip(a.covariables, b.covariables):
        assert np.array_equal(va.values, vb.values)


def test_planted_interaction_invisible_marginally():
    g_spec = dataclasses.replace(
        default_scenario(seed=31, n_obs=2000),
        planted={"openings:vegetation": (0.5,)})
    ds, _ = simulate_dataset(g_spec)
    names = [v.name for v in ds.covariables]
    xo = ds.covariables[names.index("openings")].values
    xv = ds.covariables[names.index("vegetation")].values
    marginal_o = fit_glm(xo[:, None], ds.target)
    marginal_v = fit_glm(xv[:, None], ds.target)
    assert abs(marginal_o.coef[0]) < 0.08
    assert abs(marginal_v.coef[0]) < 0.08
    joint = fit_glm(np.column_stack([xo, xv, xo * xv]), ds.target)
    assert joint.coef[2] > 0.3  # recovers the planted sign and magnitude


def test_mu_overflow_guard():
    spec = dataclasses.replace(default_scenario(seed=1, n_obs=100),
                               intercept=9.0)
    with pytest.raises(NumericalError, match="overflow guard"):
        simulate_dataset(spec)


def test_generator_uses_analysis_encoding():
    # the truth's linear predictor is expressible in the analysis design:
    # regenerating counts from the expanded design reproduces the dataset
    spec = default_scenario(seed=77, n_obs=200)
    ds, truth = simulate_dataset(spec)
    base = list(ds.covariables) + [ds.village]
    design = vk.expand_interactions(base)
    eta = np.full(ds.n_obs, truth.intercept)
    for name, coefs in truth.coefficients.items():
        sl = design.group.slice_of(design.group.index_of(name))
        eta += design.X[:, sl] @ np.asarray(coefs)
    rng = np.random.default_rng(np.random.SeedSequence(77, spawn_key=(1,)))
    assert np.array_equal(rng.poisson(np.exp(eta)), ds.target)


def test_default_scenario_shape():
    spec = default_scenario(seed=3)
    assert spec.n_obs == 600
    assert len(spec.covariables) == 16
    assert spec.village_levels == 9
    assert len(spec.planted) == 3
    ds, truth = simulate_dataset(dataclasses.replace(spec, n_obs=50))
    assert len(ds.covariables) == 16
    d1 = vk.expand_interactions(vk.assemble_group(ds, vk.GroupSpec(1)))
    d2 = vk.expand_interactions(vk.assemble_group(ds, vk.GroupSpec(2)))
    assert d1.group.n_cov == 136
    assert d2.group.n_cov == 153
    assert set(truth.support) <= set(d1.group.names)


def test_noise_scenario_has_no_support():
    ds, truth = simulate_dataset(default_scenario(seed=3, planted=False, n_obs=60))
    assert truth.support == ()
    assert truth.coefficients == {}


def test_score_recovery():
    s = score_recovery(["a", "b"], ["a", "b"])
    assert s.exact_match and s.true_pos == 2 and s.false_pos == 0
    s = score_recovery([], ["a", "b"])
    assert s.false_neg == 2 and not s.exact_match
    s = score_recovery(["a", "b", "c"], ["a", "b"])
    assert s.false_pos == 1 and not s.exact_match

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cotx import minimax as mm
from cotx.core import ConditionedDataset, DimensionError, DivergenceError, evaluate_map
from cotx.divergence import dv_value
from cotx.gaussflow import test_function
from cotx.synthetic import SyntheticSpec, generate, mean_shift


def test_config_validation():
    with pytest.raises(mm.ConfigError):
        mm.MinimaxConfig(lambda_growth=0.99)
    with pytest.raises(mm.ConfigError):
        mm.MinimaxConfig(lambda0=10.0, lambda_max=1.0)
    with pytest.raises(mm.ConfigError):
        mm.MinimaxConfig(inner_ascent_steps=0)
    with pytest.raises(mm.ConfigError):
        mm.MinimaxConfig.from_dict({"lambda_grwth": 1.1})
    cfg = mm.MinimaxConfig.from_dict({"outer_steps": 7})
    assert mm.MinimaxConfig.from_dict(cfg.to_dict()) == cfg


def test_lambda_examples():
    cfg = mm.MinimaxConfig(lambda0=1.0, lambda_growth=1.02, lambda_max=1e4)
    assert mm.lambda_at(0, cfg) == 1.0
    assert mm.lambda_at(100, cfg) == pytest.approx(1.02**100, rel=1e-12)
    assert mm.lambda_at(100, mm.MinimaxConfig(lambda_growth=1.02, lambda_max=5.0)) == 5.0
    flat = mm.MinimaxConfig(lambda0=3.0, lambda_growth=1.0, lambda_max=10.0)
    assert {mm.lambda_at(n, flat) for n in range(50)} == {3.0}
    assert mm.lambda_at(10**9, mm.MinimaxConfig()) == 1e4  # no overflow


@given(st.floats(1e-3, 10), st.floats(1.0, 3.0), st.floats(1.0, 1e6), st.integers(0, 5000))
def test_lambda_nondecreasing_and_capped(l0, growth, cap_ratio, n):
    cfg = mm.MinimaxConfig(lambda0=l0, lambda_growth=growth, lambda_max=l0 * cap_ratio)
    a, b = mm.lambda_at(n, cfg), mm.lambda_at(n + 1, cfg)
    assert l0 <= a <= b <= cfg.lambda_max


def test_sample_objective_examples():
    rng = np.random.default_rng(0)
    s = ConditionedDataset(rng.normal(size=(30, 1)), rng.normal(size=(30, 1)))
    t = ConditionedDataset(rng.normal(size=(40, 1)), rng.normal(size=(40, 1)))
    zero = lambda y, z: np.zeros(len(y))
    assert mm.sample_objective(s.points, zero, s, t, 5.0) == (0.0, 0.0, 0.0)
    obj, cost, dv = mm.sample_objective(s.points + 2, zero, s, t, 5.0)
    assert obj == pytest.approx(2.0, abs=1e-14) and dv == 0.0
    g = lambda y, z: y[:, 0] * z[:, 0]
    obj, cost, dv = mm.sample_objective(s.points + 1, g, s, t, 0.0)
    assert obj == cost == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mm.sample_objective(s.points, zero, s, t, -1.0)


@pytest.mark.parametrize("family", ["gaussflow", "composeflow"])
def test_fit_on_identical_samples_stays_at_identity(family):
    rng = np.random.default_rng(1)
    d = ConditionedDataset(rng.normal(size=(500, 1)), rng.normal(size=(500, 1)))
    tmap, diag = mm.fit(d, d, family)
    out = evaluate_map(tmap, d.points, d.covariates)
    assert diag.final_kl_estimate <= 0.05
    assert np.mean(np.abs(out - d.points)) <= 0.05
    assert len(diag.records) == len(tmap)


def test_fit_unconditional_identical_datasets():
    rng = np.random.default_rng(2)
    d = ConditionedDataset(rng.normal(size=(400, 2)))
    tmap, _ = mm.fit_unconditional(d, d)
    out = evaluate_map(tmap, d.points)
    assert math.sqrt(np.mean(np.sum((out - d.points) ** 2, axis=1))) <= 0.05


def test_composeflow_needs_scalar_response():
    d = ConditionedDataset(np.zeros((5, 2)))
    with pytest.raises(DimensionError):
        mm.fit(d, d, "composeflow")
    with pytest.raises(ValueError):
        mm.fit(d, d, "splines")


@pytest.fixture(scope="module")
def unbalanced():
    spec = SyntheticSpec("unbalanced_identity", 2000, seed=0)
    source, target, _ = generate(spec)
    return source, target


def test_unbalanced_conditional_fit_is_near_identity(unbalanced):
    source, target = unbalanced
    tmap, _ = mm.fit(source, target, "composeflow")
    out = evaluate_map(tmap, source.points, source.covariates)
    assert np.mean(np.abs(out - source.points)) <= 0.1


def test_unbalanced_blind_fit_shifts_by_two(unbalanced):
    source, target = unbalanced
    tmap, _ = mm.fit(source.drop_covariates(), target.drop_covariates(), "composeflow")
    assert abs(mean_shift(tmap, source.drop_covariates()) - 2.0) <= 0.1


def _session(family, lam_zero=False):
    rng = np.random.default_rng(3)
    x0, z = rng.normal(size=(300, 1)), rng.normal(size=(300, 1))
    y, zy = rng.normal(1, 1, size=(300, 1)), rng.normal(size=(300, 1))
    cls = mm._GaussSession if family == "gaussflow" else mm._ComposeSession
    return cls(x0, z, y, zy, mm.MinimaxConfig(), np.random.default_rng(0))


@pytest.mark.parametrize("family", ["gaussflow", "composeflow"])
def test_descent_with_zero_lambda_and_zero_test_never_moves(family):
    s = _session(family)
    start = s.x.copy()
    for _ in range(5):
        if family == "composeflow":
            s.state = s.state.fresh_step()
            _, s.v_new, s.w_new = __import__("cotx").composeflow.step_values(s.state, s.zall)
        s.descent(0.0)
    np.testing.assert_allclose(s.x.reshape(start.shape), start, atol=1e-8)


def test_gauss_ascent_never_lowers_dv():
    s = _session("gaussflow")
    for lam in (1.0, 2.0, 4.0):
        before = dv_value(test_function(s.q, s.x, s.z), test_function(s.q, s.y, s.zy)).value
        after = s.ascent()
        assert after >= before
        s.descent(lam)


def test_divergence_aborts_with_diagnostics(monkeypatch, unbalanced):
    source, target = unbalanced
    monkeypatch.setattr(mm, "OBJECTIVE_LIMIT", 1e-12)
    with pytest.raises(DivergenceError) as err:
        mm.fit(source, target, "composeflow", mm.MinimaxConfig(outer_steps=3))
    assert err.value.diagnostics is not None and len(err.value.diagnostics.records) == 1


def test_fit_is_deterministic_and_writes_diagnostics(tmp_path):
    rng = np.random.default_rng(4)
    s = ConditionedDataset(rng.normal(size=(300, 1)), rng.normal(size=(300, 1)))
    t = ConditionedDataset(rng.normal(0.5, 1, size=(300, 1)), rng.normal(size=(300, 1)))
    cfg = mm.MinimaxConfig(outer_steps=15, seed=9)
    m1, d1 = mm.fit(s, t, "gaussflow", cfg)
    m2, d2 = mm.fit(s, t, "gaussflow", cfg)
    assert json.dumps(m1.to_json()) == json.dumps(m2.to_json())
    assert d1.records == d2.records
    d1.write_csv(tmp_path / "diag.csv")
    with open(tmp_path / "diag.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "lambda", "cost_term", "dv_term", "objective", "kl_estimate"]
    assert len(rows) == 1 + len(d1.records) == 1 + len(m1)
    assert float(rows[1][1]) == 1.0


def test_each_new_layer_starts_at_identity(monkeypatch):
    """Wrap the session descent to check the fresh layer before it moves."""
    from cotx import gaussflow as gf

    seen = []
    real = gf.identity_map_params

    def spy(*args, **kw):
        p = real(*args, **kw)
        x = np.random.default_rng(len(seen)).normal(size=(20, p.dims[0]))
        z = np.random.default_rng(len(seen) + 1).normal(size=(20, p.dims[1]))
        seen.append(np.abs(gf.elementary_map(p, x, z) - x).max())
        return p

    monkeypatch.setattr(gf, "identity_map_params", spy)
    rng = np.random.default_rng(5)
    s = ConditionedDataset(rng.normal(size=(200, 1)))
    t = ConditionedDataset(rng.normal(1, 1, size=(200, 1)))
    mm.fit(s, t, "gaussflow", mm.MinimaxConfig(outer_steps=5))
    assert seen and max(seen) <= 1e-12

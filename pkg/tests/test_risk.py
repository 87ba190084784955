import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foodrisk.errors import ValidationError
from foodrisk.risk import (QUANTILE_COLUMNS, RISK_COLUMNS, GammaPerspective, RiskMeasureConfig, WaterStressClass,
                           across_scenario_risk, classify_water_stress, convex_risk, fsri, fsri_trajectories,
                           gamma_value, load_weight_presets, scenario_order, wasserstein_barycenter_1d,
                           within_scenario_risk)
from foodrisk.scenarios import SCENARIO_NAMES
from foodrisk.trajectories import TrajectorySet

YEARS = np.arange(2019, 2031)


def triple(n, seed, years=YEARS, shift=0.0):
    rng = np.random.default_rng(seed)
    shape = (n, len(years))
    ids = np.arange(n)
    req = TrajectorySet("calorie_requirement", ids, years, 2.0e11 * np.exp(rng.normal(0, 0.05, shape)))
    cap = TrajectorySet("fsc", ids, years, 3.0e11 * np.exp(rng.normal(-shift, 0.1, shape)))
    water = TrajectorySet("water_stress", ids, years, 0.9 * np.exp(rng.normal(shift, 0.2, shape)))
    return req, cap, water


# --------------------------------------------------------------------------
# gamma, classes, index


def test_gamma_examples():
    assert gamma_value(1.22, "VC") == 1.12
    assert gamma_value(1.22, "LC") == 1.02
    assert gamma_value(1.22, "NC") == 0.82
    assert gamma_value(1.22, "Zero") == 0.0
    assert gamma_value(0.35, "NC") == 0.0
    for p in ("VC", "LC", "NC"):
        assert gamma_value(GammaPerspective(p).threshold, p) == 0.0
    assert [GammaPerspective(p).threshold for p in ("NC", "LC", "VC")] == [0.40, 0.20, 0.10]
    assert math.isinf(GammaPerspective.Zero.threshold)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10))
def test_gamma_piecewise_linear_and_ordered(w, dw):
    vc, lc, nc = (gamma_value(w, p) for p in ("VC", "LC", "NC"))
    assert vc >= lc >= nc >= 0
    for p in ("VC", "LC", "NC"):
        thr = GammaPerspective(p).threshold
        want = max(0.0, w - thr)
        assert gamma_value(w, p) == pytest.approx(want, rel=1e-15, abs=1e-15)
        if w > thr:
            assert gamma_value(w + dw, p) - gamma_value(w, p) == pytest.approx(dw, abs=1e-12)


def test_gamma_arrays():
    g = gamma_value(np.array([[0.05, 0.4, 1.22]]), "VC")
    assert g.shape == (1, 3) and g.dtype == float
    assert list(g[0]) == [0.0, 0.3, 1.12]


def test_water_stress_classes():
    assert classify_water_stress(0.35) == WaterStressClass("MediumHigh")
    assert classify_water_stress(1.22) == WaterStressClass("ExtremelyHigh")
    assert classify_water_stress(0.05) == WaterStressClass("Low")
    edges = [0.10, 0.20, 0.40, 0.80]
    names = ["LowMedium", "MediumHigh", "High", "ExtremelyHigh"]
    for e, name in zip(edges, names):
        assert classify_water_stress(e) == WaterStressClass(name)
    with pytest.raises(ValidationError):
        classify_water_stress(-0.1)


def test_fsri_examples():
    assert fsri(5.0, 5.0, 0.7, 0.0) == 100.0
    assert fsri(0.8, 1.0, 1.2, 1.0) == pytest.approx(100.0, rel=1e-15)
    assert fsri(3.0, 1.0, 0.6, math.inf) == pytest.approx(60.0)
    assert fsri(3.0, 1.0, 0.6, 1e12) == pytest.approx(60.0, rel=1e-9)
    with pytest.raises(ValidationError):
        fsri(1.0, 0.0, 0.5, 0.0)
    with pytest.raises(ValidationError):
        fsri(1.0, 1.0, 0.5, -1.0)


pos = st.floats(0.01, 100)


@settings(max_examples=200, deadline=None)
@given(pos, pos, st.floats(0, 5), st.floats(0.01, 5), st.floats(1.01, 2))
def test_fsri_monotone(c, q, w, g, k):
    base = fsri(c, q, w, g)
    assert fsri(c * k, q, w, g) > base
    assert fsri(c, q * k, w, g) < base
    assert fsri(c, q, w + 0.1, g) > base
    assert fsri(c, q, w, 0.0) == pytest.approx(100 * c / q, rel=1e-15)


# --------------------------------------------------------------------------
# within scenario


def test_identical_trajectories():
    req, cap, water = triple(1, 0)
    rep = lambda ts: TrajectorySet(ts.quantity, np.arange(9), ts.years, np.repeat(ts.values, 9, axis=0))
    r = within_scenario_risk(rep(req), rep(cap), rep(water), "NC", w_initial=1.0)
    path, _ = fsri_trajectories(req, cap, water, "NC", 1.0)
    assert np.allclose(r.mean, path.values[0], rtol=1e-15)
    assert np.array_equal(r.median, path.values[0])


def test_two_trajectory_brute_force():
    years = np.array([2020, 2021])
    ids = [3, 8]
    req = TrajectorySet("r", ids, years, np.array([[80.0, 90.0], [100.0, 120.0]]))
    cap = TrajectorySet("c", ids, years, np.array([[100.0, 100.0], [100.0, 100.0]]))
    water = TrajectorySet("w", ids, years, np.array([[0.5, 0.3], [1.0, 0.2]]))
    r = within_scenario_risk(req, cap, water, "NC", w_initial=0.6)
    # year 1: gamma 0.2 for both; year 2: gamma 0.1 and 0.6
    idx = np.array([
        [(80 / 100 + 0.2 * 0.5) / 1.2, (90 / 100 + 0.1 * 0.3) / 1.1],
        [(100 / 100 + 0.2 * 1.0) / 1.2, (120 / 100 + 0.6 * 0.2) / 1.6],
    ]) * 100
    assert np.allclose(r.mean, idx.mean(axis=0), rtol=1e-14)
    assert np.allclose(r.quantiles["q05"], idx.min(axis=0) + 0.05 * np.ptp(idx, axis=0), rtol=1e-14)
    assert np.allclose(r.gamma, [0.2, 0.35], rtol=1e-14)


def test_mean_converges_with_sample_size():
    small = within_scenario_risk(*triple(2000, 1), "NC", w_initial=0.9)
    big = within_scenario_risk(*triple(20000, 2), "NC", w_initial=0.9)
    sd = big.samples.values.std(axis=0)
    se = sd * math.sqrt(1 / 2000 + 1 / 20000)
    assert np.all(np.abs(small.mean - big.mean) < 3 * se)


def test_assessment_shape_and_bands():
    r = within_scenario_risk(*triple(300, 3), "VC", w_initial=0.9)
    df = r.to_frame()
    assert tuple(df.columns) == RISK_COLUMNS
    assert len(df) == len(YEARS)
    q = np.stack([r.quantiles[c] for c in QUANTILE_COLUMNS])
    assert np.all(np.diff(q, axis=0) >= 0) and np.all(q >= 0)


def test_id_mismatch():
    req, cap, water = triple(5, 0)
    with pytest.raises(ValidationError):
        within_scenario_risk(req.select([0, 1, 2]), cap, water)


# --------------------------------------------------------------------------
# barycenter and convex risk


def test_barycenter_identities():
    rng = np.random.default_rng(0)
    x = rng.normal(size=64)
    bary = wasserstein_barycenter_1d([x, x, x], [0.2, 0.3, 0.5], m=64)
    assert np.array_equal(bary, np.sort(x))
    assert np.all(wasserstein_barycenter_1d([[0.0], [2.0]], [0.5, 0.5], m=16) == 1.0)
    samples = [rng.normal(k, 1 + k, 100 + 37 * k) for k in range(6)]
    w = [0.5, 0.2, 0.15, 0.04, 0.1, 0.01]
    bary = wasserstein_barycenter_1d(samples, w, m=1024)
    want = math.fsum(wi * math.fsum(s) / len(s) for wi, s in zip(w, samples))
    assert abs(math.fsum(bary) / len(bary) - want) <= 1e-12
    assert np.all(np.diff(bary) >= 0)
    with pytest.raises(ValidationError):
        wasserstein_barycenter_1d([[], [1.0]], [0.5, 0.5])


def variational_oracle(samples, weights, theta, M=1200):
    """Pointwise grid search of q - (theta/2) sum w (q - q_i)^2, minus its normalisation."""
    u = (np.arange(M) + 0.5) / M
    Q = np.stack([np.sort(s)[np.floor(u * len(s)).astype(int)] for s in samples])
    w = np.asarray(weights)[:, None]

    def argbest(f, lo, hi):
        for _ in range(6):
            grid = np.linspace(lo, hi, 401)  # (401, M)
            vals = f(grid)
            k = np.argmax(vals, axis=0)
            cols = np.arange(grid.shape[1])
            step = grid[1] - grid[0]
            best = grid[k, cols]
            lo, hi = best - step, best + step
        return best

    lo = np.full(M, Q.min() - 2 / theta)
    hi = np.full(M, Q.max() + 2 / theta)
    pen = lambda q: (theta / 2) * np.sum(w[None] * (q[:, None, :] - Q[None]) ** 2, axis=1)
    q_star = argbest(lambda q: q - pen(q), lo, hi)
    q_bar = argbest(lambda q: -pen(q), lo, hi)
    value = q_star - pen(q_star[None])[0] + pen(q_bar[None])[0]
    return value.mean()


@pytest.mark.parametrize("theta", [0.5, 1.0, 10.0])
def test_convex_risk_matches_variational_oracle(theta):
    rng = np.random.default_rng(5)
    samples = [rng.normal(k, 1, 40 * (k + 1)) for k in range(3)]
    cfg = RiskMeasureConfig({"a": 0.5, "b": 0.3, "c": 0.2}, theta)
    rho = convex_risk(dict(zip("abc", samples)), cfg)
    assert rho == pytest.approx(variational_oracle(samples, [0.5, 0.3, 0.2], theta), abs=1e-6)
    inf = convex_risk(dict(zip("abc", samples)), RiskMeasureConfig(cfg.weights))
    assert abs((rho - inf) - 1 / (2 * theta)) <= 1e-9


def test_convex_risk_point_masses():
    cfg = RiskMeasureConfig({"a": 0.5, "b": 0.5}, 1.0)
    assert convex_risk({"a": [0.0], "b": [2.0]}, cfg) == 1.5
    assert variational_oracle([[0.0], [2.0]], [0.5, 0.5], 1.0) == pytest.approx(1.5, abs=1e-6)


def test_convex_risk_decreasing_in_theta():
    samples = {"a": [0.0, 1.0, 3.0], "b": [2.0, 2.5]}
    vals = [convex_risk(samples, RiskMeasureConfig({"a": 0.3, "b": 0.7}, th)) for th in (0.1, 1, 10, 100, math.inf)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(0.3 * 4 / 3 + 0.7 * 2.25, rel=1e-15)


def test_config_validation_and_presets():
    presets = load_weight_presets()
    assert set(presets) == {"Ignorance", "Optimistic", "Pessimistic"}
    opt = presets["Optimistic"]
    assert [opt[s] for s in SCENARIO_NAMES] == [0.5, 0.2, 0.15, 0.04, 0.1, 0.01]
    pes = presets["Pessimistic"]
    assert [pes[s] for s in SCENARIO_NAMES] == [0.01, 0.04, 0.1, 0.2, 0.15, 0.5]
    assert all(v == 1 / 6 for v in presets["Ignorance"].values())
    with pytest.raises(ValidationError):
        RiskMeasureConfig({"a": 0.5, "b": 0.6})
    with pytest.raises(ValidationError):
        RiskMeasureConfig({"a": 1.0}, theta=0.0)
    with pytest.raises(ValidationError):
        RiskMeasureConfig({"a": 1.0}, m=1)
    with pytest.raises(ValidationError):
        RiskMeasureConfig.preset("Gloomy")


# --------------------------------------------------------------------------
# across scenarios


@pytest.fixture(scope="module")
def per_scenario():
    return {s: triple(150 + 11 * i, 10 + i, shift=0.05 * i) for i, s in enumerate(SCENARIO_NAMES)}


@pytest.mark.parametrize("preset", ["Ignorance", "Optimistic", "Pessimistic"])
def test_across_mean_is_weighted_scenario_mean(per_scenario, preset):
    cfg = RiskMeasureConfig.preset(preset)
    r = across_scenario_risk(per_scenario, cfg, "NC", w_initial=1.0)
    within = {s: within_scenario_risk(*per_scenario[s], "NC", w_initial=1.0) for s in SCENARIO_NAMES}
    want = sum(cfg.weights[s] * within[s].mean for s in SCENARIO_NAMES)
    assert np.allclose(r.mean, want, rtol=1e-12, atol=0)
    assert np.allclose(r.samples.values.mean(axis=0), want, rtol=1e-12)
    q = np.stack([r.quantiles[c] for c in QUANTILE_COLUMNS])
    assert np.all(np.diff(q, axis=0) >= 0)


def test_degenerate_weights_equal_within(per_scenario):
    for target in SCENARIO_NAMES:
        cfg = RiskMeasureConfig({s: float(s == target) for s in SCENARIO_NAMES})
        a = across_scenario_risk(per_scenario, cfg, "LC", w_initial=1.0)
        b = within_scenario_risk(*per_scenario[target], "LC", w_initial=1.0)
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.gamma, b.gamma)
        for c in QUANTILE_COLUMNS:
            assert np.array_equal(a.quantiles[c], b.quantiles[c])


def test_permutation_invariance(per_scenario):
    cfg = RiskMeasureConfig.preset("Optimistic")
    base = across_scenario_risk(per_scenario, cfg, "NC", w_initial=1.0)
    perm = dict(zip(SCENARIO_NAMES, np.random.default_rng(1).permutation(SCENARIO_NAMES)))
    relabeled = {perm[s]: v for s, v in per_scenario.items()}
    cfg2 = RiskMeasureConfig({perm[s]: w for s, w in cfg.weights.items()})
    other = across_scenario_risk(relabeled, cfg2, "NC", w_initial=1.0)
    assert np.allclose(other.mean, base.mean, rtol=1e-13)
    for c in QUANTILE_COLUMNS:
        assert np.allclose(other.quantiles[c], base.quantiles[c], rtol=1e-13)


def test_finite_theta_reports_rho(per_scenario):
    cfg = RiskMeasureConfig.preset("Ignorance", theta=2.0)
    r = across_scenario_risk(per_scenario, cfg, "NC", w_initial=1.0)
    assert np.allclose(r.rho - r.mean, 0.25, rtol=0, atol=1e-12)
    assert "rho" in r.to_frame().columns


def test_missing_scenario_needs_consent(per_scenario):
    subset = {s: per_scenario[s] for s in SCENARIO_NAMES[:4]}
    with pytest.raises(ValidationError):
        across_scenario_risk(subset, RiskMeasureConfig.preset("Ignorance"))
    r = across_scenario_risk(subset, RiskMeasureConfig.preset("Ignorance"), renormalize=True)
    assert r.weights == {s: 0.25 for s in SCENARIO_NAMES[:4]}
    assert scenario_order(["SSP5-8.5", "x", "SSP1-1.9"]) == ["SSP1-1.9", "SSP5-8.5", "x"]

"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from conftest import demo_counts, make_params, synthetic_history
from foodrisk import lifetable
from foodrisk.calories import CaloricTable, min_caloric_requirement
from foodrisk.capacity import (TARGETS, FoodSystemState, calibrate_two_layer, closed_form_dom_water,
                               load_coefficients, project_fsc_trajectories, solve_dom_water)
from foodrisk.demography import AgeSexPyramid, generate_population_trajectories
from foodrisk.pipeline import RunConfig, run_pipeline
from foodrisk.risk import RiskMeasureConfig, convex_risk, gamma_value, wasserstein_barycenter_1d
from foodrisk.scenarios import DriverPaths, SspRcpScenario, classify_level, level_counts
from foodrisk.trajectories import TrajectorySet


@pytest.fixture
def verdict(record_property):
    def report(number, ok, detail):
        line = f"AC-{number} {'PASS' if ok else 'FAIL'}: {detail}"
        record_property("acceptance", line)
        print(line)
        assert ok, line

    return report


def test_ac01_demographic_accounting(verdict):
    start = time.perf_counter()
    pyr = AgeSexPyramid.from_counts("DEM", 2020, demo_counts(80_000.0))
    params = make_params(var_tfr=0.012, var_e0=0.3, gap_var=0.2)
    proj = generate_population_trajectories(pyr, params, np.array([-40.0, -30, -20, 0, 10, 25]), 6, 2000,
                                            seed=2024, start_tfr=3.1, start_e0_f=74.0)
    tot = proj.pyramids.values.sum(axis=(2, 3))
    resid = np.abs((tot[:, 1:] - tot[:, :-1]) - (proj.births - proj.deaths + proj.migration)) / tot[:, 1:]
    secs = time.perf_counter() - start
    worst = float(resid.max())
    verdict(1, tot.shape == (2000, 7) and worst <= 1e-9 and secs < 30,
            f"max relative accounting residual {worst:.2e} over 2000x6 steps in {secs:.1f}s")


def test_ac02_life_table_round_trip(verdict):
    start = time.perf_counter()
    worst = 0.0
    for target in (40.0, 50.0, 60.0, 70.0, 80.0, 85.0):
        for sex in ("F", "M"):
            lt = lifetable.life_table_from_e0(target, sex)
            surv = lambda x: np.exp(-lifetable.GAMMA0 * x - lt.alpha / lifetable.BETA * np.expm1(lifetable.BETA * x))
            with np.errstate(over="ignore"):
                quad, _ = integrate.quad(surv, 0, np.inf, limit=200, epsabs=1e-12, epsrel=1e-12)
            worst = max(worst, abs(lt.e0 - target), abs(quad - target))
    secs = time.perf_counter() - start
    verdict(2, worst < 1e-4 and secs < 5, f"max |implied e0 - target| {worst:.2e} years ({secs:.2f}s)")


def test_ac03_classification_partition(verdict):
    rng = np.random.default_rng(999)
    v = rng.permutation(rng.normal(size=999).cumsum())
    assert len(np.unique(v)) == 999
    counts = level_counts(classify_level(v))
    balanced = all(abs(c - 333) <= 1 for c in counts.values())
    levels = classify_level(v)
    invariant = all(np.array_equal(classify_level(f(v)), levels)
                    for f in (lambda x: np.exp(x / 50.0), lambda x: 3 * x + 7, lambda x: np.arctan(x / 100.0)))
    verdict(3, balanced and invariant,
            f"counts {counts['Low']}/{counts['Medium']}/{counts['High']}, rank invariance {invariant}")


def test_ac04_caloric_arithmetic(verdict):
    table = CaloricTable.from_csv()

    def one(sex, group, count=1.0):
        c = np.zeros((2, 21))
        c[0 if sex == "F" else 1, group] = count
        return AgeSexPyramid.from_counts("X", 2020, c)

    male = min_caloric_requirement(one("M", 4), table, "NotActive", "lower").kcal_per_day_point
    female = min_caloric_requirement(one("F", 8), table, "VeryActive", "upper").kcal_per_day_point
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        a, b = rng.uniform(0, 1e4, (2, 2, 21))
        lam = rng.uniform(0, 10)
        r = lambda c: min_caloric_requirement(AgeSexPyramid.from_counts("X", 2020, c), table).kcal_per_day_point
        lhs, rhs = r(a + lam * b), r(a) + lam * r(b)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    verdict(4, male == 2_400_000 and female == 2_200_000 and worst <= 1e-12,
            f"male 19-30 {male:,.0f}, female 31-50 {female:,.0f} kcal/day, linearity error {worst:.1e}")


def test_ac05_ridge_recovery(verdict):
    start = time.perf_counter()
    truth = load_coefficients("egypt")
    history = synthetic_history(truth, np.arange(1990, 2020), seed=11)
    fitted = calibrate_two_layer(history, lambdas=1e-10)
    worst_rel, worst_r2 = 0.0, 1.0
    for t in TARGETS:
        want = np.array(truth[t].exponents)
        got = np.array(fitted[t].exponents)
        live = want != 0
        worst_rel = max(worst_rel, float(np.max(np.abs(got[live] - want[live]) / np.abs(want[live]))))
        worst_rel = max(worst_rel, float(np.max(np.abs(got[~live]), initial=0.0)))
        worst_r2 = min(worst_r2, fitted[t].r2)
    secs = time.perf_counter() - start
    verdict(5, worst_rel <= 1e-3 and worst_r2 > 0.999999 and secs < 10,
            f"max exponent relative error {worst_rel:.1e}, min R2 {worst_r2:.9f} ({secs:.2f}s)")


def test_ac06_coupled_pair(verdict):
    rng = np.random.default_rng(6)
    worst, draws = 0.0, 0
    while draws < 100:
        a, b = rng.uniform(-1, 1, 2)
        if not abs(a * b) < 1:
            continue
        c_dom, c_w = rng.uniform(-15, 15, 2)
        x0, y0 = rng.uniform(-15, 15, 2)
        x, y, _ = solve_dom_water(np.array([c_dom]), a, np.array([c_w]), b, np.array([x0]), np.array([y0]))
        xc, yc = closed_form_dom_water(c_dom, a, c_w, b)
        worst = max(worst, abs(math.expm1(x[0] - xc)), abs(math.expm1(y[0] - yc)))
        draws += 1
    verdict(6, worst <= 1e-10, f"max relative gap to closed form {worst:.1e} over {draws} draws")


def test_ac07_bundled_coefficients_forward_run(verdict):
    years = np.arange(2019, 2051)
    rng = np.random.default_rng(7)
    ok, details = True, []
    for country in ("egypt", "ethiopia"):
        model = load_coefficients(country)
        n = 25
        pop = 1e5 * np.exp(0.015 * (years - 2019)[None] + rng.normal(0, 0.03, (n, len(years))))
        ts = TrajectorySet("population", np.arange(n), years, pop)
        k = len(years)
        drivers = DriverPaths(years, 4000 * 1.02 ** np.arange(k), 3e4 * 1.01 ** np.arange(k),
                              22.5 + 0.03 * np.arange(k), 20.0 * np.ones(k))
        sc = SspRcpScenario("SSP2-4.5", "SSP2", "RCP4.5", np.arange(n), drivers, "Medium")
        base = FoodSystemState(2018, np.array(3300.0), np.array(3.3e11), np.array(2.6e7), np.array(6e6),
                               np.array(2.4e7), np.array(1.17), np.array(3850.0), np.array(6000.0))
        proj = project_fsc_trajectories(model, sc, ts, base, 3900.0)
        vals = np.stack([proj[q].values for q in proj.sets])
        good = bool(np.all(np.isfinite(vals)) and np.all(vals > 0))
        ok &= good
        details.append(f"{country} {'ok' if good else 'bad'} (median 2050 W {np.median(proj['water_stress'].values[:, -1]):.3g})")
    verdict(7, ok, "2019-2050 forward run, all states positive and finite: " + ", ".join(details))


def test_ac08_gamma_rules(verdict):
    got = (gamma_value(1.22, "VC"), gamma_value(1.22, "LC"), gamma_value(1.22, "NC"), gamma_value(0.35, "NC"))
    verdict(8, got == (1.12, 1.02, 0.82, 0.0), f"W=1.22 -> VC {got[0]!r}, LC {got[1]!r}, NC {got[2]!r}; W=0.35 -> NC {got[3]!r}")


def _grid_oracle(samples, weights, theta, M=1000):
    u = (np.arange(M) + 0.5) / M
    Q = np.stack([np.sort(s)[np.floor(u * len(s)).astype(int)] for s in samples])
    w = np.asarray(weights)[:, None]
    pen = lambda q: (theta / 2) * np.sum(w[None] * (q[:, None, :] - Q[None]) ** 2, axis=1)

    def best(f):
        lo, hi = np.full(M, Q.min() - 2 / theta), np.full(M, Q.max() + 2 / theta)
        cols = np.arange(M)
        for _ in range(6):
            grid = np.linspace(lo, hi, 401)
            k = np.argmax(f(grid), axis=0)
            step = grid[1] - grid[0]
            arg = grid[k, cols]
            lo, hi = arg - step, arg + step
        return arg

    q_star, q_bar = best(lambda q: q - pen(q)), best(lambda q: -pen(q))
    return float(np.mean(q_star - pen(q_star[None])[0] + pen(q_bar[None])[0]))


def test_ac09_risk_algebra(verdict):
    rng = np.random.default_rng(9)
    names = list(RiskMeasureConfig.preset("Ignorance").weights)
    samples = {s: rng.lognormal(4.5, 0.1 + 0.02 * i, 500 + 50 * i) for i, s in enumerate(names)}
    worst_inf = 0.0
    for preset in ("Ignorance", "Optimistic", "Pessimistic"):
        cfg = RiskMeasureConfig.preset(preset)
        want = math.fsum(cfg.weights[s] * math.fsum(samples[s]) / len(samples[s]) for s in names)
        worst_inf = max(worst_inf, abs(convex_risk(samples, cfg) - want))
    worst_theta = 0.0
    base = convex_risk(samples, RiskMeasureConfig.preset("Optimistic"))
    for theta in (0.5, 1.0, 10.0):
        rho = convex_risk(samples, RiskMeasureConfig.preset("Optimistic", theta=theta))
        worst_theta = max(worst_theta, abs((rho - base) - 1 / (2 * theta)))
    cfg = RiskMeasureConfig({"a": 0.5, "b": 0.5}, 1.0)
    rho_pm = convex_risk({"a": [0.0], "b": [2.0]}, cfg)
    oracle = _grid_oracle([[0.0], [2.0]], [0.5, 0.5], 1.0)
    ok = worst_inf <= 1e-12 and worst_theta <= 1e-9 and abs(rho_pm - oracle) <= 1e-6 and rho_pm == 1.5
    verdict(9, ok, f"rho(inf) gap {worst_inf:.1e}, theta shift gap {worst_theta:.1e}, "
                   f"point masses rho {rho_pm} vs oracle {oracle:.9f}")


def test_ac10_barycenter_identities(verdict):
    rng = np.random.default_rng(10)
    x = rng.normal(size=1024)
    idem = np.array_equal(wasserstein_barycenter_1d([x, x, x], [0.2, 0.3, 0.5], m=1024), np.sort(x))
    point = np.all(wasserstein_barycenter_1d([[0.0], [2.0]], [0.5, 0.5]) == 1.0)
    samples = [rng.gamma(2 + k, 1 + k, 300 + 71 * k) for k in range(6)]
    w = [0.5, 0.2, 0.15, 0.04, 0.1, 0.01]
    bary = wasserstein_barycenter_1d(samples, w)
    gap = abs(math.fsum(bary) / len(bary) - math.fsum(wi * math.fsum(s) / len(s) for wi, s in zip(w, samples)))
    verdict(10, idem and point and gap <= 1e-12,
            f"idempotent {idem}, point masses -> 1 {bool(point)}, mean linearity gap {gap:.1e}")


def test_ac11_end_to_end_determinism(verdict, demo_dir, tmp_path):
    trees = []
    for run in ("first", "second"):
        cfg = RunConfig.load(demo_dir / "config.json", {"n_trajectories": 200, "horizon_year": 2040,
                                                        "store_pyramids": True,
                                                        "output_dir": str(tmp_path / run)})
        run_pipeline(cfg)
        root = cfg.out_dir
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    same = trees[0] == trees[1]
    verdict(11, same and len(trees[0]) > 20,
            f"{len(trees[0])} files in store and reports, byte-identical {same}")

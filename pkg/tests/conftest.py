import numpy as np
import pytest

from foodrisk.demography import REPRODUCTIVE_GROUPS, AgeSexPyramid, DoubleLogistic, VitalParams


def make_params(var_tfr=0.0, var_e0=0.0, gap_var=0.0, d_tfr=0.25, d_e0=1.4, gap=4.5, **kw):
    return VitalParams(
        theta_tfr=DoubleLogistic(d_tfr, 1.6, 5.8, 0.35, 0.6),
        theta_e0=DoubleLogistic(d_e0, 45.0, 88.0, 6.0, 4.0),
        var_tfr=var_tfr,
        var_e0=var_e0,
        gap_mean=gap,
        gap_var=gap_var,
        fertility_schedule=np.array([0.02, 0.05, 0.05, 0.04, 0.025, 0.01, 0.005]),
        **kw,
    )


@pytest.fixture
def params():
    return make_params(var_tfr=0.012, var_e0=0.3, gap_var=0.2)


@pytest.fixture
def quiet_params():
    return make_params()


def demo_counts(total=100_000.0):
    ages = np.arange(21) * 5 + 2.5
    shape = np.exp(-0.022 * ages) * np.exp(-np.exp((ages - 82.0) / 7.0))
    shape /= shape.sum()
    return np.stack([0.495 * shape, 0.505 * shape]) * total


@pytest.fixture
def pyramid():
    return AgeSexPyramid.from_counts("DEM", 2020, demo_counts())


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory):
    from foodrisk.demo import write_demo

    d = tmp_path_factory.mktemp("demo")
    write_demo(d, n=60, horizon=2030)
    return d


assert len(REPRODUCTIVE_GROUPS) == 7


def synthetic_history(model, years, seed=0):
    """History generated exactly by ``model`` with random exogenous drivers.

    Plain scalar arithmetic: the coupled (Dom, W) pair is solved in logs by
    Cramer's rule, independent of the package's projection code.
    """
    import math

    from foodrisk.capacity import HistoricalRecord

    rng = np.random.default_rng(seed)
    n = len(years)
    t = np.asarray(years, float) - model.time_origin
    pop = 50_000 * np.exp(0.02 * t + rng.normal(0, 0.05, n))
    gdp = 2500 * np.exp(0.03 * t + rng.normal(0, 0.08, n))
    lab_total = 15_000 * np.exp(0.015 * t + rng.normal(0, 0.05, n))
    temp = 22 + 0.03 * t + rng.normal(0, 0.4, n)
    prec = 600 * np.exp(rng.normal(0, 0.15, n))

    def ev(target, k, **x):
        eq = model[target]
        out = math.log(eq.a0) + eq.trend * t[k]
        for (name, lag), b in zip(eq.predictors, eq.exponents):
            key = f"{name}_lag1" if lag else name
            out += b * math.log(x[key])
        return out

    dom = np.empty(n); w = np.empty(n); land = np.empty(n); fsc = np.empty(n)
    exp_ = np.empty(n); imp = np.empty(n); lagr = np.empty(n)
    dom_prev = 4e7 * math.exp(rng.normal(0, 0.05))
    gdp_prev = gdp[0] * 0.97
    for k in range(n):
        g = gdp_prev if k == 0 else gdp[k - 1]
        d_prev = dom_prev if k == 0 else dom[k - 1]
        exp_[k] = math.exp(ev("Exp", k, population=pop[k], gdp_lag1=g))
        imp[k] = math.exp(ev("Imp", k, population=pop[k], gdp_lag1=g))
        lagr[k] = math.exp(ev("LAgr", k, population=pop[k], gdp_lag1=g, labour_total=lab_total[k]))
        land[k] = math.exp(ev("A", k, population=pop[k], gdp_lag1=g, domestic_lag1=d_prev))
        common = dict(population=pop[k], gdp_lag1=g, labour_agr=lagr[k], land=land[k],
                      temperature=temp[k], precipitation=prec[k])
        a = model["Dom"].exponent("water_stress")
        b = model["W"].exponent("domestic")
        c_d = ev("Dom", k, water_stress=1.0, **common)
        c_w = ev("W", k, domestic=1.0, **common)
        x = (c_d + a * c_w) / (1 - a * b)
        dom[k] = math.exp(x)
        w[k] = math.exp(c_w + b * x)
        fsc[k] = math.exp(ev("FSC", k, domestic=dom[k], exports=exp_[k], imports=imp[k]))
    return HistoricalRecord(
        years=np.asarray(years), land=land, gdp=gdp, labour_total=lab_total,
        labour_agr_share=100 * lagr / lab_total, population=pop, food_supply=fsc, domestic=dom,
        exports=exp_, imports=imp, precipitation=prec, temperature=temp, water_stress=w, country="Synth")


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, from the ``acceptance`` user property."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            for name, value in rep.user_properties:
                if name == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)

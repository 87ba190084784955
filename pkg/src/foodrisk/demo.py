"""Synthetic, self-consistent input files for smoke runs and examples.

The history is generated forward from a two-layer model (the bundled
Egypt coefficients, rescaled to plausible levels) with small multiplicative
noise, so calibration on it is well posed.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from .capacity import (FoodSystemState, HistoricalRecord, TwoLayerModel, load_coefficients,
                       project_lower_layer, project_upper_layer)
from .demography import AGE_GROUPS, REPRODUCTIVE_GROUPS
from .io import write_history_csv
from .scenarios import LEVELS, SCENARIOS

COUNTRY = "Demoland"
HISTORY_YEARS = (1990, 2019)
BASE_YEAR = 2020
DRIVER_YEARS = (2020, 2060)

GDP_GROWTH = {"SSP1": 0.025, "SSP2": 0.02, "SSP3": 0.01, "SSP4": 0.015, "SSP5": 0.035}
LABOUR_GROWTH = {"SSP1": 0.012, "SSP2": 0.015, "SSP3": 0.019, "SSP4": 0.014, "SSP5": 0.011}
WARMING = {"RCP1.9": 0.008, "RCP2.6": 0.012, "RCP4.5": 0.022, "RCP7.0": 0.032, "RCP6.0": 0.028, "RCP8.5": 0.042}
DRYING = {"RCP1.9": 0.0005, "RCP2.6": 0.001, "RCP4.5": 0.002, "RCP7.0": 0.003, "RCP6.0": 0.0025, "RCP8.5": 0.004}

VITAL = {
    "theta_tfr": {"d": 0.25, "l": 1.6, "u": 5.8, "w1": 0.35, "w2": 0.6},
    "theta_e0": {"d": 1.4, "l": 45.0, "u": 88.0, "w1": 6.0, "w2": 4.0},
    "var_tfr": 0.012,
    "var_e0": 0.3,
    "e0_gap": {"mean": 4.5, "var": 0.2},
    "fertility_schedule": dict(zip(REPRODUCTIVE_GROUPS, (0.02, 0.05, 0.05, 0.04, 0.025, 0.01, 0.005))),
    "srb": 1.05,
    "start_tfr": 3.1,
    "start_e0_f": 74.0,
}
MIGRATION = {"Low": -60.0, "Medium": -30.0, "High": 0.0}  # thousands per 5-year period


def _history_drivers(rng, years):
    t = years - years[0]
    n = len(years)
    return {
        "population": 57000.0 * 1.02 ** t * np.exp(rng.normal(0, 0.004, n)),
        "gdp": 2000.0 * 1.025 ** t * np.exp(rng.normal(0, 0.01, n)),
        "labour_total": 17000.0 * 1.022 ** t * np.exp(rng.normal(0, 0.006, n)),
        "temperature": 22.0 + 0.03 * t + rng.normal(0, 0.15, n),
        "precipitation": 50.0 * np.exp(rng.normal(0, 0.05, n)),
    }


def _run_history(model: TwoLayerModel, drv, years, gdp_before, warmup: int = 40):
    """Deterministic forward pass of both layers over the history years.

    The lagged state is first relaxed by repeating the first year's drivers,
    so the recorded history starts without a start-up transient.
    """
    prev = FoodSystemState(int(years[0]) - 1, np.array(3000.0), np.array(0.0), np.array(6.0e7),
                           np.array(5.0e6), np.array(1.5e7), np.array(1.0), np.array(3500.0),
                           np.array(5000.0))
    P0 = drv["population"][0]
    lower = project_lower_layer(model, P0, gdp_before, drv["labour_total"][0], years[0])
    for _ in range(warmup):
        prev = project_upper_layer(model, lower, P0, gdp_before, prev, drv["temperature"][0],
                                   drv["precipitation"][0], years[0])
    states = []
    gdp_prev = gdp_before
    for k, year in enumerate(years):
        P = drv["population"][k]
        lower = project_lower_layer(model, P, gdp_prev, drv["labour_total"][k], year)
        prev = project_upper_layer(model, lower, P, gdp_prev, prev, drv["temperature"][k],
                                   drv["precipitation"][k], year)
        states.append(prev)
        gdp_prev = drv["gdp"][k]
    return {f: np.array([float(getattr(s, f)) for s in states])
            for f in ("fsc_per_capita", "domestic", "exports", "imports", "water_stress", "land", "labour_agr")}


def _scale(model, target, factor):
    return TwoLayerModel({**model.equations, target: replace(model[target], a0=model[target].a0 * factor)},
                         model.time_origin, model.country)


def demo_truth_model(rng=None):
    """Egypt-shaped model rescaled to ~3,000 kcal/capita/day, W ~ 0.9, 25% agricultural labour."""
    rng = rng or np.random.default_rng(7)
    years = np.arange(HISTORY_YEARS[0], HISTORY_YEARS[1] + 1)
    drv = _history_drivers(rng, years)
    model = load_coefficients("egypt")
    model = TwoLayerModel(model.equations, model.time_origin, COUNTRY)
    out = _run_history(model, drv, years, 1950.0)
    model = _scale(model, "LAgr", 0.25 * drv["labour_total"][-1] / out["labour_agr"][-1])
    ab = model.coupling_product
    for _ in range(6):
        out = _run_history(model, drv, years, 1950.0)
        model = _scale(model, "W", np.exp((np.log(0.9) - np.log(out["water_stress"][-1])) * (1 - ab)))
    out = _run_history(model, drv, years, 1950.0)
    model = _scale(model, "FSC", 3000.0 / out["fsc_per_capita"][-1])
    return model, drv, years


def demo_history(seed: int = 7, noise: float = 0.01) -> HistoricalRecord:
    rng = np.random.default_rng(seed)
    model, drv, years = demo_truth_model(rng)
    out = _run_history(model, drv, years, 1950.0)
    jitter = lambda x: x * np.exp(rng.normal(0, noise, len(x)))
    lagr = jitter(out["labour_agr"])
    return HistoricalRecord(
        years=years, land=jitter(out["land"]), gdp=drv["gdp"], labour_total=drv["labour_total"],
        labour_agr_share=100.0 * lagr / drv["labour_total"], population=drv["population"],
        food_supply=jitter(out["fsc_per_capita"]), domestic=jitter(out["domestic"]),
        exports=jitter(out["exports"]), imports=jitter(out["imports"]),
        precipitation=drv["precipitation"], temperature=drv["temperature"],
        water_stress=jitter(out["water_stress"]), country=COUNTRY,
    )


def demo_pyramid_frame(total: float) -> pd.DataFrame:
    ages = np.arange(len(AGE_GROUPS)) * 5 + 2.5
    shape = np.exp(-0.022 * ages) * np.exp(-np.exp((ages - 82.0) / 7.0))
    shape /= shape.sum()
    rows = []
    for sex, share in (("F", 0.495), ("M", 0.505)):
        for g, v in zip(AGE_GROUPS, shape * share * total):
            rows.append((COUNTRY, BASE_YEAR, sex, g, v))
    return pd.DataFrame(rows, columns=["country", "year", "sex", "age_group", "population_thousands"])


def demo_drivers_frame(history: HistoricalRecord) -> pd.DataFrame:
    years = np.arange(DRIVER_YEARS[0], DRIVER_YEARS[1] + 1)
    k = years - history.years[-1]
    rows = []
    for spec in SCENARIOS:
        gdp = history.gdp[-1] * (1 + GDP_GROWTH[spec.ssp]) ** k
        lab = history.labour_total[-1] * (1 + LABOUR_GROWTH[spec.ssp]) ** k
        temp = history.temperature[-5:].mean() + WARMING[spec.rcp] * k
        prec = history.precipitation[-5:].mean() * (1 - DRYING[spec.rcp]) ** k
        for row in zip(years, gdp, lab, temp, prec):
            rows.append((COUNTRY, spec.name) + row)
    return pd.DataFrame(rows, columns=["country", "scenario", "year", "gdp_per_capita_usd2015",
                                       "labour_thousands", "temperature_c", "precipitation_mm"])


def demo_migration_frame() -> pd.DataFrame:
    rows = [(COUNTRY, level, year, MIGRATION[level])
            for level in LEVELS for year in range(BASE_YEAR, 2100, 5)]
    return pd.DataFrame(rows, columns=["country", "level", "period_start_year", "net_thousands"])


def demo_config(n: int = 200, seed: int = 20240101, horizon: int = 2050) -> dict:
    return {
        "country": COUNTRY,
        "country_group": "HiFert",
        "base_year": BASE_YEAR,
        "horizon_year": horizon,
        "n_trajectories": n,
        "master_seed": seed,
        "perspective": "NC",
        "theta": "inf",
        "weights": "Ignorance",
        "land_cap": None,
        "paths": {
            "pyramid": "pyramid.csv",
            "vital": "vital.json",
            "migration": "migration.csv",
            "drivers": "drivers.csv",
            "history": "history.csv",
        },
        "output_dir": "output",
    }


def write_demo(directory, n: int = 200, seed: int = 20240101, horizon: int = 2050) -> Path:
    """Write the demo inputs and a matching ``config.json``; returns the config path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    history = demo_history()
    write_history_csv(history, d / "history.csv")
    total = history.population[-1] * 1.02
    fmt = dict(index=False, float_format="%.17g", lineterminator="\n")
    demo_pyramid_frame(total).to_csv(d / "pyramid.csv", **fmt)
    demo_drivers_frame(history).to_csv(d / "drivers.csv", **fmt)
    demo_migration_frame().to_csv(d / "migration.csv", **fmt)
    (d / "vital.json").write_text(json.dumps(VITAL, indent=2) + "\n")
    config = demo_config(n, seed, horizon)
    config["land_cap"] = round(1.15 * float(history.land.max()), 3)
    cfg = d / "config.json"
    cfg.write_text(json.dumps(config, indent=2) + "\n")
    return cfg

"""Reading and validating the tabular and JSON inputs.

Every error names the file and, where it applies, the CSV line (header is
line 1).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .capacity import HISTORY_COLUMNS, HistoricalRecord
from .demography import AGE_GROUPS, AgeSexPyramid, MigrationSchedule, VitalParams
from .errors import ValidationError
from .scenarios import DRIVER_COLUMNS, LEVELS

log = logging.getLogger(__name__)

PYRAMID_COLUMNS = ("country", "year", "sex", "age_group", "population_thousands")
MIGRATION_COLUMNS = ("country", "level", "period_start_year", "net_thousands")
DRIVERS_COLUMNS = ("country", "scenario", "year") + DRIVER_COLUMNS
PERCENT_HEURISTIC = 5.0

# history columns that enter a logarithm somewhere in the model
LOGGED_HISTORY = tuple(c for c in HISTORY_COLUMNS if c != "year")


def _read_csv(path, required) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    try:
        df = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: cannot parse CSV ({exc})") from None
    df.columns = [str(c).strip() for c in df.columns]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing column(s) {missing}")
    return df


def _line(idx) -> int:
    return int(idx) + 2


def _numeric(df, col, path) -> np.ndarray:
    vals = pd.to_numeric(df[col], errors="coerce")
    bad = vals.isna()
    if bad.any():
        i = bad.idxmax()
        raise ValidationError(f"{path}:{_line(i)}: column {col} has non-numeric value {df[col][i]!r}")
    return vals.to_numpy(dtype=float)


def _filter_country(df, country, path):
    if country is None:
        names = df["country"].astype(str).unique()
        if len(names) > 1:
            raise ValidationError(f"{path}: several countries {sorted(names)}; choose one")
        return df
    sub = df[df["country"].astype(str) == str(country)]
    if sub.empty:
        raise ValidationError(f"{path}: no rows for country {country!r}")
    return sub


def _check_contiguous(years, path, label="year"):
    years = np.asarray(years, dtype=np.int64)
    order = np.sort(years)
    dup = order[1:][np.diff(order) == 0]
    if len(dup):
        raise ValidationError(f"{path}: duplicate {label} {int(dup[0])}")
    gaps = [y for a, b in zip(order[:-1], order[1:]) for y in range(int(a) + 1, int(b))]
    if gaps:
        raise ValidationError(f"{path}: {label} series has a gap; missing {gaps}")


# --------------------------------------------------------------------------


def read_pyramid_csv(path, country=None, year=None) -> AgeSexPyramid:
    df = _read_csv(path, PYRAMID_COLUMNS)
    df = _filter_country(df, country, path)
    years = _numeric(df, "year", path).astype(int)
    if year is None:
        if len(set(years)) > 1:
            raise ValidationError(f"{path}: several years {sorted(set(years))}; choose one")
        year = int(years[0])
    df = df[years == int(year)]
    if df.empty:
        raise ValidationError(f"{path}: no rows for year {year}")
    counts = np.full((2, len(AGE_GROUPS)), np.nan)
    values = _numeric(df, "population_thousands", path)
    for (idx, row), v in zip(df.iterrows(), values):
        sex = str(row["sex"]).strip().upper()
        group = str(row["age_group"]).strip()
        if sex not in ("F", "M"):
            raise ValidationError(f"{path}:{_line(idx)}: sex must be F or M, got {row['sex']!r}")
        if group not in AGE_GROUPS:
            raise ValidationError(f"{path}:{_line(idx)}: unknown age group {group!r}")
        s = 0 if sex == "F" else 1
        g = AGE_GROUPS.index(group)
        if not np.isnan(counts[s, g]):
            raise ValidationError(f"{path}:{_line(idx)}: duplicate row for {sex} {group}")
        if v < 0:
            raise ValidationError(f"{path}:{_line(idx)}: negative population {v}")
        counts[s, g] = v
    if np.isnan(counts).any():
        s, g = np.argwhere(np.isnan(counts))[0]
        raise ValidationError(f"{path}: no row for {'FM'[s]} {AGE_GROUPS[g]} in {year}")
    name = str(df["country"].iloc[0])
    return AgeSexPyramid.from_counts(name, year, counts)


def write_pyramid_csv(pyramid: AgeSexPyramid, path):
    rows = [(pyramid.country, pyramid.year, "FM"[s], g, pyramid.counts[s, k])
            for s in range(2) for k, g in enumerate(AGE_GROUPS)]
    pd.DataFrame(rows, columns=PYRAMID_COLUMNS).to_csv(path, index=False, float_format="%.17g")


def read_vital_params(path) -> VitalParams:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    try:
        return VitalParams.from_dict(raw)
    except KeyError as exc:
        raise ValidationError(f"{path}: missing key {exc}") from None
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def read_migration_csv(path, country=None) -> MigrationSchedule:
    df = _read_csv(path, MIGRATION_COLUMNS)
    df = _filter_country(df, country, path)
    levels = df["level"].astype(str).str.strip()
    bad = ~levels.isin(LEVELS)
    if bad.any():
        i = bad.idxmax()
        raise ValidationError(f"{path}:{_line(i)}: unknown migration level {df['level'][i]!r}")
    years = _numeric(df, "period_start_year", path).astype(np.int64)
    net = _numeric(df, "net_thousands", path)
    periods = np.unique(years)
    out = {}
    for level in LEVELS:
        mask = (levels == level).to_numpy()
        if not mask.any():
            raise ValidationError(f"{path}: no rows for migration level {level}")
        got = years[mask]
        if len(np.unique(got)) != len(got):
            raise ValidationError(f"{path}: duplicate periods for level {level}")
        missing = sorted(int(p) for p in set(periods) - set(got))
        if missing:
            raise ValidationError(f"{path}: level {level} has no entry for periods {missing}")
        order = np.argsort(got)
        out[level] = net[mask][order]
    steps = np.diff(periods)
    if len(steps) and np.any(steps != 5):
        raise ValidationError(f"{path}: period start years must be 5 years apart")
    return MigrationSchedule(periods, out)


def read_drivers_csv(path, country=None) -> pd.DataFrame:
    """Scenario driver table; all values positive, years contiguous per scenario."""
    df = _read_csv(path, DRIVERS_COLUMNS)
    df = _filter_country(df, country, path).copy()
    df["year"] = _numeric(df, "year", path).astype(np.int64)
    for col in DRIVER_COLUMNS:
        vals = _numeric(df, col, path)
        bad = ~(vals > 0)
        if bad.any():
            i = df.index[np.flatnonzero(bad)[0]]
            raise ValidationError(f"{path}:{_line(i)}: {col} must be positive (logged), got {vals[bad][0]}")
        df[col] = vals
    df["scenario"] = df["scenario"].astype(str).str.strip()
    for name, rows in df.groupby("scenario"):
        _check_contiguous(rows["year"], path, f"{name} year")
    return df


def read_history_csv(path, country=None) -> HistoricalRecord:
    """Annual history in the column layout of the model's training data.

    Water stress given in percent (any value above 5) is converted to a
    fraction with a warning.
    """
    required = HISTORY_COLUMNS
    df = _read_csv(path, required)
    if "country" in df.columns:
        df = _filter_country(df, country, path)
    df = df.copy()
    df["year"] = _numeric(df, "year", path).astype(np.int64)
    df = df.sort_values("year")
    _check_contiguous(df["year"], path)
    cols = {}
    for col in LOGGED_HISTORY:
        vals = _numeric(df, col, path)
        bad = ~(vals > 0)
        if bad.any():
            k = np.flatnonzero(bad)[0]
            raise ValidationError(
                f"{path}:{_line(df.index[k])}: {col} must be positive, got {vals[k]} "
                f"in year {int(df['year'].iloc[k])}")
        cols[col] = vals
    ws = cols["water_stress"]
    if np.max(ws) > PERCENT_HEURISTIC:
        log.warning("%s: water_stress values exceed %g; treating them as percent and dividing by 100",
                    path, PERCENT_HEURISTIC)
        cols["water_stress"] = ws / 100.0
    name = str(df["country"].iloc[0]) if "country" in df.columns else ""
    return HistoricalRecord(
        years=df["year"].to_numpy(),
        land=cols["agricultural_land_kha"],
        gdp=cols["gdp_per_capita_usd2015"],
        labour_total=cols["labour_total_thousands"],
        labour_agr_share=cols["labour_agr_share_pct"],
        population=cols["population_thousands"],
        food_supply=cols["food_supply_kcal_capita_day"],
        domestic=cols["production_tonnes"],
        exports=cols["export_tonnes"],
        imports=cols["import_tonnes"],
        precipitation=cols["precipitation_mm"],
        temperature=cols["temperature_c"],
        water_stress=cols["water_stress"],
        country=name,
    )


def write_history_csv(history: HistoricalRecord, path):
    df = pd.DataFrame({
        "country": history.country,
        "year": history.years,
        "agricultural_land_kha": history.land,
        "gdp_per_capita_usd2015": history.gdp,
        "labour_total_thousands": history.labour_total,
        "labour_agr_share_pct": history.labour_agr_share,
        "population_thousands": history.population,
        "food_supply_kcal_capita_day": history.food_supply,
        "production_tonnes": history.domestic,
        "export_tonnes": history.exports,
        "import_tonnes": history.imports,
        "precipitation_mm": history.precipitation,
        "temperature_c": history.temperature,
        "water_stress": history.water_stress,
    })
    df.to_csv(path, index=False, float_format="%.17g")

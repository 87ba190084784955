"""Quantile-based sub-scenarios, SSP composition and SSP-RCP assembly."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

from .errors import ValidationError
from .trajectories import TrajectorySet

log = logging.getLogger(__name__)

LEVELS = ("Low", "Medium", "High")
GROUPS = ("HiFert", "LoFert", "RichOECD")
SSPS = ("SSP1", "SSP2", "SSP3", "SSP4", "SSP5")

# Terciles: the terminal-year sample is split into three equal parts.
Q_LO = 1.0 / 3.0
Q_HI = 2.0 / 3.0


class SubScenarioLevel(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


class CountryGroup(str, Enum):
    HIFERT = "HiFert"
    LOFERT = "LoFert"
    RICHOECD = "RichOECD"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    ssp: str
    rcp: str
    interpretation: str


SCENARIOS = (
    ScenarioSpec("SSP1-1.9", "SSP1", "RCP1.9", "Most optimistic scenario"),
    ScenarioSpec("SSP1-2.6", "SSP1", "RCP2.6", "Second-best scenario"),
    ScenarioSpec("SSP2-4.5", "SSP2", "RCP4.5", "Middle of the road scenario"),
    ScenarioSpec("SSP3-7.0", "SSP3", "RCP7.0", "Baseline of worst-case scenarios"),
    ScenarioSpec("SSP4-6.0", "SSP4", "RCP6.0", "Best-case of the worst-case scenarios"),
    ScenarioSpec("SSP5-8.5", "SSP5", "RCP8.5", "Worst-case scenario"),
)
SCENARIO_NAMES = tuple(s.name for s in SCENARIOS)
DRIVER_COLUMNS = ("gdp_per_capita_usd2015", "labour_thousands", "temperature_c", "precipitation_mm")


# --------------------------------------------------------------------------
# quantiles and levels


def _check_sample(sample):
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("empty sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("sample contains non-finite values")
    return x


def empirical_quantile(sample, p):
    """Linear-interpolation empirical quantile (order statistic ``(n-1)p``)."""
    x = _check_sample(sample)
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ValidationError(f"probability outside [0, 1]: {p}")
    return np.quantile(x, p_arr, method="linear")


def _order_stat_cut(sorted_x, p):
    """The smallest sample value that is >= q(p).

    q(p) interpolates between neighbouring order statistics, so no sample
    value lies strictly between them and comparisons against q(p) reduce to
    comparisons against one order statistic. This keeps the rule purely
    rank-based.
    """
    n = len(sorted_x)
    h = (n - 1) * p
    j = int(math.floor(h))
    if j >= n - 1:
        return sorted_x[-1]
    frac = h - j
    if frac == 0.0 or sorted_x[j] == sorted_x[j + 1]:
        return sorted_x[j]
    return sorted_x[j + 1]


def classify_level(values, q_lo: float = Q_LO, q_hi: float = Q_HI) -> np.ndarray:
    """Low / Medium / High per trajectory from its value at the classification year.

    High iff ``v >= q(q_hi)``; Low iff ``v < q(q_lo)``; Medium otherwise.
    """
    x = _check_sample(values)
    if not 0.0 < q_lo < q_hi < 1.0:
        raise ValidationError(f"need 0 < q_lo < q_hi < 1, got {q_lo}, {q_hi}")
    s = np.sort(x)
    lo_cut = _order_stat_cut(s, q_lo)
    hi_cut = _order_stat_cut(s, q_hi)
    out = np.full(x.shape, "Medium", dtype="<U6")
    out[x < lo_cut] = "Low"
    out[x >= hi_cut] = "High"
    return out


def level_counts(levels) -> dict:
    levels = np.asarray(levels)
    return {lv: int(np.sum(levels == lv)) for lv in LEVELS}


# --------------------------------------------------------------------------
# SSP composition


def load_ssp_definitions(path=None) -> dict:
    """Table of (group -> ssp -> {tfr_level, e0_level, mig_level})."""
    if path is None:
        text = resources.files("foodrisk.data").joinpath("ssp_definitions.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = json.loads(text)
    for group, row in table.items():
        for ssp, cell in row.items():
            for key in ("tfr_level", "e0_level", "mig_level"):
                if cell.get(key) not in LEVELS:
                    raise ValidationError(f"scenario definition {group}/{ssp}: bad {key} {cell.get(key)!r}")
    return table


@dataclass(frozen=True)
class SspSelection:
    ssp: str
    group: str
    tfr_level: str
    e0_level: str
    migration_level: str
    ids: np.ndarray


def compose_ssp_scenario(ssp, group, tfr_levels, e0_levels, ids=None, definitions=None) -> SspSelection:
    """Trajectory ids whose (TFR, e0) levels match the SSP cell for ``group``."""
    ssp = getattr(ssp, "value", ssp)
    group = getattr(group, "value", group)
    table = definitions if definitions is not None else load_ssp_definitions()
    try:
        cell = table[group][ssp]
    except KeyError:
        raise ValidationError(f"no scenario definition for {group}/{ssp}") from None
    tfr_levels = np.asarray(tfr_levels)
    e0_levels = np.asarray(e0_levels)
    if tfr_levels.shape != e0_levels.shape:
        raise ValidationError("TFR and e0 level vectors differ in length")
    ids = np.arange(len(tfr_levels)) if ids is None else np.asarray(ids, dtype=np.int64)
    mask = (tfr_levels == cell["tfr_level"]) & (e0_levels == cell["e0_level"])
    if not mask.any():
        log.warning("%s/%s: no trajectory has TFR %s and e0 %s; scenario is empty",
                    group, ssp, cell["tfr_level"], cell["e0_level"])
    return SspSelection(ssp, group, cell["tfr_level"], cell["e0_level"], cell["mig_level"], ids[mask])


def conditional_means(trajectories: TrajectorySet, ids) -> np.ndarray:
    """Per-year arithmetic mean over the member trajectories."""
    sub = trajectories.select(ids)
    if sub.n == 0:
        raise ValidationError("conditional mean over an empty scenario")
    return sub.values.mean(axis=0)


# --------------------------------------------------------------------------
# macro production and land


@dataclass(frozen=True)
class MaGEInputs:
    A_tfp: float
    B_energy: float
    K_capital: float
    L_labour: float
    E_energy: float
    alpha: float = 0.31
    sigma: float = 0.136

    def __post_init__(self):
        for name in ("A_tfp", "B_energy", "K_capital", "L_labour", "E_energy"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(~np.isfinite(v)) or np.any(v <= 0):
                raise ValidationError(f"CES input {name} must be positive")
        if not 0 < self.alpha < 1 or not 0 < self.sigma < 1:
            raise ValidationError("CES needs 0 < alpha < 1 and 0 < sigma < 1")


def ces_output(inputs: MaGEInputs):
    """Three-factor CES output with a Cobb-Douglas capital-labour nest."""
    a, s = inputs.alpha, inputs.sigma
    r = (s - 1.0) / s
    kl = inputs.A_tfp * inputs.K_capital ** a * inputs.L_labour ** (1.0 - a)
    en = inputs.B_energy * inputs.E_energy
    return (kl ** r + en ** r) ** (1.0 / r)


def cap_land_projection(raw_path, cap):
    """Pointwise ``min(raw, cap)``; returns ``(capped, flags)``."""
    if not cap > 0:
        raise ValidationError("land cap must be positive")
    raw = np.asarray(raw_path, dtype=float)
    flags = raw > cap
    return np.where(flags, cap, raw), flags


# --------------------------------------------------------------------------
# SSP-RCP assembly


@dataclass(frozen=True)
class DriverPaths:
    years: np.ndarray
    gdp_per_capita: np.ndarray
    labour: np.ndarray
    temperature: np.ndarray
    precipitation: np.ndarray

    def at(self, years) -> "DriverPaths":
        idx = np.searchsorted(self.years, years)
        if np.any(idx >= len(self.years)) or np.any(self.years[np.minimum(idx, len(self.years) - 1)] != years):
            raise ValidationError("driver paths do not cover the requested years")
        return DriverPaths(np.asarray(years), self.gdp_per_capita[idx], self.labour[idx],
                           self.temperature[idx], self.precipitation[idx])


@dataclass(frozen=True)
class SspRcpScenario:
    name: str
    ssp: str
    rcp: str
    population_member_ids: np.ndarray
    drivers: DriverPaths
    migration_level: str
    meta: dict = field(default_factory=dict)


def assemble_ssp_rcp(selections: dict, drivers, years) -> list:
    """Join each SSP population selection with its scenario driver paths.

    ``selections`` maps SSP name -> :class:`SspSelection`; ``drivers`` is a
    table (DataFrame) with the drivers-CSV columns. Every scenario of the
    six-scenario list must cover ``years`` for every driver.
    """
    years = np.asarray(years, dtype=np.int64)
    gaps = []
    out = []
    for spec in SCENARIOS:
        if spec.ssp not in selections:
            gaps.append(f"{spec.name}: no population selection for {spec.ssp}")
            continue
        rows = drivers[drivers["scenario"] == spec.name]
        if rows.empty:
            gaps.append(f"{spec.name}: no driver data")
            continue
        rows = rows.sort_values("year")
        if rows["year"].duplicated().any():
            gaps.append(f"{spec.name}: duplicate driver years")
            continue
        rows = rows.set_index("year")
        cols = {}
        for col in DRIVER_COLUMNS:
            if col not in rows.columns:
                gaps.append(f"{spec.name}: missing driver column {col}")
                continue
            series = rows[col].reindex(years)
            missing = years[series.isna().to_numpy()]
            if len(missing):
                gaps.append(f"{spec.name}: {col} missing for years {_year_ranges(missing)}")
                continue
            cols[col] = series.to_numpy(dtype=float)
        if len(cols) < len(DRIVER_COLUMNS):
            continue
        sel = selections[spec.ssp]
        out.append(SspRcpScenario(
            name=spec.name, ssp=spec.ssp, rcp=spec.rcp,
            population_member_ids=np.asarray(sel.ids, dtype=np.int64),
            drivers=DriverPaths(years, cols["gdp_per_capita_usd2015"], cols["labour_thousands"],
                                cols["temperature_c"], cols["precipitation_mm"]),
            migration_level=sel.migration_level,
            meta={"tfr_level": sel.tfr_level, "e0_level": sel.e0_level, "group": sel.group},
        ))
    if gaps:
        raise ValidationError("incomplete scenario drivers:\n  " + "\n  ".join(gaps))
    return out


def _year_ranges(years) -> str:
    years = sorted(int(y) for y in years)
    parts = []
    start = prev = years[0]
    for y in years[1:]:
        if y != prev + 1:
            parts.append(f"{start}" if start == prev else f"{start}-{prev}")
            start = y
        prev = y
    parts.append(f"{start}" if start == prev else f"{start}-{prev}")
    return ", ".join(parts)

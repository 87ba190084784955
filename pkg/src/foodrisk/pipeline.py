"""End-to-end run: population -> scenarios -> requirements and capacity -> risk.

Each stage is a function so the CLI can run it on stored intermediates.
Failures are re-raised wrapped in :class:`StageError` carrying the stage tag.
"""

from __future__ import annotations

import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import capacity, io
from .calories import ACTIVITIES, BOUNDS, CaloricTable, requirement_trajectories
from .capacity import TwoLayerModel, base_state, calibrate_two_layer, load_coefficients, project_fsc_trajectories
from .charts import fan_chart_frame
from .demography import STEP, generate_population_trajectories, simulate_vital_paths
from .errors import FoodRiskError, ValidationError
from .risk import (GammaPerspective, RiskMeasureConfig, across_scenario_risk, load_weight_presets,
                   within_scenario_risk)
from .scenarios import (GROUPS, LEVELS, Q_HI, Q_LO, SCENARIOS, assemble_ssp_rcp, classify_level,
                        compose_ssp_scenario, load_ssp_definitions)
from .store import TrajectoryStore
from .trajectories import TrajectorySet

log = logging.getLogger("foodrisk")

ENSEMBLE = "ensemble"
STATE_QUANTITIES = ("fsc", "fsc_per_capita", "domestic", "exports", "imports", "water_stress", "land", "labour_agr")


class StageError(FoodRiskError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    log.info("[%s] start", name)
    try:
        yield
    except StageError:
        raise
    except FoodRiskError as exc:
        raise StageError(name, exc) from exc
    log.info("[%s] done", name)


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    country: str
    base_year: int
    paths: dict
    horizon_year: int = 2050
    n_trajectories: int = 1000
    master_seed: int = 0
    country_group: str = "HiFert"
    classification_year: int | None = None
    q_lo: float = Q_LO
    q_hi: float = Q_HI
    perspective: str = "NC"
    theta: float = math.inf
    weights: object = "Ignorance"
    grid_size: int = 1024
    land_cap: float | None = None
    activity: str = "SomewhatActive"
    bound: str = "midpoint"
    ridge_lambda: float | None = None
    allow_missing_scenarios: bool = False
    store_pyramids: bool = False
    fan_charts: bool = True
    output_dir: str = "output"
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        self.base_year = int(self.base_year)
        self.horizon_year = int(self.horizon_year)
        self.n_trajectories = int(self.n_trajectories)
        self.master_seed = int(self.master_seed)
        if isinstance(self.theta, str) or self.theta is None:
            self.theta = math.inf if self.theta in (None, "inf", "Infinity", "infinity") else float(self.theta)
        if not self.base_year < self.horizon_year:
            raise ValidationError("base_year must be before horizon_year")
        if self.n_trajectories < 1:
            raise ValidationError("n_trajectories must be at least 1")
        if not 0 < self.q_lo < self.q_hi < 1:
            raise ValidationError("classification quantiles must satisfy 0 < q_lo < q_hi < 1")
        if self.country_group not in GROUPS:
            raise ValidationError(f"country_group must be one of {GROUPS}")
        if self.perspective not in GammaPerspective.__members__:
            raise ValidationError(f"perspective must be one of {list(GammaPerspective.__members__)}")
        if self.activity not in ACTIVITIES or self.bound not in BOUNDS:
            raise ValidationError(f"activity must be in {ACTIVITIES} and bound in {BOUNDS}")
        if not self.theta > 0:
            raise ValidationError("theta must be positive or inf")
        if self.classification_year is not None:
            self.classification_year = int(self.classification_year)
        for key in ("pyramid", "vital", "migration", "drivers"):
            if key not in self.paths:
                raise ValidationError(f"config paths need {key!r}")
        if "history" not in self.paths and "coefficients" not in self.paths:
            raise ValidationError("config paths need 'history' (and optionally 'coefficients')")

    @property
    def periods(self) -> int:
        return -(-(self.horizon_year - self.base_year) // STEP)

    @property
    def period_years(self) -> np.ndarray:
        return self.base_year + STEP * np.arange(self.periods + 1)

    @property
    def annual_years(self) -> np.ndarray:
        return np.arange(self.base_year, self.horizon_year + 1)

    @property
    def classify_year(self) -> int:
        year = self.classification_year or int(self.period_years[-1])
        if year not in self.period_years:
            raise ValidationError(f"classification year {year} is not a projection period year "
                                  f"({self.period_years.tolist()})")
        return year

    def path(self, key: str):
        p = self.paths.get(key)
        if p is None:
            return None
        if key == "coefficients" and str(p).lower() in ("egypt", "ethiopia"):
            return p
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        p = Path(self.output_dir)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def risk_config(self) -> RiskMeasureConfig:
        if isinstance(self.weights, dict):
            return RiskMeasureConfig(self.weights, self.theta, self.grid_size)
        if self.weights in ("Ignorance", "Optimistic", "Pessimistic"):
            return RiskMeasureConfig.preset(self.weights, self.theta, self.grid_size)
        presets = load_weight_presets(self._resolve(self.weights))
        return RiskMeasureConfig(next(iter(presets.values())), self.theta, self.grid_size)

    def _resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        if math.isinf(d["theta"]):
            d["theta"] = "inf"
        return d

    def manifest_config(self) -> dict:
        """Config as recorded in the store manifest (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d, base_dir=str(base_dir))
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ValidationError(f"{path}: config not found") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(raw, path.parent)


# --------------------------------------------------------------------------
# stages


@dataclass
class Inputs:
    pyramid: object
    vital: object
    migration: object
    drivers: pd.DataFrame
    history: object | None
    definitions: dict
    caloric_table: CaloricTable


def ingest(cfg: RunConfig) -> Inputs:
    with stage("ingest"):
        pyramid = io.read_pyramid_csv(cfg.path("pyramid"), cfg.country, cfg.base_year)
        vital = io.read_vital_params(cfg.path("vital"))
        migration = io.read_migration_csv(cfg.path("migration"), cfg.country)
        drivers = io.read_drivers_csv(cfg.path("drivers"), cfg.country)
        history = io.read_history_csv(cfg.path("history"), cfg.country) if cfg.path("history") else None
        if history is not None and history.years[-1] != cfg.base_year - 1:
            raise ValidationError(f"history must end in {cfg.base_year - 1} (the year before base_year), "
                                  f"ends in {history.years[-1]}")
        defs = load_ssp_definitions(cfg.path("ssp_definitions"))
        table = CaloricTable.from_csv(cfg.path("caloric_table"))
        return Inputs(pyramid, vital, migration, drivers, history, defs, table)


def simulate_population(cfg: RunConfig, inputs: Inputs) -> dict:
    """One projection per migration level, sharing the same TFR/e0 paths."""
    with stage("simulate-pop"):
        vital = simulate_vital_paths(inputs.vital, cfg.periods, cfg.n_trajectories, cfg.master_seed,
                                     cfg.base_year)
        out = {}
        for level in LEVELS:
            out[level] = generate_population_trajectories(
                inputs.pyramid, inputs.vital, inputs.migration, cfg.periods, cfg.n_trajectories,
                cfg.master_seed, level=level, vital=vital)
            worst = float(out[level].accounting_residual().max())
            log.info("[simulate-pop] %s migration: accounting residual %.2e", level, worst)
        return out


def write_population(store: TrajectoryStore, projections: dict, pyramids: bool = True):
    first = next(iter(projections.values()))
    e0 = first.vital.e0
    store.write(ENSEMBLE, first.vital.tfr, "tfr")
    store.write(ENSEMBLE, e0.map("e0_f", lambda v: v[..., 0]))
    store.write(ENSEMBLE, e0.map("e0_m", lambda v: v[..., 1]))
    if pyramids:
        for level, proj in projections.items():
            store.write(ENSEMBLE, proj.pyramids, f"pyramid_{level}")


def classify(cfg: RunConfig, tfr: TrajectorySet, e0_f: TrajectorySet, definitions: dict):
    """Levels per trajectory and the SSP selections for the configured country group."""
    with stage("classify"):
        year = cfg.classify_year
        levels = pd.DataFrame({
            "trajectory_id": tfr.ids,
            "tfr_level": classify_level(tfr.at_year(year), cfg.q_lo, cfg.q_hi),
            "e0_level": classify_level(e0_f.select(tfr.ids).at_year(year), cfg.q_lo, cfg.q_hi),
        })
        return levels, compose_selections(cfg, levels, definitions)


def compose_selections(cfg: RunConfig, levels: pd.DataFrame, definitions: dict) -> dict:
    selections = {}
    for ssp in sorted({s.ssp for s in SCENARIOS}):
        selections[ssp] = compose_ssp_scenario(ssp, cfg.country_group, levels["tfr_level"].to_numpy(),
                                               levels["e0_level"].to_numpy(),
                                               levels["trajectory_id"].to_numpy(), definitions)
        log.info("[classify] %s: %d trajectories", ssp, len(selections[ssp].ids))
    return selections


def calibrate(cfg: RunConfig, inputs: Inputs) -> TwoLayerModel:
    with stage("calibrate"):
        coeffs = cfg.path("coefficients")
        if coeffs is not None:
            return load_coefficients(coeffs)
        return calibrate_two_layer(inputs.history, cfg.ridge_lambda)


@dataclass
class ScenarioResult:
    name: str
    population: TrajectorySet       # annual totals
    requirement: TrajectorySet      # annual national kcal/day (point estimate)
    food: capacity.FoodProjection


def project_scenarios(cfg: RunConfig, inputs: Inputs, model: TwoLayerModel, pyramids: dict,
                      selections: dict) -> dict:
    """Requirement and capacity paths for each of the six scenarios.

    ``pyramids`` maps migration level to a 5-year pyramid TrajectorySet.
    """
    with stage("assemble"):
        scenarios = assemble_ssp_rcp(selections, inputs.drivers, cfg.annual_years)
    if inputs.history is None:
        raise StageError("project", ValidationError("a history file is needed for the base state"))
    base = base_state(inputs.history)
    base_gdp = float(inputs.history.gdp[-1])
    results = {}
    with stage("project"):
        for sc in scenarios:
            if len(sc.population_member_ids) == 0:
                if cfg.allow_missing_scenarios:
                    log.warning("[project] %s has no member trajectories; skipped", sc.name)
                    continue
                raise ValidationError(f"scenario {sc.name} has no member trajectories "
                                      f"(increase n_trajectories or set allow_missing_scenarios)")
            pyr = pyramids[sc.migration_level].select(sc.population_member_ids)
            req = requirement_trajectories(pyr, inputs.caloric_table, cfg.activity, cfg.bound)
            req_point = req.map("calorie_requirement", lambda v: v[..., 1]).interpolate_years(cfg.annual_years)
            pop = pyr.map("population_total", lambda v: v.sum(axis=(2, 3))).interpolate_years(cfg.annual_years)
            food = project_fsc_trajectories(model, sc, pop, base, base_gdp, cfg.land_cap)
            results[sc.name] = ScenarioResult(sc.name, pop, req_point, food)
            log.info("[project] %s: %d trajectories", sc.name, pop.n)
    return results


def assess_risk(cfg: RunConfig, results: dict, w_initial: float):
    with stage("risk"):
        within = {}
        for name, r in results.items():
            within[name] = within_scenario_risk(r.requirement, r.food["fsc"], r.food["water_stress"],
                                                cfg.perspective, w_initial)
        per = {name: (r.requirement, r.food["fsc"], r.food["water_stress"]) for name, r in results.items()}
        across = across_scenario_risk(per, cfg.risk_config(), cfg.perspective, w_initial,
                                      renormalize=cfg.allow_missing_scenarios)
        return within, across


# --------------------------------------------------------------------------


@dataclass
class PipelineResult:
    store: TrajectoryStore
    reports: dict
    within: dict
    across: object
    model: TwoLayerModel


def _write_csv(frame: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """Execute every stage and write the store and report files.

    Output layout under ``output_dir``: ``store/`` (trajectory database and
    manifest) and ``reports/`` (classification, coefficients, within- and
    across-scenario risk tables, fan-chart tables).
    """
    out = cfg.out_dir
    inputs = ingest(cfg)
    store = TrajectoryStore(out / "store", seed=cfg.master_seed, config=cfg.manifest_config())
    projections = simulate_population(cfg, inputs)
    with stage("store"):
        write_population(store, projections, cfg.store_pyramids)
    first = next(iter(projections.values()))
    e0_f = first.vital.e0.map("e0_f", lambda v: v[..., 0])
    levels, selections = classify(cfg, first.vital.tfr, e0_f, inputs.definitions)
    model = calibrate(cfg, inputs)
    pyramids = {lvl: p.pyramids for lvl, p in projections.items()}
    results = project_scenarios(cfg, inputs, model, pyramids, selections)
    w0 = float(inputs.history.water_stress[-1])
    within, across = assess_risk(cfg, results, w0)

    reports = {}
    with stage("report"):
        rep = out / "reports"
        reports["levels"] = _write_csv(levels, rep / "classification.csv")
        rep.mkdir(parents=True, exist_ok=True)
        model.save(rep / "coefficients.json")
        reports["coefficients"] = rep / "coefficients.json"
        for name, r in results.items():
            store.write(name, r.population)
            store.write(name, r.requirement)
            for q in STATE_QUANTITIES:
                store.write(name, r.food[q])
            store.write(name, within[name].samples)
            reports[f"risk_{name}"] = _write_csv(within[name].to_frame(), rep / f"risk_within_{name}.csv")
            if cfg.fan_charts:
                for q, ts in (("fsri", within[name].samples), ("water_stress", r.food["water_stress"]),
                              ("population_total", r.population)):
                    _write_csv(fan_chart_frame(ts), rep / "fan" / f"{name}_{q}.csv")
        reports["risk_across"] = _write_csv(across.to_frame(), rep / "risk_across.csv")
        store.flush()
    return PipelineResult(store, reports, within, across, model)

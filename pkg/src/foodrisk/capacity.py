"""Two-layer Cobb-Douglas model of national food-system capacity.

Every equation has the form ``y = a0 * exp(a1 * t) * prod(x_k ** b_k)`` and is
fitted on logs. ``t`` counts years from the model's ``time_origin``. GDP per
capita always enters with a one-year lag.

Upper layer: FSC (per-capita food supply), Dom (domestic production), W
(water stress), A (agricultural land). Lower layer: Exp, Imp (trade
quantities) and LAgr (agricultural labour).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import ConvergenceError, InstabilityError, ValidationError
from .scenarios import SspRcpScenario, cap_land_projection
from .trajectories import TrajectorySet

log = logging.getLogger(__name__)

TARGETS = ("FSC", "Dom", "W", "A", "Exp", "Imp", "LAgr")
UPPER = ("FSC", "Dom", "W", "A")
LOWER = ("Exp", "Imp", "LAgr")

# (predictor, lag) per target, in coefficient order
EQUATION_FORMS = {
    "FSC": (("domestic", 0), ("exports", 0), ("imports", 0)),
    "Dom": (("population", 0), ("gdp", 1), ("labour_agr", 0), ("water_stress", 0), ("land", 0), ("temperature", 0)),
    "W": (("population", 0), ("gdp", 1), ("domestic", 0), ("land", 0), ("temperature", 0), ("precipitation", 0)),
    "A": (("population", 0), ("gdp", 1), ("domestic", 1)),
    "Exp": (("population", 0), ("gdp", 1)),
    "Imp": (("population", 0), ("gdp", 1)),
    "LAgr": (("population", 0), ("gdp", 1), ("labour_total", 0)),
}
# historical series that each target is fitted to
TARGET_SERIES = {
    "FSC": "food_supply", "Dom": "domestic", "W": "water_stress", "A": "land",
    "Exp": "exports", "Imp": "imports", "LAgr": "labour_agr",
}
DEFAULT_TIME_ORIGIN = 1990
LAMBDA_GRID = tuple(np.logspace(-6, 2, 17))

GS_TOL = 1e-8
GS_MAX_ITER = 100
ROUNDING = 4 * np.finfo(float).eps


def predictor_key(name: str, lag: int) -> str:
    return f"{name}_lag{lag}" if lag else name


def _parse_key(key: str):
    if key.endswith("_lag1"):
        return key[:-5], 1
    return key, 0


# --------------------------------------------------------------------------
# equations and model


@dataclass(frozen=True)
class EquationSpec:
    target: str
    predictors: tuple
    a0: float
    trend: float
    exponents: tuple
    r2: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.target not in EQUATION_FORMS:
            raise ValidationError(f"unknown target {self.target!r}")
        if tuple(self.predictors) != EQUATION_FORMS[self.target]:
            raise ValidationError(f"{self.target}: predictors {self.predictors} do not match the model form")
        if len(self.exponents) != len(self.predictors):
            raise ValidationError(f"{self.target}: {len(self.exponents)} exponents for {len(self.predictors)} predictors")
        if not self.a0 > 0:
            raise ValidationError(f"{self.target}: technology level must be positive")
        object.__setattr__(self, "exponents", tuple(float(e) for e in self.exponents))

    def exponent(self, name: str, lag: int = 0) -> float:
        return self.exponents[self.predictors.index((name, lag))]

    def log_base(self, t, inputs: dict, skip=()):
        """``log a0 + a1 t + sum b_k log x_k`` over predictors not in ``skip``."""
        out = np.log(self.a0) + self.trend * np.asarray(t, dtype=float)
        for (name, lag), b in zip(self.predictors, self.exponents):
            key = predictor_key(name, lag)
            if key in skip or b == 0.0:
                continue
            x = np.asarray(inputs[key], dtype=float)
            if np.any(x <= 0):
                raise ValidationError(f"{self.target}: non-positive driver {key}")
            out = out + b * np.log(x)
        return out

    def evaluate(self, t, inputs: dict):
        return np.exp(self.log_base(t, inputs))

    def to_dict(self) -> dict:
        return {
            "a0": self.a0,
            "trend": self.trend,
            "exponents": {predictor_key(n, l): b for (n, l), b in zip(self.predictors, self.exponents)},
            "r2": self.r2,
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, target: str, d: dict) -> "EquationSpec":
        form = EQUATION_FORMS.get(target)
        if form is None:
            raise ValidationError(f"unknown target {target!r}")
        given = dict(d.get("exponents", {}))
        unknown = set(given) - {predictor_key(n, l) for n, l in form}
        if unknown:
            raise ValidationError(f"{target}: predictors {sorted(unknown)} not in the model form")
        # blank cells are structurally excluded predictors, i.e. exponent 0
        exps = tuple(float(given.get(predictor_key(n, l), 0.0)) for n, l in form)
        return cls(target, form, float(d["a0"]), float(d.get("trend", 0.0)), exps,
                   d.get("r2"), d.get("lambda"))


@dataclass(frozen=True)
class TwoLayerModel:
    equations: dict
    time_origin: int = DEFAULT_TIME_ORIGIN
    country: str = ""
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        missing = [t for t in TARGETS if t not in self.equations]
        extra = [t for t in self.equations if t not in TARGETS]
        if missing or extra:
            raise ValidationError(f"two-layer model needs exactly {TARGETS} (missing {missing}, extra {extra})")

    def __getitem__(self, target) -> EquationSpec:
        return self.equations[target]

    def t(self, year):
        return np.asarray(year, dtype=float) - self.time_origin

    @property
    def coupling_product(self) -> float:
        """Product of the water exponent in Dom and the Dom exponent in W."""
        return self["Dom"].exponent("water_stress") * self["W"].exponent("domestic")

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "time_origin": self.time_origin,
            "equations": {t: self.equations[t].to_dict() for t in TARGETS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwoLayerModel":
        eqs = {t: EquationSpec.from_dict(t, e) for t, e in d["equations"].items()}
        return cls(eqs, int(d.get("time_origin", DEFAULT_TIME_ORIGIN)), d.get("country", ""))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def load_coefficients(source) -> TwoLayerModel:
    """Load a coefficient file; ``"egypt"`` / ``"ethiopia"`` select the bundled sets."""
    bundled = {"egypt": "coefficients_egypt.json", "ethiopia": "coefficients_ethiopia.json"}
    key = str(source).lower()
    if key in bundled:
        text = resources.files("foodrisk.data").joinpath(bundled[key]).read_text()
    else:
        with open(source) as fh:
            text = fh.read()
    try:
        return TwoLayerModel.from_dict(json.loads(text))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"bad coefficient file {source}: {exc}") from None


# --------------------------------------------------------------------------
# history


HISTORY_COLUMNS = (
    "year", "agricultural_land_kha", "gdp_per_capita_usd2015", "labour_total_thousands",
    "labour_agr_share_pct", "population_thousands", "food_supply_kcal_capita_day",
    "production_tonnes", "export_tonnes", "import_tonnes", "precipitation_mm",
    "temperature_c", "water_stress",
)


@dataclass(frozen=True)
class HistoricalRecord:
    years: np.ndarray
    land: np.ndarray
    gdp: np.ndarray
    labour_total: np.ndarray
    labour_agr_share: np.ndarray   # percent of total labour
    population: np.ndarray
    food_supply: np.ndarray
    domestic: np.ndarray
    exports: np.ndarray
    imports: np.ndarray
    precipitation: np.ndarray
    temperature: np.ndarray
    water_stress: np.ndarray       # fraction
    country: str = ""

    def __post_init__(self):
        years = np.asarray(self.years, dtype=np.int64)
        if len(years) < 4:
            raise ValidationError("history needs at least four years")
        if np.any(np.diff(years) != 1):
            gaps = [int(y) + 1 for y, d in zip(years[:-1], np.diff(years)) if d != 1]
            raise ValidationError(f"history years are not contiguous (gap after {gaps})")
        object.__setattr__(self, "years", years)
        for name in self.series_names():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != years.shape:
                raise ValidationError(f"history series {name} has {arr.shape[0]} values for {len(years)} years")
            object.__setattr__(self, name, arr)

    @staticmethod
    def series_names():
        return ("land", "gdp", "labour_total", "labour_agr_share", "population", "food_supply",
                "domestic", "exports", "imports", "precipitation", "temperature", "water_stress")

    @property
    def labour_agr(self) -> np.ndarray:
        return self.labour_total * self.labour_agr_share / 100.0

    def series(self, name: str) -> np.ndarray:
        return self.labour_agr if name == "labour_agr" else getattr(self, name)


def _equation_design(history: HistoricalRecord, target: str):
    """Rows for years[1:] so every lag-1 predictor is available."""
    form = EQUATION_FORMS[target]
    cols, names = [], []
    for name, lag in form:
        s = history.series(name)
        cols.append(s[:-1] if lag else s[1:])
        names.append(predictor_key(name, lag))
    y = history.series(TARGET_SERIES[target])[1:]
    return np.column_stack(cols), y, names


# --------------------------------------------------------------------------
# ridge regression in logs


@dataclass(frozen=True)
class RidgeFit:
    a0: float
    trend: float
    exponents: np.ndarray
    r2: float
    lam: float
    fitted_log: np.ndarray
    residuals: np.ndarray


def _log_positive(values, label, years=None):
    v = np.asarray(values, dtype=float)
    bad = ~(v > 0) | ~np.isfinite(v)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        where = f"year {int(years[k])}" if years is not None else f"row {k}"
        raise ValidationError(f"series {label} has non-positive value {v[k]!r} at {where}; cannot take logs")
    return np.log(v)


def _ridge_core(Z, ly, t, lam):
    """Ridge on standardised log predictors with unpenalised intercept and trend."""
    base = np.column_stack([np.ones_like(t), t])
    # residualise on [1, t] so the penalty only touches the exponents
    proj, *_ = np.linalg.lstsq(base, np.column_stack([Z, ly]), rcond=None)
    resid = np.column_stack([Z, ly]) - base @ proj
    Zr, yr = resid[:, :-1], resid[:, -1]
    k = Z.shape[1]
    if k:
        b = np.linalg.solve(Zr.T @ Zr + lam * np.eye(k), Zr.T @ yr)
    else:
        b = np.zeros(0)
    c, *_ = np.linalg.lstsq(base, ly - Z @ b, rcond=None)
    return c, b


def fit_log_ridge(design, response, t, lam: float = 1e-8, names=None, years=None,
                  response_name="response") -> RidgeFit:
    """Fit ``log y = log a0 + a1 t + sum b_k log x_k`` with a ridge penalty.

    Predictors are z-scored in log space before penalisation and the
    coefficients are mapped back to raw exponents. ``r2`` is the explained
    share of the log-space sum of squares.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(response, dtype=float)
    t = np.asarray(t, dtype=float)
    if X.shape[0] != len(y) or len(t) != len(y):
        raise ValidationError("design, response and time have different lengths")
    if len(y) < 3:
        raise ValidationError("need at least three observations")
    if not lam >= 0:
        raise ValidationError("ridge penalty must be non-negative")
    names = names or [f"x{k}" for k in range(X.shape[1])]
    logX = np.column_stack([_log_positive(X[:, k], names[k], years) for k in range(X.shape[1])]) \
        if X.shape[1] else np.zeros((len(y), 0))
    ly = _log_positive(y, response_name, years)

    mu = logX.mean(axis=0)
    sd = logX.std(axis=0)
    live = sd > 0
    Z = np.zeros_like(logX)
    Z[:, live] = (logX[:, live] - mu[live]) / sd[live]
    c, b_std = _ridge_core(Z[:, live], ly, t, lam)

    exps = np.zeros(X.shape[1])
    exps[live] = b_std / sd[live]
    log_a0 = c[0] - np.sum(exps * mu)
    fitted = log_a0 + c[1] * t + logX @ exps
    resid = ly - fitted
    sst = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / sst if sst > 0 else 1.0
    return RidgeFit(float(np.exp(log_a0)), float(c[1]), exps, float(r2), float(lam), fitted, resid)


def select_lambda(design, response, t, grid=LAMBDA_GRID) -> float:
    """Leave-one-out choice of the ridge penalty (log-space squared error)."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    t = np.asarray(t, dtype=float)
    n = len(y)
    best, best_err = None, np.inf
    for lam in grid:
        err = 0.0
        for i in range(n):
            keep = np.arange(n) != i
            fit = fit_log_ridge(X[keep], y[keep], t[keep], lam)
            pred = np.log(fit.a0) + fit.trend * t[i] + np.log(X[i]) @ fit.exponents
            err += (np.log(y[i]) - pred) ** 2
        if err < best_err:
            best, best_err = float(lam), err
    return best


def calibrate_two_layer(history: HistoricalRecord, lambdas=None,
                        time_origin: int = DEFAULT_TIME_ORIGIN) -> TwoLayerModel:
    """Fit the seven equations independently.

    ``lambdas`` is a float (same penalty everywhere), a per-target dict, or
    ``None`` for leave-one-out selection per equation.
    """
    eqs, diag = {}, {}
    t = (history.years[1:] - time_origin).astype(float)
    for target in TARGETS:
        X, y, names = _equation_design(history, target)
        if isinstance(lambdas, dict):
            lam = lambdas.get(target)
        else:
            lam = lambdas
        if lam is None:
            lam = select_lambda(X, y, t)
        fit = fit_log_ridge(X, y, t, lam, names=names, years=history.years[1:],
                            response_name=TARGET_SERIES[target])
        eqs[target] = EquationSpec(target, EQUATION_FORMS[target], fit.a0, fit.trend,
                                   tuple(fit.exponents), fit.r2, fit.lam)
        diag[target] = fit
        log.info("calibrated %s: R2=%.4f lambda=%.3g", target, fit.r2, fit.lam)
    return TwoLayerModel(eqs, time_origin, history.country, diag)


# --------------------------------------------------------------------------
# projection


@dataclass
class FoodSystemState:
    year: int
    fsc_per_capita: np.ndarray   # kcal / capita / day
    fsc: np.ndarray              # national kcal / day
    domestic: np.ndarray
    exports: np.ndarray
    imports: np.ndarray
    water_stress: np.ndarray
    land: np.ndarray
    labour_agr: np.ndarray
    land_capped: np.ndarray | None = None
    iterations: int = 0


STATE_FIELDS = ("fsc", "fsc_per_capita", "domestic", "exports", "imports", "water_stress", "land", "labour_agr")


def project_lower_layer(model: TwoLayerModel, population, gdp_prev, labour, year):
    """Exports, imports and agricultural labour for one year."""
    t = model.t(year)
    inputs = {"population": population, "gdp_lag1": gdp_prev, "labour_total": labour}
    for k, v in inputs.items():
        if np.any(np.asarray(v, dtype=float) <= 0):
            raise ValidationError(f"lower layer: non-positive driver {k}")
    return (model["Exp"].evaluate(t, inputs), model["Imp"].evaluate(t, inputs),
            model["LAgr"].evaluate(t, inputs))


def solve_dom_water(c_dom, a, c_w, b, x0, y0, tol=GS_TOL, max_iter=GS_MAX_ITER):
    """Gauss-Seidel on the log-linear pair ``x = c_dom + a y``, ``y = c_w + b x``.

    ``x``/``y`` are log Dom / log W. Each sweep contracts the error by
    ``|a b|``, which is slow when the product nears 1, so until convergence
    every third sweep is followed by an Aitken delta-squared extrapolation of
    ``x``. Converged once the relative change of both levels drops below
    ``tol``; sweeps then continue until the change is at rounding level (or
    ``max_iter``) so the result sits at the fixed point.
    Returns ``(x, y, iterations)``.
    """
    if abs(a * b) >= 1.0:
        raise InstabilityError(
            f"Dom/W coupling product {a * b:.4g} has magnitude >= 1; the coupled pair has no stable fixed point")
    x = np.array(x0, dtype=float, copy=True)
    y = np.array(y0, dtype=float, copy=True)
    trace = []
    history = [x]
    converged_at = None
    for it in range(1, max_iter + 1):
        x_new = c_dom + a * y
        y_new = c_w + b * x_new
        with np.errstate(over="ignore"):
            change = float(np.max(np.maximum(np.abs(np.expm1(x_new - x)), np.abs(np.expm1(y_new - y)))))
        trace.append(change)
        # a few ulps of the operands of each update
        settled = (np.all(np.abs(x_new - x) <= ROUNDING * (1.0 + np.abs(c_dom) + np.abs(a * y)))
                   and np.all(np.abs(y_new - y) <= ROUNDING * (1.0 + np.abs(c_w) + np.abs(b * x_new))))
        x, y = x_new, y_new
        if converged_at is None and change < tol:
            converged_at = it
        if converged_at is not None:
            if settled:
                break
            continue
        history.append(x)
        if len(history) == 3:
            x = _aitken(*history)
            y = c_w + b * x
            history = [x]
    if converged_at is None:
        raise ConvergenceError(
            f"Dom/W fixed point not converged after {max_iter} iterations (last change {trace[-1]:.3g})", trace)
    return x, y, it


def _aitken(x0, x1, x2):
    """Delta-squared extrapolation; falls back to ``x2`` where it is undefined."""
    d1, d2 = x1 - x0, x2 - x1
    den = d2 - d1
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = x2 - d2 * d2 / den
    return np.where(np.isfinite(acc) & (den != 0), acc, x2)


def closed_form_dom_water(c_dom, a, c_w, b):
    """Exact fixed point of the log-linear pair."""
    x = (c_dom + a * c_w) / (1.0 - a * b)
    return x, c_w + b * x


def project_upper_layer(model: TwoLayerModel, lower, population, gdp_prev, prev: FoodSystemState,
                        temperature, precipitation, year, land_cap=None) -> FoodSystemState:
    """Land first (lagged inputs only), then the coupled (Dom, W) pair, then FSC."""
    exports, imports, labour_agr = lower
    t = model.t(year)
    land = model["A"].evaluate(t, {"population": population, "gdp_lag1": gdp_prev, "domestic_lag1": prev.domestic})
    capped = None
    if land_cap is not None:
        land, capped = cap_land_projection(land, land_cap)

    inputs = {
        "population": population, "gdp_lag1": gdp_prev, "labour_agr": labour_agr, "land": land,
        "temperature": temperature, "precipitation": precipitation,
    }
    dom_eq, w_eq = model["Dom"], model["W"]
    a = dom_eq.exponent("water_stress")
    b = w_eq.exponent("domestic")
    c_dom = dom_eq.log_base(t, inputs, skip=("water_stress",))
    c_w = w_eq.log_base(t, inputs, skip=("domestic",))
    shape = np.broadcast(c_dom, c_w).shape
    x0 = np.broadcast_to(np.log(prev.domestic), shape)
    y0 = np.broadcast_to(np.log(prev.water_stress), shape)
    x, y, iters = solve_dom_water(np.broadcast_to(c_dom, shape), a, np.broadcast_to(c_w, shape), b, x0, y0)
    domestic, water = np.exp(x), np.exp(y)

    fsc_pc = model["FSC"].evaluate(t, {"domestic": domestic, "exports": exports, "imports": imports})
    national = fsc_pc * np.asarray(population, dtype=float) * 1000.0
    return FoodSystemState(int(year), fsc_pc, national, domestic, exports, imports, water, land,
                           labour_agr, capped, iters)


def base_state(history: HistoricalRecord) -> FoodSystemState:
    """State in the last historical year (starting point of a projection)."""
    k = -1
    pc = history.food_supply[k]
    return FoodSystemState(
        int(history.years[k]), np.array(pc), np.array(pc * history.population[k] * 1000.0),
        np.array(history.domestic[k]), np.array(history.exports[k]), np.array(history.imports[k]),
        np.array(history.water_stress[k]), np.array(history.land[k]), np.array(history.labour_agr[k]),
    )


@dataclass
class FoodProjection:
    scenario: str
    sets: dict                   # quantity -> TrajectorySet (n, years)
    base: FoodSystemState
    base_gdp: float
    land_capped: np.ndarray      # (n, years) bool

    def __getitem__(self, quantity) -> TrajectorySet:
        return self.sets[quantity]


def project_fsc_trajectories(model: TwoLayerModel, scenario: SspRcpScenario, population: TrajectorySet,
                             base: FoodSystemState, base_gdp: float, land_cap=None) -> FoodProjection:
    """Run both layers year by year for every population trajectory.

    ``population`` holds annual totals (thousands) with shape ``(n, years)``;
    it is restricted to the scenario's member ids. Scenario drivers are
    shared by all trajectories.
    """
    if abs(model.coupling_product) >= 1.0:
        raise InstabilityError(f"model coupling product {model.coupling_product:.4g} has magnitude >= 1")
    ids = scenario.population_member_ids
    pop = population if np.array_equal(population.ids, np.sort(ids)) else population.select(ids)
    years = pop.years
    if years[0] != base.year + 1:
        raise ValidationError(f"projection must start the year after the base state ({base.year + 1}), got {years[0]}")
    drv = scenario.drivers.at(years)
    n = pop.n
    out = {q: np.empty((n, len(years))) for q in STATE_FIELDS}
    capped = np.zeros((n, len(years)), dtype=bool)
    prev = FoodSystemState(
        base.year, np.full(n, base.fsc_per_capita), np.full(n, base.fsc), np.full(n, base.domestic),
        np.full(n, base.exports), np.full(n, base.imports), np.full(n, base.water_stress),
        np.full(n, base.land), np.full(n, base.labour_agr))
    gdp_prev = float(base_gdp)
    for k, year in enumerate(years):
        P = pop.values[:, k]
        lower = project_lower_layer(model, P, gdp_prev, drv.labour[k], year)
        state = project_upper_layer(model, lower, P, gdp_prev, prev, drv.temperature[k],
                                    drv.precipitation[k], year, land_cap)
        for q in STATE_FIELDS:
            out[q][:, k] = np.broadcast_to(getattr(state, q), (n,))
        if state.land_capped is not None:
            capped[:, k] = state.land_capped
        prev = state
        gdp_prev = float(drv.gdp_per_capita[k])
    meta = {"scenario": scenario.name}
    sets = {q: TrajectorySet(q, pop.ids, years, v, dict(meta)) for q, v in out.items()}
    return FoodProjection(scenario.name, sets, base, float(base_gdp), capped)


def with_equation(model: TwoLayerModel, target: str, **changes) -> TwoLayerModel:
    """Copy of ``model`` with one equation's fields replaced."""
    eqs = dict(model.equations)
    eqs[target] = replace(eqs[target], **changes)
    return TwoLayerModel(eqs, model.time_origin, model.country)

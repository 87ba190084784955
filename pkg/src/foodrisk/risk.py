"""Food security risk index and its aggregation within and across scenarios."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from importlib import resources

import numpy as np

from .errors import ValidationError
from .scenarios import SCENARIO_NAMES
from .trajectories import TrajectorySet

QUANTILE_LEVELS = (0.05, 0.33, 0.50, 0.66, 0.95)
QUANTILE_COLUMNS = ("q05", "q33", "q50", "q66", "q95")
RISK_COLUMNS = ("year", "mode", "mean") + QUANTILE_COLUMNS + ("gamma",)
DEFAULT_GRID = 1024
WEIGHT_TOL = 1e-12


class GammaPerspective(str, Enum):
    Zero = "Zero"
    NC = "NC"
    LC = "LC"
    VC = "VC"

    @property
    def threshold(self) -> float:
        return {"Zero": math.inf, "NC": 0.40, "LC": 0.20, "VC": 0.10}[self.value]

    @property
    def decimal_threshold(self) -> Decimal | None:
        return {"NC": Decimal("0.40"), "LC": Decimal("0.20"), "VC": Decimal("0.10")}.get(self.value)


def _perspective(p) -> GammaPerspective:
    try:
        return GammaPerspective(p.value if isinstance(p, GammaPerspective) else str(p))
    except ValueError:
        raise ValidationError(f"unknown gamma perspective {p!r}; expected one of Zero, NC, LC, VC") from None


def _excess(w: float, thr: Decimal) -> float:
    # subtract in decimal on the shortest repr so 1.22 - 0.10 gives 1.12, not 1.1199999999999999
    d = Decimal(repr(float(w))) - thr
    return float(d) if d > 0 else 0.0


_excess_ufunc = np.frompyfunc(_excess, 2, 1)


def gamma_value(w_prev, perspective) -> np.ndarray | float:
    """Water-stress sensitivity ``max(0, W_prev - threshold)``.

    The threshold is subtracted in decimal arithmetic from the shortest
    decimal form of ``W_prev``.
    """
    p = _perspective(perspective)
    w = np.asarray(w_prev, dtype=float)
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise ValidationError("previous water stress must be non-negative")
    if p is GammaPerspective.Zero:
        out = np.zeros_like(w)
    else:
        out = np.asarray(_excess_ufunc(w, p.decimal_threshold), dtype=float)
    return float(out) if out.ndim == 0 else out


class WaterStressClass(str, Enum):
    Low = "Low"
    LowMedium = "LowMedium"
    MediumHigh = "MediumHigh"
    High = "High"
    ExtremelyHigh = "ExtremelyHigh"


_STRESS_EDGES = (0.10, 0.20, 0.40, 0.80)
_STRESS_ORDER = tuple(WaterStressClass)


def classify_water_stress(w):
    """Band lookup; a value on a boundary belongs to the higher-stress band."""
    arr = np.asarray(w, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValidationError("water stress must be non-negative")
    idx = np.searchsorted(_STRESS_EDGES, arr, side="right")
    if arr.ndim == 0:
        return _STRESS_ORDER[int(idx)]
    return np.array([_STRESS_ORDER[i].value for i in idx.ravel()]).reshape(arr.shape)


def fsri(c_r, q_fsc, w, gamma):
    """Food security risk index in percent.

    ``gamma = inf`` gives the limit ``100 W``.
    """
    c_r = np.asarray(c_r, dtype=float)
    q = np.asarray(q_fsc, dtype=float)
    w = np.asarray(w, dtype=float)
    g = np.asarray(gamma, dtype=float)
    if np.any(q <= 0) or np.any(np.isnan(q)):
        raise ValidationError("food system capacity must be positive")
    if np.any(g < 0) or np.any(np.isnan(g)):
        raise ValidationError("gamma must be non-negative")
    ratio = c_r / q
    with np.errstate(invalid="ignore"):
        blended = (ratio + g * w) / (1.0 + g)
    out = np.where(np.isinf(g), w, blended) * 100.0
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# results


@dataclass
class RiskAssessment:
    years: np.ndarray
    mode: str
    mean: np.ndarray
    quantiles: dict          # column name -> per-year array
    gamma: np.ndarray        # mean gamma applied per year
    perspective: str = "Zero"
    weights: dict | None = None
    theta: float = math.inf
    rho: np.ndarray | None = None
    samples: TrajectorySet | None = field(default=None, repr=False)

    @property
    def median(self) -> np.ndarray:
        return self.quantiles["q50"]

    def rows(self):
        for k, y in enumerate(self.years):
            row = {"year": int(y), "mode": self.mode, "mean": float(self.mean[k])}
            row.update({c: float(self.quantiles[c][k]) for c in QUANTILE_COLUMNS})
            row["gamma"] = float(self.gamma[k])
            if self.rho is not None:
                row["rho"] = float(self.rho[k])
            yield row

    def to_frame(self):
        import pandas as pd

        cols = list(RISK_COLUMNS) + (["rho"] if self.rho is not None else [])
        return pd.DataFrame(list(self.rows()), columns=cols)


def _check_sample(sample) -> np.ndarray:
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("empty sample")
    if not np.all(np.isfinite(x)):
        raise ValidationError("sample contains non-finite values")
    return x


def _fmean(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return math.fsum(x) / len(x)


def _summary(values: np.ndarray):
    """Per-year compensated mean and linear-interpolation quantiles, shape (n, T)."""
    mean = np.array([_fmean(values[:, k]) for k in range(values.shape[1])])
    qs = np.quantile(values, QUANTILE_LEVELS, axis=0)
    return mean, {c: qs[i] for i, c in enumerate(QUANTILE_COLUMNS)}


def _check_aligned(*sets):
    first = sets[0]
    for s in sets[1:]:
        if not np.array_equal(s.ids, first.ids):
            raise ValidationError(f"trajectory ids of {s.quantity} do not match {first.quantity}")
        if not np.array_equal(s.years, first.years):
            raise ValidationError(f"years of {s.quantity} do not match {first.quantity}")


def fsri_trajectories(requirement: TrajectorySet, capacity: TrajectorySet, water: TrajectorySet,
                      perspective, w_initial: float):
    """Per-trajectory index paths and the gamma used at each step.

    ``requirement`` and ``capacity`` are national kcal/day, ``water`` is the
    projected water stress. Gamma at year ``t`` comes from the same
    trajectory's ``W`` at ``t - 1``; the first year uses ``w_initial``.
    """
    _check_aligned(requirement, capacity, water)
    w = water.values
    w_prev = np.concatenate([np.full((w.shape[0], 1), float(w_initial)), w[:, :-1]], axis=1)
    g = gamma_value(w_prev, perspective)
    index = fsri(requirement.values, capacity.values, w, g)
    meta = dict(capacity.meta, perspective=_perspective(perspective).value)
    return TrajectorySet("fsri", requirement.ids, requirement.years, index, meta), np.asarray(g)


def within_scenario_risk(requirement: TrajectorySet, capacity: TrajectorySet, water: TrajectorySet,
                         perspective="Zero", w_initial: float | None = None) -> RiskAssessment:
    """Monte-Carlo estimate of the index under one scenario's probability model."""
    if w_initial is None:
        w_initial = float(np.median(water.values[:, 0]))
    index, g = fsri_trajectories(requirement, capacity, water, perspective, w_initial)
    mean, qs = _summary(index.values)
    gamma = np.array([_fmean(g[:, k]) for k in range(g.shape[1])])
    return RiskAssessment(index.years, "within", mean, qs, gamma, _perspective(perspective).value,
                          samples=index)


# --------------------------------------------------------------------------
# across scenarios


def _parse_weight(v) -> float:
    if isinstance(v, str):
        return float(Fraction(v))
    return float(v)


def load_weight_presets(path=None) -> dict:
    """Preset name -> {scenario: weight}."""
    if path is None:
        text = resources.files("foodrisk.data").joinpath("weights.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    if "presets" not in raw:
        # a single custom weight map
        return {"custom": {k: _parse_weight(v) for k, v in raw.items()}}
    names = raw["scenarios"]
    return {p: {s: _parse_weight(w) for s, w in zip(names, ws)} for p, ws in raw["presets"].items()}


@dataclass(frozen=True)
class RiskMeasureConfig:
    weights: dict
    theta: float = math.inf
    m: int = DEFAULT_GRID

    def __post_init__(self):
        w = {str(k): float(v) for k, v in dict(self.weights).items()}
        if not w:
            raise ValidationError("at least one scenario weight is required")
        if any(v < 0 or not math.isfinite(v) for v in w.values()):
            raise ValidationError("scenario weights must be finite and non-negative")
        total = math.fsum(w.values())
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"scenario weights sum to {total!r}, not 1")
        if not (self.theta > 0):
            raise ValidationError("uncertainty aversion theta must be positive (or inf)")
        if int(self.m) < 2:
            raise ValidationError("barycenter grid needs at least two points")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def preset(cls, name: str, theta: float = math.inf, m: int = DEFAULT_GRID) -> "RiskMeasureConfig":
        presets = load_weight_presets()
        key = {k.lower(): k for k in presets}.get(name.lower())
        if key is None:
            raise ValidationError(f"unknown weight preset {name!r}; known: {sorted(presets)}")
        return cls(presets[key], theta, m)

    def restricted(self, scenarios, renormalize: bool = False) -> "RiskMeasureConfig":
        """Weights for a subset of scenarios."""
        scenarios = list(scenarios)
        missing = [s for s in self.weights if s not in scenarios and self.weights[s] > 0]
        if missing and not renormalize:
            raise ValidationError(f"scenarios {missing} carry weight but are absent; pass renormalize=True")
        unknown = [s for s in scenarios if s not in self.weights]
        if unknown:
            raise ValidationError(f"no weight given for scenarios {unknown}")
        total = math.fsum(self.weights[s] for s in scenarios)
        if total <= 0:
            raise ValidationError("remaining scenarios have zero total weight")
        return RiskMeasureConfig({s: self.weights[s] / total for s in scenarios}, self.theta, self.m)


def _cell_averaged_quantiles(sample, m: int) -> np.ndarray:
    """Average of the empirical quantile function over each cell ``[j/m, (j+1)/m)``.

    Integer arithmetic on the common grid of ``1/(n m)`` keeps the overlap
    lengths exact, and values are expressed as offsets from the first order
    statistic in each cell so constant stretches come out exactly.
    """
    x = np.sort(_check_sample(sample))
    n = len(x)
    edges = np.union1d(np.arange(n + 1, dtype=np.int64) * m, np.arange(m + 1, dtype=np.int64) * n)
    start, length = edges[:-1], np.diff(edges)
    k = start // m
    j = start // n
    first = np.full(m, n, dtype=np.int64)
    np.minimum.at(first, j, k)
    anchor = x[first]
    offset = np.bincount(j, weights=(x[k] - anchor[j]) * length, minlength=m) / n
    return anchor + offset


def _weight_vector(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
        raise ValidationError("weights must be non-negative and sum to 1")
    return w


def _combine(rows: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_i w_i r_i`` written around the heaviest row so equal rows stay exact."""
    ref = int(np.argmax(w))
    base = rows[ref]
    diff = rows - base
    return base + np.einsum("i,i...->...", w, diff)


def wasserstein_barycenter_1d(samples, weights, m: int = DEFAULT_GRID) -> np.ndarray:
    """Discrete W2 barycenter of scalar samples as ``m`` quantile values.

    The barycenter quantile function is the weighted average of the input
    quantile functions; each is represented by its average over ``m`` equal
    probability cells, which keeps the mean exactly weight-linear.
    """
    samples = list(samples)
    w = _weight_vector(weights)
    if len(samples) != len(w):
        raise ValidationError(f"{len(samples)} samples for {len(w)} weights")
    if m < 2:
        raise ValidationError("barycenter grid needs at least two points")
    q = np.stack([_cell_averaged_quantiles(s, m) for s in samples])
    return _combine(q, w)


def convex_risk(samples, config: RiskMeasureConfig, scenarios=None) -> float:
    """Robust risk ``sup_Q {E_Q[X] - a(Q)}`` with the normalised W2 penalty.

    The penalty is ``(theta/2) sum_i w_i W2(Q, Q_i)^2`` minus its minimum, so it
    vanishes at the barycenter. The supremum is attained by shifting the
    barycenter by ``1/theta``, giving ``E[barycenter] + 1/(2 theta)``.
    """
    if isinstance(samples, dict):
        scenarios = list(samples)
        samples = [samples[s] for s in scenarios]
    if scenarios is None:
        weights = list(config.weights.values())
    else:
        weights = [config.weights[s] for s in scenarios]
    w = _weight_vector(weights)
    if len(samples) != len(w):
        raise ValidationError(f"{len(samples)} samples for {len(w)} weights")
    # E[barycenter] = sum_i w_i E_i exactly; the grid is not needed for the mean
    base = float(_combine(np.array([_fmean(_check_sample(x)) for x in samples]), w))
    return base if math.isinf(config.theta) else base + 1.0 / (2.0 * config.theta)


def across_scenario_risk(per_scenario: dict, config: RiskMeasureConfig, perspective="Zero",
                         w_initial: float | None = None, renormalize: bool = False) -> RiskAssessment:
    """Barycentric aggregation of per-scenario index distributions, year by year.

    ``per_scenario`` maps scenario name to either a ``(requirement, capacity,
    water)`` triple of trajectory sets or a ready ``fsri`` TrajectorySet.
    """
    names = [s for s in config.weights if s in per_scenario]
    extra = [s for s in per_scenario if s not in config.weights]
    if extra:
        raise ValidationError(f"no weight given for scenarios {extra}")
    if len(names) != len(config.weights):
        config = config.restricted(names, renormalize)
    indices, gammas = {}, {}
    for s in names:
        item = per_scenario[s]
        if isinstance(item, TrajectorySet):
            indices[s], gammas[s] = item, None
        else:
            req, cap, water = item
            wi = w_initial if w_initial is not None else float(np.median(water.values[:, 0]))
            indices[s], gammas[s] = fsri_trajectories(req, cap, water, perspective, wi)
    years = indices[names[0]].years
    for s in names[1:]:
        if not np.array_equal(indices[s].years, years):
            raise ValidationError(f"scenario {s} covers different years")
    w = np.array([config.weights[s] for s in names])
    m = config.m
    bary = np.empty((m, len(years)))
    for k in range(len(years)):
        q = np.stack([_cell_averaged_quantiles(indices[s].values[:, k], m) for s in names])
        bary[:, k] = _combine(q, w)
    # the barycenter's mean is exactly the weighted scenario mean; use the
    # compensated per-scenario means rather than re-summing the grid
    means = np.stack([[_fmean(indices[s].values[:, k]) for k in range(len(years))] for s in names])
    mean = _combine(means, w)
    # quantile bands are weight averages of scenario quantiles (the barycenter's quantile function)
    per_q = np.stack([np.quantile(indices[s].values, QUANTILE_LEVELS, axis=0) for s in names])
    qband = _combine(per_q, w)
    quantiles = {c: qband[i] for i, c in enumerate(QUANTILE_COLUMNS)}
    g_rows = [[_fmean(gammas[s][:, k]) for k in range(len(years))] if gammas[s] is not None
              else np.zeros(len(years)) for s in names]
    gamma = _combine(np.stack(g_rows), w)
    rho = None
    if not math.isinf(config.theta):
        rho = mean + 1.0 / (2.0 * config.theta)
    samples = TrajectorySet("fsri_barycenter", np.arange(m), years, bary, {"mode": "across"})
    return RiskAssessment(years, "across", mean, quantiles, gamma, _perspective(perspective).value,
                          dict(config.weights), config.theta, rho, samples)


def scenario_order(names) -> list:
    """Names sorted in the canonical scenario order (unknown names last)."""
    rank = {s: i for i, s in enumerate(SCENARIO_NAMES)}
    return sorted(names, key=lambda s: (rank.get(s, len(rank)), s))

"""Stochastic fertility / mortality paths and cohort-component projection.

Time runs in 5-year periods over 21 age groups (0-4, ..., 95-99, 100+).
Counts are in thousands. Sex axis: 0 = female, 1 = male.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import lifetable
from .errors import ValidationError
from .trajectories import STREAM_E0, STREAM_GAP, STREAM_TFR, TrajectorySet, standard_normals

log = logging.getLogger(__name__)

N_GROUPS = lifetable.N_GROUPS
STEP = lifetable.GROUP_WIDTH
AGE_GROUPS = tuple(f"{a}-{a + 4}" for a in range(0, 100, 5)) + ("100+",)
REPRODUCTIVE_GROUPS = AGE_GROUPS[3:10]  # 15-19 .. 45-49
FIRST_REPRODUCTIVE = 3
TFR_BOUNDS = (0.5, 10.0)
E0_BOUNDS = lifetable.E0_RANGE
F, M = 0, 1


@dataclass(frozen=True)
class DoubleLogistic:
    d: float
    l: float
    u: float
    w1: float
    w2: float

    def __post_init__(self):
        vals = (self.d, self.l, self.u, self.w1, self.w2)
        if not all(np.isfinite(vals)):
            raise ValidationError("double-logistic parameters must be finite")
        if not self.l < self.u:
            raise ValidationError(f"double-logistic needs l < u (got l={self.l}, u={self.u})")
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValidationError("double-logistic widths w1, w2 must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DoubleLogistic":
        return cls(d=float(d["d"]), l=float(d["l"]), u=float(d["u"]), w1=float(d["w1"]), w2=float(d["w2"]))

    def to_dict(self) -> dict:
        return {"d": self.d, "l": self.l, "u": self.u, "w1": self.w1, "w2": self.w2}


def double_logistic(x, theta: DoubleLogistic):
    """``d * s((x - l)/w1) * s((u - x)/w2)`` with the logistic ``s``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("double_logistic: non-finite input")
    out = theta.d * expit((x - theta.l) / theta.w1) * expit((theta.u - x) / theta.w2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class VitalParams:
    theta_tfr: DoubleLogistic
    theta_e0: DoubleLogistic
    var_tfr: float
    var_e0: float
    gap_mean: float
    gap_var: float
    fertility_schedule: np.ndarray  # h_a for 15-19 .. 45-49, sum(5 h_a) = 1
    srb: float = 1.05
    start_tfr: float | None = None
    start_e0_f: float | None = None

    def __post_init__(self):
        for name in ("var_tfr", "var_e0", "gap_var"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be a finite non-negative variance, got {v}")
        h = np.asarray(self.fertility_schedule, dtype=float)
        if h.shape != (len(REPRODUCTIVE_GROUPS),):
            raise ValidationError(f"fertility_schedule needs {len(REPRODUCTIVE_GROUPS)} entries")
        if np.any(h < 0):
            raise ValidationError("fertility_schedule entries must be non-negative")
        if abs(STEP * h.sum() - 1.0) > 1e-9:
            raise ValidationError(f"fertility_schedule must satisfy sum(5*h) = 1 (got {STEP * h.sum():.12g})")
        if not self.srb > 0:
            raise ValidationError("sex ratio at birth must be positive")
        if self.gap_mean < 0:
            raise ValidationError("e0 gap mean must be non-negative")
        object.__setattr__(self, "fertility_schedule", h)

    @classmethod
    def from_dict(cls, d: dict) -> "VitalParams":
        sched = d["fertility_schedule"]
        if isinstance(sched, dict):
            missing = [g for g in REPRODUCTIVE_GROUPS if g not in sched]
            if missing:
                raise ValidationError(f"fertility_schedule missing groups {missing}")
            sched = [sched[g] for g in REPRODUCTIVE_GROUPS]
        gap = d["e0_gap"]
        return cls(
            theta_tfr=DoubleLogistic.from_dict(d["theta_tfr"]),
            theta_e0=DoubleLogistic.from_dict(d["theta_e0"]),
            var_tfr=float(d["var_tfr"]),
            var_e0=float(d["var_e0"]),
            gap_mean=float(gap["mean"]),
            gap_var=float(gap.get("var", 0.0)),
            fertility_schedule=np.asarray(sched, dtype=float),
            srb=float(d.get("srb", 1.05)),
            start_tfr=d.get("start_tfr"),
            start_e0_f=d.get("start_e0_f"),
        )

    def to_dict(self) -> dict:
        out = {
            "theta_tfr": self.theta_tfr.to_dict(),
            "theta_e0": self.theta_e0.to_dict(),
            "var_tfr": self.var_tfr,
            "var_e0": self.var_e0,
            "e0_gap": {"mean": self.gap_mean, "var": self.gap_var},
            "fertility_schedule": dict(zip(REPRODUCTIVE_GROUPS, map(float, self.fertility_schedule))),
            "srb": self.srb,
        }
        if self.start_tfr is not None:
            out["start_tfr"] = self.start_tfr
        if self.start_e0_f is not None:
            out["start_e0_f"] = self.start_e0_f
        return out


@dataclass(frozen=True)
class AgeSexPyramid:
    country: str
    year: int
    counts_f: np.ndarray
    counts_m: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        f = np.asarray(self.counts_f, dtype=float)
        m = np.asarray(self.counts_m, dtype=float)
        if f.shape != (N_GROUPS,) or m.shape != (N_GROUPS,):
            raise ValidationError(f"pyramid groups must have length {N_GROUPS}")
        if np.any(~np.isfinite(f)) or np.any(~np.isfinite(m)) or np.any(f < 0) or np.any(m < 0):
            raise ValidationError("pyramid counts must be finite and non-negative")
        object.__setattr__(self, "counts_f", f)
        object.__setattr__(self, "counts_m", m)

    @property
    def counts(self) -> np.ndarray:
        """Stacked ``(2, 21)`` array, female row first."""
        return np.stack([self.counts_f, self.counts_m])

    @property
    def total(self) -> float:
        return float(self.counts_f.sum() + self.counts_m.sum())

    @classmethod
    def from_counts(cls, country, year, counts, clamped=False) -> "AgeSexPyramid":
        counts = np.asarray(counts, dtype=float)
        return cls(country, int(year), counts[F], counts[M], clamped)


def default_migration_split() -> np.ndarray:
    """Age-sex profile for net migrants, peaked at young working ages.

    Equal sexes; weights sum to one.
    """
    ages = np.arange(N_GROUPS) * STEP + 2.5
    profile = 0.15 * np.exp(-ages / 10.0) + np.exp(-0.5 * ((ages - 27.5) / 9.0) ** 2)
    profile /= profile.sum()
    return np.stack([profile, profile]) / 2.0


@dataclass(frozen=True)
class MigrationSchedule:
    """Net migration totals per period (thousands) with a fixed age-sex split."""

    period_start_years: np.ndarray
    net: dict  # level -> array aligned with period_start_years
    split: np.ndarray = field(default_factory=default_migration_split)

    def __post_init__(self):
        split = np.asarray(self.split, dtype=float)
        if split.shape != (2, N_GROUPS):
            raise ValidationError("migration split must have shape (2, 21)")
        if abs(split.sum() - 1.0) > 1e-9:
            raise ValidationError(f"migration split weights must sum to 1 (got {split.sum():.12g})")
        years = np.asarray(self.period_start_years, dtype=np.int64)
        net = {k: np.asarray(v, dtype=float) for k, v in self.net.items()}
        for level, arr in net.items():
            if arr.shape != years.shape:
                raise ValidationError(f"migration level {level}: {arr.shape} values for {years.shape} periods")
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "period_start_years", years)
        object.__setattr__(self, "net", net)

    @classmethod
    def zero(cls, base_year: int, periods: int) -> "MigrationSchedule":
        years = base_year + STEP * np.arange(periods)
        zeros = np.zeros(periods)
        return cls(years, {"Low": zeros, "Medium": zeros, "High": zeros})

    def totals(self, level: str, start_year: int, periods: int) -> np.ndarray:
        if level not in self.net:
            raise ValidationError(f"no migration series for level {level!r}")
        out = np.empty(periods)
        for k in range(periods):
            y = start_year + STEP * k
            hit = np.flatnonzero(self.period_start_years == y)
            if len(hit) == 0:
                raise ValidationError(f"migration level {level}: no entry for period starting {y}")
            out[k] = self.net[level][hit[0]]
        return out

    def by_age_sex(self, level: str, start_year: int, periods: int) -> np.ndarray:
        """``(periods, 2, 21)`` net migrants per period."""
        return self.totals(level, start_year, periods)[:, None, None] * self.split[None]


# --------------------------------------------------------------------------
# vital-rate paths


def _period_years(base_year, horizon):
    return base_year + STEP * np.arange(horizon + 1)


def _check_batch(horizon, n):
    if int(horizon) < 1:
        raise ValidationError("horizon must be at least one period")
    if int(n) < 1:
        raise ValidationError("need at least one trajectory")


def simulate_tfr_paths(start_tfr, params: VitalParams, horizon: int, n: int, seed: int,
                       base_year: int = 2020, ids=None) -> TrajectorySet:
    """TFR paths ``f(t+1) = f(t) - g2(f(t)) + eta``, clamped to [0.5, 10]."""
    _check_batch(horizon, n)
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    sd = np.sqrt(params.var_tfr)
    noise = sd * standard_normals(seed, ids, STREAM_TFR, horizon) if sd > 0 else np.zeros((len(ids), horizon))
    paths = np.empty((len(ids), horizon + 1))
    paths[:, 0] = np.clip(float(start_tfr), *TFR_BOUNDS)
    for t in range(horizon):
        f = paths[:, t]
        paths[:, t + 1] = np.clip(f - double_logistic(f, params.theta_tfr) + noise[:, t], *TFR_BOUNDS)
    return TrajectorySet("tfr", ids, _period_years(base_year, horizon), paths, {"seed": seed})


def simulate_e0_paths(start_e0_f, params: VitalParams, horizon: int, n: int, seed: int,
                      base_year: int = 2020, ids=None) -> TrajectorySet:
    """Female e0 ``e(t+1) = e(t) + g1(e(t)) + eta`` and male e0 from a noisy gap.

    Values have item shape ``(2,)``: female, male.
    """
    _check_batch(horizon, n)
    ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
    sd = np.sqrt(params.var_e0)
    noise = sd * standard_normals(seed, ids, STREAM_E0, horizon) if sd > 0 else np.zeros((len(ids), horizon))
    gsd = np.sqrt(params.gap_var)
    gap = np.full((len(ids), horizon + 1), params.gap_mean)
    if gsd > 0:
        gap[:, 1:] += gsd * standard_normals(seed, ids, STREAM_GAP, horizon)
    gap = np.maximum(gap, 0.0)

    female = np.empty((len(ids), horizon + 1))
    female[:, 0] = np.clip(float(start_e0_f), *E0_BOUNDS)
    for t in range(horizon):
        e = female[:, t]
        female[:, t + 1] = np.clip(e + double_logistic(e, params.theta_e0) + noise[:, t], *E0_BOUNDS)
    male = np.clip(female - gap, *E0_BOUNDS)
    values = np.stack([female, male], axis=-1)
    return TrajectorySet("e0", ids, _period_years(base_year, horizon), values, {"seed": seed})


# --------------------------------------------------------------------------
# cohort-component step


@dataclass
class CohortStep:
    counts: np.ndarray      # (n, 2, 21) end-of-period
    births: np.ndarray      # (n,)
    deaths: np.ndarray      # (n,)
    migration: np.ndarray   # (n,) net migration actually applied
    clamped: np.ndarray     # (n,) number of groups clamped at zero


def cohort_step(counts, tfr, e0_f, e0_m, migration, params: VitalParams,
                survival=None, birth_survival=None) -> CohortStep:
    """Advance a batch of pyramids by one 5-year period.

    ``migration`` is ``(2, 21)`` or ``(n, 2, 21)``. ``survival`` /
    ``birth_survival`` override the life-table ratios (shapes ``(n, 2, 21)``
    and ``(n, 2)``); used by tests for closed-population limits.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.ndim == 2:
        counts = counts[None]
    n = counts.shape[0]
    tfr = np.broadcast_to(np.asarray(tfr, dtype=float), (n,))
    if survival is None:
        _, s_f, b_f, _ = lifetable.survival_ratios(np.broadcast_to(e0_f, (n,)))
        _, s_m, b_m, _ = lifetable.survival_ratios(np.broadcast_to(e0_m, (n,)))
        survival = np.stack([s_f, s_m], axis=1)
        birth_survival = np.stack([b_f, b_m], axis=1)
    else:
        survival = np.broadcast_to(np.asarray(survival, dtype=float), (n, 2, N_GROUPS))
        birth_survival = np.broadcast_to(
            np.asarray(1.0 if birth_survival is None else birth_survival, dtype=float), (n, 2))

    women = counts[:, F, FIRST_REPRODUCTIVE:FIRST_REPRODUCTIVE + len(REPRODUCTIVE_GROUPS)]
    births = STEP * tfr * (women @ params.fertility_schedule)
    sex_share = np.array([1.0, params.srb]) / (1.0 + params.srb)
    births_by_sex = births[:, None] * sex_share[None]

    survivors = counts * survival
    nxt = np.zeros_like(counts)
    nxt[:, :, 1:] = survivors[:, :, :-1]
    nxt[:, :, -1] += survivors[:, :, -1]
    nxt[:, :, 0] = births_by_sex * birth_survival
    deaths = (counts - survivors).sum(axis=(1, 2)) + (births_by_sex * (1.0 - birth_survival)).sum(axis=1)

    mig = np.broadcast_to(np.asarray(migration, dtype=float), (n, 2, N_GROUPS))
    nxt = nxt + mig
    applied = mig.sum(axis=(1, 2))
    neg = nxt < 0
    clamped = neg.sum(axis=(1, 2))
    if clamped.any():
        # emigration larger than the cohort: only the cohort can leave
        applied = applied - np.where(neg, nxt, 0.0).sum(axis=(1, 2))
        nxt = np.where(neg, 0.0, nxt)
        log.warning("negative counts clamped to zero in %d trajectories", int((clamped > 0).sum()))
    return CohortStep(nxt, births, deaths, applied, clamped)


def project_cohorts(pyramid: AgeSexPyramid, tfr: float, e0_f: float, e0_m: float,
                    migration, params: VitalParams, survival=None, birth_survival=None) -> AgeSexPyramid:
    """One 5-year projection step of a single pyramid.

    ``migration`` is either a net total (thousands, split with the default
    profile) or a ``(2, 21)`` array.
    """
    mig = np.asarray(migration, dtype=float)
    if mig.ndim == 0:
        mig = float(mig) * default_migration_split()
    step = cohort_step(pyramid.counts, tfr, e0_f, e0_m, mig, params, survival, birth_survival)
    return AgeSexPyramid.from_counts(pyramid.country, pyramid.year + STEP, step.counts[0],
                                     clamped=bool(step.clamped[0]))


# --------------------------------------------------------------------------
# full trajectories


@dataclass
class VitalPaths:
    tfr: TrajectorySet
    e0: TrajectorySet


@dataclass
class PopulationProjection:
    pyramids: TrajectorySet     # values (n, periods+1, 2, 21)
    vital: VitalPaths
    births: np.ndarray          # (n, periods)
    deaths: np.ndarray
    migration: np.ndarray
    clamp_events: np.ndarray    # (n, periods)
    migration_level: str = "Medium"

    @property
    def totals(self) -> TrajectorySet:
        return self.pyramids.map("population_total", lambda v: v.sum(axis=(2, 3)))

    def accounting_residual(self) -> np.ndarray:
        """Relative residual of ``P(t) - P(t-1) - (B - D + M)`` per trajectory and step."""
        tot = self.pyramids.values.sum(axis=(2, 3))
        lhs = tot[:, 1:] - tot[:, :-1]
        rhs = self.births - self.deaths + self.migration
        scale = np.maximum(np.abs(tot[:, 1:]), 1e-300)
        return np.abs(lhs - rhs) / scale

    def slice_year(self, year: int) -> list:
        """The ``n`` pyramids at one projection year."""
        k = self.pyramids.year_index(year)
        country = self.pyramids.meta.get("country", "")
        return [AgeSexPyramid.from_counts(country, year, v) for v in self.pyramids.values[:, k]]


def simulate_vital_paths(params: VitalParams, horizon: int, n: int, seed: int, base_year: int,
                         start_tfr=None, start_e0_f=None, ids=None) -> VitalPaths:
    start_tfr = params.start_tfr if start_tfr is None else start_tfr
    start_e0_f = params.start_e0_f if start_e0_f is None else start_e0_f
    if start_tfr is None or start_e0_f is None:
        raise ValidationError("starting TFR and female e0 are required (start_tfr, start_e0_f)")
    return VitalPaths(
        simulate_tfr_paths(start_tfr, params, horizon, n, seed, base_year, ids),
        simulate_e0_paths(start_e0_f, params, horizon, n, seed, base_year, ids),
    )


def generate_population_trajectories(base: AgeSexPyramid, params: VitalParams, migration,
                                     horizon: int, n: int, seed: int, level: str = "Medium",
                                     vital: VitalPaths | None = None, ids=None,
                                     start_tfr=None, start_e0_f=None) -> PopulationProjection:
    """Iterate the cohort step forward for ``n`` stochastic trajectories.

    ``migration`` is a :class:`MigrationSchedule` (the ``level`` series is
    used), a per-period array of totals, or ``None`` for a closed population.
    Step ``k`` uses the period rates at path index ``k + 1``. Passing
    ``vital`` reuses already simulated TFR/e0 paths (e.g. to project the same
    trajectories under several migration levels).
    """
    _check_batch(horizon, n)
    if vital is None:
        vital = simulate_vital_paths(params, horizon, n, seed, base.year, start_tfr, start_e0_f, ids)
    elif ids is not None:
        vital = VitalPaths(vital.tfr.select(ids), vital.e0.select(ids))
    ids = vital.tfr.ids
    n = len(ids)
    if vital.tfr.values.shape[1] < horizon + 1:
        raise ValidationError("vital paths shorter than the requested horizon")

    if migration is None:
        mig = np.zeros((horizon, 2, N_GROUPS))
    elif isinstance(migration, MigrationSchedule):
        mig = migration.by_age_sex(level, base.year, horizon)
    else:
        totals = np.asarray(migration, dtype=float)
        if totals.shape != (horizon,):
            raise ValidationError(f"need {horizon} per-period migration totals, got {totals.shape}")
        mig = totals[:, None, None] * default_migration_split()[None]

    pyr = np.empty((n, horizon + 1, 2, N_GROUPS))
    pyr[:, 0] = base.counts
    births = np.empty((n, horizon))
    deaths = np.empty((n, horizon))
    applied = np.empty((n, horizon))
    clamps = np.zeros((n, horizon), dtype=np.int64)
    for k in range(horizon):
        step = cohort_step(pyr[:, k], vital.tfr.values[:, k + 1], vital.e0.values[:, k + 1, F],
                           vital.e0.values[:, k + 1, M], mig[k], params)
        pyr[:, k + 1] = step.counts
        births[:, k] = step.births
        deaths[:, k] = step.deaths
        applied[:, k] = step.migration
        clamps[:, k] = step.clamped
    years = _period_years(base.year, horizon)
    pyramids = TrajectorySet("pyramid", ids, years, pyr,
                             {"seed": seed, "country": base.country, "migration_level": level})
    return PopulationProjection(pyramids, vital, births, deaths, applied, clamps, level)

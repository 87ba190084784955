"""Minimum national caloric requirements from age-sex pyramids.

Pyramid counts are in thousands; requirements are national kcal per day.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .demography import AGE_GROUPS, N_GROUPS, STEP, AgeSexPyramid
from .errors import ValidationError
from .trajectories import TrajectorySet

ACTIVITIES = ("NotActive", "SomewhatActive", "VeryActive")
BOUNDS = ("lower", "upper", "midpoint")
INFANT_KCAL = 800.0
INFANT_BAND = (0, 1)
OPEN_AGE_SPAN = 5  # the 100+ group is spread over ages 100-104
PEOPLE_PER_UNIT = 1000.0


@dataclass(frozen=True)
class CaloricRow:
    sex: str
    age_min: int
    age_max: float  # inf for "and older"
    activity: str
    kcal_min: float
    kcal_max: float


class CaloricTable:
    """Daily intake ranges by sex, age band and activity level."""

    def __init__(self, rows):
        self.rows = list(rows)
        self._validate()
        self.bands = sorted({(r.age_min, r.age_max) for r in self.rows})

    def _validate(self):
        for r in self.rows:
            if r.sex not in ("F", "M"):
                raise ValidationError(f"caloric table: bad sex {r.sex!r}")
            if r.activity not in ACTIVITIES:
                raise ValidationError(f"caloric table: bad activity {r.activity!r}")
            if r.kcal_min > r.kcal_max or r.kcal_min < 0:
                raise ValidationError(f"caloric table: bad kcal range for {r}")
        for sex in ("F", "M"):
            for act in ACTIVITIES:
                bands = sorted((r.age_min, r.age_max) for r in self.rows if r.sex == sex and r.activity == act)
                if not bands:
                    raise ValidationError(f"caloric table: no rows for {sex}/{act}")
                if bands[0][0] != 2:
                    raise ValidationError(f"caloric table {sex}/{act}: bands must start at age 2")
                for (a0, a1), (b0, _) in zip(bands, bands[1:]):
                    if b0 != a1 + 1:
                        raise ValidationError(f"caloric table {sex}/{act}: gap or overlap at age {a1}/{b0}")
                if np.isfinite(bands[-1][1]):
                    raise ValidationError(f"caloric table {sex}/{act}: last band must be open-ended")

    @classmethod
    def from_csv(cls, source=None) -> "CaloricTable":
        if source is None:
            text = resources.files("foodrisk.data").joinpath("caloric_table.csv").read_text()
        else:
            with open(source, newline="") as fh:
                text = fh.read()
        rows = []
        for line_no, rec in enumerate(csv.DictReader(io.StringIO(text)), start=2):
            try:
                rows.append(CaloricRow(
                    sex=rec["sex"].strip(),
                    age_min=int(rec["age_min"]),
                    age_max=float(rec["age_max"]) if rec["age_max"].strip() else float("inf"),
                    activity=rec["activity"].strip(),
                    kcal_min=float(rec["kcal_min"]),
                    kcal_max=float(rec["kcal_max"]),
                ))
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"caloric table line {line_no}: {exc}") from None
        return cls(rows)

    def value(self, sex, age_min, activity, bound) -> float:
        for r in self.rows:
            if r.sex == sex and r.age_min == age_min and r.activity == activity:
                if bound == "lower":
                    return r.kcal_min
                if bound == "upper":
                    return r.kcal_max
                return 0.5 * (r.kcal_min + r.kcal_max)
        raise ValidationError(f"caloric table has no band {sex}/{age_min}+/{activity}")


def band_labels(table: CaloricTable) -> list:
    labels = [f"{INFANT_BAND[0]}-{INFANT_BAND[1]}"]
    for lo, hi in table.bands:
        labels.append(f"{lo}+" if not np.isfinite(hi) else f"{lo}-{int(hi)}")
    return labels


def overlap_matrix(table: CaloricTable) -> np.ndarray:
    """Share of each 5-year group falling in each caloric band.

    Row = projection group, column = band (infants first). Single ages within
    a group are taken as equally populated.
    """
    edges = [INFANT_BAND] + list(table.bands)
    out = np.zeros((N_GROUPS, len(edges)))
    for g in range(N_GROUPS):
        span = STEP if g < N_GROUPS - 1 else OPEN_AGE_SPAN
        for age in range(g * STEP, g * STEP + span):
            for b, (lo, hi) in enumerate(edges):
                if lo <= age <= hi:
                    out[g, b] += 1.0
                    break
            else:
                raise ValidationError(f"age {age} not covered by caloric bands")
        out[g] /= span
    return out


def map_pyramid_to_caloric_groups(pyramid: AgeSexPyramid, table: CaloricTable | None = None) -> np.ndarray:
    """Counts per caloric band, shape ``(2, n_bands)`` (female row first)."""
    table = table or CaloricTable.from_csv()
    return pyramid.counts @ overlap_matrix(table)


def group_weights(table: CaloricTable, activity: str, bound: str, infant_kcal=INFANT_KCAL) -> np.ndarray:
    """kcal/day per thousand people of each projection group, shape ``(2, 21)``."""
    if activity not in ACTIVITIES:
        raise ValidationError(f"unknown activity {activity!r}")
    if bound not in BOUNDS:
        raise ValidationError(f"unknown bound {bound!r}")
    share = overlap_matrix(table)
    per_band = np.empty((2, share.shape[1]))
    for s, sex in enumerate(("F", "M")):
        per_band[s, 0] = infant_kcal
        for b, (lo, _) in enumerate(table.bands, start=1):
            per_band[s, b] = table.value(sex, lo, activity, bound)
    return PEOPLE_PER_UNIT * per_band @ share.T


@dataclass(frozen=True)
class RequirementEstimate:
    country: str
    year: int
    kcal_per_day_lower: float
    kcal_per_day_upper: float
    kcal_per_day_point: float
    basis: str


def min_caloric_requirement(pyramid: AgeSexPyramid, table: CaloricTable | None = None,
                            activity: str = "SomewhatActive", bound: str = "midpoint",
                            infant_kcal=INFANT_KCAL) -> RequirementEstimate:
    """Total daily requirement: sum over groups of intake times population.

    The point value uses ``(activity, bound)``; the lower and upper fields
    always use non-active minima and very-active maxima.
    """
    table = table or CaloricTable.from_csv()
    counts = pyramid.counts
    point = float(np.sum(group_weights(table, activity, bound, infant_kcal) * counts))
    lower = float(np.sum(group_weights(table, "NotActive", "lower", infant_kcal) * counts))
    upper = float(np.sum(group_weights(table, "VeryActive", "upper", infant_kcal) * counts))
    return RequirementEstimate(pyramid.country, pyramid.year, lower, upper, point, f"{activity}/{bound}")


REQUIREMENT_COLUMNS = ("lower", "point", "upper")


def requirement_trajectories(pop: TrajectorySet, table: CaloricTable | None = None,
                             activity: str = "SomewhatActive", bound: str = "midpoint",
                             infant_kcal=INFANT_KCAL) -> TrajectorySet:
    """Requirement paths for every population trajectory.

    Input values have shape ``(n, T, 2, 21)``; output ``(n, T, 3)`` with
    columns lower, point, upper. Trajectory ids are preserved.
    """
    table = table or CaloricTable.from_csv()
    if pop.values.shape[2:] != (2, N_GROUPS):
        raise ValidationError(f"expected pyramid trajectories, got item shape {pop.values.shape[2:]}")
    weights = np.stack([
        group_weights(table, "NotActive", "lower", infant_kcal),
        group_weights(table, activity, bound, infant_kcal),
        group_weights(table, "VeryActive", "upper", infant_kcal),
    ])
    values = np.einsum("ntsg,csg->ntc", pop.values, weights)
    meta = dict(pop.meta, columns=REQUIREMENT_COLUMNS, basis=f"{activity}/{bound}")
    return TrajectorySet("calorie_requirement", pop.ids, pop.years, values, meta)


__all__ = [
    "ACTIVITIES", "AGE_GROUPS", "BOUNDS", "CaloricTable", "RequirementEstimate", "band_labels",
    "group_weights", "map_pyramid_to_caloric_groups", "min_caloric_requirement",
    "overlap_matrix", "requirement_trajectories",
]

"""Trajectory batches and per-trajectory random streams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Stream tags keep the draws for different quantities of one trajectory apart.
STREAM_TFR = 1
STREAM_E0 = 2
STREAM_GAP = 3


def trajectory_rng(seed: int, trajectory_id: int, stream: int) -> np.random.Generator:
    """Independent generator for one (seed, trajectory, stream) triple.

    The stream only depends on its key, never on how many other trajectories
    are drawn or in which order, so batches can be split across workers and
    reassembled bit-identically.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trajectory_id), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(seed: int, ids, stream: int, size: int) -> np.ndarray:
    """Matrix of N(0, 1) draws, one row per trajectory id."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((len(ids), size))
    for row, tid in enumerate(ids):
        out[row] = trajectory_rng(seed, tid, stream).standard_normal(size)
    return out


@dataclass(frozen=True)
class TrajectorySet:
    """Simulated paths of one quantity.

    ``values`` has shape ``(n, len(years), *item_shape)``; row ``k`` belongs to
    ``ids[k]``. Rows are kept in ascending id order.
    """

    quantity: str
    ids: np.ndarray
    years: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        years = np.asarray(self.years, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if values.ndim < 2 or values.shape[0] != len(ids) or values.shape[1] != len(years):
            raise ValidationError(
                f"{self.quantity}: values shape {values.shape} does not match "
                f"{len(ids)} ids x {len(years)} years"
            )
        if len(np.unique(ids)) != len(ids):
            raise ValidationError(f"{self.quantity}: duplicate trajectory ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.ids)

    def year_index(self, year: int) -> int:
        hits = np.flatnonzero(self.years == int(year))
        if len(hits) == 0:
            raise KeyError(f"{self.quantity}: year {year} not in trajectory set")
        return int(hits[0])

    def at_year(self, year: int) -> np.ndarray:
        """Instantaneous distribution: the ``n`` values at one year."""
        return self.values[:, self.year_index(year)]

    def select(self, ids) -> "TrajectorySet":
        ids = np.asarray(ids, dtype=np.int64)
        pos = {int(t): k for k, t in enumerate(self.ids)}
        missing = [int(t) for t in ids if int(t) not in pos]
        if missing:
            raise ValidationError(f"{self.quantity}: unknown trajectory ids {missing[:5]}")
        rows = np.array(sorted(pos[int(t)] for t in ids), dtype=np.int64)
        return TrajectorySet(self.quantity, self.ids[rows], self.years, self.values[rows], dict(self.meta))

    def map(self, quantity: str, fn) -> "TrajectorySet":
        """Apply ``fn`` to the values array, keeping ids and years."""
        return TrajectorySet(quantity, self.ids, self.years, fn(self.values), dict(self.meta))

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def quantile(self, p) -> np.ndarray:
        return np.quantile(self.values, p, axis=0)

    def interpolate_years(self, years) -> "TrajectorySet":
        """Linear interpolation in time onto ``years`` (e.g. 5-year to annual)."""
        years = np.asarray(years, dtype=np.int64)
        if years.min() < self.years.min() or years.max() > self.years.max():
            raise ValidationError(
                f"{self.quantity}: cannot interpolate to {years.min()}-{years.max()} "
                f"from {self.years.min()}-{self.years.max()}"
            )
        right = np.searchsorted(self.years, years, side="left")
        right = np.clip(right, 1, len(self.years) - 1)
        left = right - 1
        y0 = self.years[left].astype(float)
        y1 = self.years[right].astype(float)
        frac = (years - y0) / (y1 - y0)
        shape = (1, len(years)) + (1,) * (self.values.ndim - 2)
        frac = frac.reshape(shape)
        v0 = self.values[:, left]
        v1 = self.values[:, right]
        out = v0 + frac * (v1 - v0)
        # exact hits keep their value bit-for-bit
        exact = np.isin(years, self.years)
        if exact.any():
            out[:, exact] = self.values[:, np.searchsorted(self.years, years[exact])]
        return TrajectorySet(self.quantity, self.ids, years, out, dict(self.meta))

"""On-disk trajectory database: one CSV per (scenario, quantity) plus a manifest."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .demography import AGE_GROUPS
from .errors import ValidationError
from .trajectories import TrajectorySet

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
SCALAR_COLUMNS = ("trajectory_id", "year", "value")
PYRAMID_COLUMNS = ("trajectory_id", "year", "sex", "age_group", "value")
FLOAT_FORMAT = "%.17g"


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _frame(ts: TrajectorySet) -> pd.DataFrame:
    if np.any(np.diff(ts.ids) < 0):
        order = np.argsort(ts.ids, kind="stable")
        ts = TrajectorySet(ts.quantity, ts.ids[order], ts.years, ts.values[order], ts.meta)
    n, T = ts.values.shape[:2]
    item = ts.values.shape[2:]
    if item == ():
        return pd.DataFrame({
            "trajectory_id": np.repeat(ts.ids, T),
            "year": np.tile(ts.years, n),
            "value": ts.values.reshape(-1),
        })
    if item == (2, len(AGE_GROUPS)):
        G = len(AGE_GROUPS)
        reps = 2 * G
        return pd.DataFrame({
            "trajectory_id": np.repeat(ts.ids, T * reps),
            "year": np.tile(np.repeat(ts.years, reps), n),
            "sex": np.tile(np.repeat(np.array(["F", "M"]), G), n * T),
            "age_group": np.tile(np.array(AGE_GROUPS), n * T * 2),
            "value": ts.values.reshape(-1),
        })
    raise ValidationError(f"{ts.quantity}: cannot store items of shape {item}")


class TrajectoryStore:
    """Directory layout ``<root>/<scenario>/<quantity>.csv`` with ``manifest.json``.

    Rows are ordered by (trajectory_id, year); floats use 17 significant
    digits so a write/read round trip is bit-exact.
    """

    def __init__(self, root, seed=None, config=None):
        self.root = Path(root)
        self.seed = None
        self.config = None
        self._files = {}
        if (self.root / MANIFEST).exists():
            self._load_manifest()
        if seed is not None:
            self.seed = seed
        if config is not None:
            self.config = config

    def _load_manifest(self):
        man = json.loads((self.root / MANIFEST).read_text())
        if man.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"{self.root}: unsupported store schema {man.get('schema_version')}")
        self.seed = man.get("seed")
        self.config = man.get("config")
        if self.config is not None and config_hash(self.config) != man.get("config_hash"):
            raise ValidationError(f"{self.root}: manifest config hash does not match its config")
        self._files = {tuple(k.split("/", 1)): v for k, v in man.get("files", {}).items()}

    @property
    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "config_hash": config_hash(self.config) if self.config is not None else None,
            "config": self.config,
            "files": {f"{s}/{q}": self._files[(s, q)] for s, q in sorted(self._files)},
        }

    def path(self, scenario: str, quantity: str) -> Path:
        return self.root / scenario / f"{quantity}.csv"

    def write(self, scenario: str, ts: TrajectorySet, quantity: str | None = None) -> Path:
        quantity = quantity or ts.quantity
        p = self.path(scenario, quantity)
        p.parent.mkdir(parents=True, exist_ok=True)
        _frame(ts).to_csv(p, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self._files[(scenario, quantity)] = file_digest(p)
        return p

    def flush(self):
        self.root.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.manifest, indent=2, sort_keys=True, default=str) + "\n"
        (self.root / MANIFEST).write_text(text)

    def entries(self) -> list:
        if not self._files:
            return sorted((p.parent.name, p.stem) for p in self.root.glob("*/*.csv"))
        return sorted(self._files)

    def scenarios(self) -> list:
        return sorted({s for s, _ in self.entries()})

    def quantities(self, scenario: str) -> list:
        return sorted(q for s, q in self.entries() if s == scenario)

    def read(self, scenario: str, quantity: str) -> TrajectorySet:
        p = self.path(scenario, quantity)
        if not p.exists():
            known = ", ".join(f"{s}/{q}" for s, q in self.entries()) or "none"
            raise ValidationError(f"store {self.root}: no {scenario}/{quantity} (available: {known})")
        df = pd.read_csv(p, float_precision="round_trip", keep_default_na=False)
        cols = tuple(df.columns)
        ids = np.unique(df["trajectory_id"].to_numpy(dtype=np.int64))
        years = np.unique(df["year"].to_numpy(dtype=np.int64))
        values = df["value"].to_numpy(dtype=float)
        if cols == SCALAR_COLUMNS:
            shape = (len(ids), len(years))
        elif cols == PYRAMID_COLUMNS:
            shape = (len(ids), len(years), 2, len(AGE_GROUPS))
        else:
            raise ValidationError(f"{p}: unexpected columns {cols}")
        if values.size != np.prod(shape):
            raise ValidationError(f"{p}: {values.size} values do not fill {shape}")
        return TrajectorySet(quantity, ids, years, values.reshape(shape), {"scenario": scenario})

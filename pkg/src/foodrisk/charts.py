"""Fan-chart data (median and central 90% band per year)."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import ValidationError
from .trajectories import TrajectorySet

FAN_COLUMNS = ("year", "median", "lo90", "hi90")


def fan_chart_frame(ts: TrajectorySet) -> pd.DataFrame:
    if ts.values.ndim != 2:
        raise ValidationError(f"{ts.quantity}: fan charts need scalar trajectories")
    lo, med, hi = np.quantile(ts.values, (0.05, 0.5, 0.95), axis=0)
    # guard against rounding making a band cross the median
    lo, hi = np.minimum(lo, med), np.maximum(hi, med)
    return pd.DataFrame({"year": ts.years, "median": med, "lo90": lo, "hi90": hi}, columns=FAN_COLUMNS)


def emit_fan_chart_data(store, quantity: str, scenario: str, path=None, svg=None) -> pd.DataFrame:
    """Read one stored quantity and write its fan-chart table (and optional SVG)."""
    if scenario not in store.scenarios():
        raise ValidationError(f"unknown scenario {scenario!r}; store has {store.scenarios()}")
    if quantity not in store.quantities(scenario):
        raise ValidationError(f"unknown quantity {quantity!r} for {scenario}; "
                              f"store has {store.quantities(scenario)}")
    frame = fan_chart_frame(store.read(scenario, quantity))
    if path is not None:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    if svg is not None:
        render_svg(frame, svg, title=f"{quantity} ({scenario})")
    return frame


def render_svg(frame: pd.DataFrame, path, title: str = ""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "foodrisk"

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(frame["year"], frame["lo90"], frame["hi90"], alpha=0.3, label="90% band")
    ax.plot(frame["year"], frame["median"], label="median")
    ax.set_title(title)
    ax.set_xlabel("year")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)

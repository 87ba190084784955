"""Command-line entry point (``foodrisk``)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

from . import pipeline as pl
from .capacity import calibrate_two_layer
from .charts import emit_fan_chart_data
from .errors import NumericalError, ValidationError
from .io import read_history_csv
from .risk import RiskMeasureConfig, across_scenario_risk, within_scenario_risk
from .scenarios import SCENARIO_NAMES
from .store import TrajectoryStore

log = logging.getLogger("foodrisk")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

# flag name -> config key
OVERRIDES = {
    "n": "n_trajectories", "seed": "master_seed", "base_year": "base_year", "horizon": "horizon_year",
    "group": "country_group", "q_lo": "q_lo", "q_hi": "q_hi", "perspective": "perspective",
    "theta": "theta", "weights": "weights", "land_cap": "land_cap", "out": "output_dir",
    "grid": "grid_size", "ridge_lambda": "ridge_lambda", "activity": "activity", "bound": "bound",
}


def _add_config(p):
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--base-year", type=int)
    p.add_argument("--horizon", type=int, help="last projection year")
    p.add_argument("--group", choices=("HiFert", "LoFert", "RichOECD"))
    p.add_argument("--q-lo", type=float)
    p.add_argument("--q-hi", type=float)
    p.add_argument("--perspective", choices=("Zero", "NC", "LC", "VC"))
    p.add_argument("--theta", help="uncertainty aversion (number or 'inf')")
    p.add_argument("--weights", help="Ignorance, Optimistic, Pessimistic or a weights JSON file")
    p.add_argument("--land-cap", type=float)
    p.add_argument("--grid", type=int, help="barycenter grid size")
    p.add_argument("--ridge-lambda", type=float)
    p.add_argument("--activity", choices=("NotActive", "SomewhatActive", "VeryActive"))
    p.add_argument("--bound", choices=("lower", "upper", "midpoint"))
    p.add_argument("--out", help="output directory")


def _config(args) -> pl.RunConfig:
    overrides = {key: getattr(args, flag) for flag, key in OVERRIDES.items() if hasattr(args, flag)}
    if overrides.get("output_dir") is not None:
        overrides["output_dir"] = str(Path(overrides["output_dir"]).resolve())
    return pl.RunConfig.load(args.config, overrides)


def _store(cfg) -> TrajectoryStore:
    return TrajectoryStore(cfg.out_dir / "store", seed=cfg.master_seed, config=cfg.manifest_config())


def _reports(cfg) -> Path:
    p = cfg.out_dir / "reports"
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_make_demo(args):
    from .demo import write_demo

    cfg = write_demo(args.out, n=args.n, seed=args.seed, horizon=args.horizon)
    print(cfg)


def cmd_validate(args):
    cfg = _config(args)
    inputs = pl.ingest(cfg)
    cfg.risk_config()
    if inputs.history is not None:
        pl.calibrate(cfg, inputs)
    print(f"ok: {cfg.country}, {cfg.base_year}-{cfg.horizon_year}, {cfg.n_trajectories} trajectories")


def cmd_run(args):
    cfg = _config(args)
    result = pl.run_pipeline(cfg)
    for name, path in sorted(result.reports.items()):
        print(f"{name}\t{path}")


def cmd_simulate_pop(args):
    cfg = _config(args)
    inputs = pl.ingest(cfg)
    projections = pl.simulate_population(cfg, inputs)
    store = _store(cfg)
    with pl.stage("store"):
        pl.write_population(store, projections, pyramids=True)
        store.flush()
    print(store.root)


def cmd_classify(args):
    cfg = _config(args)
    store = _store(cfg)
    defs = pl.load_ssp_definitions(cfg.path("ssp_definitions"))
    with pl.stage("load"):
        tfr = store.read(pl.ENSEMBLE, "tfr")
        e0_f = store.read(pl.ENSEMBLE, "e0_f")
    levels, selections = pl.classify(cfg, tfr, e0_f, defs)
    path = _reports(cfg) / "classification.csv"
    pl._write_csv(levels, path)
    for ssp, sel in selections.items():
        print(f"{ssp}\t{sel.tfr_level}/{sel.e0_level}/{sel.migration_level}\t{len(sel.ids)}")


def cmd_calibrate(args):
    with pl.stage("calibrate"):
        history = read_history_csv(args.history, args.country)
        model = calibrate_two_layer(history, args.ridge_lambda, args.time_origin)
        model.save(args.out)
    for target, eq in model.equations.items():
        print(f"{target}\tR2={eq.r2:.4f}\tlambda={eq.lam:.3g}")


def cmd_project(args):
    cfg = _config(args)
    inputs = pl.ingest(cfg)
    store = _store(cfg)
    with pl.stage("load"):
        pyramids = {lvl: store.read(pl.ENSEMBLE, f"pyramid_{lvl}") for lvl in pl.LEVELS}
        path = cfg.out_dir / "reports" / "classification.csv"
        if not path.exists():
            raise ValidationError(f"{path} not found; run 'classify' first")
        levels = pd.read_csv(path)
    selections = pl.compose_selections(cfg, levels, inputs.definitions)
    model = pl.calibrate(cfg, inputs)
    results = pl.project_scenarios(cfg, inputs, model, pyramids, selections)
    with pl.stage("store"):
        for name, r in results.items():
            store.write(name, r.population)
            store.write(name, r.requirement)
            for q in pl.STATE_QUANTITIES:
                store.write(name, r.food[q])
        store.flush()
        model.save(_reports(cfg) / "coefficients.json")
    print(store.root)


def _scenario_inputs(store, name):
    return (store.read(name, "calorie_requirement"), store.read(name, "fsc"), store.read(name, "water_stress"))


def _w_initial(cfg):
    return float(read_history_csv(cfg.path("history"), cfg.country).water_stress[-1])


def cmd_risk(args):
    cfg = _config(args)
    store = _store(cfg)
    names = [args.scenario] if args.scenario else [s for s in SCENARIO_NAMES if s in store.scenarios()]
    w0 = _w_initial(cfg)
    for name in names:
        with pl.stage("risk"):
            if name not in store.scenarios():
                raise ValidationError(f"scenario {name!r} not in store (has {store.scenarios()})")
            res = within_scenario_risk(*_scenario_inputs(store, name), cfg.perspective, w0)
            path = pl._write_csv(res.to_frame(), _reports(cfg) / f"risk_within_{name}.csv")
        print(path)


def cmd_risk_across(args):
    cfg = _config(args)
    store = _store(cfg)
    w0 = _w_initial(cfg)
    with pl.stage("risk"):
        rc: RiskMeasureConfig = cfg.risk_config()
        per = {s: _scenario_inputs(store, s) for s in rc.weights if s in store.scenarios()}
        res = across_scenario_risk(per, rc, cfg.perspective, w0, renormalize=cfg.allow_missing_scenarios)
        path = pl._write_csv(res.to_frame(), _reports(cfg) / "risk_across.csv")
    print(path)


def cmd_emit_chart(args):
    with pl.stage("emit-chart"):
        store = TrajectoryStore(args.store)
        frame = emit_fan_chart_data(store, args.quantity, args.scenario, args.out, args.svg)
    if args.out is None:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="foodrisk", description="Scenario-based food security risk engine")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-demo", help="write a synthetic input set and config")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--seed", type=int, default=20240101)
    s.add_argument("--horizon", type=int, default=2050)
    s.set_defaults(func=cmd_make_demo)

    for name, fn, helptext in (
        ("validate", cmd_validate, "check every input file and the configuration"),
        ("run", cmd_run, "run the whole pipeline"),
        ("simulate-pop", cmd_simulate_pop, "simulate TFR/e0 paths and population pyramids"),
        ("classify", cmd_classify, "classify trajectories into Low/Medium/High and SSP sets"),
        ("project", cmd_project, "project requirements and food-system capacity per scenario"),
    ):
        s = sub.add_parser(name, help=helptext)
        _add_config(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("risk", help="within-scenario risk tables")
    _add_config(s)
    s.add_argument("--scenario", choices=SCENARIO_NAMES, help="one scenario (default: all in store)")
    s.set_defaults(func=cmd_risk)

    s = sub.add_parser("risk-across", help="across-scenario (barycentric) risk table")
    _add_config(s)
    s.set_defaults(func=cmd_risk_across)

    s = sub.add_parser("calibrate", help="fit the two-layer model to a history CSV")
    s.add_argument("--history", required=True)
    s.add_argument("--country")
    s.add_argument("--ridge-lambda", type=float, help="fixed penalty (default: leave-one-out choice)")
    s.add_argument("--time-origin", type=int, default=1990)
    s.add_argument("--out", required=True, help="coefficients JSON to write")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("emit-chart", help="fan-chart table (year, median, lo90, hi90)")
    s.add_argument("--store", required=True)
    s.add_argument("--quantity", required=True)
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--svg", help="also render an SVG chart")
    s.set_defaults(func=cmd_emit_chart)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s %(message)s", force=True)
    try:
        args.func(args)
    except pl.StageError as exc:
        code = EXIT_NUMERICAL if isinstance(exc.cause, NumericalError) else EXIT_VALIDATION
        log.error("%s", exc)
        return code
    except ValidationError as exc:
        log.error("[%s] %s", args.command, exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        log.error("[%s] %s", args.command, exc)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``vbtrack run | summarize | simulate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench import SWEEP_VARS, TRACKERS, ExperimentSpec, load_archive, run_experiment, summarize
from .metrics import OspaParams
from .models import ConfigurationError, TrackingError
from .sim import ScenarioConfig, generate_scenario, write_scenario

log = logging.getLogger("vbtrack")


def load_config(path) -> dict:
    """Read a JSON experiment spec."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return data


def _parse_sweep(text: str):
    var, sep, values = text.partition("=")
    if not sep or var not in SWEEP_VARS:
        raise argparse.ArgumentTypeError(f"expected VAR=v1,v2,... with VAR in {SWEEP_VARS}")
    try:
        vals = tuple(float(v) for v in values.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not vals:
        raise argparse.ArgumentTypeError("sweep needs at least one value")
    return var, vals


def _parse_trackers(text: str):
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in names if t not in TRACKERS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"trackers must be a nonempty subset of {TRACKERS}")
    return names


_ON_OFF = {"on": (True,), "off": (False,), "both": (False, True)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbtrack", description="Multi-target tracking Monte Carlo benchmark.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte Carlo experiment")
    run.add_argument("--config", help="JSON experiment spec; flags override it")
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--workers", type=int, default=1, help="parallel worker processes (default 1)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trackers", type=_parse_trackers, help="comma list from pdaf,pmht,vpmht")
    run.add_argument(
        "--sweep",
        type=_parse_sweep,
        help="VAR=v1,v2,... with VAR noise_var or clutter_rate. noise_var is the variance; "
        "a value of 0 is clamped to 1e-6 so the measurement covariance stays invertible.",
    )
    run.add_argument("--track-loss", choices=sorted(_ON_OFF), help="inject target deaths (default both)")
    run.add_argument("--runs", type=int, help="Monte Carlo runs per condition (default 200)")
    run.add_argument("--scans", type=int, help="scans per run (default 40)")
    run.add_argument("--ospa-c", type=float, help="OSPA cutoff (default 100)")
    run.add_argument("--ospa-p", type=float, help="OSPA order (default 2)")
    run.add_argument("--alpha0", type=float, help="Dirichlet prior concentration (default 1)")
    run.add_argument("--clutter-in-estep", choices=("on", "off"), help="PMHT clutter column in the E-step")

    summ = sub.add_parser("summarize", help="print the efficiency table for a results directory")
    summ.add_argument("dir")

    sim = sub.add_parser("simulate", help="write one scenario to a JSON-lines file")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--noise-var", type=float)
    sim.add_argument("--clutter-rate", type=float)
    sim.add_argument("--track-loss", choices=("on", "off"), default="off")
    return p


def spec_from_args(args) -> ExperimentSpec:
    spec = ExperimentSpec.from_dict(load_config(args.config)) if args.config else ExperimentSpec()
    kw = {}
    if args.seed is not None:
        kw["base_seed"] = args.seed
    if args.trackers:
        kw["trackers"] = args.trackers
    if args.sweep:
        kw["sweep_var"], kw["sweep_values"] = args.sweep
    if args.track_loss:
        kw["track_loss"] = _ON_OFF[args.track_loss]
    if args.runs is not None:
        kw["n_runs"] = args.runs
    if args.scans is not None:
        kw["scenario"] = replace(spec.scenario, n_scans=args.scans)
    if args.ospa_c is not None or args.ospa_p is not None:
        kw["ospa"] = OspaParams(
            spec.ospa.cutoff if args.ospa_c is None else args.ospa_c,
            spec.ospa.order if args.ospa_p is None else args.ospa_p,
        )
    tk = {}
    if args.alpha0 is not None:
        tk["alpha0"] = args.alpha0
    if args.clutter_in_estep:
        tk["clutter_in_estep"] = args.clutter_in_estep == "on"
    if tk:
        kw["tracker"] = replace(spec.tracker, **tk)
    return replace(spec, **kw)


def _cmd_run(args) -> int:
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    spec = spec_from_args(args)

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            log.info("%d/%d runs", done, total)

    results = run_experiment(spec, workers=args.workers, out=Path(args.out), progress=progress)
    failed = sum(r.error is not None for r in results)
    print(summarize(load_archive(args.out)).to_string(index=False))
    if failed:
        log.warning("%d tracker runs failed; see failures.csv", failed)
    return 0


def _cmd_summarize(args) -> int:
    path = Path(args.dir)
    if not (path / "results.csv").exists():
        raise ConfigurationError(f"{path}: no results.csv")
    df = load_archive(path)
    if df.empty:
        raise ConfigurationError(f"{path}: results archive is empty")
    print(summarize(df).to_string(index=False))
    return 0


def _cmd_simulate(args) -> int:
    kw = {"seed": args.seed, "track_loss_enabled": args.track_loss == "on"}
    if args.noise_var is not None:
        kw["noise_var"] = args.noise_var
    if args.clutter_rate is not None:
        kw["clutter_rate"] = args.clutter_rate
    cfg = ScenarioConfig(**kw)
    truth, scans = generate_scenario(cfg)
    write_scenario(args.out, cfg, truth, scans)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": _cmd_run, "summarize": _cmd_summarize, "simulate": _cmd_simulate}[args.command]
    try:
        return handler(args)
    except (ConfigurationError, TrackingError, OSError, ValueError, TypeError) as exc:
        print(f"vbtrack: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

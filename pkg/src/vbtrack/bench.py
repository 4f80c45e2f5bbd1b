"""Monte Carlo experiment harness.

Every (condition, run) work item generates one scenario and runs each
selected tracker on the identical scan sequence. Batch trackers slide a
window of ``batch_len`` scans forward one scan at a time and commit the
smoothed estimate of the oldest scan.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import kalman
from .metrics import OspaParams, TrackStatus, mean_and_stderr, ospa
from .models import ConfigurationError, GaussianBelief, LinearDynamics, Scan, SensorModel
from .pdaf import PdafConfig, pdaf_update
from .pmht import TrackerConfig, pmht_batch_iterate
from .sim import ScenarioConfig, ScenarioTruth, generate_scenario
from .vpmht import vpmht_batch_iterate

log = logging.getLogger(__name__)

TRACKERS = ("pdaf", "pmht", "vpmht")
SWEEP_VARS = ("noise_var", "clutter_rate")
RESULT_COLUMNS = ["sweep_var", "sweep_value", "track_loss", "run", "scan", "tracker", "ospa", "ospa_all", "iterations", "converged"]


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    trackers: Tuple[str, ...] = TRACKERS
    sweep_var: str = "clutter_rate"
    sweep_values: Tuple[float, ...] = (10.0,)
    track_loss: Tuple[bool, ...] = (False, True)
    n_runs: int = 200
    base_seed: int = 0
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    ospa: OspaParams = field(default_factory=OspaParams)
    gate_prob: float = 0.99
    loss_threshold: float = 0.5
    init_pos_var: float = 10.0
    init_vel_var: float = 4.0

    def __post_init__(self):
        if not self.trackers:
            raise ConfigurationError("tracker set must be nonempty")
        bad = set(self.trackers) - set(TRACKERS)
        if bad:
            raise ConfigurationError(f"unknown trackers: {sorted(bad)}")
        if self.n_runs < 1:
            raise ConfigurationError("n_runs must be >= 1")
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigurationError(f"sweep variable must be one of {SWEEP_VARS}")
        if not self.sweep_values:
            raise ConfigurationError("sweep needs at least one value")
        if not self.track_loss:
            raise ConfigurationError("track_loss needs at least one setting")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trackers"] = list(self.trackers)
        d["sweep_values"] = list(self.sweep_values)
        d["track_loss"] = list(self.track_loss)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        kw = {}
        if "scenario" in d:
            kw["scenario"] = ScenarioConfig.from_dict(d.pop("scenario"))
        if "tracker" in d:
            kw["tracker"] = TrackerConfig(**d.pop("tracker"))
        if "ospa" in d:
            kw["ospa"] = OspaParams(**d.pop("ospa"))
        for key in ("trackers", "sweep_values", "track_loss"):
            if key in d:
                kw[key] = tuple(d.pop(key))
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown experiment fields: {sorted(unknown)}")
        kw.update(d)
        return cls(**kw)


@dataclass
class RunResult:
    """Per-scan outcome of one tracker on one scenario."""

    tracker: str
    sweep_value: float
    track_loss: bool
    run: int
    ospa: np.ndarray
    wall_time: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    ospa_all: Optional[np.ndarray] = None
    lost_scan: Optional[np.ndarray] = None
    error: Optional[str] = None


def run_seed(base_seed: int, value: float, run: int) -> int:
    """Scenario seed derived from the base seed, sweep value and run index."""
    key = int(round(float(value) * 1000))
    ss = np.random.SeedSequence([int(base_seed), key & 0xFFFFFFFF, int(run)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def initial_beliefs(truth: ScenarioTruth, seed: int, pos_var: float, vel_var: float) -> GaussianBelief:
    """Priors at scan 0: truth perturbed by a draw from the prior covariance."""
    n = truth.states.shape[1]
    cov = np.diag([pos_var, vel_var, pos_var, vel_var])
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 7919])
    err = rng.standard_normal((n, 4)) @ np.linalg.cholesky(cov).T
    return GaussianBelief(truth.states[0] + err, np.broadcast_to(cov, (n, 4, 4)).copy())


def _score(positions, truth: ScenarioTruth, t: int, params: OspaParams, active: np.ndarray):
    """OSPA of the kept tracks at scan ``t``.

    The first value drops targets whose track has been declared lost from the
    truth set as well; the second scores against every live target.
    """
    live = truth.alive[t]
    pts = truth.states[t][:, [0, 2]]
    return ospa(positions, pts[live & active], params), ospa(positions, pts[live], params)


def run_batch_tracker(
    kind: str,
    scans: Sequence[Scan],
    truth: ScenarioTruth,
    init: GaussianBelief,
    sensor: SensorModel,
    dyn: LinearDynamics,
    cfg: TrackerConfig,
    params: OspaParams,
    loss_threshold: float = 0.5,
) -> dict:
    """Sliding-window PMHT or VPMHT over a scenario.

    The tracker always carries all ``n`` components; loss declarations only
    decide which estimates are scored. Each window's first E-step starts from
    the previous window's smoothed trajectory, shifted one scan and extended
    by prediction.
    """
    iterate = {"pmht": pmht_batch_iterate, "vpmht": vpmht_batch_iterate}[kind]
    T = len(scans)
    n = init.mean.shape[0]
    status = TrackStatus(n, 3, loss_threshold)
    prior = init
    traj = None
    out = {k: np.zeros(T) for k in ("ospa", "ospa_all", "wall_time", "iterations")}
    out["converged"] = np.zeros(T, dtype=bool)
    for k in range(T):
        start = time.perf_counter()
        window = scans[k : k + cfg.batch_len]
        if kind == "pmht":
            smoothed, state = iterate(window, prior, cfg, dyn, sensor, init_traj=traj)
            mass, filtered, iters, conv = state.mass, state.filtered, state.iterations, state.converged
        else:
            res = iterate(window, prior, cfg, dyn, sensor, init_traj=traj)
            smoothed, mass, filtered, iters, conv = res.smoothed, res.mass, res.filtered, res.iterations, res.converged
        status.observe(k, mass[0])
        prior = kalman.predict(filtered[0], dyn)
        n_next = len(scans[k + 1 : k + 1 + cfg.batch_len])
        traj = kalman.shift_trajectory(smoothed, n_next, dyn) if n_next else None
        out["wall_time"][k] = time.perf_counter() - start
        out["iterations"][k] = iters
        out["converged"][k] = conv
        positions = smoothed.position[0][status.active]
        out["ospa"][k], out["ospa_all"][k] = _score(positions, truth, k, params, status.active)
    out["lost_scan"] = status.lost_scan
    return out


def run_pdaf(
    scans: Sequence[Scan],
    truth: ScenarioTruth,
    init: GaussianBelief,
    sensor: SensorModel,
    dyn: LinearDynamics,
    pcfg: PdafConfig,
    params: OspaParams,
    loss_threshold: float = 0.5,
) -> dict:
    """Independent per-target PDAF over a scenario."""
    T = len(scans)
    n = init.mean.shape[0]
    status = TrackStatus(n, 3, loss_threshold)
    belief = init
    out = {k: np.zeros(T) for k in ("ospa", "ospa_all", "wall_time", "iterations")}
    out["converged"] = np.ones(T, dtype=bool)
    for k in range(T):
        start = time.perf_counter()
        pred = belief if k == 0 else kalman.predict(belief, dyn)
        belief, gated = pdaf_update(pred, scans[k], sensor, pcfg)
        status.observe(k, gated)
        out["wall_time"][k] = time.perf_counter() - start
        positions = belief.position[status.active]
        out["ospa"][k], out["ospa_all"][k] = _score(positions, truth, k, params, status.active)
    out["lost_scan"] = status.lost_scan
    return out


def run_scenario(spec: ExperimentSpec, scenario: ScenarioConfig, truth, scans, seed: int) -> Dict[str, dict]:
    """Run every tracker of ``spec`` on one realized scenario."""
    sensor = scenario.sensor()
    dyn = scenario.dynamics()
    init = initial_beliefs(truth, seed, spec.init_pos_var, spec.init_vel_var)
    results = {}
    for name in spec.trackers:
        if name == "pdaf":
            pcfg = PdafConfig.from_sensor(sensor, spec.gate_prob)
            results[name] = run_pdaf(scans, truth, init, sensor, dyn, pcfg, spec.ospa, spec.loss_threshold)
        else:
            results[name] = run_batch_tracker(
                name, scans, truth, init, sensor, dyn, spec.tracker, spec.ospa, spec.loss_threshold
            )
    return results


def _work_item(args) -> List[RunResult]:
    spec, value, loss, run = args
    seed = run_seed(spec.base_seed, value, run)
    scenario = replace(spec.scenario, **{spec.sweep_var: value}, track_loss_enabled=loss, seed=seed)
    T = scenario.n_scans
    try:
        truth, scans = generate_scenario(scenario)
        per = run_scenario(spec, scenario, truth, scans, seed)
    except Exception as exc:  # recorded, never silently dropped
        log.warning("run failed (value=%s, loss=%s, run=%d): %s", value, loss, run, exc)
        nan = np.full(T, np.nan)
        return [
            RunResult(name, value, loss, run, nan, nan, nan, np.zeros(T, dtype=bool), nan, error=f"{type(exc).__name__}: {exc}")
            for name in spec.trackers
        ]
    return [
        RunResult(
            name, value, loss, run, r["ospa"], r["wall_time"], r["iterations"], r["converged"], r["ospa_all"], r["lost_scan"]
        )
        for name, r in per.items()
    ]


def work_items(spec: ExperimentSpec):
    return [
        (spec, float(value), bool(loss), run)
        for loss in spec.track_loss
        for value in spec.sweep_values
        for run in range(spec.n_runs)
    ]


def run_experiment(spec: ExperimentSpec, workers: int = 1, out: Optional[Path] = None, progress=None) -> List[RunResult]:
    """Execute all (condition, run) work items, optionally writing outputs.

    Results are sorted by condition, run and tracker, so the archive does not
    depend on the worker count.
    """
    items = work_items(spec)
    results: List[RunResult] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_work_item, items, chunksize=max(1, len(items) // (4 * workers))):
                results.extend(batch)
                if progress:
                    progress(len(results) // len(spec.trackers), len(items))
    else:
        for item in items:
            results.extend(_work_item(item))
            if progress:
                progress(len(results) // len(spec.trackers), len(items))
    order = {name: i for i, name in enumerate(TRACKERS)}
    results.sort(key=lambda r: (r.track_loss, r.sweep_value, r.run, order[r.tracker]))
    if out is not None:
        write_archive(spec, results, out)
    return results


def results_frame(spec_or_var, results: Sequence[RunResult]) -> pd.DataFrame:
    """One row per (run, scan, tracker), including wall time."""
    sweep_var = getattr(spec_or_var, "sweep_var", spec_or_var)
    frames = []
    for r in results:
        T = len(r.ospa)
        frames.append(
            pd.DataFrame(
                {
                    "sweep_var": sweep_var,
                    "sweep_value": r.sweep_value,
                    "track_loss": int(r.track_loss),
                    "run": r.run,
                    "scan": np.arange(T),
                    "tracker": r.tracker,
                    "ospa": r.ospa,
                    "ospa_all": r.ospa_all,
                    "iterations": r.iterations,
                    "converged": r.converged.astype(int),
                    "wall_time_s": r.wall_time,
                }
            )
        )
    df = pd.concat(frames, ignore_index=True)
    order = {name: i for i, name in enumerate(TRACKERS)}
    df["_o"] = df["tracker"].map(order)
    df = df.sort_values(["track_loss", "sweep_value", "run", "scan", "_o"], kind="stable").drop(columns="_o")
    return df.reset_index(drop=True)


def summarize(df: pd.DataFrame) -> pd.DataFrame:
    """Mean time per scan, iterations and OSPA per tracker and track-loss setting."""
    rows = []
    for (tracker, loss), g in df.groupby(["tracker", "track_loss"], sort=False):
        per_run = g.groupby(["sweep_value", "run"])["ospa"].mean()
        m, se = mean_and_stderr(per_run.to_numpy())
        rows.append(
            {
                "tracker": tracker,
                "track_loss": int(loss),
                "time_per_scan_s": float(g["wall_time_s"].mean()) if "wall_time_s" in g else float("nan"),
                "iterations": float(g["iterations"].mean()),
                "ospa_mean": m,
                "ospa_se": se,
                "n_runs": int(per_run.size),
            }
        )
    out = pd.DataFrame(rows)
    order = {name: i for i, name in enumerate(TRACKERS)}
    out["_o"] = out["tracker"].map(order)
    return out.sort_values(["_o", "track_loss"]).drop(columns="_o").reset_index(drop=True)


def condition_table(df: pd.DataFrame) -> pd.DataFrame:
    """Mean OSPA per condition and tracker, with the noise standard deviation."""
    per_run = df.groupby(["sweep_var", "sweep_value", "track_loss", "tracker", "run"], sort=False)["ospa"].mean()
    rows = []
    for (var, value, loss, tracker), g in per_run.groupby(level=[0, 1, 2, 3], sort=True):
        m, se = mean_and_stderr(g.to_numpy())
        row = {"sweep_var": var, "sweep_value": value, "track_loss": loss, "tracker": tracker, "ospa_mean": m, "ospa_se": se}
        if var == "noise_var":
            row["noise_std"] = float(np.sqrt(value))
        rows.append(row)
    return pd.DataFrame(rows)


def ospa_by_scan(df: pd.DataFrame) -> pd.DataFrame:
    """Mean OSPA against scan index, one column per tracker, per condition."""
    table = df.pivot_table(index=["sweep_var", "sweep_value", "track_loss", "scan"], columns="tracker", values="ospa", aggfunc="mean")
    cols = [t for t in TRACKERS if t in table.columns]
    return table[cols].reset_index()


def paired_difference(df: pd.DataFrame, a: str, b: str, **where) -> Tuple[float, float, int]:
    """Mean and standard error of per-run mean OSPA(a) - OSPA(b)."""
    sel = df
    for k, v in where.items():
        sel = sel[sel[k] == v]
    per_run = sel.groupby(["sweep_value", "track_loss", "run", "tracker"])["ospa"].mean().unstack("tracker")
    per_run = per_run.dropna(subset=[a, b])
    diff = (per_run[a] - per_run[b]).to_numpy()
    m, se = mean_and_stderr(diff)
    return m, se, int(diff.size)


FLOAT_FORMAT = "%.10g"


def write_archive(spec: ExperimentSpec, results: Sequence[RunResult], out) -> None:
    """Write results, timings, summary, tables and a config echo to ``out``.

    ``results.csv`` carries only deterministic columns; wall-clock times go
    to ``timings.csv``.
    """
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        df = results_frame(spec, results)
        df[RESULT_COLUMNS].to_csv(out / "results.csv", index=False, float_format=FLOAT_FORMAT)
        df[["sweep_var", "sweep_value", "track_loss", "run", "scan", "tracker", "wall_time_s"]].to_csv(
            out / "timings.csv", index=False, float_format=FLOAT_FORMAT
        )
        summarize(df).to_csv(out / "summary.csv", index=False, float_format=FLOAT_FORMAT)
        condition_table(df).to_csv(out / "conditions.csv", index=False, float_format=FLOAT_FORMAT)
        ospa_by_scan(df).to_csv(out / "ospa_by_scan.csv", index=False, float_format=FLOAT_FORMAT)
        failed = [r for r in results if r.error]
        if failed:
            pd.DataFrame(
                [{"sweep_value": r.sweep_value, "track_loss": int(r.track_loss), "run": r.run, "tracker": r.tracker, "error": r.error} for r in failed]
            ).to_csv(out / "failures.csv", index=False)
        (out / "config.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc


def load_archive(out) -> pd.DataFrame:
    """Read ``results.csv`` (and ``timings.csv`` if present) back into one frame."""
    out = Path(out)
    try:
        df = pd.read_csv(out / "results.csv")
        timings = out / "timings.csv"
        if timings.exists():
            df = df.merge(pd.read_csv(timings), on=["sweep_var", "sweep_value", "track_loss", "run", "scan", "tracker"], how="left")
    except OSError as exc:
        raise OSError(f"cannot read results from {out}: {exc}") from exc
    return df

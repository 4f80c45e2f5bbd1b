"""Ground-truth scenarios and measurement generation.

Random streams are split per purpose and per target, so toggling one
mechanism (say track loss) leaves every other draw unchanged for a seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .models import (
    CLUTTER,
    MEAS_DIM,
    ConfigurationError,
    Measurement,
    Region,
    Scan,
    constant_velocity,
    position_sensor,
)


@dataclass(frozen=True)
class ScenarioConfig:
    n_targets: int = 8
    region_size: float = 500.0
    n_scans: int = 40
    meas_rate: float = 10.0
    detect_prob: float = 0.9
    noise_var: float = 3.0
    clutter_rate: float = 10.0
    track_loss_enabled: bool = False
    loss_period: int = 10
    seed: int = 0
    init_speed_std: float = 5.0
    q_pos: float = 10.0
    q_vel: float = 1.0

    def __post_init__(self):
        for name in ("n_targets", "n_scans", "meas_rate", "noise_var", "clutter_rate"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not self.region_size > 0:
            raise ConfigurationError("region_size must be > 0")
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ConfigurationError("detect_prob must lie in [0, 1]")
        if self.loss_period < 1:
            raise ConfigurationError("loss_period must be >= 1")

    @property
    def region(self) -> Region:
        return Region.square(self.region_size)

    def dynamics(self):
        return constant_velocity(self.q_pos, self.q_vel)

    def sensor(self):
        """Sensor model as seen by the trackers."""
        return position_sensor(self.noise_var, self.region, self.detect_prob, self.clutter_rate)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ScenarioTruth:
    """Target trajectories indexed ``[scan, target]``.

    ``death_scan[i]`` is the first scan at which target ``i`` no longer
    exists, or ``-1``. ``process_noise`` holds the motion draws and
    ``reflected`` flags the steps where a boundary reflection was applied.
    """

    states: np.ndarray
    alive: np.ndarray
    birth_scan: np.ndarray
    death_scan: np.ndarray
    process_noise: np.ndarray
    reflected: np.ndarray

    def live_positions(self, t: int) -> np.ndarray:
        return self.states[t, self.alive[t]][:, [0, 2]]


def _reflect(x: np.ndarray, reg: Region) -> bool:
    hit = False
    for p, v, lo, hi in ((0, 1, reg.xmin, reg.xmax), (2, 3, reg.ymin, reg.ymax)):
        if x[p] < lo:
            x[p] = 2 * lo - x[p]
            x[v] = -x[v]
            hit = True
        elif x[p] > hi:
            x[p] = 2 * hi - x[p]
            x[v] = -x[v]
            hit = True
    return hit


def measurement_shuffle(scan: Scan, seed) -> Scan:
    """Randomly permute the measurement order of ``scan``."""
    if len(scan) < 2:
        return scan
    order = np.random.default_rng(seed).permutation(len(scan))
    return Scan(scan.t, tuple(scan.measurements[k] for k in order))


def generate_scenario(cfg: ScenarioConfig) -> Tuple[ScenarioTruth, List[Scan]]:
    """Simulate trajectories and scans for ``cfg``.

    Targets start uniformly in the region with Gaussian velocities, follow
    the constant-velocity model with boundary reflection, and each detected
    target emits a Poisson number of noisy position measurements. Uniform
    Poisson clutter is added and each scan is shuffled.
    """
    n, T = cfg.n_targets, cfg.n_scans
    dyn = cfg.dynamics()
    reg = cfg.region
    root = np.random.SeedSequence(cfg.seed)
    motion_ss, detect_ss, count_ss, noise_ss, clutter_ss, death_ss, shuffle_ss = root.spawn(7)
    motion = [np.random.default_rng(s) for s in motion_ss.spawn(n)]
    detect = [np.random.default_rng(s) for s in detect_ss.spawn(n)]
    count = [np.random.default_rng(s) for s in count_ss.spawn(n)]
    noise = [np.random.default_rng(s) for s in noise_ss.spawn(n)]
    clutter_rng = np.random.default_rng(clutter_ss)
    death_rng = np.random.default_rng(death_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)

    chol_q = np.linalg.cholesky(dyn.Q)
    states = np.zeros((T, n, 4))
    w = np.zeros((T, n, 4))
    reflected = np.zeros((T, n), dtype=bool)
    alive = np.zeros((T, n), dtype=bool)
    death = np.full(n, -1, dtype=int)
    noise_std = np.sqrt(cfg.noise_var)

    x = np.zeros((n, 4))
    for i in range(n):
        g = motion[i]
        x[i, 0] = g.uniform(reg.xmin, reg.xmax)
        x[i, 2] = g.uniform(reg.ymin, reg.ymax)
        x[i, [1, 3]] = g.normal(0.0, cfg.init_speed_std, size=2)
    live = np.ones(n, dtype=bool)

    scans = []
    for t in range(T):
        if t > 0:
            for i in range(n):
                w[t, i] = chol_q @ motion[i].standard_normal(4)
                x[i] = dyn.F @ x[i] + w[t, i]
                reflected[t, i] = _reflect(x[i], reg)
            if cfg.track_loss_enabled and t % cfg.loss_period == 0 and live.any():
                victim = int(death_rng.choice(np.flatnonzero(live)))
                live[victim] = False
                death[victim] = t
        states[t] = x
        alive[t] = live

        meas = []
        for i in range(n):
            detected = detect[i].random() < cfg.detect_prob
            k = int(count[i].poisson(cfg.meas_rate))
            if not live[i] or not detected or k == 0:
                continue
            pos = x[i, [0, 2]]
            pts = pos + noise_std * noise[i].standard_normal((k, MEAS_DIM))
            meas.extend(Measurement(p, i) for p in pts)
        k_clu = int(clutter_rng.poisson(cfg.clutter_rate))
        if k_clu:
            cx = clutter_rng.uniform(reg.xmin, reg.xmax, size=k_clu)
            cy = clutter_rng.uniform(reg.ymin, reg.ymax, size=k_clu)
            meas.extend(Measurement(np.array([a, b]), CLUTTER) for a, b in zip(cx, cy))
        scan_seed = int(shuffle_rng.integers(2**63))
        scans.append(measurement_shuffle(Scan(t, tuple(meas)), scan_seed))

    truth = ScenarioTruth(states, alive, np.zeros(n, dtype=int), death, w, reflected)
    return truth, scans


# Scenario files: JSON lines, one header, then one record per scan and one
# per (scan, target) truth state. Floats are rounded to 9 significant digits.

def _r9(v) -> float:
    return float(f"{float(v):.9g}")


def write_scenario(path, cfg: ScenarioConfig, truth: ScenarioTruth, scans: List[Scan]) -> None:
    path = Path(path)
    lines = [json.dumps({"type": "header", "version": 1, "config": asdict(cfg)}, sort_keys=True)]
    for scan in scans:
        rows = [
            [_r9(m.value[0]), _r9(m.value[1]), int(CLUTTER if m.origin_label is None else m.origin_label)]
            for m in scan.measurements
        ]
        lines.append(json.dumps({"type": "scan", "t": int(scan.t), "measurements": rows}))
        for i in range(truth.states.shape[1]):
            lines.append(
                json.dumps(
                    {
                        "type": "truth",
                        "t": int(scan.t),
                        "target": i,
                        "alive": bool(truth.alive[scan.t, i]),
                        "state": [_r9(v) for v in truth.states[scan.t, i]],
                    }
                )
            )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write scenario file {path}: {exc}") from exc


def read_scenario(path) -> Tuple[ScenarioConfig, ScenarioTruth, List[Scan]]:
    path = Path(path)
    try:
        records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read scenario file {path}: {exc}") from exc
    if not records or records[0].get("type") != "header":
        raise ConfigurationError(f"{path}: missing header record")
    cfg = ScenarioConfig.from_dict(records[0]["config"])
    n, T = cfg.n_targets, cfg.n_scans
    states = np.zeros((T, n, 4))
    alive = np.zeros((T, n), dtype=bool)
    scans = []
    for rec in records[1:]:
        if rec["type"] == "scan":
            meas = tuple(Measurement(np.array(r[:2], dtype=float), int(r[2])) for r in rec["measurements"])
            scans.append(Scan(rec["t"], meas))
        elif rec["type"] == "truth":
            states[rec["t"], rec["target"]] = rec["state"]
            alive[rec["t"], rec["target"]] = rec["alive"]
    death = np.full(n, -1, dtype=int)
    for i in range(n):
        gone = np.flatnonzero(~alive[:, i])
        if gone.size:
            death[i] = gone[0]
    truth = ScenarioTruth(states, alive, np.zeros(n, dtype=int), death, np.zeros((T, n, 4)), np.zeros((T, n), dtype=bool))
    return cfg, truth, scans

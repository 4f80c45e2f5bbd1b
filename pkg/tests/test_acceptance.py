"""Acceptance criteria, one printed PASS/FAIL line each.

The Monte Carlo criteria (5 and 6) share one 200-run experiment at the
default configuration; it takes a few minutes with several workers.
"""
import os

import numpy as np
import pytest

from conftest import record
from oracles import H_POS, joint_smoother, joseph_update, ospa_bruteforce, random_spd, stacked_update
from problems import random_problem, single_target_problem
from vbtrack.bench import ExperimentSpec, paired_difference, results_frame, run_experiment, summarize
from vbtrack.kalman import filter_smooth, weighted_info_update
from vbtrack.metrics import OspaParams, ospa
from vbtrack.models import GaussianBelief, Measurement, Region, Scan, constant_velocity, position_sensor
from vbtrack.pmht import TrackerConfig, pmht_batch_iterate
from vbtrack.sim import ScenarioConfig
from vbtrack.vpmht import forward_mstep, pi_point_estimate, vpmht_batch_iterate

WORKERS = min(8, os.cpu_count() or 1)


def _psd_violation(c):
    c = np.asarray(c)
    asym = np.abs(c - np.swapaxes(c, -1, -2)).max()
    eig = np.linalg.eigvalsh(0.5 * (c + np.swapaxes(c, -1, -2))).min()
    return asym, eig


def _monotone_worst(trace):
    tr = np.asarray(trace)
    if tr.size < 2:
        return 0.0
    drop = tr[:-1] - tr[1:]
    return float(np.max(drop / np.maximum(np.abs(tr[:-1]), 1e-300)))


def test_criterion_1_invariants():
    cfg = TrackerConfig(delta_terminate=1e-10, max_iters=60)
    worst = dict(rows=0.0, pi=0.0, asym=0.0, eig=np.inf, elbo=-np.inf, em=-np.inf)
    n = 150
    for seed in range(n):
        scans, prior, dyn, sensor = random_problem(10_000 + seed)
        sm, st = pmht_batch_iterate(scans, prior, cfg, dyn, sensor)
        res = vpmht_batch_iterate(scans, prior, cfg, dyn, sensor)
        for rm in res.responsibilities:
            if len(rm.r):
                worst["rows"] = max(worst["rows"], np.abs(rm.r.sum(axis=1) - 1).max())
        for pi in (st.pi, pi_point_estimate(res.weights)):
            worst["pi"] = max(worst["pi"], np.abs(pi.sum(axis=-1) - 1).max(), max(0.0, -pi.min()))
        for c in (sm.cov, st.filtered.cov, res.smoothed.cov, res.filtered.cov):
            a, e = _psd_violation(c)
            worst["asym"] = max(worst["asym"], a)
            worst["eig"] = min(worst["eig"], e)
        worst["elbo"] = max(worst["elbo"], _monotone_worst(res.elbo_trace))
        worst["em"] = max(worst["em"], _monotone_worst(st.trace))
    ok = [
        record("1a", worst["rows"] <= 1e-9, f"responsibility rows sum to 1 over {n} problems, max error {worst['rows']:.2e} (tol 1e-9)"),
        record("1b", worst["pi"] <= 1e-9, f"mixing weights on the simplex, max error {worst['pi']:.2e} (tol 1e-9)"),
        record(
            "1c",
            worst["asym"] <= 1e-9 and worst["eig"] >= -1e-9,
            f"covariances symmetric PSD, max asymmetry {worst['asym']:.2e}, min eigenvalue {worst['eig']:.3e} (slack 1e-9)",
        ),
        record("1d", worst["elbo"] <= 1e-6, f"ELBO nondecreasing, worst relative drop {worst['elbo']:.2e} (slack 1e-6)"),
        record("1e", worst["em"] <= 1e-6, f"PMHT objective nondecreasing, worst relative drop {worst['em']:.2e} (slack 1e-6)"),
    ]
    assert all(ok)


def test_criterion_2a_info_update_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        b = GaussianBelief(rng.normal(size=4) * 10, random_spd(rng, 4, 5.0))
        R = random_spd(rng, 2)
        sensor = position_sensor(1.0, Region.square(100))
        sensor = type(sensor)(sensor.H, R, sensor.detect_prob, sensor.region, sensor.clutter_rate)
        m = int(rng.integers(1, 6))
        Z = rng.normal(size=(m, 2)) * 5
        r = rng.uniform(0.01, 1.0, m)
        out = weighted_info_update(b, Scan(0, [Measurement(z) for z in Z]), r, sensor)
        x, P = b.mean, b.cov
        for j in range(m):
            x, P = joseph_update(x, P, Z[j], H_POS, R / r[j])
        worst = max(worst, np.abs(out.mean - x).max(), np.abs(out.cov - P).max())
    assert record("2a", worst < 1e-8, f"weighted information update vs sequential Joseph, 100 cases, max diff {worst:.2e} (tol 1e-8)")


def test_criterion_2b_ospa_oracle():
    rng = np.random.default_rng(77)
    worst, cases = 0.0, 0
    for m in range(7):
        for n in range(7):
            for _ in range(3):
                X, Y = rng.uniform(0, 200, (m, 2)), rng.uniform(0, 200, (n, 2))
                c, p = rng.uniform(10, 150), rng.choice([1.0, 2.0, 3.0])
                worst = max(worst, abs(ospa(X, Y, OspaParams(c, p)) - ospa_bruteforce(X, Y, c, p)))
                cases += 1
    assert record("2b", worst <= 1e-10, f"OSPA vs permutation brute force, {cases} cases up to 6x6, max diff {worst:.2e} (tol 1e-10)")


def test_criterion_2c_smoother_oracle():
    worst = 0.0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        T = 2 + seed % 2
        dyn = constant_velocity(rng.uniform(0.5, 10), rng.uniform(0.1, 2))
        R = random_spd(rng, 2)
        base = position_sensor(1.0, Region.square(100))
        sensor = type(base)(base.H, R, base.detect_prob, base.region, 0.0)
        prior = GaussianBelief(rng.normal(size=4) * 10, random_spd(rng, 4, 5.0))
        zs = [rng.normal(size=(int(rng.integers(0, 3)), 2)) * 5 for _ in range(T)]

        def update(t, p):
            if not len(zs[t]):
                return p
            return weighted_info_update(p, Scan(t, [Measurement(z) for z in zs[t]]), np.ones(len(zs[t])), sensor)

        cache = filter_smooth(prior, T, update, dyn)
        means, covs = joint_smoother(prior.mean, prior.cov, dyn.F, dyn.Q, H_POS, R, zs)
        worst = max(worst, np.abs(cache.smoothed.mean - means).max(), np.abs(cache.smoothed.cov - covs).max())
    assert record("2c", worst < 1e-8, f"RTS smoother vs joint Gaussian conditioning, 40 problems of 2-3 scans, max diff {worst:.2e} (tol 1e-8)")


def _reduction_error(run):
    worst = 0.0
    for seed in range(20):
        scans, zs, prior, dyn, sensor = single_target_problem(500 + seed, 3 + seed % 3)
        sm = run(scans, prior, dyn, sensor)
        means, covs = joint_smoother(prior.mean, prior.cov, dyn.F, dyn.Q, H_POS, sensor.R, [z[None] for z in zs])
        worst = max(worst, np.abs(sm.mean[:, 0] - means).max(), np.abs(sm.cov[:, 0] - covs).max())
    return worst


@pytest.mark.parametrize("name", ["pmht", "vpmht"])
def test_criterion_3_degenerate_reduction(name):
    cfg = TrackerConfig()
    if name == "pmht":
        run = lambda s, p, d, z: pmht_batch_iterate(s, [p], cfg, d, z)[0]
    else:
        run = lambda s, p, d, z: vpmht_batch_iterate(s, [p], cfg, d, z).smoothed
    worst = _reduction_error(run)
    assert record(f"3-{name}", worst < 1e-6, f"{name.upper()} single target, no clutter vs Kalman smoother, max diff {worst:.2e} (tol 1e-6)")


def test_criterion_4_frozen_responsibilities():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(900 + seed)
        sensor = position_sensor(rng.uniform(0.5, 5), Region.square(100), clutter_rate=2.0)
        n, m = int(rng.integers(1, 5)), int(rng.integers(0, 10))
        prior = GaussianBelief.stack([GaussianBelief(rng.normal(50, 10, 4), random_spd(rng, 4, 5)) for _ in range(n)])
        labels = rng.integers(-1, n, size=m)
        Z = rng.uniform(0, 100, (m, 2))
        r = np.zeros((m, n + 1))
        r[np.arange(m), np.where(labels < 0, n, labels)] = 1.0
        post = forward_mstep(prior, Scan(0, [Measurement(z) for z in Z]), r, sensor)
        for i in range(n):
            own = Z[labels == i]
            x, P = stacked_update(prior[i].mean, prior[i].cov, own, H_POS, sensor.R) if len(own) else (prior[i].mean, prior[i].cov)
            worst = max(worst, np.abs(post[i].mean - x).max(), np.abs(post[i].cov - P).max())
    assert record("4", worst < 1e-9, f"one-hot forward M-step vs multi-measurement Bayes update, 50 scans, max diff {worst:.2e} (tol 1e-9)")


@pytest.fixture(scope="session")
def default_experiment(tmp_path_factory):
    spec = ExperimentSpec(scenario=ScenarioConfig(), n_runs=200, track_loss=(False, True), base_seed=2024)
    results = run_experiment(spec, workers=WORKERS, out=tmp_path_factory.mktemp("default"))
    failed = [r for r in results if r.error]
    assert not failed, failed[0].error
    df = results_frame(spec, results)
    return df, summarize(df)


def _mean_ospa(summary, tracker, loss):
    row = summary[(summary.tracker == tracker) & (summary.track_loss == loss)].iloc[0]
    return row.ospa_mean, row.ospa_se


@pytest.mark.slow
def test_criterion_5a_vpmht_beats_pmht_with_loss(default_experiment):
    df, _ = default_experiment
    m, se, n = paired_difference(df, "vpmht", "pmht", track_loss=1)
    assert record("5a", m < 0 and -m > 2 * se, f"with track loss, mean OSPA(VPMHT) - OSPA(PMHT) = {m:.3f} m, SE {se:.3f}, {n} paired runs (need < -2 SE)")


@pytest.mark.slow
def test_criterion_5b_vpmht_not_worse_without_loss(default_experiment):
    _, summary = default_experiment
    v, p = _mean_ospa(summary, "vpmht", 0)[0], _mean_ospa(summary, "pmht", 0)[0]
    assert record("5b", v <= p, f"without track loss, mean OSPA VPMHT {v:.3f} m vs PMHT {p:.3f} m (need <=)")


@pytest.mark.slow
@pytest.mark.parametrize("loss", [0, 1])
def test_criterion_5c_pmht_beats_pdaf(default_experiment, loss):
    _, summary = default_experiment
    p, d = _mean_ospa(summary, "pmht", loss)[0], _mean_ospa(summary, "pdaf", loss)[0]
    assert record(f"5c-loss{loss}", p < d, f"noise 3, clutter 10, track loss {'on' if loss else 'off'}: mean OSPA PMHT {p:.3f} m vs PDAF {d:.3f} m (need <)")


@pytest.mark.slow
@pytest.mark.parametrize("loss", [0, 1])
def test_criterion_6a_pdaf_fastest(default_experiment, loss):
    _, s = default_experiment
    t = s[s.track_loss == loss].set_index("tracker")["time_per_scan_s"]
    ok = t["pdaf"] < min(t["pmht"], t["vpmht"])
    assert record(
        f"6a-loss{loss}", ok,
        f"time per scan PDAF {t['pdaf'] * 1e3:.2f} ms, PMHT {t['pmht'] * 1e3:.2f} ms, VPMHT {t['vpmht'] * 1e3:.2f} ms (PDAF fastest)",
    )


@pytest.mark.slow
def test_criterion_6b_vpmht_fewer_iterations(default_experiment):
    _, s = default_experiment
    it = s[s.track_loss == 1].set_index("tracker")["iterations"]
    assert record("6b", it["vpmht"] < it["pmht"], f"with track loss, mean iterations VPMHT {it['vpmht']:.3f} vs PMHT {it['pmht']:.3f} (need <)")


@pytest.mark.slow
def test_criterion_6c_pmht_iterations_rise_with_loss(default_experiment):
    _, s = default_experiment
    it = s[s.tracker == "pmht"].set_index("track_loss")["iterations"]
    assert record("6c", it[1] > it[0], f"PMHT mean iterations with loss {it[1]:.3f} vs without {it[0]:.3f} (need strictly greater)")


def test_criterion_7_determinism(tmp_path):
    spec = ExperimentSpec(scenario=ScenarioConfig(n_scans=12), n_runs=4, track_loss=(False, True), base_seed=99)
    run_experiment(spec, workers=1, out=tmp_path / "a")
    run_experiment(spec, workers=1, out=tmp_path / "b")
    run_experiment(spec, workers=8, out=tmp_path / "c")
    a, b, c = ((tmp_path / k / "results.csv").read_bytes() for k in "abc")
    assert record("7", a == b == c, f"results.csv identical across two runs and across 1 vs 8 workers ({len(a)} bytes)")

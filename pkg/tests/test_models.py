import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gaussian_logpdf, random_spd
from vbtrack.models import (
    ConfigurationError,
    GaussianBelief,
    Measurement,
    Region,
    Scan,
    SingularModelError,
    as_points,
    clutter_log_density,
    constant_velocity,
    gaussian_log_density,
    position_sensor,
    state_vector,
)


def test_standard_normal_at_origin():
    assert gaussian_log_density([0.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)


def test_density_at_mean_is_normalizer(rng):
    cov = random_spd(rng, 2)
    mean = rng.normal(size=2)
    expect = -math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
    assert gaussian_log_density(mean, mean, cov) == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_density_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, 2, scale=rng.uniform(0.1, 10))
    x, mean = rng.normal(size=(2, 2)) * 3
    assert gaussian_log_density(x, mean, cov) == pytest.approx(gaussian_logpdf(x, mean, cov), abs=1e-10)


def test_density_batched(rng):
    cov = random_spd(rng, 2)
    xs = rng.normal(size=(5, 2))
    out = gaussian_log_density(xs, np.zeros(2), cov)
    assert out.shape == (5,)
    for x, v in zip(xs, out):
        assert v == pytest.approx(gaussian_logpdf(x, np.zeros(2), cov), abs=1e-10)


def test_density_maximized_at_mean(rng):
    cov = random_spd(rng, 2)
    mean = rng.normal(size=2)
    peak = gaussian_log_density(mean, mean, cov)
    for d in rng.normal(size=(200, 2)) * 0.5:
        assert gaussian_log_density(mean + d, mean, cov) < peak


def test_density_integrates_to_one():
    cov = np.array([[0.04, 0.01], [0.01, 0.09]])
    g = np.linspace(-2, 2, 801)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    dens = np.exp(gaussian_log_density(pts, np.zeros(2), cov))
    cell = (g[1] - g[0]) ** 2
    assert dens.sum() * cell == pytest.approx(1.0, abs=1e-3)


def test_non_pd_covariance_names_matrix():
    with pytest.raises(SingularModelError, match="cov"):
        gaussian_log_density([0, 0], [0, 0], np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_log_density([0, 0, 0], [0, 0], np.eye(2))


@pytest.mark.parametrize(
    "region, expect",
    [
        (Region.square(500.0), -math.log(250000.0)),
        (Region.square(1.0), 0.0),
        (Region(0.0, 2.0, 0.0, 1.0), -math.log(2.0)),
    ],
)
def test_clutter_log_density(region, expect):
    sensor = position_sensor(1.0, region)
    assert clutter_log_density(sensor) == pytest.approx(expect, abs=1e-14)


@pytest.mark.parametrize("region", [Region(0, 0, 0, 1), Region(0, 1, 1, 0)])
def test_clutter_density_rejects_degenerate_region(region):
    with pytest.raises(ConfigurationError):
        clutter_log_density(position_sensor(1.0, region))


def test_zero_noise_is_clamped():
    s = position_sensor(0.0, Region.square(10))
    assert np.all(np.linalg.eigvalsh(s.R) > 0)
    assert s.R[0, 0] == pytest.approx(1e-6)


@pytest.mark.parametrize("kw", [{"noise_var": -1.0}, {"noise_var": 1.0, "detect_prob": 1.5}, {"noise_var": 1.0, "clutter_rate": -2}])
def test_sensor_validation(kw):
    with pytest.raises(ConfigurationError):
        position_sensor(region=Region.square(10), **kw)


def test_constant_velocity_layout():
    d = constant_velocity(10, 1)
    x = state_vector(0, 1, 0, 2)
    assert np.allclose(d.F @ x, [1, 1, 2, 2])
    assert np.allclose(np.diag(d.Q), [10, 1, 10, 1])
    assert d.Q_logdet == pytest.approx(math.log(100.0))


def test_belief_batching():
    b = GaussianBelief(np.zeros((3, 4)), np.broadcast_to(np.eye(4), (3, 4, 4)))
    assert len(b) == 3
    assert b[1].mean.shape == (4,)
    assert b.position.shape == (3, 2)
    stacked = GaussianBelief.stack([b[0], b[2]])
    assert stacked.cov.shape == (2, 4, 4)


def test_scan_points_and_labels():
    scan = Scan(4, [Measurement([1.0, 2.0], 0), Measurement([3.0, 4.0], -1)])
    assert len(scan) == 2
    assert np.array_equal(as_points(scan), [[1, 2], [3, 4]])
    assert scan.labels == [0, -1]
    assert as_points(Scan(0)).shape == (0, 2)


def test_origin_label_ignored_in_equality():
    assert Measurement(np.array([1.0, 1.0]), 3).origin_label == 3
    a, b = Scan(0, [Measurement([1.0, 1.0], 0)]), Scan(0, [Measurement([1.0, 1.0], 5)])
    assert np.array_equal(a.values, b.values)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(-50, 50), st.floats(-50, 50))
def test_isotropic_density_closed_form(var, dx, dy):
    val = gaussian_log_density([dx, dy], [0.0, 0.0], var * np.eye(2))
    expect = -math.log(2 * math.pi) - math.log(var) - 0.5 * (dx * dx + dy * dy) / var
    assert val == pytest.approx(expect, rel=1e-10, abs=1e-10)

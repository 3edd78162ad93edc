import math

import numpy as np
import pytest
from scipy import integrate, stats

from errors import DomainError, UnsupportedError
from models.point_models import Point
from service.diffusion_service import (
    bm_increment,
    bridge_crossing_prob,
    circle_kernel_eigen,
    circle_kernel_wrapped,
    geodesic_rw_step,
    heat_kernel,
    log_heat_kernel,
    poisson_clock,
    sample_chain_path,
    sample_geodesic_rw_path,
    sample_unit_disk,
    sphere_kernel_series,
    sphere_log_kernel_mp,
    strip_crossing_prob,
)
from service.rng_service import seed_stream
from service.spaces_service import CircleSpace, EuclideanSpace, Hyperbolic2Space, Sphere2Space, orthonormal_frame


# -------------------
# Kernels
# -------------------

def test_euclidean_kernel_at_zero_distance():
    x = Point.euclidean(0.0)
    assert heat_kernel(EuclideanSpace(1), 1.0, x, x) == pytest.approx(0.3989423, abs=1e-7)


@pytest.mark.parametrize("method", ["wrapped", "eigen"])
def test_circle_kernel_reference_value(method):
    value = heat_kernel(CircleSpace(), 0.25, Point.circle(0.0), Point.circle(0.5), method=method)
    assert value == pytest.approx(0.985617, abs=1e-6)


@pytest.mark.parametrize("t", [1e-3, 1e-2, 0.1, 0.5, 1.0, 3.0, 10.0])
@pytest.mark.parametrize("delta", [0.0, 0.13, 0.5, 0.77])
def test_circle_theta_identity(t, delta):
    assert circle_kernel_wrapped(delta, t) == pytest.approx(circle_kernel_eigen(delta, t), abs=1e-12)


def test_sphere_kernel_flattens_to_uniform():
    x, y = Point.sphere([1, 0, 0]), Point.sphere([0, 0, 1])
    assert heat_kernel(Sphere2Space(), 20.0, x, y) == pytest.approx(1.0 / (4.0 * math.pi), abs=1e-8)


@pytest.mark.parametrize("t", [0.05, 0.5, 2.0])
def test_sphere_kernel_normalized(t):
    mass, _ = integrate.quad(lambda c: 2.0 * math.pi * sphere_kernel_series(c, t), -1.0, 1.0, limit=400)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_circle_chapman_kolmogorov():
    s, t, x, y = 0.1, 0.2, 0.05, 0.6
    value, _ = integrate.quad(lambda z: circle_kernel_wrapped(x - z, s) * circle_kernel_wrapped(z - y, t), 0.0, 1.0,
                              epsabs=1e-12, limit=200)
    assert value == pytest.approx(circle_kernel_wrapped(x - y, s + t), abs=1e-6)


def test_sphere_chapman_kolmogorov():
    s, t = 0.2, 0.3
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 0.6, 0.8])

    def integrand(theta, phi):
        z = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
        return sphere_kernel_series(z @ x, s) * sphere_kernel_series(z @ y, t) * math.sin(theta)

    value, _ = integrate.dblquad(integrand, 0.0, 2 * math.pi, 0.0, math.pi, epsabs=1e-9)
    assert value == pytest.approx(sphere_kernel_series(x @ y, s + t), abs=1e-6)


def test_kernel_symmetry():
    space = Sphere2Space()
    x, y = Point.sphere([0.6, 0.8, 0.0]), Point.sphere([0.0, 0.0, 1.0])
    assert heat_kernel(space, 0.3, x, y) == pytest.approx(heat_kernel(space, 0.3, y, x), abs=1e-12)
    c = CircleSpace()
    assert heat_kernel(c, 0.3, Point.circle(0.1), Point.circle(0.7)) == pytest.approx(
        heat_kernel(c, 0.3, Point.circle(0.7), Point.circle(0.1)), abs=1e-12)


def test_kernel_rejects_non_positive_time():
    with pytest.raises(DomainError):
        heat_kernel(CircleSpace(), 0.0, Point.circle(0.0), Point.circle(0.1))


def test_hyperbolic_kernel_not_offered():
    x = Point.hyperbolic([1.0, 0.0, 0.0])
    with pytest.raises(UnsupportedError):
        heat_kernel(Hyperbolic2Space(), 1.0, x, x)


def test_sphere_kernel_below_floor_is_nan():
    x = Point.sphere([1, 0, 0])
    assert math.isnan(heat_kernel(Sphere2Space(), 1e-5, x, x))


def test_log_kernel_euclidean_small_time():
    t = 1e-3
    value = -2.0 * t * log_heat_kernel(EuclideanSpace(1), t, Point.euclidean(0.0), Point.euclidean(1.0))
    assert value == pytest.approx(1.0 + t * math.log(2 * math.pi * t), abs=1e-12)
    assert value == pytest.approx(0.99493, abs=1e-5)


def test_sphere_log_kernel_precisions_agree():
    c = 0.3
    assert sphere_log_kernel_mp(c, 0.1) == pytest.approx(math.log(sphere_kernel_series(c, 0.1)), rel=1e-9)


def test_sphere_log_kernel_small_time_near_varadhan():
    t = 1e-3
    x, y = Point.sphere([1, 0, 0]), Point.sphere([0, 1, 0])
    value = -2.0 * t * log_heat_kernel(Sphere2Space(), t, x, y)
    assert value == pytest.approx((math.pi / 2) ** 2, rel=0.1)


# -------------------
# Bridge and clocks
# -------------------

def test_bridge_crossing_reference():
    assert bridge_crossing_prob(1.0, 1.0, 1.0) == pytest.approx(0.1353353, abs=1e-7)
    assert bridge_crossing_prob(0.0, 1.0, 1.0) == 1.0
    assert bridge_crossing_prob(1.0, 1.0, 1e-3) < 1e-300


def _strip_killed_density(a, b, width, t):
    k = np.arange(1, 400)
    modes = np.sin(k * np.pi * a / width) * np.sin(k * np.pi * b / width) * np.exp(-(k * np.pi / width) ** 2 * t / 2)
    return 2.0 / width * modes.sum()


@pytest.mark.parametrize("a, b, t", [(0.1, 0.3, 0.05), (0.1, 0.3, 0.25), (0.2, 0.25, 0.01), (0.45, 0.05, 0.1)])
def test_strip_crossing_matches_sine_series(a, b, t):
    free = math.exp(-((b - a) ** 2) / (2 * t)) / math.sqrt(2 * math.pi * t)
    expected = 1.0 - _strip_killed_density(a, b, 0.5, t) / free
    assert strip_crossing_prob(a, b, 0.5, t) == pytest.approx(expected, abs=1e-10)

    n = np.arange(-50, 51)
    wrapped = np.sum(np.exp(-((b - a + n) ** 2) / (2 * t))) / math.sqrt(2 * math.pi * t)
    periodic = 1.0 - _strip_killed_density(a, b, 0.5, t) / wrapped
    assert strip_crossing_prob(a, b, 0.5, t, period=1.0) == pytest.approx(periodic, abs=1e-10)


def test_wide_strip_reduces_to_one_wall():
    assert strip_crossing_prob(0.1, 0.1, 50.0, 0.01) == pytest.approx(bridge_crossing_prob(0.1, 0.1, 0.01), abs=1e-12)
    assert strip_crossing_prob(0.0, 0.2, 0.5, 0.1) == 1.0
    with pytest.raises(DomainError):
        strip_crossing_prob(0.1, 0.2, 0.0, 0.1)


def test_poisson_clock_moments(rng):
    assert poisson_clock(2.0, 0.0, rng) == 0
    draws = np.array([poisson_clock(2.0, 2.0, rng) for _ in range(100_000)])
    se = math.sqrt(4.0 / len(draws))
    assert abs(draws.mean() - 4.0) <= 3 * se
    # fourth central moment of Poisson(4) is 52
    assert abs(draws.var() - 4.0) <= 3 * math.sqrt(36.0 / len(draws))


def test_poisson_clock_rejects_bad_rate(rng):
    with pytest.raises(DomainError):
        poisson_clock(0.0, 1.0, rng)


# -------------------
# Samplers
# -------------------

def test_bm_increment_mean_square_displacement(rng):
    space, dt = EuclideanSpace(2), 0.01
    x = Point.euclidean(0.0, 0.0)
    sq = np.array([np.sum(bm_increment(space, x, dt, rng).as_array() ** 2) for _ in range(20_000)])
    se = sq.std(ddof=1) / math.sqrt(len(sq))
    assert abs(sq.mean() - 2 * dt) <= 3 * se


def test_bm_increment_circle_matches_kernel(rng):
    space, t = CircleSpace(), 0.05
    x = Point.circle(0.3)
    draws = np.array([bm_increment(space, x, t, rng).coords[0] for _ in range(20_000)])
    edges = np.linspace(0.0, 1.0, 21)
    observed, _ = np.histogram(draws, bins=edges)
    expected = np.array([
        integrate.quad(lambda z: heat_kernel(space, t, x, Point.circle(z)), a, b)[0] for a, b in zip(edges, edges[1:])
    ]) * len(draws)
    keep = expected > 5
    chi2 = np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.01


def test_bm_increment_curved_space_unsupported(rng):
    with pytest.raises(UnsupportedError):
        bm_increment(Sphere2Space(), Point.sphere([1, 0, 0]), 0.1, rng)


def test_unit_disk_second_moment(rng):
    xi = sample_unit_disk(2, rng, size=100_000)
    assert np.all(np.linalg.norm(xi, axis=1) <= 1.0 + 1e-12)
    second = xi[:, 0] ** 2
    assert abs(second.mean() - 0.25) <= 3 * second.std(ddof=1) / math.sqrt(len(second))


def test_geodesic_step_zero_noise_stays_put():
    space = Sphere2Space()
    x = Point.sphere([0.0, 0.6, 0.8])
    frame = orthonormal_frame(space, x)
    assert space.distance(geodesic_rw_step(space, x, frame, 0.1, np.zeros(2)), x) <= 1e-12


@pytest.mark.parametrize("coords", [
    [0.8431141488758562, 0.5377346296872032, -7.12e-07],
    [1.0, 0.0, 0.0],
    [0.0, 1e-9, 1.0],
])
def test_frame_stays_orthonormal_near_chart_axes(coords):
    space = Sphere2Space()
    x = Point.sphere(coords, normalize=True)
    frame = orthonormal_frame(space, x)
    np.testing.assert_allclose(frame.T @ frame, np.eye(2), atol=1e-13)
    np.testing.assert_allclose(frame.T @ x.as_array(), 0.0, atol=1e-13)
    y = geodesic_rw_step(space, x, frame, 0.05, np.array([0.0775, -0.4504]))
    assert space.distance(x, y) == pytest.approx(0.05 * 2.0 * np.hypot(0.0775, 0.4504), abs=1e-10)


def test_hyperbolic_frame_orthonormal_far_out():
    space = Hyperbolic2Space()
    x = Point.hyperbolic([0.0, 3.0, -2.5], normalize=True)
    frame = orthonormal_frame(space, x)
    gram = np.array([[space.inner(a, b) for b in frame.T] for a in frame.T])
    np.testing.assert_allclose(gram, np.eye(2), atol=1e-10)


def test_geodesic_step_length_on_sphere(rng):
    space, eps = Sphere2Space(), 0.05
    x = Point.sphere([0.0, 0.6, 0.8])
    frame = orthonormal_frame(space, x)
    for xi in sample_unit_disk(2, rng, size=50):
        y = geodesic_rw_step(space, x, frame, eps, xi)
        assert space.distance(x, y) == pytest.approx(eps * 2.0 * np.linalg.norm(xi), abs=1e-10)


def test_geodesic_step_rejects_xi_outside_disk():
    space = EuclideanSpace(2)
    with pytest.raises(DomainError):
        geodesic_rw_step(space, Point.euclidean(0.0, 0.0), np.eye(2), 0.1, np.array([1.0, 1.0]))


def test_geodesic_step_euclidean_covariance(rng):
    space, eps = EuclideanSpace(2), 0.1
    x = Point.euclidean(0.0, 0.0)
    steps = np.array([geodesic_rw_step(space, x, np.eye(2), eps, xi).as_array()
                      for xi in sample_unit_disk(2, rng, size=50_000)])
    cov = steps.T @ steps / len(steps)
    se = eps ** 2 * math.sqrt(2.0 / len(steps))
    assert np.all(np.abs(cov - eps ** 2 * np.eye(2)) <= 3 * se)


@pytest.mark.slow
def test_geodesic_walk_central_limit():
    space, n = EuclideanSpace(1), 25
    eps = n ** -0.5
    ends = [sample_geodesic_rw_path(space, Point.euclidean(0.0), eps, n, seed_stream(3, k)).positions[-1].coords[0]
            for k in range(5000)]
    assert stats.kstest(ends, "norm").pvalue > 0.01


def test_chain_path_moves_along_edges(cycle_chain, rng):
    path = sample_chain_path(cycle_chain, cycle_chain.x1, 200, rng, seed=(1, 0))
    assert path.states[0] == cycle_chain.x1
    for a, b in zip(path.states, path.states[1:]):
        assert cycle_chain.P[a, b] > 0
    assert path.seed == (1, 0)
    assert path.positions[5] == cycle_chain.states[path.states[5]]

import math

import numpy as np
import pytest

from app.geometry.errors import DomainError
from app.geometry.model import PathState, PolarPoint, sink_angle, validate_params
from app.services.measure import (
    MeasureMode,
    dependent_q,
    expansion_coeffs,
    intersection_q,
    intersection_q_arrays,
    leading_q0,
    mean_measure_exact,
    mean_measure_quadrature,
    q_clamped,
    q_derivative,
    q_rescaled,
    region_intersection_q,
    sector_half_width,
    sink_angle_expansion,
    sleep_q,
)


@pytest.fixture
def params():
    return validate_params({"lambda": 30.0, "r": 1.0, "ell": 10.0})


@pytest.fixture
def sleepy_params():
    return validate_params({"lambda": 30.0, "r": 1.0, "ell": 10.0, "p": 0.25})


@pytest.fixture
def u_grid():
    return np.linspace(9.0, 10.0, 50)


@pytest.mark.parametrize("gamma", [2.0, 5.0, 10.0])
def test_exact_matches_quadrature(gamma):
    print("\nRunning Test: test_exact_matches_quadrature")
    u = np.linspace(gamma - 1.0, gamma, 50)
    exact = np.asarray(q_rescaled(gamma, u, MeasureMode.EXACT_ELLIPTIC))
    quad = np.asarray(q_rescaled(gamma, u, MeasureMode.QUADRATURE))
    assert exact[0] == 0.0 and quad[0] == 0.0
    np.testing.assert_allclose(exact[1:], quad[1:], rtol=1e-8)


def test_full_region_measure(params):
    print("\nRunning Test: test_full_region_measure")
    q = q_rescaled(10.0, 10.0, MeasureMode.EXACT_ELLIPTIC)
    assert q == pytest.approx(0.16061, abs=1e-4)
    lam_q = mean_measure_exact(10.0, 10.0, params)
    assert lam_q == pytest.approx(30.0 * q, rel=1e-14)
    assert 4.80 < lam_q < 4.84
    assert mean_measure_quadrature(10.0, 10.0, params) == pytest.approx(lam_q, rel=1e-8)


def test_exact_measure_vectorised(params, u_grid):
    print("\nRunning Test: test_exact_measure_vectorised")
    values = mean_measure_exact(10.0, u_grid, params)
    assert values.shape == u_grid.shape
    assert np.all(np.diff(values) > 0)


def test_expansion_coefficients():
    print("\nRunning Test: test_expansion_coefficients")
    coeffs = expansion_coeffs(10.0)
    assert coeffs.b0 == pytest.approx(math.sqrt(2.0 / 90.0), rel=1e-14)
    assert coeffs.b0 == pytest.approx(0.149071, abs=1e-6)
    assert coeffs.q0 == pytest.approx(0.198762, abs=1e-6)
    assert float(leading_q0(10.0)) == pytest.approx(coeffs.q0, rel=1e-14)
    assert coeffs.b1 < 0
    assert coeffs.tau(0) == pytest.approx(2.0 / 3.0)
    with pytest.raises(DomainError):
        expansion_coeffs(1.0)


def test_asymptotic_values_at_top():
    print("\nRunning Test: test_asymptotic_values_at_top")
    assert q_rescaled(10.0, 10.0, MeasureMode.ASYMPTOTIC3) == pytest.approx(0.161276, abs=5e-6)
    assert q_rescaled(10.0, 10.0, MeasureMode.ASYMPTOTIC2) == pytest.approx(0.162433, abs=5e-6)


def test_asymptotic_fidelity(u_grid):
    print("\nRunning Test: test_asymptotic_fidelity")
    u = u_grid[1:]
    exact = np.asarray(q_rescaled(10.0, u, MeasureMode.EXACT_ELLIPTIC))
    err3 = np.abs(np.asarray(q_rescaled(10.0, u, MeasureMode.ASYMPTOTIC3)) - exact) / exact
    err2 = np.abs(np.asarray(q_rescaled(10.0, u, MeasureMode.ASYMPTOTIC2)) - exact) / exact
    assert err3.max() <= 0.01
    # the two-term expansion lands about 1.1% high at the top of the support
    assert err2.max() <= 0.015
    assert err2.max() >= err3.max()


def test_sink_angle_expansion_near_edge():
    print("\nRunning Test: test_sink_angle_expansion_near_edge")
    u = np.array([9.001, 9.01, 9.05])
    exact = sink_angle(10.0, u)
    approx = sink_angle_expansion(10.0, u, terms=3)
    np.testing.assert_allclose(approx, exact, rtol=1e-4)
    assert sink_angle_expansion(10.0, 9.0) == 0.0


def test_derivative_is_twice_sink_angle():
    print("\nRunning Test: test_derivative_is_twice_sink_angle")
    u, h = 9.5, 1e-5
    q_plus = q_rescaled(10.0, u + h, MeasureMode.EXACT_ELLIPTIC)
    q_minus = q_rescaled(10.0, u - h, MeasureMode.EXACT_ELLIPTIC)
    assert (q_plus - q_minus) / (2 * h) == pytest.approx(q_derivative(10.0, u), rel=1e-6)
    assert q_derivative(10.0, u) == pytest.approx(2 * sink_angle(10.0, u), rel=1e-14)


def test_sector_half_width_modes():
    print("\nRunning Test: test_sector_half_width_modes")
    u = np.array([9.2, 9.7])
    np.testing.assert_allclose(sector_half_width(10.0, u, 1.0, MeasureMode.EXACT_ELLIPTIC), sink_angle(10.0, u))
    np.testing.assert_allclose(
        sector_half_width(10.0, u, 1.0, MeasureMode.ASYMPTOTIC3), sink_angle_expansion(10.0, u, terms=3)
    )
    near_sink = sector_half_width(1.05, np.array([0.06, 1.0]), 1.0, MeasureMode.ASYMPTOTIC3)
    assert np.all((near_sink >= 0) & (near_sink <= math.pi))


def test_measure_domain_errors():
    print("\nRunning Test: test_measure_domain_errors")
    with pytest.raises(DomainError):
        q_rescaled(10.0, 8.5)
    with pytest.raises(DomainError):
        q_rescaled(10.0, 10.5)
    with pytest.raises(DomainError):
        q_rescaled(0.5, 0.2)


def test_q_clamped_support():
    print("\nRunning Test: test_q_clamped_support")
    values = q_clamped(10.0, np.array([8.0, 9.0, 11.0]), 1.0, MeasureMode.EXACT_ELLIPTIC)
    assert values[0] == 0.0 and values[1] == 0.0
    assert values[2] == pytest.approx(q_rescaled(10.0, 10.0, MeasureMode.EXACT_ELLIPTIC), rel=1e-12)


@pytest.mark.parametrize(
    "theta, u2",
    [(0.05, 9.0), (0.05, 9.2), (0.05, 9.4), (0.05, 9.5), (-0.03, 9.3), (0.0, 9.25), (0.08, 9.45)],
)
def test_intersection_matches_region_quadrature(params, theta, u2):
    print("\nRunning Test: test_intersection_matches_region_quadrature")
    x0, x1 = PolarPoint(10.0, 0.0), PolarPoint(9.5, theta)
    piecewise = intersection_q(x0, x1, u2, params, MeasureMode.EXACT_ELLIPTIC)
    oracle = region_intersection_q(x0, x1, u2, params.r)
    assert piecewise == pytest.approx(oracle, abs=1e-5)


def test_intersection_bounded_by_both_regions(params):
    print("\nRunning Test: test_intersection_bounded_by_both_regions")
    x0, x1 = PolarPoint(10.0, 0.0), PolarPoint(9.6, 0.04)
    for u2 in np.linspace(8.7, 9.6, 10):
        value = intersection_q(x0, x1, u2, params, MeasureMode.EXACT_ELLIPTIC)
        assert 0.0 <= value <= q_rescaled(9.6, u2, MeasureMode.EXACT_ELLIPTIC) + 1e-12


def test_intersection_u2_outside_range(params):
    print("\nRunning Test: test_intersection_u2_outside_range")
    with pytest.raises(DomainError):
        intersection_q(PolarPoint(10.0, 0.0), PolarPoint(9.5, 0.05), 8.0, params)


def test_asymptotic_intersection_never_negative():
    print("\nRunning Test: test_asymptotic_intersection_never_negative")
    rng = np.random.default_rng(3)
    g0 = rng.uniform(1.2, 10.0, 200)
    g1 = g0 - rng.uniform(0.05, 0.95, 200)
    g1 = np.maximum(g1, 1.05)
    theta = rng.uniform(-0.05, 0.05, 200)
    u2 = g1 - rng.uniform(0.0, 1.0, 200)
    values = intersection_q_arrays(g0, g1, theta, u2, 1.0, MeasureMode.ASYMPTOTIC3)
    assert np.all(values >= 0.0)


def test_dependent_and_sleep_measures(params, sleepy_params):
    print("\nRunning Test: test_dependent_and_sleep_measures")
    source = PathState.start(10.0)
    assert dependent_q(source, 9.4, params, MeasureMode.EXACT_ELLIPTIC) == pytest.approx(
        q_rescaled(10.0, 9.4, MeasureMode.EXACT_ELLIPTIC)
    )

    path = source.extend(PolarPoint(9.5, 0.05))
    base = q_rescaled(9.5, 9.2, MeasureMode.EXACT_ELLIPTIC)
    overlap = intersection_q(path.previous, path.last, 9.2, params, MeasureMode.EXACT_ELLIPTIC)
    assert overlap > 0
    dep = dependent_q(path, 9.2, params, MeasureMode.EXACT_ELLIPTIC)
    sleep = sleep_q(path, 9.2, sleepy_params, MeasureMode.EXACT_ELLIPTIC)
    assert dep == pytest.approx(base - overlap, abs=1e-12)
    assert sleep == pytest.approx(base - 0.25 * overlap, abs=1e-12)
    assert dep <= sleep <= base


def test_sleep_measure_with_everyone_awake(params):
    print("\nRunning Test: test_sleep_measure_with_everyone_awake")
    path = PathState.start(10.0).extend(PolarPoint(9.5, 0.05))
    assert sleep_q(path, 9.2, params) == pytest.approx(dependent_q(path, 9.2, params), abs=1e-14)


def test_path_measure_requires_a_node(params):
    print("\nRunning Test: test_path_measure_requires_a_node")
    with pytest.raises(DomainError):
        dependent_q(PathState(), 9.2, params)


@pytest.mark.parametrize("mode", [MeasureMode.ASYMPTOTIC2, MeasureMode.ASYMPTOTIC3])
@pytest.mark.parametrize("gamma", [1.05, 1.2, 1.5, 2.0])
def test_asymptotic_modes_bounded_near_sink(mode, gamma):
    print("\nRunning Test: test_asymptotic_modes_bounded_near_sink")
    u = np.linspace(gamma - 1.0, gamma, 12)
    total = q_rescaled(gamma, gamma, MeasureMode.EXACT_ELLIPTIC)
    values = np.asarray(q_rescaled(gamma, u, mode))
    assert total < math.pi
    assert np.all(values <= total + 1e-12)
    assert q_rescaled(gamma, gamma, mode) == pytest.approx(total, rel=1e-12)
    np.testing.assert_allclose(
        sector_half_width(gamma, u, 1.0, mode), sector_half_width(gamma, u, 1.0, MeasureMode.EXACT_ELLIPTIC)
    )


def test_asymptotic_modes_mix_band_and_expansion():
    print("\nRunning Test: test_asymptotic_modes_mix_band_and_expansion")
    gamma = np.array([1.05, 10.0])
    values = q_clamped(gamma, gamma, 1.0, MeasureMode.ASYMPTOTIC3)
    assert values[0] == pytest.approx(q_rescaled(1.05, 1.05, MeasureMode.EXACT_ELLIPTIC), rel=1e-12)
    assert values[1] == pytest.approx(0.161276, abs=5e-6)


def test_random_paths_match_region_quadrature(params):
    print("\nRunning Test: test_random_paths_match_region_quadrature")
    rng = np.random.default_rng(100)
    for _ in range(100):
        g0 = rng.uniform(3.0, 10.0)
        g1 = g0 - rng.uniform(0.05, 0.95)
        psi = float(sink_angle(g0, g1))
        x0 = PolarPoint(g0, 0.0)
        x1 = PolarPoint(g1, rng.uniform(-0.95, 0.95) * psi)
        u2 = g1 - rng.uniform(0.0, 1.0)
        oracle = region_intersection_q(x0, x1, u2, params.r)
        assert intersection_q(x0, x1, u2, params, MeasureMode.EXACT_ELLIPTIC) == pytest.approx(oracle, abs=1e-4)

        path = PathState((x0,)).extend(x1)
        expected = q_rescaled(g1, u2, MeasureMode.EXACT_ELLIPTIC) - oracle
        assert dependent_q(path, u2, params, MeasureMode.EXACT_ELLIPTIC) == pytest.approx(max(expected, 0.0), abs=1e-4)

import math

import numpy as np
import pytest

from app.geometry.errors import Degenerate, DomainError, NoIntersection, ParameterError
from app.geometry.model import (
    ModelParams,
    PathState,
    PolarPoint,
    circle_intersection,
    sink_angle,
    validate_params,
    wrap_angle,
)


@pytest.fixture
def params():
    return validate_params({"lambda": 30.0, "r": 1.0, "ell": 10.0})


@pytest.fixture
def two_hop_path():
    return PathState.start(10.0).extend(PolarPoint(9.5, 0.05)).extend(PolarPoint(9.0, 0.0))


def test_validate_params_fills_alpha(params):
    print("\nRunning Test: test_validate_params_fills_alpha")
    assert params.lam == 30.0
    assert params.p == 1.0
    assert params.alpha == pytest.approx(30.0)

    sleepy = validate_params({"lambda": 3.0, "ell": 10.0, "p": 0.1})
    assert sleepy.alpha == pytest.approx(30.0)
    assert sleepy.density("underlying") == pytest.approx(30.0)
    assert sleepy.density("awake") == 3.0


def test_validate_params_from_alpha():
    print("\nRunning Test: test_validate_params_from_alpha")
    params = validate_params({"alpha": 40.0, "p": 0.5, "ell": 10.0})
    assert params.lam == pytest.approx(20.0)


@pytest.mark.parametrize(
    "raw",
    [
        {"lambda": 30.0, "ell": 1.0},
        {"lambda": 30.0, "ell": 10.0, "p": 0.0},
        {"lambda": 30.0, "ell": 10.0, "p": 1.5},
        {"lambda": -1.0, "ell": 10.0},
        {"lambda": 30.0, "ell": 10.0, "r": 0.0},
        {"lambda": 3.0, "ell": 10.0, "p": 0.5, "alpha": 10.0},
    ],
)
def test_validate_params_rejects(raw):
    print("\nRunning Test: test_validate_params_rejects")
    with pytest.raises(ParameterError):
        validate_params(raw)


def test_parameter_error_is_value_error():
    print("\nRunning Test: test_parameter_error_is_value_error")
    with pytest.raises(ValueError):
        validate_params({"lambda": 30.0, "ell": 0.5})


def test_thinned_keeps_awake_density(params):
    print("\nRunning Test: test_thinned_keeps_awake_density")
    thinned = params.thinned(0.1)
    assert isinstance(thinned, ModelParams)
    assert thinned.lam == params.lam
    assert thinned.alpha == pytest.approx(300.0)
    assert thinned.ell == params.ell


def test_sink_angle_values():
    print("\nRunning Test: test_sink_angle_values")
    assert sink_angle(10.0, 10.0) == pytest.approx(math.acos(0.995), abs=1e-12)
    assert sink_angle(10.0, 10.0) == pytest.approx(0.10004, abs=1e-5)
    assert sink_angle(10.0, 9.0) == pytest.approx(0.0, abs=1e-7)
    values = sink_angle(10.0, np.array([9.2, 9.6, 10.0]))
    assert np.all(np.diff(values) > 0)


def test_sink_angle_domain():
    print("\nRunning Test: test_sink_angle_domain")
    with pytest.raises(DomainError):
        sink_angle(10.0, 8.5)
    with pytest.raises(DomainError):
        sink_angle(1.0, 0.5)


def test_wrap_angle():
    print("\nRunning Test: test_wrap_angle")
    assert float(wrap_angle(1.5 * math.pi)) == pytest.approx(-0.5 * math.pi)
    assert float(wrap_angle(math.pi)) == pytest.approx(math.pi)
    assert float(wrap_angle(-math.pi)) == pytest.approx(math.pi)
    assert float(wrap_angle(0.3)) == pytest.approx(0.3)


def test_polar_point_checks():
    print("\nRunning Test: test_polar_point_checks")
    with pytest.raises(DomainError):
        PolarPoint(-1.0, 0.0)
    with pytest.raises(DomainError):
        PolarPoint(1.0, 4.0)
    a, b = PolarPoint(3.0, 0.0), PolarPoint(4.0, math.pi / 2)
    assert a.distance_to(b) == pytest.approx(5.0)


def test_path_state(two_hop_path):
    print("\nRunning Test: test_path_state")
    path = two_hop_path
    assert path.hops == 2
    assert len(path) == 3
    assert path.last == PolarPoint(9.0, 0.0)
    assert path.previous == PolarPoint(9.5, 0.05)
    np.testing.assert_allclose(path.advancements, [0.5, 0.5])
    np.testing.assert_allclose(path.relative_angles, [0.05, -0.05])
    assert path.validate(1.0) is path


def test_path_state_rejects_long_hop():
    print("\nRunning Test: test_path_state_rejects_long_hop")
    with pytest.raises(DomainError):
        PathState.start(10.0).extend(PolarPoint(8.5, 0.0)).validate(1.0)
    with pytest.raises(DomainError):
        PathState.start(10.0).extend(PolarPoint(9.5, 0.5)).validate(1.0)


def test_circle_intersection_on_both_circles():
    print("\nRunning Test: test_circle_intersection_on_both_circles")
    x0, x1 = PolarPoint(10.0, 0.0), PolarPoint(9.6, 0.04)
    geo = circle_intersection(x0, x1, 1.0)
    x01 = PolarPoint(geo.u01, geo.theta01)
    assert x01.distance_to(x0) == pytest.approx(1.0, abs=1e-9)
    assert x01.distance_to(x1) == pytest.approx(1.0, abs=1e-9)
    assert geo.theta01 < 0
    assert geo.below_baseline


def test_circle_intersection_on_baseline():
    print("\nRunning Test: test_circle_intersection_on_baseline")
    geo = circle_intersection(PolarPoint(10.0, 0.0), PolarPoint(9.5, 0.0), 1.0)
    assert geo.below_baseline
    assert 9.0 < geo.u01 < 10.0


def test_circle_intersection_errors():
    print("\nRunning Test: test_circle_intersection_errors")
    with pytest.raises(Degenerate):
        circle_intersection(PolarPoint(10.0, 0.0), PolarPoint(10.0, 0.0))
    with pytest.raises(NoIntersection):
        circle_intersection(PolarPoint(10.0, 0.0), PolarPoint(7.0, 0.0))

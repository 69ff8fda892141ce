import math

import numpy as np
import pytest
from scipy import integrate, special

from app.geometry.errors import DomainError
from app.geometry.model import validate_params
from app.services.hop import (
    hop_distribution,
    kl_divergence,
    laplace_integral,
    moment_asymptotic,
    moment_numeric,
    sink_cdf,
    sink_dependence_table,
    void_probability,
)
from app.services.measure import MeasureMode, leading_q0

EXACT = MeasureMode.EXACT_ELLIPTIC


@pytest.fixture
def params():
    return validate_params({"lambda": 30.0, "r": 1.0, "ell": 10.0})


@pytest.fixture
def hop_law(params):
    return hop_distribution(10.0, params, EXACT)


def _with_lambda(lam):
    return validate_params({"lambda": lam, "r": 1.0, "ell": 10.0})


def test_sink_cdf_shape(params):
    print("\nRunning Test: test_sink_cdf_shape")
    u = np.array([8.0, 9.0, 9.3, 9.7, 10.0, 10.5])
    cdf = sink_cdf(10.0, u, params, EXACT)
    assert cdf[0] == 0.0 and cdf[1] == 0.0
    assert cdf[4] == 1.0 and cdf[5] == 1.0
    assert np.all(np.diff(cdf) >= 0)
    assert np.all((cdf >= 0) & (cdf <= 1))


def test_sink_cdf_jump_carries_void(params):
    print("\nRunning Test: test_sink_cdf_jump_carries_void")
    below = sink_cdf(10.0, 10.0 - 1e-12, params, EXACT)
    assert below == pytest.approx(0.9919, abs=2e-4)
    assert 1.0 - below == pytest.approx(void_probability(10.0, params, EXACT), abs=1e-9)


def test_void_probability(params):
    print("\nRunning Test: test_void_probability")
    atom = void_probability(10.0, params, EXACT)
    assert atom == pytest.approx(math.exp(-30.0 * 0.16061), rel=1e-3)
    assert atom == pytest.approx(0.00808, abs=2e-4)
    assert void_probability(10.0, _with_lambda(60.0), EXACT) < atom


def test_hop_cdf_atom_and_support(hop_law):
    print("\nRunning Test: test_hop_cdf_atom_and_support")
    assert hop_law.cdf(-0.1) == 0.0
    assert hop_law.cdf(0.0) == pytest.approx(hop_law.void_atom, rel=1e-12)
    assert hop_law.cdf(1.0) == 1.0
    c = np.linspace(0.0, 1.0, 41)
    values = hop_law.cdf(c)
    assert np.all(np.diff(values) >= 0)
    np.testing.assert_allclose(hop_law.survival(c), 1.0 - values)


def test_hop_cdf_matches_sink_cdf(params, hop_law):
    print("\nRunning Test: test_hop_cdf_matches_sink_cdf")
    c = np.array([0.1, 0.4, 0.8])
    np.testing.assert_allclose(
        hop_law.cdf(c), 1.0 - np.asarray(sink_cdf(10.0, 10.0 - c, params, EXACT)), rtol=1e-12
    )


def test_density_integrates_to_continuous_mass(hop_law):
    print("\nRunning Test: test_density_integrates_to_continuous_mass")
    mass, _ = integrate.quad(lambda c: float(hop_law.density(c)), 0.0, 1.0, limit=200)
    assert mass + hop_law.void_atom == pytest.approx(1.0, abs=1e-8)
    assert hop_law.density(0.0) == 0.0
    assert hop_law.density(1.5) == 0.0
    assert hop_law.log_density(0.5) == pytest.approx(math.log(hop_law.density(0.5)), rel=1e-12)


def test_moment_delegates_to_numeric(params, hop_law):
    print("\nRunning Test: test_moment_delegates_to_numeric")
    assert hop_law.moment(1) == pytest.approx(moment_numeric(10.0, 1, params, EXACT), rel=1e-14)
    mean, _ = integrate.quad(lambda c: c * float(hop_law.density(c)), 0.0, 1.0, limit=200)
    assert hop_law.moment(1) == pytest.approx(mean, rel=1e-7)


def test_laplace_integral_matches_quadrature():
    print("\nRunning Test: test_laplace_integral_matches_quadrature")
    lam, q0 = 30.0, float(leading_q0(10.0))
    for k in (0, 1, 2):
        ref, _ = integrate.quad(lambda t: t**k * math.exp(-lam * q0 * t**1.5), 0.0, np.inf)
        assert laplace_integral(k, lam, q0) == pytest.approx(ref, rel=1e-8)


def test_moment_asymptotic_values(params):
    print("\nRunning Test: test_moment_asymptotic_values")
    assert moment_asymptotic(10.0, 1, params) == pytest.approx(0.7255, abs=5e-4)
    assert moment_asymptotic(10.0, 2, params) == pytest.approx(0.5610, abs=5e-4)
    scale = (30.0 * float(leading_q0(10.0))) ** (-2.0 / 3.0)
    expected = 1.0 - 2 * special.gamma(5.0 / 3.0) * scale + special.gamma(7.0 / 3.0) * scale**2
    assert moment_asymptotic(10.0, 2, params) == pytest.approx(expected, rel=1e-12)


def test_moment_numeric_range(params):
    print("\nRunning Test: test_moment_numeric_range")
    m1 = moment_numeric(10.0, 1, params, EXACT)
    m2 = moment_numeric(10.0, 2, params, EXACT)
    assert 0.70 < m1 < 0.72
    assert m1**2 <= m2 <= m1


def test_asymptotic_moment_gap_shrinks_with_density():
    print("\nRunning Test: test_asymptotic_moment_gap_shrinks_with_density")
    gaps = []
    for lam in (30.0, 100.0, 300.0):
        p = _with_lambda(lam)
        num = moment_numeric(10.0, 1, p, EXACT)
        gaps.append(abs(moment_asymptotic(10.0, 1, p) - num) / num)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 0.01

    p300 = _with_lambda(300.0)
    num2 = moment_numeric(10.0, 2, p300, EXACT)
    assert abs(moment_asymptotic(10.0, 2, p300) - num2) / num2 <= 0.02


def test_moment_errors(params):
    print("\nRunning Test: test_moment_errors")
    with pytest.raises(DomainError):
        moment_numeric(10.0, 0, params)
    with pytest.raises(DomainError):
        moment_asymptotic(1.0, 1, params)
    with pytest.raises(DomainError):
        sink_cdf(0.5, 0.2, params)


def test_kl_identity_and_sign(params):
    print("\nRunning Test: test_kl_identity_and_sign")
    assert abs(kl_divergence(10.0, 10.0, params, EXACT)) <= 1e-10
    for gamma in np.linspace(2.0, 10.0, 20):
        assert kl_divergence(10.0, float(gamma), params, EXACT) >= -1e-10


def test_kl_decreases_away_from_sink(params):
    print("\nRunning Test: test_kl_decreases_away_from_sink")
    assert kl_divergence(10.0, 2.0, params, EXACT) > kl_divergence(10.0, 9.0, params, EXACT)


def test_stochastic_ordering(params):
    print("\nRunning Test: test_stochastic_ordering")
    rng = np.random.default_rng(17)
    for _ in range(100):
        g2 = rng.uniform(2.0, 10.0)
        g1 = rng.uniform(g2, 10.0)
        c = rng.uniform(0.0, 1.0)
        f1 = hop_distribution(g1, params, EXACT).cdf(c)
        f2 = hop_distribution(g2, params, EXACT).cdf(c)
        assert f1 >= f2 - 1e-12


def test_sink_dependence_table(params):
    print("\nRunning Test: test_sink_dependence_table")
    rows = sink_dependence_table(10.0, [3.0, 10.0], params, EXACT)
    assert [row["gamma"] for row in rows] == [3.0, 10.0]
    assert set(rows[0]) == {"gamma", "kl", "void_atom", "mean_hop"}
    assert rows[1]["kl"] == pytest.approx(0.0, abs=1e-10)
    assert rows[1]["void_atom"] == pytest.approx(void_probability(10.0, params, EXACT))

"""Rescaled mean measures Q of feasible regions under the 1/u node density.

For a forwarding node at sink distance gamma, Q_gamma(u) = 2 int_{gamma-r}^u psi_gamma(w) dw
is the measure of the part of its feasible region closer to the sink than u,
and Lambda = lambda * Q. Four evaluation modes are offered: the closed form in
Legendre elliptic integrals, adaptive quadrature, and the two- and three-term
expansions about the lower support edge.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate

from app.geometry.errors import DomainError, ResidueError
from app.geometry.model import (
    CLAMP_TOL,
    ArrayLike,
    ModelParams,
    PathState,
    PolarPoint,
    _psi,
    intersection_arrays,
    sink_angle,
    wrap_angle,
)
from app.numerics.elliptic import Convention, legendre_e, legendre_f

RESIDUE_TOL = 1e-9
QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-13
# Sink distance, in radii, below which the asymptotic modes use the closed form.
EXACT_BAND = 2.0


class MeasureMode(str, Enum):
    EXACT_ELLIPTIC = "exact"
    QUADRATURE = "quadrature"
    ASYMPTOTIC2 = "asymptotic2"
    ASYMPTOTIC3 = "asymptotic3"

    @property
    def is_asymptotic(self) -> bool:
        return self in (MeasureMode.ASYMPTOTIC2, MeasureMode.ASYMPTOTIC3)


DEFAULT_MODE = MeasureMode.ASYMPTOTIC3


@dataclass(frozen=True)
class ExpansionCoeffs:
    """Coefficients of psi_gamma(u) ~ b0 x^(1/2) + b1 x^(3/2) + b2 x^(5/2), x = u - gamma + r,
    and of Q_gamma ~ q0 x^(3/2) + q1 x^(5/2)."""

    b0: float
    b1: float
    b2: float
    q0: float
    q1: float
    mu: float = 1.5

    def tau(self, k: int) -> float:
        return 2 * (k + 1) / 3


def _coeff_arrays(gamma: ArrayLike, r: float):
    gamma = np.asarray(gamma, dtype=float)
    b0 = np.sqrt(2 * r / (gamma * (gamma - r)))
    b1 = b0 * (r**2 - 3 * r * gamma - 3 * gamma**2) / (12 * (gamma**2 * r - gamma * r**2))
    b2 = b0 * (
        (3 * r**4 + 25 * r**2 * gamma**2 - 10 * r**3 * gamma + 30 * gamma**3 * r - 5 * gamma**4)
        / (160 * gamma**2 * (gamma - r) ** 2 * r**2)
    )
    return b0, b1, b2


def expansion_coeffs(gamma: float, r: float = 1.0) -> ExpansionCoeffs:
    if not gamma > r:
        raise DomainError(f"expansion needs gamma > r, got gamma={gamma}, r={r}")
    b0, b1, b2 = (float(b) for b in _coeff_arrays(gamma, r))
    return ExpansionCoeffs(b0=b0, b1=b1, b2=b2, q0=4 * b0 / 3, q1=4 * b1 / 5)


def leading_q0(gamma: ArrayLike, r: float = 1.0) -> np.ndarray:
    """q0 = (4/3) [2r / (gamma (gamma - r))]^(1/2), vectorised."""
    gamma = np.asarray(gamma, dtype=float)
    return (4.0 / 3.0) * np.sqrt(2 * r / (gamma * (gamma - r)))


def sink_angle_expansion(gamma: ArrayLike, u: ArrayLike, r: float = 1.0, terms: int = 3):
    """Truncated expansion of psi_gamma(u) about u = gamma - r."""
    b = _coeff_arrays(gamma, r)[:terms]
    x = np.clip(np.asarray(u, dtype=float) - gamma + r, 0.0, None)
    out = sum(bj * x ** (j + 0.5) for j, bj in enumerate(b))
    return float(out) if np.ndim(out) == 0 else out


def _q_asymptotic(gamma: ArrayLike, u: ArrayLike, r: float, terms: int) -> np.ndarray:
    b = _coeff_arrays(gamma, r)
    x = np.clip(np.asarray(u, dtype=float) - np.asarray(gamma, dtype=float) + r, 0.0, None)
    out = 4 * (b[0] / 3) * x**1.5 + 4 * (b[1] / 5) * x**2.5
    if terms == 3:
        out = out + 4 * (b[2] / 7) * x**3.5
    return out


def _q_exact(gamma: ArrayLike, u: ArrayLike, r: float, convention: Convention = "sine") -> np.ndarray:
    gamma, u = np.broadcast_arrays(np.asarray(gamma, dtype=float), np.asarray(u, dtype=float))
    a = gamma + r
    b = gamma - r
    k = a / b
    phi_u = np.arcsin(u / a)
    phi_b = np.arcsin(b / a)
    e_part = legendre_e(phi_u, k, convention) - legendre_e(phi_b, k, convention)
    f_part = legendre_f(phi_u, k, convention) - legendre_f(phi_b, k, convention)
    value = 2 * (u * _psi(gamma, u, r) + 1j * b * e_part + 2j * r * f_part)
    value = np.asarray(value)
    bound = RESIDUE_TOL * np.maximum(1.0, np.abs(value.real))
    if np.any(np.abs(value.imag) > bound):
        worst = float(np.max(np.abs(value.imag)))
        raise ResidueError(f"closed-form mean measure left imaginary residue {worst:.3e}")
    return value.real


def _q_quad_scalar(gamma: float, u: float, r: float) -> float:
    lo = gamma - r
    if u <= lo:
        return 0.0
    val, _ = integrate.quad(
        lambda w: float(_psi(gamma, w, r)), lo, u, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200
    )
    return 2.0 * val


_q_quadrature = np.vectorize(_q_quad_scalar, otypes=[float])


def _sink_band(gamma: np.ndarray, r: float) -> np.ndarray:
    """Nodes within EXACT_BAND radii of the sink, where the expansion diverges."""
    return (gamma > r) & (gamma <= EXACT_BAND * r)


def q_clamped(gamma: ArrayLike, u: ArrayLike, r: float, mode: MeasureMode = DEFAULT_MODE) -> np.ndarray:
    """Vectorised Q_gamma(u) with u clamped onto [gamma - r, gamma]; no domain errors.

    The asymptotic modes switch to the closed form inside the sink band.
    """
    gamma, u = np.broadcast_arrays(np.asarray(gamma, dtype=float), np.asarray(u, dtype=float))
    uc = np.clip(u, gamma - r, gamma)
    mode = MeasureMode(mode)
    if mode is MeasureMode.ASYMPTOTIC3:
        out = _q_asymptotic(gamma, uc, r, terms=3)
    elif mode is MeasureMode.ASYMPTOTIC2:
        out = _q_asymptotic(gamma, uc, r, terms=2)
    elif mode is MeasureMode.EXACT_ELLIPTIC:
        out = _q_exact(gamma, uc, r)
    else:
        out = _q_quadrature(gamma, uc, r)
    if mode.is_asymptotic:
        out = np.array(np.maximum(out, 0.0), dtype=float)
        band = _sink_band(gamma, r)
        if np.any(band):
            out[band] = _q_exact(gamma[band], uc[band], r)
    return np.where(uc <= gamma - r, 0.0, out)


def _check_support(gamma: ArrayLike, u: ArrayLike, r: float) -> None:
    gamma_a = np.asarray(gamma, dtype=float)
    u_a = np.asarray(u, dtype=float)
    if np.any(gamma_a <= r):
        raise DomainError(f"measure needs gamma > r, got gamma={gamma}, r={r}")
    tol = CLAMP_TOL * np.maximum(1.0, gamma_a)
    if np.any(u_a < gamma_a - r - tol) or np.any(u_a > gamma_a + tol):
        raise DomainError(f"u={u} outside the support [gamma - r, gamma] for gamma={gamma}")


def _out(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def mean_measure_quadrature(gamma: float, u: float, params: ModelParams) -> float:
    """Lambda_gamma(u) = 2 lambda int_{gamma-r}^u psi_gamma(w) dw by adaptive quadrature."""
    _check_support(gamma, u, params.r)
    return params.lam * _q_quad_scalar(float(gamma), float(u), params.r)


def mean_measure_exact(gamma: ArrayLike, u: ArrayLike, params: ModelParams, convention: Convention = "sine"):
    """Lambda_gamma(u) from the closed form in incomplete elliptic integrals."""
    _check_support(gamma, u, params.r)
    uc = np.clip(np.asarray(u, dtype=float), np.asarray(gamma, dtype=float) - params.r, gamma)
    return _out(params.lam * _q_exact(gamma, uc, params.r, convention))


def q_rescaled(gamma: ArrayLike, u: ArrayLike, mode: MeasureMode = DEFAULT_MODE, r: float = 1.0):
    """Rescaled mean measure Q_gamma(u) = Lambda_gamma(u) / lambda."""
    _check_support(gamma, u, r)
    return _out(q_clamped(gamma, u, r, mode))


def q_derivative(gamma: ArrayLike, u: ArrayLike, r: float = 1.0):
    """dQ_gamma/du = 2 psi_gamma(u)."""
    _check_support(gamma, u, r)
    return _out(2 * np.asarray(sink_angle(gamma, u, r)))


def sector_half_width(gamma: ArrayLike, u: ArrayLike, r: float, mode: MeasureMode = DEFAULT_MODE) -> np.ndarray:
    """Half the angular width of the feasible region at ``u``, consistent with ``mode``.

    Equals dQ/du / 2 under every mode: the expanded angle for the asymptotic
    modes away from the sink band, the exact sink angle otherwise. No domain checks.
    """
    mode = MeasureMode(mode)
    exact = _psi(gamma, u, r)
    if mode.is_asymptotic:
        terms = 2 if mode is MeasureMode.ASYMPTOTIC2 else 3
        expanded = np.clip(sink_angle_expansion(gamma, u, r, terms=terms), 0.0, np.pi)
        return np.where(_sink_band(np.asarray(gamma, dtype=float), r), exact, expanded)
    return exact


def intersection_q_arrays(
    g0: ArrayLike,
    g1: ArrayLike,
    theta: ArrayLike,
    u2: ArrayLike,
    r: float,
    mode: MeasureMode = DEFAULT_MODE,
    strict: bool = True,
) -> np.ndarray:
    """Q of the overlap between the feasible regions of nodes at ``(g0, 0)`` and
    ``(g1, theta)``, restricted to sink distances below ``u2``.

    Piecewise construction: below the sink distance u01 of the lower circle
    intersection point the previous region is either fully inside the current
    one (X01 below the baseline) or disjoint from it; above u01 the two angular
    sectors overlap partially. With ``strict`` off every negative value is
    clamped, which the vectorised path sweeps rely on.
    """
    mode = MeasureMode(mode)
    g0, g1, theta, u2 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (g0, g1, theta, u2))
    )
    theta = np.abs(wrap_angle(theta))
    u01, below, _ = intersection_arrays(g0, g1, theta, r)
    ind = below.astype(float)

    q0_u2 = q_clamped(g0, u2, r, mode)
    q1_u2 = q_clamped(g1, u2, r, mode)
    q0_01 = q_clamped(g0, u01, r, mode)
    q1_01 = q_clamped(g1, u01, r, mode)

    first = q0_u2 * ind
    second = 0.5 * (q0_u2 + q1_u2 + 2 * theta * (u01 - u2)) + 0.5 * (q0_01 * (2 * ind - 1) - q1_01)
    value = np.where(u2 <= u01, first, second)
    value = np.where(u2 <= g0 - r, 0.0, value)

    if strict and not mode.is_asymptotic:
        worst = np.min(value, initial=0.0)
        if worst < -CLAMP_TOL:
            raise DomainError(f"intersection measure {worst:.3e} is negative beyond rounding")
    return np.clip(value, 0.0, np.minimum(q0_u2, q1_u2))


def intersection_q(
    x0: PolarPoint,
    x1: PolarPoint,
    u2: float,
    params: ModelParams,
    mode: MeasureMode = DEFAULT_MODE,
) -> float:
    """Q_{1\\0}(u2): measure of I_1(u2) intersected with the previous region I_0."""
    r = params.r
    if not x1.u - r - CLAMP_TOL <= u2 <= x1.u + CLAMP_TOL:
        raise DomainError(f"u2={u2} outside [u1 - r, u1] = [{x1.u - r}, {x1.u}]")
    return float(
        intersection_q_arrays(x0.u, x1.u, x1.theta - x0.theta, min(u2, x1.u), r, mode)
    )


def overlap_width(g0: float, g1: float, theta: float, w: float, r: float) -> float:
    """Angular width at sink distance ``w`` shared by the sectors of both regions."""
    if w <= g0 - r or w <= g1 - r:
        return 0.0
    psi0 = float(_psi(g0, w, r))
    psi1 = float(_psi(g1, w, r))
    return max(0.0, min(psi0, theta + psi1) - max(-psi0, theta - psi1))


def region_intersection_q(x0: PolarPoint, x1: PolarPoint, u2: float, r: float = 1.0) -> float:
    """Intersection measure by integrating the sector overlap radius by radius."""
    theta = float(abs(wrap_angle(x1.theta - x0.theta)))
    lo = max(x0.u - r, x1.u - r)
    hi = min(u2, x1.u)
    if hi <= lo:
        return 0.0
    u01, _, _ = intersection_arrays(x0.u, x1.u, theta, r)
    points = [float(u01)] if lo < u01 < hi else None
    val, _ = integrate.quad(
        lambda w: overlap_width(x0.u, x1.u, theta, w, r),
        lo,
        hi,
        points=points,
        epsabs=1e-12,
        epsrel=1e-10,
        limit=200,
    )
    return val


def _path_q(path: PathState, u_next: float, params: ModelParams, mode: MeasureMode, weight: float) -> float:
    if len(path) == 0:
        raise DomainError("path has no forwarding node")
    cur = path.last
    base = float(q_rescaled(cur.u, u_next, mode, params.r))
    if path.previous is None:
        return base
    overlap = intersection_q(path.previous, cur, u_next, params, mode)
    logging.debug(f"path measure at u={u_next}: base={base:.6g}, overlap={overlap:.6g}")
    return max(base - weight * overlap, 0.0)


def dependent_q(path: PathState, u_next: float, params: ModelParams, mode: MeasureMode = DEFAULT_MODE) -> float:
    """Q of the current feasible region minus its overlap with the previous one."""
    return _path_q(path, u_next, params, mode, weight=1.0)


def sleep_q(path: PathState, u_next: float, params: ModelParams, mode: MeasureMode = DEFAULT_MODE) -> float:
    """As ``dependent_q`` but the overlap keeps density (1 - p) lambda."""
    return _path_q(path, u_next, params, mode, weight=params.p)

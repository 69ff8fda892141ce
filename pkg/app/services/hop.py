"""Single-hop laws: sink-distance CDF, the mixed advancement distribution,
moments, void probabilities and Kullback-Leibler comparison across sink distances.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import binom, gamma as gamma_fn

from app.geometry.errors import DomainError
from app.geometry.model import ArrayLike, ModelParams
from app.services.measure import (
    DEFAULT_MODE,
    MeasureMode,
    leading_q0,
    q_clamped,
    sector_half_width,
)

QUAD_TOL = 1e-10


def _require_gamma(gamma: float, r: float) -> None:
    if not gamma > r:
        raise DomainError(f"hop law needs gamma > r, got gamma={gamma}, r={r}")


def _out(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def _q_prime(gamma: float, u: ArrayLike, r: float, mode: MeasureMode) -> np.ndarray:
    return 2 * sector_half_width(gamma, u, r, mode)


def sink_cdf(gamma: float, u: ArrayLike, params: ModelParams, mode: MeasureMode = DEFAULT_MODE):
    """P(U <= u) for the next sink distance U of a node at sink distance gamma.

    The jump at u = gamma carries the void probability.
    """
    r = params.r
    _require_gamma(gamma, r)
    u = np.asarray(u, dtype=float)
    inside = 1.0 - np.exp(-params.lam * q_clamped(gamma, u, r, mode))
    out = np.where(u < gamma - r, 0.0, np.where(u >= gamma, 1.0, inside))
    return _out(out)


def void_probability(gamma: float, params: ModelParams, mode: MeasureMode = DEFAULT_MODE) -> float:
    """P(C = 0) = exp(-lambda Q_gamma(gamma)): the feasible region holds no awake node."""
    _require_gamma(gamma, params.r)
    return float(np.exp(-params.lam * q_clamped(gamma, gamma, params.r, mode)))


@dataclass(frozen=True)
class MixedHopDistribution:
    """Law of the advancement C of one hop: an atom at zero plus a density on (0, r]."""

    gamma: float
    params: ModelParams
    mode: MeasureMode
    void_atom: float

    def _lam_q(self, c: np.ndarray) -> np.ndarray:
        return self.params.lam * q_clamped(self.gamma, self.gamma - c, self.params.r, self.mode)

    def cdf(self, c: ArrayLike):
        c = np.asarray(c, dtype=float)
        r = self.params.r
        out = np.where(c < 0, 0.0, np.where(c >= r, 1.0, np.exp(-self._lam_q(np.clip(c, 0.0, r)))))
        return _out(out)

    def survival(self, c: ArrayLike):
        return _out(1.0 - np.asarray(self.cdf(c)))

    def density(self, c: ArrayLike):
        """Absolutely continuous part lambda Q'(gamma - c) exp(-lambda Q(gamma - c)) on (0, r)."""
        c = np.asarray(c, dtype=float)
        r = self.params.r
        cc = np.clip(c, 0.0, r)
        dens = self.params.lam * _q_prime(self.gamma, self.gamma - cc, r, self.mode) * np.exp(-self._lam_q(cc))
        return _out(np.where((c <= 0) | (c >= r), 0.0, dens))

    def log_density(self, c: float) -> float:
        q_prime = float(_q_prime(self.gamma, self.gamma - c, self.params.r, self.mode))
        if q_prime <= 0:
            return -math.inf
        return math.log(self.params.lam * q_prime) - float(self._lam_q(np.asarray(c)))

    def moment(self, m: int = 1) -> float:
        return moment_numeric(self.gamma, m, self.params, self.mode)


def hop_distribution(gamma: float, params: ModelParams, mode: MeasureMode = DEFAULT_MODE) -> MixedHopDistribution:
    mode = MeasureMode(mode)
    return MixedHopDistribution(
        gamma=float(gamma), params=params, mode=mode, void_atom=void_probability(gamma, params, mode)
    )


def moment_numeric(gamma: float, m: int, params: ModelParams, mode: MeasureMode = DEFAULT_MODE) -> float:
    """E(C^m) = r^m - m int_0^r c^(m-1) F(c) dc by adaptive quadrature.

    Integrated in t = r - c so the Laplace point sits at the origin; the
    quadrature gets a breakpoint at the natural scale (lambda q0)^(-2/3).
    """
    r = params.r
    _require_gamma(gamma, r)
    if m < 1:
        raise DomainError(f"moment order must be >= 1, got {m}")
    mode = MeasureMode(mode)
    lam = params.lam

    def integrand(t: float) -> float:
        q = float(q_clamped(gamma, gamma - r + t, r, mode))
        return (r - t) ** (m - 1) * math.exp(-lam * q)

    scale = float(lam * leading_q0(gamma, r)) ** (-2.0 / 3.0)
    points = [scale] if scale < r else None
    val, err = integrate.quad(integrand, 0.0, r, points=points, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    logging.debug(f"moment_numeric gamma={gamma} m={m}: integral={val:.12g} (quad error {err:.2e})")
    return r**m - m * val


def laplace_integral(k: int, lam: float, q0: float, mu: float = 1.5) -> float:
    """int_0^inf t^k exp(-lam q0 t^mu) dt = Gamma(tau) / (mu (lam q0)^tau), tau = (k + 1) / mu."""
    tau = (k + 1) / mu
    return float(gamma_fn(tau) / (mu * (lam * q0) ** tau))


def moment_asymptotic(gamma: float, m: int, params: ModelParams) -> float:
    """Leading-order E(C^m) for large node density.

    For m = 1 this is r - Gamma(5/3) / (lambda q0)^(2/3); for m = 2 it is
    r^2 - 2 r Gamma(5/3) / (lambda q0)^(2/3) + Gamma(7/3) / (lambda q0)^(4/3).
    """
    r = params.r
    _require_gamma(gamma, r)
    if m < 1:
        raise DomainError(f"moment order must be >= 1, got {m}")
    q0 = float(leading_q0(gamma, r))
    tail = sum(
        binom(m - 1, j) * r ** (m - 1 - j) * (-1) ** j * laplace_integral(j, params.lam, q0)
        for j in range(m)
    )
    return float(r**m - m * tail)


def kl_divergence(
    gamma1: float,
    gamma2: float,
    params: ModelParams,
    mode: MeasureMode = DEFAULT_MODE,
) -> float:
    """D(F_gamma1 || F_gamma2) for the mixed hop laws, in nats.

    The continuous part is integrated over the open interval (0, r); the void
    atoms contribute p1 log(p1 / p2).
    """
    d1 = hop_distribution(gamma1, params, mode)
    d2 = hop_distribution(gamma2, params, mode)
    r = params.r
    unbounded: list[float] = []

    def integrand(c: float) -> float:
        log_f1 = d1.log_density(c)
        if log_f1 == -math.inf:
            return 0.0
        log_f2 = d2.log_density(c)
        if log_f2 == -math.inf:
            unbounded.append(c)
            return 0.0
        return math.exp(log_f1) * (log_f1 - log_f2)

    cont, err = integrate.quad(integrand, 0.0, r, epsabs=QUAD_TOL, epsrel=1e-8, limit=200)
    if unbounded:
        logging.debug(f"kl_divergence: second density vanishes at c={unbounded[0]:.6g}")
        return math.inf
    atom = _atom_term(d1.void_atom, d2.void_atom)
    logging.debug(f"kl_divergence({gamma1}, {gamma2}): continuous={cont:.6g} (err {err:.1e}), atom={atom:.6g}")
    return float(cont + atom)


def _atom_term(p1: float, p2: float) -> float:
    if p1 <= 0:
        return 0.0
    if p2 <= 0:
        return math.inf
    return p1 * math.log(p1 / p2)


def sink_dependence_table(
    ell: float, gammas: ArrayLike, params: ModelParams, mode: MeasureMode = DEFAULT_MODE
) -> list[dict[str, float]]:
    """Rows of (gamma, D(ell, gamma), void atom, E(C)) used by the kl experiment."""
    rows = []
    for g in np.asarray(gammas, dtype=float):
        rows.append(
            {
                "gamma": float(g),
                "kl": kl_divergence(ell, float(g), params, mode),
                "void_atom": void_probability(float(g), params, mode),
                "mean_hop": moment_numeric(float(g), 1, params, mode),
            }
        )
    return rows

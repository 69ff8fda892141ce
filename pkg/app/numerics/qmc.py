"""Quasi-Monte Carlo point sets, randomized error estimation and the
importance-sampling transform for hop advancements.

Two rules are supported: the leaped Halton sequence, with errors taken from
contiguous batch means, and randomly shifted rank-1 lattices, with errors
taken from the spread across shifts.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.geometry.errors import BudgetExceeded, ConfigError, DomainError

Integrand = Callable[[np.ndarray], np.ndarray]
Transform = Callable[[np.ndarray], np.ndarray]

DEFAULT_LEAP = 409


class RuleKind(str, Enum):
    HALTON = "halton"
    LATTICE = "lattice"


class QmcRule(BaseModel):
    """Point-set specification plus sample budget.

    For lattices ``points`` is the lattice size n and every shift evaluates all
    n points. For Halton ``points`` is the total count, split into ``batches``
    contiguous blocks for error estimation.
    """

    model_config = ConfigDict(frozen=True)

    kind: RuleKind = RuleKind.HALTON
    points: int = Field(default=1024, ge=1)
    leap: int = Field(default=DEFAULT_LEAP, ge=1)
    z: Optional[tuple[int, ...]] = None
    shifts: int = Field(default=10, ge=1)
    batches: int = Field(default=10, ge=1)
    seed: int = 0
    budget: int = Field(default=1_000_000, ge=1)
    tolerance: Optional[float] = Field(default=None, gt=0)
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "QmcRule":
        if self.kind is RuleKind.HALTON and self.batches > self.points:
            raise ValueError(f"{self.batches} batches need at least as many points, got {self.points}")
        if self.z is not None and self.points > 1:
            bad = [zj for zj in self.z if not 1 <= zj <= self.points - 1]
            if bad:
                raise ValueError(f"generating vector components {bad} outside [1, {self.points - 1}]")
        return self

    @property
    def replicates(self) -> int:
        return self.shifts if self.kind is RuleKind.LATTICE else self.batches

    @property
    def total_points(self) -> int:
        if self.kind is RuleKind.LATTICE:
            return self.points * self.shifts
        return (self.points // self.batches) * self.batches

    def generating_vector(self, dim: int) -> np.ndarray:
        if self.z is None:
            return korobov_vector(self.points, dim)
        if len(self.z) < dim:
            raise ConfigError(f"generating vector has {len(self.z)} components, need {dim}")
        return np.asarray(self.z[:dim], dtype=np.int64)

    def refined(self) -> "QmcRule":
        return self.model_copy(update={"points": self.points * 2})


@dataclass(frozen=True)
class Estimate:
    value: Union[float, np.ndarray]
    std_error: Union[float, np.ndarray]
    samples: int

    @classmethod
    def from_replicates(cls, replicates: np.ndarray, samples: int) -> "Estimate":
        replicates = np.asarray(replicates, dtype=float)
        value = replicates.mean(axis=0)
        if replicates.shape[0] > 1:
            std_error = replicates.std(axis=0, ddof=1) / math.sqrt(replicates.shape[0])
        else:
            std_error = np.zeros_like(value)
        if np.ndim(value) == 0:
            return cls(float(value), float(std_error), samples)
        return cls(value, std_error, samples)

    @property
    def max_error(self) -> float:
        return float(np.max(self.std_error))


@lru_cache(maxsize=None)
def first_primes(count: int) -> tuple[int, ...]:
    limit = max(16, int(count * (math.log(count + 1) + math.log(math.log(count + 2)) + 3)))
    sieve = np.ones(limit + 1, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(limit**0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = False
    primes = np.flatnonzero(sieve)
    return tuple(int(p) for p in primes[:count])


def radical_inverse(n: np.ndarray, base: int) -> np.ndarray:
    n = np.array(n, dtype=np.int64)
    out = np.zeros(n.shape, dtype=float)
    factor = 1.0 / base
    while np.any(n > 0):
        n, digit = np.divmod(n, base)
        out += digit * factor
        factor /= base
    return out


def halton_points(start: int, count: int, dim: int, leap: int = 1) -> np.ndarray:
    """Rows ``start .. start + count - 1`` of the leaped Halton sequence, shape (count, dim)."""
    if start < 1:
        raise DomainError(f"Halton index must be >= 1, got {start}")
    index = np.arange(start, start + count, dtype=np.int64) * leap
    return np.column_stack([radical_inverse(index, b) for b in first_primes(dim)])


def halton_point(index: int, dim: int, leap: int = 1) -> np.ndarray:
    """Coordinate j is the radical inverse of index * leap in the j-th prime base."""
    return halton_points(index, 1, dim, leap)[0]


def lattice_points(z: np.ndarray, n: int, shift: Optional[np.ndarray] = None) -> np.ndarray:
    """All n points {k z / n + shift}, k = 0 .. n-1 (k = n coincides with k = 0)."""
    z = np.asarray(z, dtype=np.int64)
    k = np.arange(n, dtype=np.int64)
    pts = np.mod(np.outer(k, z), n) / n
    if shift is not None:
        pts = np.mod(pts + shift, 1.0)
    return pts


def lattice_point(k: int, rule: QmcRule, shift: Optional[np.ndarray] = None, dim: Optional[int] = None) -> np.ndarray:
    if not 1 <= k <= rule.points:
        raise DomainError(f"lattice index must lie in [1, {rule.points}], got {k}")
    z = rule.generating_vector(dim or (len(rule.z) if rule.z else 1))
    pt = np.mod(k * z, rule.points) / rule.points
    if shift is not None:
        pt = np.mod(pt + np.asarray(shift, dtype=float), 1.0)
    return pt


def _bernoulli2(x: np.ndarray) -> np.ndarray:
    return x * x - x + 1.0 / 6.0


@lru_cache(maxsize=64)
def _korobov_cached(n: int, dim: int) -> tuple[int, ...]:
    if n == 1:
        return (0,) * dim
    k = np.arange(n, dtype=np.int64)
    best_a, best_p2 = 1, math.inf
    for a in range(1, n):
        if math.gcd(a, n) != 1:
            continue
        z = np.array([pow(a, j, n) for j in range(dim)], dtype=np.int64)
        x = np.mod(np.outer(k, z), n) / n
        p2 = -1.0 + float(np.mean(np.prod(1.0 + 2 * math.pi**2 * _bernoulli2(x), axis=1)))
        if p2 < best_p2:
            best_a, best_p2 = a, p2
    logging.debug(f"korobov_vector n={n} dim={dim}: generator {best_a}, P2={best_p2:.4e}")
    return tuple(pow(best_a, j, n) for j in range(dim))


def korobov_vector(n: int, dim: int) -> np.ndarray:
    """Korobov generating vector (1, a, a^2, ...) mod n minimising the P2 figure of merit."""
    return np.asarray(_korobov_cached(n, dim), dtype=np.int64)


def load_generating_vector(path: Union[str, Path]) -> tuple[int, tuple[int, ...]]:
    """Read a generating vector file: first line n, then one component per line."""
    try:
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        n = int(lines[0])
        z = tuple(int(ln) for ln in lines[1:])
    except (OSError, ValueError, IndexError) as e:
        raise ConfigError(f"cannot read generating vector from {path}: {e}") from e
    if not z:
        raise ConfigError(f"generating vector file {path} lists no components")
    return n, z


def _shifts(rule: QmcRule, dim: int) -> np.ndarray:
    return np.random.default_rng(rule.seed).random((rule.shifts, dim))


def _replicate_blocks(rule: QmcRule, dim: int) -> list[Callable[[], np.ndarray]]:
    if rule.kind is RuleKind.LATTICE:
        z = rule.generating_vector(dim)
        return [lambda s=s: lattice_points(z, rule.points, s) for s in _shifts(rule, dim)]
    size = rule.points // rule.batches
    return [
        lambda b=b: halton_points(1 + b * size, size, dim, rule.leap) for b in range(rule.batches)
    ]


def replicate_means(integrand: Integrand, rule: QmcRule, dim: int) -> np.ndarray:
    """Per-replicate means, shape (replicates, outputs).

    Replicates are shifts for lattices and contiguous batches for Halton. They
    are evaluated on ``rule.threads`` workers and returned in replicate order.
    """
    blocks = _replicate_blocks(rule, dim)

    def run(block: Callable[[], np.ndarray]) -> np.ndarray:
        values = np.asarray(integrand(block()), dtype=float)
        return values.mean(axis=0)

    if rule.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=rule.threads) as pool:
            means = list(pool.map(run, blocks))
    else:
        means = [run(b) for b in blocks]
    means = np.asarray(means)
    if rule.kind is RuleKind.LATTICE:
        for i, m in enumerate(means):
            logging.debug(f"lattice shift {i}: mean {np.ravel(m)[:4]}")
    return means


def randomized_estimate(
    integrand: Integrand,
    rule: QmcRule,
    dim: int,
    transform: Optional[Transform] = None,
) -> Estimate:
    """Estimate of the integral of ``integrand`` over [0, 1)^dim.

    ``transform`` maps the replicate means (replicates, outputs) to derived
    quantities before averaging, e.g. ratios of two integrals. When the rule
    sets a tolerance the point count is doubled until the largest standard
    error meets it or the budget runs out.
    """
    current = rule
    while True:
        reps = replicate_means(integrand, current, dim)
        if transform is not None:
            reps = transform(reps)
        est = Estimate.from_replicates(reps, current.total_points)
        logging.debug(f"randomized_estimate {current.kind.value}: {current.total_points} points, max se {est.max_error:.3e}")
        if rule.tolerance is None or est.max_error <= rule.tolerance:
            return est
        if current.z is not None and current.kind is RuleKind.LATTICE:
            raise BudgetExceeded(
                f"standard error {est.max_error:.3e} above {rule.tolerance:.3e} with a fixed generating vector"
            )
        nxt = current.refined()
        if nxt.total_points > rule.budget:
            raise BudgetExceeded(
                f"standard error {est.max_error:.3e} above {rule.tolerance:.3e} after {current.total_points} points"
            )
        current = nxt


@dataclass(frozen=True)
class ImportanceSampler:
    """Proposal for hop advancements built from Q ~ q0 (r - c)^(3/2).

    F~(c) = exp(-lam q0 (r - c)^(3/2)) is renormalised onto [0, c_max]. Fields
    broadcast, so one sampler can carry a different gamma per sample path.
    """

    gamma: Union[float, np.ndarray]
    lam: float
    r: float
    q0: Union[float, np.ndarray]
    c_max: Union[float, np.ndarray]
    delta: Union[float, np.ndarray]
    void_floor: Union[float, np.ndarray]

    @classmethod
    def for_gamma(cls, gamma, lam: float, r: float = 1.0, c_max=None) -> "ImportanceSampler":
        g = np.asarray(gamma, dtype=float)
        if np.any(g <= r):
            raise DomainError(f"importance sampler needs gamma > r, got {gamma}")
        q0 = (4.0 / 3.0) * np.sqrt(2 * r / (g * (g - r)))
        cm = np.asarray(r if c_max is None else c_max, dtype=float)
        if np.any(cm <= 0) or np.any(cm > r):
            raise DomainError(f"c_max must lie in (0, r], got {c_max}")
        floor = np.exp(-lam * q0 * r**1.5)
        delta = np.exp(-lam * q0 * (r - cm) ** 1.5) - floor
        return cls(gamma=g, lam=lam, r=r, q0=q0, c_max=cm, delta=delta, void_floor=floor)

    def _tilde(self, c):
        return np.exp(-self.lam * self.q0 * np.clip(self.r - c, 0.0, None) ** 1.5)

    def cdf(self, c):
        return (self._tilde(c) - self.void_floor) / self.delta

    def pdf(self, c):
        rc = np.clip(self.r - np.asarray(c, dtype=float), 0.0, None)
        return 1.5 * self.lam * self.q0 * np.sqrt(rc) * self._tilde(c) / self.delta

    def inverse(self, t):
        inner = np.clip(np.asarray(t, dtype=float) * self.delta + self.void_floor, 1e-300, 1.0)
        return self.r - (-np.log(inner) / (self.lam * self.q0)) ** (2.0 / 3.0)


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def importance_cdf(s: ImportanceSampler, c):
    c = np.asarray(c, dtype=float)
    if np.any(c < 0) or np.any(c > s.c_max):
        raise DomainError(f"hop value outside [0, c_max]: {c}")
    return _scalar(s.cdf(c))


def importance_pdf(s: ImportanceSampler, c):
    c = np.asarray(c, dtype=float)
    if np.any(c < 0) or np.any(c > s.c_max):
        raise DomainError(f"hop value outside [0, c_max]: {c}")
    return _scalar(s.pdf(c))


def importance_inverse(s: ImportanceSampler, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise DomainError(f"uniform variate outside [0, 1]: {t}")
    return _scalar(s.inverse(t))

"""Multihop advancement under greedy forwarding.

Paths are sampled hop by hop from the unit cube: each hop uses one coordinate
for the advancement c (through the importance sampler of the current sink
distance, or plain stretching onto (0, r)) and, unless angles are integrated
out, one coordinate for the relative sink angle, stretched onto +-psi. Every
path carries the ratio of its joint density to the proposal density, so the
QMC mean of any path functional is an integral against the path law.

A node with sink distance at most r relays straight to the sink. That hop
counts, delivery is absorbing and no void can follow it.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from app.geometry.errors import DomainError, ParameterError
from app.geometry.model import ArrayLike, ModelParams, PathState, PolarPoint, wrap_angle
from app.numerics.qmc import Estimate, ImportanceSampler, QmcRule, randomized_estimate
from app.services.measure import (
    DEFAULT_MODE,
    MeasureMode,
    intersection_q_arrays,
    q_clamped,
    sector_half_width,
)

Z_TOL = 1e-12


class PathModel(str, Enum):
    INDEPENDENT = "independent"
    DEPENDENT = "dependent"


@dataclass(frozen=True)
class HopVector:
    """Hop advancements c_1..c_n and relative sink angles theta_1..theta_n of one path."""

    hops: np.ndarray
    angles: np.ndarray
    ell: float

    def __post_init__(self):
        hops = np.asarray(self.hops, dtype=float)
        angles = np.asarray(self.angles, dtype=float)
        if hops.shape != angles.shape or hops.ndim != 1:
            raise DomainError(f"hops {hops.shape} and angles {angles.shape} must be matching vectors")
        object.__setattr__(self, "hops", hops)
        object.__setattr__(self, "angles", angles)

    def __len__(self) -> int:
        return len(self.hops)

    @property
    def sink_distances(self) -> np.ndarray:
        return self.ell - np.concatenate(([0.0], np.cumsum(self.hops)))

    @property
    def source_angles(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.angles)))

    def to_path(self) -> PathState:
        pts = [
            PolarPoint(float(u), float(wrap_angle(t)))
            for u, t in zip(self.sink_distances, self.source_angles)
        ]
        return PathState(tuple(pts))


@dataclass(frozen=True)
class ZnResult:
    z_grid: np.ndarray
    conditional: Estimate
    void_terms: Estimate
    total: Estimate

    @property
    def samples(self) -> int:
        return self.total.samples


@dataclass(frozen=True)
class HopCountResult:
    n: np.ndarray
    conditioned: Estimate
    unconditioned: Estimate


@dataclass(frozen=True)
class PathSweep:
    """Per-step arrays of shape (n + 1, samples): row k describes the node after k hops.

    ``void`` is the probability that node k finds its feasible region empty,
    zero once the message has reached a node within r of the sink.
    """

    advancement: np.ndarray
    weight: np.ndarray
    void: np.ndarray
    sink_distance: np.ndarray


def _resolve(params: ModelParams, p: Optional[float]) -> ModelParams:
    return params if p is None or p == params.p else params.thinned(p)


def _excluded_q(
    g_cur: np.ndarray,
    u_next: np.ndarray,
    g_prev: Optional[np.ndarray],
    theta_rel: Optional[np.ndarray],
    params: ModelParams,
    model: PathModel,
    mode: MeasureMode,
) -> np.ndarray:
    """Q of the current feasible region below ``u_next`` with p times the previous region removed."""
    q = q_clamped(g_cur, u_next, params.r, mode)
    if model is PathModel.INDEPENDENT or g_prev is None:
        return q
    overlap = intersection_q_arrays(g_prev, g_cur, theta_rel, u_next, params.r, mode, strict=False)
    return np.maximum(q - params.p * overlap, 0.0)


def _inside_weight(u_new, th_new, g_prev, th_prev, params: ModelParams) -> np.ndarray:
    """Relative density of new points: 1 - p inside the previous feasible region, 1 outside."""
    d2 = u_new**2 + g_prev**2 - 2 * u_new * g_prev * np.cos(th_new - th_prev)
    return np.where(d2 < params.r**2, 1.0 - params.p, 1.0)


def joint_density(
    hv: HopVector,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    p: Optional[float] = None,
    mode: MeasureMode = DEFAULT_MODE,
) -> float:
    """Joint density of positive hops and relative angles along ``hv``.

    Product over hops of lambda w_i exp(-lambda Qbar_{i-1}(u_i)); zero for
    points outside the feasible support.
    """
    params = _resolve(params, p)
    model, mode = PathModel(model), MeasureMode(mode)
    if hv.ell != params.ell:
        raise DomainError(f"hop vector starts at {hv.ell}, parameters at ell={params.ell}")
    r, lam = params.r, params.lam
    u = hv.sink_distances
    th = hv.source_angles
    if np.any(u[:-1] <= r):
        raise DomainError("hop vector continues past a node within r of the sink")

    density = 1.0
    for i in range(1, len(hv) + 1):
        c = hv.hops[i - 1]
        if not 0 < c <= r:
            return 0.0
        rel = float(wrap_angle(th[i] - th[i - 1]))
        if abs(rel) > float(sector_half_width(u[i - 1], u[i], r, mode)):
            return 0.0
        g_prev = np.asarray(u[i - 2]) if i >= 2 else None
        theta_prev = np.asarray(th[i - 1] - th[i - 2]) if i >= 2 else None
        q = float(_excluded_q(np.asarray(u[i - 1]), np.asarray(u[i]), g_prev, theta_prev, params, model, mode))
        w = 1.0
        if model is PathModel.DEPENDENT and i >= 2:
            w = float(_inside_weight(u[i], th[i], u[i - 2], th[i - 2], params))
        density *= lam * w * math.exp(-lam * q)
    return density


def sweep_paths(
    x: np.ndarray,
    n: int,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
    angles: bool = True,
) -> PathSweep:
    """Map unit-cube points of shape (samples, n * (2 if angles else 1)) to weighted paths."""
    model, mode = PathModel(model), MeasureMode(mode)
    if not angles and model is not PathModel.INDEPENDENT:
        raise ParameterError("angles can only be integrated out under the independent model")
    stride = 2 if angles else 1
    r, lam = params.r, params.lam
    size = x.shape[0]

    adv = np.zeros((n + 1, size))
    wgt = np.zeros((n + 1, size))
    void = np.zeros((n + 1, size))
    dist = np.zeros((n + 1, size))

    u = np.full(size, float(params.ell))
    th = np.zeros(size)
    u_prev = np.full(size, np.nan)
    th_prev = np.zeros(size)
    z = np.zeros(size)
    w = np.ones(size)

    for i in range(n + 1):
        adv[i], wgt[i], dist[i] = z, w, u
        act = np.flatnonzero(u > r)
        has_prev = i >= 1
        g = u[act]
        gp = u_prev[act] if has_prev else None
        rel_prev = (th[act] - th_prev[act]) if has_prev else None
        if act.size:
            void[i, act] = np.exp(-lam * _excluded_q(g, g, gp, rel_prev, params, model, mode))
        if i == n:
            break

        done = u <= r
        z = np.where(done, z + u, z)
        u = np.where(done, 0.0, u)
        if not act.size:
            continue

        s_c = x[act, stride * i]
        if importance:
            sampler = ImportanceSampler.for_gamma(g, lam, r)
            c = sampler.inverse(s_c)
            proposal = sampler.pdf(c)
        else:
            c = r * s_c
            proposal = np.full(act.size, 1.0 / r)
        u_new = g - c
        half = sector_half_width(g, u_new, r, mode)
        rel = (2 * x[act, stride * i + 1] - 1) * half if angles else np.zeros(act.size)
        th_new = th[act] + rel

        q = _excluded_q(g, u_new, gp, rel_prev, params, model, mode)
        inside = 1.0
        if model is PathModel.DEPENDENT and has_prev:
            inside = _inside_weight(u_new, th_new, gp, th_prev[act], params)
        ok = (proposal > 0) & (half > 0) & (c > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = lam * inside * np.exp(-lam * q) * 2 * half / proposal
        factor = np.where(ok, factor, 0.0)

        u_prev[act], th_prev[act] = g, th[act]
        u[act], th[act] = u_new, th_new
        z[act] = z[act] + c
        w[act] = w[act] * factor

    return PathSweep(advancement=adv, weight=wgt, void=void, sink_distance=dist)


def _check_grid(z: ArrayLike, n: int, r: float) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size == 0:
        raise DomainError("empty z grid")
    if np.any(z <= 0) or (n > 0 and np.any(z > n * r * (1 + Z_TOL))):
        raise DomainError(f"z values must lie in (0, {n * r}], got [{z.min()}, {z.max()}]")
    return z


def _below(values: np.ndarray, z: np.ndarray) -> np.ndarray:
    return values[:, None] <= z[None, :] + Z_TOL * max(1.0, float(np.max(z)))


def _estimate(
    columns: Callable[[PathSweep], np.ndarray],
    n_hops: int,
    params: ModelParams,
    rule: QmcRule,
    model: PathModel,
    mode: MeasureMode,
    importance: bool,
    angles: bool = True,
    transform=None,
) -> Estimate:
    dim = n_hops * (2 if angles else 1)

    def integrand(x: np.ndarray) -> np.ndarray:
        return columns(sweep_paths(x, n_hops, params, model, mode, importance, angles))

    if dim == 0:
        reps = integrand(np.zeros((1, 0))).mean(axis=0)[None, :]
        return Estimate.from_replicates(transform(reps) if transform else reps, samples=1)
    logging.debug(f"path integral: {n_hops} hops, dim {dim}, {rule.kind.value} rule, {rule.total_points} points")
    return randomized_estimate(integrand, rule, dim, transform)


def _part(est: Estimate, sl: slice, shape: Optional[tuple[int, ...]] = None) -> Estimate:
    value = np.asarray(est.value)[sl]
    err = np.asarray(est.std_error)[sl]
    if shape is not None:
        value, err = value.reshape(shape), err.reshape(shape)
    return Estimate(value, err, est.samples)


def full_zn(
    z: ArrayLike,
    n: int,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    p: Optional[float] = None,
    rule: Optional[QmcRule] = None,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
) -> ZnResult:
    """P(Z_n <= z): positive-hop integral plus every void-terminated term k = 0 .. n-1.

    All z values share one set of sampled paths, so every column is monotone in z.
    """
    if n < 1:
        raise DomainError(f"hop count must be >= 1, got {n}")
    params, model, mode = _resolve(params, p), PathModel(model), MeasureMode(mode)
    rule = rule or QmcRule()
    z = _check_grid(z, n, params.r)
    m = z.size

    def columns(sw: PathSweep) -> np.ndarray:
        wn = sw.weight[n]
        cols = [wn[:, None] * _below(sw.advancement[n], z), wn[:, None]]
        for k in range(n):
            cols.append((sw.weight[k] * sw.void[k])[:, None] * _below(sw.advancement[k], z))
        return np.hstack(cols)

    def transform(reps: np.ndarray) -> np.ndarray:
        positive = reps[:, :m]
        mass = reps[:, m : m + 1]
        voids = reps[:, m + 1 :]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(mass > 0, positive / mass, 0.0)
        total = positive + voids.reshape(len(reps), n, m).sum(axis=1)
        return np.hstack([cond, voids, total])

    est = _estimate(columns, n, params, rule, model, mode, importance, transform=transform)
    return ZnResult(
        z_grid=z,
        conditional=_part(est, slice(0, m)),
        void_terms=_part(est, slice(m, m + n * m), (n, m)),
        total=_part(est, slice(m + n * m, None)),
    )


def conditional_zn(
    z: ArrayLike,
    n: int,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    p: Optional[float] = None,
    rule: Optional[QmcRule] = None,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
) -> Estimate:
    """P(Z_n <= z | every hop advanced a positive distance)."""
    return full_zn(z, n, params, model, p, rule, mode, importance).conditional


def independent_zn(
    z: ArrayLike,
    n: int,
    params: ModelParams,
    rule: Optional[QmcRule] = None,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
) -> Estimate:
    """Conditional P(Z_n <= z) with the angles integrated out: an n-dimensional integral of
    products of single-hop densities."""
    if n < 1:
        raise DomainError(f"hop count must be >= 1, got {n}")
    rule = rule or QmcRule()
    z = _check_grid(z, n, params.r)
    m = z.size

    def columns(sw: PathSweep) -> np.ndarray:
        wn = sw.weight[n]
        return np.hstack([wn[:, None] * _below(sw.advancement[n], z), wn[:, None]])

    def transform(reps: np.ndarray) -> np.ndarray:
        mass = reps[:, m : m + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(mass > 0, reps[:, :m] / mass, 0.0)

    return _estimate(
        columns, n, params, rule, PathModel.INDEPENDENT, mode, importance, angles=False, transform=transform
    )


def void_terminated_zn(
    z: ArrayLike,
    n: int,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    p: Optional[float] = None,
    rule: Optional[QmcRule] = None,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
) -> Estimate:
    """P((Z_n <= z) and C_{n+1} = 0): n positive hops, then a routing void.

    For n = 0 this is the void atom of the first hop.
    """
    if n < 0:
        raise DomainError(f"hop count must be >= 0, got {n}")
    params, model, mode = _resolve(params, p), PathModel(model), MeasureMode(mode)
    rule = rule or QmcRule()
    z = _check_grid(z, n, params.r) if n > 0 else np.atleast_1d(np.asarray(z, dtype=float))

    def columns(sw: PathSweep) -> np.ndarray:
        return (sw.weight[n] * sw.void[n])[:, None] * _below(sw.advancement[n], z)

    return _estimate(columns, n, params, rule, model, mode, importance)


def hops_distribution(
    n_max: int,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    p: Optional[float] = None,
    rule: Optional[QmcRule] = None,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
) -> HopCountResult:
    """P(N <= n) for n = 1 .. n_max from one set of sampled paths.

    N <= n exactly when the node reached after n - 1 hops lies within r of the
    sink. The conditioned variant divides by the probability that no void met
    the first n - 1 hops; the unconditioned one counts voids as undelivered.
    """
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    params, model, mode = _resolve(params, p), PathModel(model), MeasureMode(mode)
    rule = rule or QmcRule()
    steps = n_max - 1

    def columns(sw: PathSweep) -> np.ndarray:
        arrived = sw.weight * (sw.sink_distance <= params.r)
        return np.hstack([arrived.T, sw.weight.T])

    def transform(reps: np.ndarray) -> np.ndarray:
        arrived, alive = reps[:, :n_max], reps[:, n_max:]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(alive > 0, arrived / alive, 0.0)
        return np.hstack([np.clip(cond, 0.0, 1.0), arrived])

    est = _estimate(columns, steps, params, rule, model, mode, importance, transform=transform)
    return HopCountResult(
        n=np.arange(1, n_max + 1),
        conditioned=_part(est, slice(0, n_max)),
        unconditioned=_part(est, slice(n_max, None)),
    )


def hops_cdf(
    n: int,
    params: ModelParams,
    model: PathModel = PathModel.DEPENDENT,
    p: Optional[float] = None,
    rule: Optional[QmcRule] = None,
    mode: MeasureMode = DEFAULT_MODE,
    importance: bool = True,
) -> Estimate:
    """Conditioned P(N <= n)."""
    res = hops_distribution(n, params, model, p, rule, mode, importance)
    return Estimate(float(res.conditioned.value[-1]), float(res.conditioned.std_error[-1]), res.conditioned.samples)

"""Monte Carlo routing simulator.

Nodes are deployed with sink distance uniform on [0, ell] and angle uniform on
(-pi, pi], which gives areal density proportional to 1/u. Messages start at an
extra source node (ell, 0) and are forwarded greedily until a node within r of
the sink relays straight to it, or until a feasible region is empty.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Optional

import numpy as np
from tqdm import tqdm

from app.geometry.errors import DomainError, ParameterError
from app.geometry.model import ArrayLike, ModelParams, PathState, PolarPoint


class Outcome(str, Enum):
    DELIVERED = "delivered"
    VOID = "void"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class Deployment:
    u: np.ndarray
    theta: np.ndarray
    params: ModelParams
    density: float
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.u)

    @property
    def nodes(self) -> list[PolarPoint]:
        return [PolarPoint(float(u), float(t)) for u, t in zip(self.u, self.theta)]


def sample_deployment(
    params: ModelParams,
    density: Literal["awake", "underlying"] = "awake",
    rng: Optional[np.random.Generator] = None,
) -> Deployment:
    """Poisson number of nodes with mean 2 * density * pi * ell, placed by the 1/u law."""
    rng = rng if rng is not None else np.random.default_rng()
    dens = params.density(density)
    count = rng.poisson(2 * dens * math.pi * params.ell)
    u = rng.uniform(0.0, params.ell, count)
    theta = math.pi - rng.uniform(0.0, 2 * math.pi, count)
    return Deployment(u=u, theta=theta, params=params, density=dens)


def greedy_step(current: PolarPoint, u: np.ndarray, theta: np.ndarray, params: ModelParams) -> Optional[int]:
    """Index of the node within r of ``current`` and strictly closer to the sink with the
    smallest sink distance; ties go to the smaller |relative angle|, then the smaller
    index. None means the feasible region is empty (a routing void).
    """
    if current.u <= params.r:
        raise DomainError(f"greedy step from u={current.u} <= r: the node relays to the sink")
    rel = np.pi - np.mod(np.pi - (theta - current.theta), 2 * np.pi)
    d2 = u * u + current.u**2 - 2 * u * current.u * np.cos(rel)
    feasible = np.flatnonzero((d2 <= params.r**2) & (u < current.u))
    if feasible.size == 0:
        return None
    order = np.lexsort((feasible, np.abs(rel[feasible]), u[feasible]))
    return int(feasible[order[0]])


@dataclass(frozen=True)
class RouteRecord:
    """One routed message.

    ``path`` holds the source and the relays; ``hops`` the advancement of every
    hop, including the final relay to the sink when delivered.
    """

    path: PathState
    hops: tuple[float, ...]
    outcome: Outcome
    void_at: Optional[int] = None

    @property
    def n_hops(self) -> int:
        return len(self.hops)

    @property
    def first_sink_distance(self) -> float:
        """U_1; the source distance itself when the first hop met a void."""
        return self.path.points[1].u if len(self.path) > 1 else self.path.points[0].u

    def advancement(self, n: int) -> float:
        return float(sum(self.hops[:n]))


def route(
    params: ModelParams,
    rng: np.random.Generator,
    sleep: bool = False,
    max_hops: Optional[int] = None,
    deployment: Optional[Deployment] = None,
) -> RouteRecord:
    """Greedily forward one message from (ell, 0).

    With ``sleep`` the underlying alpha-process is deployed and every node is
    awake with probability p, redrawn independently before each hop.
    """
    dep = deployment or sample_deployment(params, "underlying" if sleep else "awake", rng)
    r = params.r
    current = PolarPoint(params.ell, 0.0)
    path = PathState.start(params.ell)
    hops: list[float] = []

    while True:
        if current.u <= r:
            hops.append(current.u)
            return RouteRecord(path=path, hops=tuple(hops), outcome=Outcome.DELIVERED)
        if max_hops is not None and len(hops) >= max_hops:
            return RouteRecord(path=path, hops=tuple(hops), outcome=Outcome.TRUNCATED)
        if sleep:
            awake = np.flatnonzero(rng.random(len(dep)) < params.p)
        else:
            awake = np.arange(len(dep))
        pick = greedy_step(current, dep.u[awake], dep.theta[awake], params)
        if pick is None:
            return RouteRecord(path=path, hops=tuple(hops), outcome=Outcome.VOID, void_at=len(hops) + 1)
        idx = awake[pick]
        nxt = PolarPoint(float(dep.u[idx]), float(dep.theta[idx]))
        hops.append(current.u - nxt.u)
        path = path.extend(nxt)
        current = nxt


def dkw_epsilon(n: int, level: float = 0.05) -> float:
    """Half-width of the Dvoretzky-Kiefer-Wolfowitz band at confidence 1 - level."""
    return math.sqrt(math.log(2.0 / level) / (2.0 * n))


def ecdf(samples: ArrayLike, grid: ArrayLike) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if samples.size == 0:
        return np.full(grid.shape, np.nan)
    return np.mean(samples[:, None] <= grid[None, :], axis=0)


@dataclass
class EnsembleSummary:
    params: ModelParams
    records: list[RouteRecord] = field(repr=False)
    level: float = 0.05
    max_hops: Optional[int] = None

    @property
    def n_runs(self) -> int:
        return len(self.records)

    def _count(self, outcome: Outcome) -> int:
        return sum(rec.outcome is outcome for rec in self.records)

    @property
    def void_rate(self) -> float:
        return self._count(Outcome.VOID) / self.n_runs

    @property
    def delivered_rate(self) -> float:
        return self._count(Outcome.DELIVERED) / self.n_runs

    @property
    def first_void_rate(self) -> float:
        return sum(rec.void_at == 1 for rec in self.records) / self.n_runs

    @property
    def band(self) -> float:
        return dkw_epsilon(self.n_runs, self.level)

    def first_hop_cdf(self, u_grid: ArrayLike) -> np.ndarray:
        """Empirical P(U_1 <= u), a void leaving the message at u = ell."""
        return ecdf([rec.first_sink_distance for rec in self.records], u_grid)

    def _require_hops(self, n: int) -> None:
        if self.max_hops is not None and self.max_hops < n:
            raise ParameterError(f"runs were truncated at {self.max_hops} hops, need {n}")

    def conditional_zn_cdf(self, n: int, z_grid: ArrayLike) -> tuple[np.ndarray, int]:
        """Empirical P(Z_n <= z | the first n hops met no void) and the number of runs used."""
        self._require_hops(n)
        kept = [rec.advancement(n) for rec in self.records if rec.void_at is None or rec.void_at > n]
        return ecdf(kept, z_grid), len(kept)

    def zn_cdf(self, n: int, z_grid: ArrayLike) -> np.ndarray:
        """Empirical P(Z_n <= z) over all runs; a void freezes the advancement."""
        self._require_hops(n)
        return ecdf([rec.advancement(n) for rec in self.records], z_grid)

    def hops_cdf(self, n_grid: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """Conditioned and unconditioned empirical P(N <= n).

        The conditioned form keeps the runs that met no void within their first n - 1 hops.
        """
        n_grid = np.atleast_1d(np.asarray(n_grid, dtype=int))
        n_hops = np.array([rec.n_hops for rec in self.records])
        delivered = np.array([rec.outcome is Outcome.DELIVERED for rec in self.records])
        void_at = np.array([rec.void_at if rec.void_at is not None else np.iinfo(np.int64).max for rec in self.records])
        cond, uncond = [], []
        for n in n_grid:
            self._require_hops(int(n))
            hit = delivered & (n_hops <= n)
            alive = void_at >= n
            uncond.append(hit.mean())
            cond.append(hit.sum() / alive.sum() if alive.any() else np.nan)
        return np.asarray(cond), np.asarray(uncond)


def _run(args) -> RouteRecord:
    params, seq, sleep, max_hops = args
    return route(params, np.random.default_rng(seq), sleep=sleep, max_hops=max_hops)


def ensemble(
    params: ModelParams,
    n_runs: int,
    seed: int = 0,
    sleep: bool = False,
    max_hops: Optional[int] = None,
    threads: int = 1,
    progress: bool = False,
    level: float = 0.05,
) -> EnsembleSummary:
    """Independent routing runs, each with its own RNG stream spawned from ``seed``."""
    if n_runs < 1:
        raise ParameterError(f"n_runs must be >= 1, got {n_runs}")
    streams = np.random.SeedSequence(seed).spawn(n_runs)
    jobs = [(params, s, sleep, max_hops) for s in streams]
    logging.info(f"Running {n_runs} routing simulations (sleep={sleep}, threads={threads})")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(tqdm(pool.map(_run, jobs), total=n_runs, disable=not progress))
    else:
        records = [_run(job) for job in tqdm(jobs, disable=not progress)]
    summary = EnsembleSummary(params=params, records=records, level=level, max_hops=max_hops)
    logging.info(
        f"Ensemble finished: delivered {summary.delivered_rate:.4f}, void {summary.void_rate:.4f}"
    )
    return summary

"""Domain types and sink geometry shared by every other module.

All lengths are in the units of the transmission radius ``r``. Points are held
in polar coordinates about the sink, with the source at angle zero.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Literal, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.geometry.errors import Degenerate, DomainError, NoIntersection, ParameterError

ArrayLike = Union[float, Sequence[float], np.ndarray]

CLAMP_TOL = 1e-12
ALPHA_TOL = 1e-12


class ModelParams(BaseModel):
    """Scalar network parameters.

    ``lam`` (alias ``lambda``) is the awake initial node density, ``alpha`` the
    underlying density and ``p`` the per-attempt awake probability, with
    ``lam = p * alpha``.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(alias="lambda")
    r: float = 1.0
    ell: float
    p: float = 1.0
    alpha: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_densities(cls, data: Any) -> Any:
        if not isinstance(data, Mapping):
            return data
        values = dict(data)
        lam = values.pop("lam", values.pop("lambda", None))
        p = values.get("p", 1.0)
        alpha = values.get("alpha")
        if lam is None and alpha is not None:
            lam = p * alpha
        if lam is not None and alpha is None and p and p > 0:
            values["alpha"] = lam / p
        values["lambda"] = lam
        return values

    @model_validator(mode="after")
    def _check(self) -> "ModelParams":
        if not self.r > 0:
            raise ValueError(f"transmission radius must be positive, got r={self.r}")
        if not self.lam > 0:
            raise ValueError(f"initial node density must be positive, got lambda={self.lam}")
        if not self.ell > self.r:
            raise ValueError(f"source-sink distance must exceed r, got ell={self.ell}, r={self.r}")
        if not 0 < self.p <= 1:
            raise ValueError(f"awake probability must lie in (0, 1], got p={self.p}")
        if abs(self.lam - self.p * self.alpha) > ALPHA_TOL * self.lam:
            raise ValueError(
                f"lambda={self.lam} is not p*alpha={self.p * self.alpha}"
            )
        return self

    def thinned(self, p: float) -> "ModelParams":
        """Same awake density with a different awake probability (alpha follows)."""
        return validate_params({"lambda": self.lam, "r": self.r, "ell": self.ell, "p": p})

    def density(self, kind: Literal["awake", "underlying"] = "awake") -> float:
        return self.lam if kind == "awake" else self.alpha


def validate_params(raw: Union[ModelParams, Mapping[str, Any]]) -> ModelParams:
    """Validate raw parameters, filling ``alpha = lambda / p`` when absent."""
    if isinstance(raw, ModelParams):
        raw = raw.model_dump(by_alias=True)
    try:
        return ModelParams.model_validate(raw)
    except ValidationError as e:
        raise ParameterError(str(e)) from e


def wrap_angle(theta: ArrayLike) -> np.ndarray:
    """Map angles into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2 * np.pi)
    return wrapped


@dataclass(frozen=True)
class PolarPoint:
    u: float
    theta: float = 0.0

    def __post_init__(self):
        if self.u < 0:
            raise DomainError(f"sink distance must be non-negative, got {self.u}")
        if not -math.pi < self.theta <= math.pi:
            raise DomainError(f"angle must lie in (-pi, pi], got {self.theta}")

    @property
    def xy(self) -> tuple[float, float]:
        return self.u * math.cos(self.theta), self.u * math.sin(self.theta)

    def distance_to(self, other: "PolarPoint") -> float:
        x0, y0 = self.xy
        x1, y1 = other.xy
        return math.hypot(x1 - x0, y1 - y0)


@dataclass(frozen=True)
class PathState:
    """Forwarding nodes visited so far; ``points[0]`` is the source ``(ell, 0)``.

    Angles are stored relative to the source, so ``points[i].theta`` is the
    cumulative source angle of the i-th node.
    """

    points: tuple[PolarPoint, ...] = field(default_factory=tuple)

    @classmethod
    def start(cls, ell: float) -> "PathState":
        return cls((PolarPoint(ell, 0.0),))

    def extend(self, point: PolarPoint) -> "PathState":
        return PathState(self.points + (point,))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[PolarPoint]:
        return iter(self.points)

    @property
    def hops(self) -> int:
        return len(self.points) - 1

    @property
    def last(self) -> PolarPoint:
        return self.points[-1]

    @property
    def previous(self) -> Optional[PolarPoint]:
        return self.points[-2] if len(self.points) > 1 else None

    @property
    def source_angles(self) -> np.ndarray:
        return np.array([pt.theta for pt in self.points])

    @property
    def relative_angles(self) -> np.ndarray:
        """Angle of each node relative to its predecessor, about the sink."""
        return wrap_angle(np.diff(self.source_angles))

    @property
    def advancements(self) -> np.ndarray:
        return -np.diff([pt.u for pt in self.points])

    def validate(self, r: float) -> "PathState":
        for prev, cur in zip(self.points, self.points[1:]):
            if not prev.u - r - CLAMP_TOL <= cur.u < prev.u:
                raise DomainError(f"sink distance {cur.u} not reachable from {prev.u}")
            if prev.distance_to(cur) > r * (1 + CLAMP_TOL):
                raise DomainError(f"node at {cur} lies outside the range of {prev}")
        return self


@dataclass(frozen=True)
class IntersectionGeometry:
    u01: float
    below_baseline: bool
    theta01: float


def _psi(gamma: ArrayLike, u: ArrayLike, r: float) -> np.ndarray:
    """Sink angle without domain checks; the arccos argument is clipped."""
    gamma = np.asarray(gamma, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (u * u + gamma * gamma - r * r) / (2 * u * gamma)
    return np.arccos(np.clip(np.nan_to_num(arg, nan=1.0), -1.0, 1.0))


def sink_angle(gamma: ArrayLike, u: ArrayLike, r: float = 1.0):
    """Half-width psi_gamma(u) of the angular sector at sink distance ``u``
    covered by a transmission disk of radius ``r`` centred at sink distance ``gamma``.
    """
    gamma_a = np.asarray(gamma, dtype=float)
    u_a = np.asarray(u, dtype=float)
    if np.any(gamma_a <= r):
        raise DomainError(f"sink angle needs gamma > r, got gamma={gamma}, r={r}")
    tol = CLAMP_TOL * np.maximum(1.0, gamma_a)
    if np.any(u_a < gamma_a - r - tol) or np.any(u_a > gamma_a + r + tol):
        raise DomainError(f"u={u} outside [gamma - r, gamma + r] for gamma={gamma}")
    arg = (u_a * u_a + gamma_a * gamma_a - r * r) / (2 * u_a * gamma_a)
    if np.any(np.abs(arg) > 1 + CLAMP_TOL):
        raise DomainError(f"arccos argument {arg} outside [-1, 1]")
    out = np.arccos(np.clip(arg, -1.0, 1.0))
    return float(out) if out.ndim == 0 else out


def intersection_arrays(g0: ArrayLike, g1: ArrayLike, theta: ArrayLike, r: float):
    """Vectorised circle-circle intersection for centres ``(g0, 0)`` and ``(g1, theta)``.

    Returns the sink distance and relative angle of the intersection point with
    the smaller angle, and the below-baseline indicator. Callers guarantee the
    circles meet.
    """
    g0, g1, theta = np.broadcast_arrays(
        np.asarray(g0, dtype=float), np.asarray(g1, dtype=float), np.asarray(theta, dtype=float)
    )
    x1 = g1 * np.cos(theta)
    y1 = g1 * np.sin(theta)
    dx, dy = x1 - g0, y1
    d = np.hypot(dx, dy)
    h = np.sqrt(np.maximum(r * r - 0.25 * d * d, 0.0))
    mx, my = 0.5 * (g0 + x1), 0.5 * y1
    with np.errstate(divide="ignore", invalid="ignore"):
        nx, ny = -dy / d, dx / d
    ax, ay = mx + h * nx, my + h * ny
    bx, by = mx - h * nx, my - h * ny
    phi_a = np.arctan2(ay, ax)
    phi_b = np.arctan2(by, bx)
    take_a = phi_a <= phi_b
    phi = np.where(take_a, phi_a, phi_b)
    u01 = np.where(take_a, np.hypot(ax, ay), np.hypot(bx, by))
    below = (phi < 0) | (theta == 0)
    return u01, below, phi


def circle_intersection(x0: PolarPoint, x1: PolarPoint, r: float = 1.0) -> IntersectionGeometry:
    """Intersection point X01 of the transmission circles about ``x0`` and ``x1``."""
    d = x0.distance_to(x1)
    if d == 0:
        raise Degenerate(f"coincident centres at {x0}")
    if d >= 2 * r:
        raise NoIntersection(f"centre distance {d} >= 2r = {2 * r}")
    theta = float(wrap_angle(x1.theta - x0.theta))
    u01, below, phi = intersection_arrays(x0.u, x1.u, theta, r)
    return IntersectionGeometry(u01=float(u01), below_baseline=bool(below), theta01=float(phi))

"""Carlson symmetric elliptic integrals for complex arguments, and the
Legendre-form incomplete integrals built on them.

The duplication algorithms follow Carlson, "Numerical computation of real or
complex elliptic integrals" (1995). All functions broadcast over numpy arrays.
"""

import logging
from typing import Literal, Union

import numpy as np

from app.geometry.errors import DomainError, NonConvergence

ComplexLike = Union[complex, float, np.ndarray]
Convention = Literal["sine", "cosine"]

RTOL = 1e-12
MAX_ITER = 100

# Imaginary displacement that moves a negative real argument off the branch cut
# onto its lower side, i.e. the limit of the parameter m = k^2 + i0.
_CUT_SHIFT = 1e-300


def _as_complex(*args: ComplexLike) -> list[np.ndarray]:
    arrays = np.broadcast_arrays(*(np.asarray(a, dtype=complex) for a in args))
    return [np.array(a) for a in arrays]


def _check_admissible(args: list[np.ndarray], max_zeros: int, name: str) -> None:
    for a in args:
        if not np.all(np.isfinite(a)):
            raise DomainError(f"{name}: non-finite argument")
        if np.any((a.imag == 0) & (a.real < 0)):
            raise DomainError(f"{name}: argument on the negative real axis")
    zeros = sum((a == 0).astype(int) for a in args)
    if np.any(zeros > max_zeros):
        raise DomainError(f"{name}: more than {max_zeros} zero argument(s)")


def _squeeze(value: np.ndarray):
    return complex(value) if value.ndim == 0 else value


def carlson_rf(x: ComplexLike, y: ComplexLike, z: ComplexLike, rtol: float = RTOL):
    """R_F(x, y, z) = 1/2 int_0^inf dt / sqrt((t+x)(t+y)(t+z))."""
    x, y, z = _as_complex(x, y, z)
    _check_admissible([x, y, z], max_zeros=1, name="carlson_rf")

    a0 = (x + y + z) / 3
    q = (3 * rtol) ** (-1 / 6) * np.max(np.abs([a0 - x, a0 - y, a0 - z]), axis=0)
    xm, ym, zm, am = x, y, z, a0
    scale = 1.0
    for it in range(MAX_ITER):
        if np.all(scale * q < np.abs(am)):
            break
        sx, sy, sz = np.sqrt(xm), np.sqrt(ym), np.sqrt(zm)
        lam = sx * sy + sx * sz + sy * sz
        xm, ym, zm, am = (xm + lam) / 4, (ym + lam) / 4, (zm + lam) / 4, (am + lam) / 4
        scale /= 4
    else:
        raise NonConvergence(f"carlson_rf did not converge in {MAX_ITER} iterations")
    logging.debug(f"carlson_rf converged after {it} duplications")

    xx = (a0 - x) * scale / am
    yy = (a0 - y) * scale / am
    zz = -(xx + yy)
    e2 = xx * yy - zz * zz
    e3 = xx * yy * zz
    series = (
        1.0
        + e3 * (1.0 / 14 + 3 * e3 / 104)
        + e2 * (-1.0 / 10 + e2 / 24 - 3 * e3 / 44 - 5 * e2 * e2 / 208 + e2 * e3 / 16)
    )
    return _squeeze(series / np.sqrt(am))


def carlson_rd(x: ComplexLike, y: ComplexLike, z: ComplexLike, rtol: float = RTOL):
    """R_D(x, y, z) = 3/2 int_0^inf dt / ((t+z) sqrt((t+x)(t+y)(t+z)))."""
    x, y, z = _as_complex(x, y, z)
    _check_admissible([x, y, z], max_zeros=1, name="carlson_rd")
    if np.any(z == 0):
        raise DomainError("carlson_rd: z must be non-zero")

    a0 = (x + y + 3 * z) / 5
    q = (rtol / 4) ** (-1 / 6) * np.max(np.abs([a0 - x, a0 - y, a0 - z]), axis=0)
    xm, ym, zm, am = x, y, z, a0
    scale = 1.0
    total = np.zeros_like(a0)
    for it in range(MAX_ITER):
        if np.all(scale * q < np.abs(am)):
            break
        sx, sy, sz = np.sqrt(xm), np.sqrt(ym), np.sqrt(zm)
        lam = sx * sy + sx * sz + sy * sz
        total = total + scale / (sz * (zm + lam))
        xm, ym, zm, am = (xm + lam) / 4, (ym + lam) / 4, (zm + lam) / 4, (am + lam) / 4
        scale /= 4
    else:
        raise NonConvergence(f"carlson_rd did not converge in {MAX_ITER} iterations")
    logging.debug(f"carlson_rd converged after {it} duplications")

    xx = (a0 - x) * scale / am
    yy = (a0 - y) * scale / am
    zz = -(xx + yy) / 3
    xy = xx * yy
    e2 = xy - 6 * zz * zz
    e3 = (3 * xy - 8 * zz * zz) * zz
    e4 = 3 * (xy - zz * zz) * zz * zz
    e5 = xy * zz * zz * zz
    series = (
        1.0
        - 3 * e2 / 14
        + e3 / 6
        + 9 * e2 * e2 / 88
        - 3 * e4 / 22
        - 9 * e2 * e3 / 52
        + 3 * e5 / 26
    )
    return _squeeze(scale * series / (am * np.sqrt(am)) + 3 * total)


def _off_cut(delta: np.ndarray) -> np.ndarray:
    on_cut = (delta.imag == 0) & (delta.real < 0)
    return np.where(on_cut, delta - 1j * _CUT_SHIFT, delta)


def _sine_parts(phi: ComplexLike, k: ComplexLike):
    phi, k = _as_complex(phi, k)
    s = np.sin(phi)
    c2 = np.cos(phi) ** 2
    m = k * k
    delta = _off_cut(1 - m * s * s)
    return s, c2, m, delta


def _f_principal(phi: ComplexLike, k: ComplexLike) -> np.ndarray:
    s, c2, _, delta = _sine_parts(phi, k)
    return np.asarray(s * carlson_rf(c2, delta, 1.0))


def _e_principal(phi: ComplexLike, k: ComplexLike) -> np.ndarray:
    s, c2, m, delta = _sine_parts(phi, k)
    rf = carlson_rf(c2, delta, 1.0)
    rd = carlson_rd(c2, delta, 1.0)
    return np.asarray(s * rf - m * s ** 3 * rd / 3)


def _reduce_phase(phi: ComplexLike, k: ComplexLike):
    """Split phi = j pi + phi' with |Re phi'| <= pi/2."""
    phi, k = _as_complex(phi, k)
    j = np.round(phi.real / np.pi)
    return phi - j * np.pi, k, j


def _legendre_f_sine(phi: ComplexLike, k: ComplexLike) -> np.ndarray:
    phi, k, j = _reduce_phase(phi, k)
    out = _f_principal(phi, k)
    if np.any(j != 0):
        out = out + 2 * j * _f_principal(np.full_like(phi, np.pi / 2), k)
    return np.asarray(out)


def _legendre_e_sine(phi: ComplexLike, k: ComplexLike) -> np.ndarray:
    phi, k, j = _reduce_phase(phi, k)
    out = _e_principal(phi, k)
    if np.any(j != 0):
        out = out + 2 * j * _e_principal(np.full_like(phi, np.pi / 2), k)
    return np.asarray(out)


def legendre_f(phi: ComplexLike, k: ComplexLike, convention: Convention = "sine"):
    """Incomplete elliptic integral of the first kind.

    ``sine``:   F(phi; k) = int_0^phi (1 - k^2 sin^2 t)^(-1/2) dt
    ``cosine``: F(phi; k) = int_0^phi (1 - k^2 cos^2 t)^(-1/2) dt

    For k > 1 the integrand is continued with m = k^2 + i0, which is the branch
    that makes the closed-form mean measure real and positive.
    """
    if convention == "sine":
        return _squeeze(_legendre_f_sine(phi, k))
    half = np.pi / 2
    out = _legendre_f_sine(half, k) - _legendre_f_sine(half - np.asarray(phi, dtype=complex), k)
    return _squeeze(out)


def legendre_e(phi: ComplexLike, k: ComplexLike, convention: Convention = "sine"):
    """Incomplete elliptic integral of the second kind, conventions as ``legendre_f``."""
    if convention == "sine":
        return _squeeze(_legendre_e_sine(phi, k))
    half = np.pi / 2
    out = _legendre_e_sine(half, k) - _legendre_e_sine(half - np.asarray(phi, dtype=complex), k)
    return _squeeze(out)

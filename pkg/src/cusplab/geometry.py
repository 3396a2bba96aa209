"""Cusp domain geometry: boundary curve, normals, curvature, area and measures.

The domain is the first-quadrant region bounded by the two coordinate
semiaxes and the graph of the height profile ``f(x) = (x+1)**(-alpha)``
with ``1 < alpha <= 2``.  It has finite area ``1/(alpha-1)`` but infinite
horizontal extent (the cusp).  A constant-height rectangle is provided as
the integrable control domain used by the spectral oracle and the
zero-exponent Lyapunov control.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

BOUNDARY_TOL = 1e-12


class Wall(enum.IntEnum):
    X_AXIS = 0
    Y_AXIS = 1
    CURVE = 2
    RIGHT = 3  # truncation wall; only finite-width domains have one


class Region(enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


class DomainError(ValueError):
    pass


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed without producing a divergence certificate."""


@dataclass(frozen=True)
class CuspDomain:
    """Region below f(x) = (x+1)**(-alpha) in the first quadrant.

    ``truncation_L`` is only meaningful to consumers that need a finite
    computational box (the spectral side); the flow itself lives on the
    infinite domain and ignores it.
    """

    alpha: float
    truncation_L: float = math.inf

    def __post_init__(self):
        if not (1.0 < self.alpha <= 2.0):
            raise DomainError(f"alpha must be in (1, 2], got {self.alpha}")
        if not self.truncation_L > 0:
            raise DomainError(f"truncation_L must be positive, got {self.truncation_L}")

    # height profile and derivatives
    def f(self, x):
        return (x + 1.0) ** (-self.alpha)

    def f_prime(self, x):
        return -self.alpha * (x + 1.0) ** (-self.alpha - 1.0)

    def f_second(self, x):
        return self.alpha * (self.alpha + 1.0) * (x + 1.0) ** (-self.alpha - 2.0)

    def f_inverse(self, y):
        """x with f(x) = y, for y in (0, 1]."""
        return y ** (-1.0 / self.alpha) - 1.0

    @property
    def x_max(self) -> float:
        return math.inf

    @property
    def corners(self):
        return ((0.0, 0.0), (0.0, 1.0))


@dataclass(frozen=True)
class RectangleDomain:
    """Axis-aligned box (0, width) x (0, height): flat-wall control domain."""

    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DomainError("rectangle sides must be positive")

    def f(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.height) if np.ndim(x) else self.height

    def f_prime(self, x):
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0

    def f_second(self, x):
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0

    @property
    def x_max(self) -> float:
        return self.width

    @property
    def corners(self):
        w, h = self.width, self.height
        return ((0.0, 0.0), (0.0, h), (w, 0.0), (w, h))


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary with the data collisions need."""

    wall: Wall
    position: tuple[float, float]
    inward_normal: tuple[float, float]
    curvature: float
    arclength_like_coord: float


def boundary_eval(domain: CuspDomain, x: float):
    """Profile value, first/second derivatives and curvature at abscissa x >= 0."""
    if x < 0:
        raise DomainError(f"boundary_eval requires x >= 0, got {x}")
    f = domain.f(x)
    fp = domain.f_prime(x)
    fpp = domain.f_second(x)
    kappa = fpp / (1.0 + fp * fp) ** 1.5
    return f, fp, fpp, kappa


def curve_point(domain, x: float) -> BoundaryPoint:
    """BoundaryPoint on the top wall at abscissa x."""
    if isinstance(domain, RectangleDomain):
        return BoundaryPoint(Wall.CURVE, (x, domain.height), (0.0, -1.0), 0.0, x)
    f, fp, _, kappa = boundary_eval(domain, x)
    norm = math.hypot(fp, 1.0)
    n = (fp / norm, -1.0 / norm)
    return BoundaryPoint(Wall.CURVE, (x, f), n, kappa, x)


def wall_point(domain, wall: Wall, coord: float) -> BoundaryPoint:
    if wall == Wall.CURVE:
        return curve_point(domain, coord)
    if wall == Wall.X_AXIS:
        return BoundaryPoint(wall, (coord, 0.0), (0.0, 1.0), 0.0, coord)
    if wall == Wall.Y_AXIS:
        return BoundaryPoint(wall, (0.0, coord), (1.0, 0.0), 0.0, coord)
    if wall == Wall.RIGHT:
        return BoundaryPoint(wall, (domain.x_max, coord), (-1.0, 0.0), 0.0, coord)
    raise ValueError(f"unknown wall {wall}")


def contains(domain, p, tol: float = BOUNDARY_TOL) -> Region:
    """Classify a point against the closed domain, with boundary tolerance."""
    x, y = p
    xmax = domain.x_max
    top = domain.f(max(x, 0.0))
    if x > tol and y > tol and y < top - tol and x < xmax - tol:
        return Region.INTERIOR
    on_x_axis = abs(y) <= tol and -tol <= x <= xmax + tol
    on_y_axis = abs(x) <= tol and -tol <= y <= domain.f(0.0) + tol
    on_curve = x >= -tol and x <= xmax + tol and abs(y - top) <= tol
    on_right = (math.isfinite(xmax) and abs(x - xmax) <= tol
                and -tol <= y <= domain.f(xmax) + tol)
    if on_x_axis or on_y_axis or on_curve or on_right:
        return Region.BOUNDARY
    return Region.EXTERIOR


def area(domain) -> float:
    if isinstance(domain, RectangleDomain):
        return domain.width * domain.height
    return 1.0 / (domain.alpha - 1.0)


GROWTH_CLASSES = ("bounded", "polynomial", "exponential")

# dyadic tail certificate: this many consecutive non-decreasing octave
# integrals certify divergence of the tail
_DIVERGENCE_OCTAVES = 5
_MAX_OCTAVE = 60


def liouville_integral(domain: CuspDomain, obs: Callable[[float], float],
                       growth: str = "polynomial") -> float:
    """Phase average of an x-dependent observable w.r.t. the normalized
    Liouville measure: (1/Area) * integral of obs(x) f(x) dx over (0, inf).

    Returns ``math.inf`` when the dyadic tail analysis certifies divergence.
    Raises QuadratureError when the tail neither converges nor certifies.
    """
    if growth not in GROWTH_CLASSES:
        raise ValueError(f"growth must be one of {GROWTH_CLASSES}")
    f = domain.f
    integrand = lambda x: obs(x) * f(x)
    head, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
    total = head
    prev = None
    rising = 0
    for k in range(0, _MAX_OCTAVE):
        a, b = 2.0 ** k, 2.0 ** (k + 1)
        piece, _ = integrate.quad(integrand, a, b, limit=200)
        total += piece
        if prev is not None and piece >= prev > 0:
            rising += 1
            if rising >= _DIVERGENCE_OCTAVES:
                return math.inf
        elif prev is not None:
            rising = 0
        # tiny octave => tail cannot matter any more
        if abs(piece) < 1e-15 * (abs(total) + 1.0) and k > 3:
            return total / area(domain)
        # clear geometric decay => extrapolate the remaining tail by the
        # matching geometric series and stop once that correction is tiny
        if prev is not None and abs(prev) > 0 and abs(piece) < 0.75 * abs(prev) and k > 6:
            ratio = abs(piece) / abs(prev)
            rest = piece * ratio / (1.0 - ratio)
            if abs(rest) < 1e-13 * (abs(total) + 1.0):
                return (total + rest) / area(domain)
        prev = piece
    raise QuadratureError(
        "tail integrals neither converged nor certified divergence after "
        f"{_MAX_OCTAVE} octaves")

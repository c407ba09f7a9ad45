"""Arithmetic and distances on the 3-D Heisenberg group.

The group law is

    (x1, y1, z1) * (x2, y2, z2) = (x1 + x2, y1 + y2, z1 + z2 + x1*y2 - x2*y1)

with identity (0, 0, 0) and inverse (-x, -y, -z).  Two distances are
provided: the closed-form pseudo-metric ``rho`` and the Carnot-Caratheodory
distance ``cc_distance`` obtained from the mu/nu root-finding formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "GroupPoint",
    "IDENTITY",
    "CCSolverConfig",
    "PlanarRotation",
    "SolverError",
    "multiply",
    "inverse",
    "dilate",
    "rho",
    "mu",
    "nu",
    "cc_distance",
    "nu_bounds",
    "reduce_to_common_b1",
    "parse_point",
]

_TAYLOR_CUTOFF = 1e-4
_THETA_MAX = math.pi - 1e-12


class SolverError(RuntimeError):
    """Raised when the bisection for the CC distance fails to bracket a root."""


@dataclass(frozen=True)
class GroupPoint:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def __iter__(self):
        yield self.x
        yield self.y
        yield self.z

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def __mul__(self, other: "GroupPoint") -> "GroupPoint":
        return multiply(self, other)


IDENTITY = GroupPoint(0.0, 0.0, 0.0)


def parse_point(text: str) -> GroupPoint:
    """Parse ``"x,y,z"`` into a :class:`GroupPoint`."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected a comma-separated triple x,y,z, got {text!r}")
    try:
        x, y, z = (float(p) for p in parts)
    except ValueError as exc:
        raise ValueError(f"invalid point {text!r}: {exc}") from None
    return GroupPoint(x, y, z)


def multiply(p: GroupPoint, q: GroupPoint) -> GroupPoint:
    return GroupPoint(p.x + q.x, p.y + q.y, p.z + q.z + (p.x * q.y - q.x * p.y))


def inverse(p: GroupPoint) -> GroupPoint:
    return GroupPoint(-p.x, -p.y, -p.z)


def dilate(p: GroupPoint, r: float) -> GroupPoint:
    """Anisotropic dilation (x, y, z) -> (r x, r y, r^2 z); a group automorphism."""
    return GroupPoint(r * p.x, r * p.y, r * r * p.z)


def rho(p: GroupPoint, q: GroupPoint) -> float:
    """Left-invariant pseudo-metric equivalent to the CC distance."""
    dx = p.x - q.x
    dy = p.y - q.y
    cross = p.z - q.z + p.x * q.y - p.y * q.x
    return math.sqrt(dx * dx + dy * dy + abs(cross))


def _check_theta(theta: float) -> None:
    if not (0.0 <= theta < math.pi):
        raise ValueError(f"theta must lie in [0, pi), got {theta!r}")


def mu(theta: float) -> float:
    """mu(theta) = theta / sin^2(theta) - cot(theta), with mu(0) = 0."""
    _check_theta(theta)
    if theta < _TAYLOR_CUTOFF:
        t2 = theta * theta
        return theta * (2 / 3 + t2 * (4 / 45 + t2 * (4 / 315 + t2 * (8 / 4725 + t2 * 4 / 18711))))
    s = math.sin(theta)
    return theta / (s * s) - math.cos(theta) / s


def nu(theta: float) -> float:
    """nu(theta) = theta^2 / (theta + sin^2 theta - sin theta cos theta).

    ``nu(0)`` returns 2, the value fixed by the distance formula.  Note that
    the right limit at 0 is 1, so nu is discontinuous there.
    """
    _check_theta(theta)
    if theta == 0.0:
        return 2.0
    if theta < _TAYLOR_CUTOFF:
        t = theta
        return 1 + t * (-2 / 3 + t * (7 / 9 + t * (-82 / 135 + t * (43 / 81))))
    s = math.sin(theta)
    return theta * theta / (theta + s * s - s * math.cos(theta))


@dataclass(frozen=True)
class CCSolverConfig:
    tolerance: float = 1e-12
    max_iterations: int = 200

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


DEFAULT_CC = CCSolverConfig()


def _solve_theta(planar_sq: float, abs_z: float, cfg: CCSolverConfig) -> float:
    # mu is increasing from 0 to +inf on [0, pi), so the root is unique
    if abs_z == 0.0:
        return 0.0
    lo, hi = 0.0, _THETA_MAX
    if mu(hi) * planar_sq < abs_z:
        return hi
    for _ in range(cfg.max_iterations):
        mid = 0.5 * (lo + hi)
        if mu(mid) * planar_sq < abs_z:
            lo = mid
        else:
            hi = mid
        if hi - lo <= cfg.tolerance:
            return 0.5 * (lo + hi)
    if hi - lo > 1e3 * cfg.tolerance:
        raise SolverError(
            f"bisection did not converge in {cfg.max_iterations} iterations "
            f"(bracket width {hi - lo:.3e})"
        )
    return 0.5 * (lo + hi)


def cc_distance(p: GroupPoint, q: GroupPoint, cfg: CCSolverConfig = DEFAULT_CC) -> float:
    """Carnot-Caratheodory distance via r^2 = nu(theta_c) (x^2 + y^2 + |z|).

    ``theta_c`` solves ``mu(theta) (x^2 + y^2) = |z|`` for ``w = q^{-1} * p``.
    When ``x = y = 0`` the limit ``theta_c -> pi`` is taken analytically and
    ``sqrt(pi |z|)`` is returned.
    """
    w = multiply(inverse(q), p)
    planar_sq = w.x * w.x + w.y * w.y
    abs_z = abs(w.z)
    if planar_sq == 0.0:
        return math.sqrt(math.pi * abs_z)
    theta = _solve_theta(planar_sq, abs_z, cfg)
    return math.sqrt(nu(theta) * (planar_sq + abs_z))


@lru_cache(maxsize=None)
def nu_bounds(points: int = 100_000) -> tuple[float, float]:
    """Numerical (min, max) of nu over [0, pi), including the value at 0."""
    theta = np.linspace(0.0, _THETA_MAX, points)[1:]
    vals = [nu(float(t)) for t in theta[theta < _TAYLOR_CUTOFF]]
    big = theta[theta >= _TAYLOR_CUTOFF]
    s = np.sin(big)
    vals = np.concatenate([vals, big**2 / (big + s * s - s * np.cos(big))])
    vals = np.append(vals, nu(0.0))
    return float(vals.min()), float(vals.max())


@dataclass(frozen=True)
class PlanarRotation:
    """Rotation of the (x, y) plane fixing z; an automorphism of the group."""

    angle: float

    def apply(self, p: GroupPoint) -> GroupPoint:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return GroupPoint(c * p.x - s * p.y, s * p.x + c * p.y, p.z)

    def apply_xy(self, x, y):
        c, s = math.cos(self.angle), math.sin(self.angle)
        return c * x - s * y, s * x + c * y

    def inverse(self) -> "PlanarRotation":
        return PlanarRotation(-self.angle)

    def compose(self, other: "PlanarRotation") -> "PlanarRotation":
        """Rotation applying ``other`` first, then ``self``."""
        return PlanarRotation(self.angle + other.angle)


def reduce_to_common_b1(
    p: GroupPoint, q: GroupPoint
) -> tuple[PlanarRotation, GroupPoint, GroupPoint]:
    """Rotate both points so that their first coordinates coincide.

    The planar offset ``q - p`` is turned onto the y-axis, using the smaller
    of the two rotations that do so.
    """
    dx, dy = q.x - p.x, q.y - p.y
    if dx == 0.0 and dy == 0.0:
        return PlanarRotation(0.0), p, q
    if dx == 0.0:
        rot = PlanarRotation(0.0)
        return rot, p, q
    phi = math.atan2(dy, dx)
    angle = math.pi / 2 - phi
    # fold into (-pi/2, pi/2]: mapping onto -y is as good as +y
    while angle > math.pi / 2:
        angle -= math.pi
    while angle <= -math.pi / 2:
        angle += math.pi
    rot = PlanarRotation(angle)
    p2, q2 = rot.apply(p), rot.apply(q)
    # the rotated x-coordinates agree up to round-off; make it exact
    q2 = GroupPoint(p2.x, q2.y, q2.z)
    return rot, p2, q2

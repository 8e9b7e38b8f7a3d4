"""SE(2) primitives: planar poses, angle wrapping, exp/log maps.

Conventions used throughout the package:

* angles live in ``(-pi, pi]`` and are re-wrapped after every operation;
* pose increments ("twists") are ordered ``(dx, dy, dtheta)`` to match the
  action layout of the refinement environment;
* residual 3-vectors are ordered ``(dtheta, dx, dy)`` (see :mod:`dpgo.graph`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or ndarray) to the half-open interval (-pi, pi]."""
    wrapped = np.mod(theta, TWO_PI)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


# For SO(2) the matrix logarithm of a rotation collapses to the wrapped angle.
rotation_log = wrap_angle


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Planar rigid-body transform (x, y, theta); theta normalized on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.theta)

    def as_matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        m = np.eye(3)
        m[:2, :2] = self.rotation()
        m[0, 2] = self.x
        m[1, 2] = self.y
        return m

    def as_vector(self) -> np.ndarray:
        """(x, y, theta) as a flat array."""
        return np.array([self.x, self.y, self.theta])


def identity() -> Pose2:
    return Pose2(0.0, 0.0, 0.0)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Group composition a * b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta)


def relative(a: Pose2, b: Pose2) -> Pose2:
    """Transform of b expressed in the frame of a, i.e. a^-1 * b."""
    return compose(inverse(a), b)


def _exp_coeffs(omega: float) -> tuple[float, float]:
    # A = sin(w)/w, B = (1 - cos(w))/w with series fallbacks near zero.
    if abs(omega) < 1e-9:
        return 1.0 - omega * omega / 6.0, omega / 2.0
    return math.sin(omega) / omega, (1.0 - math.cos(omega)) / omega


def se2_exp(twist) -> Pose2:
    """Exponential map from a twist (dx, dy, dtheta) to a Pose2."""
    vx, vy, omega = float(twist[0]), float(twist[1]), float(twist[2])
    a, b = _exp_coeffs(omega)
    return Pose2(a * vx - b * vy, b * vx + a * vy, omega)


def se2_log(p: Pose2) -> np.ndarray:
    """Logarithm map; inverse of :func:`se2_exp`. Returns (dx, dy, dtheta)."""
    omega = p.theta
    a, b = _exp_coeffs(omega)
    det = a * a + b * b
    vx = (a * p.x + b * p.y) / det
    vy = (-b * p.x + a * p.y) / det
    return np.array([vx, vy, omega])

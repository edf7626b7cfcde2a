"""Gaussian primitives: error-function quantiles, 2x2 covariances, obstacle prediction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TOL_PSD = 1e-12
TOL_UNIT = 1e-9


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Vec2 components must be finite, got ({self.x}, {self.y})")

    @classmethod
    def of(cls, v) -> Vec2:
        if isinstance(v, Vec2):
            return v
        x, y = v
        return cls(float(x), float(y))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def __add__(self, other: Vec2) -> Vec2:
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Vec2) -> Vec2:
        return Vec2(self.x - other.x, self.y - other.y)

    def scale(self, s: float) -> Vec2:
        return Vec2(s * self.x, s * self.y)

    def dot(self, other: Vec2) -> float:
        return self.x * other.x + self.y * other.y


@dataclass(frozen=True)
class Cov2:
    """Symmetric 2x2 covariance stored as (xx, xy, yy), in m^2."""

    xx: float
    xy: float
    yy: float

    def __post_init__(self) -> None:
        vals = (self.xx, self.xy, self.yy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"covariance entries must be finite, got {vals}")
        if self.xx < 0 or self.yy < 0 or self.xx * self.yy - self.xy**2 < -TOL_PSD:
            raise ValueError(
                f"covariance is not positive semidefinite: xx={self.xx}, xy={self.xy}, yy={self.yy}"
            )

    @classmethod
    def zero(cls) -> Cov2:
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def isotropic(cls, var: float) -> Cov2:
        return cls(var, 0.0, var)

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.xx, self.xy], [self.xy, self.yy]])

    def __add__(self, other: Cov2) -> Cov2:
        return Cov2(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)

    def scale(self, s: float) -> Cov2:
        return Cov2(s * self.xx, s * self.xy, s * self.yy)

    def trace(self) -> float:
        return self.xx + self.yy

    def eigen(self) -> tuple[float, float, float]:
        """Closed-form eigendecomposition.

        Returns ``(lam_major, lam_minor, angle)`` where ``angle`` is the
        orientation of the major axis in radians. Eigenvalues are clamped at 0.
        """
        mean = 0.5 * (self.xx + self.yy)
        diff = 0.5 * (self.xx - self.yy)
        rad = math.hypot(diff, self.xy)
        lam1 = max(mean + rad, 0.0)
        lam2 = max(mean - rad, 0.0)
        angle = 0.5 * math.atan2(2.0 * self.xy, self.xx - self.yy)
        return lam1, lam2, angle

    def sqrt_factor(self) -> np.ndarray:
        """A matrix L with L @ L.T equal to the covariance (works for singular PSD)."""
        lam1, lam2, angle = self.eigen()
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return rot * np.array([math.sqrt(lam1), math.sqrt(lam2)])


@dataclass(frozen=True)
class ChanceLevel:
    """Upper bound on the per-step collision probability."""

    delta: float

    def __post_init__(self) -> None:
        if not (0.0 < self.delta < 0.5):
            raise ValueError(f"delta must lie in (0, 0.5), got {self.delta}")


@dataclass(frozen=True)
class GaussianDisc:
    mean: Vec2
    cov: Cov2
    radius: float

    def __post_init__(self) -> None:
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise ValueError(f"radius must be finite and >= 0, got {self.radius}")


def erf(x: float) -> float:
    # stdlib erf is accurate to a few ulp over the whole real line
    return math.erf(x)


def erf_inv(y: float, tol: float = 1e-15) -> float:
    """Inverse error function by Newton iteration safeguarded with a bisection bracket.

    Raises ``ValueError`` for ``|y| >= 1``.
    """
    if not (-1.0 < y < 1.0):
        raise ValueError(f"erf_inv is defined on (-1, 1), got {y}")
    if y == 0.0:
        return 0.0
    target = abs(y)
    lo, hi = 0.0, 6.0
    x = 1.0 if target < 0.9 else 2.0
    scale = 2.0 / math.sqrt(math.pi)
    for _ in range(200):
        fx = math.erf(x) - target
        if fx == 0.0:
            break
        if fx > 0:
            hi = x
        else:
            lo = x
        step = fx / (scale * math.exp(-x * x))
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, x) or hi - lo <= tol:
            x = x_new
            break
        x = x_new
    return math.copysign(x, y)


def margin_coefficient(delta: ChanceLevel | float) -> float:
    """``erf_inv(1 - 2*delta)``; times ``sqrt(2)`` this is the one-sided normal quantile."""
    if not isinstance(delta, ChanceLevel):
        delta = ChanceLevel(float(delta))
    return erf_inv(1.0 - 2.0 * delta.delta)


def directional_stddev(cov: Cov2, a: Vec2) -> float:
    """Standard deviation of ``a . X`` for ``X ~ N(., cov)``; ``a`` must be a unit vector."""
    if abs(a.norm() - 1.0) > TOL_UNIT:
        raise ValueError(f"direction must be a unit vector, got norm {a.norm()}")
    q = cov.xx * a.x * a.x + 2.0 * cov.xy * a.x * a.y + cov.yy * a.y * a.y
    return math.sqrt(max(q, 0.0))


def propagate_obstacle(
    disc0: GaussianDisc, velocity: Vec2, cov_growth: Cov2, k: int, dt: float
) -> GaussianDisc:
    """Constant-velocity prediction with covariance growing by ``cov_growth`` per step."""
    if k < 0:
        raise ValueError(f"step index must be >= 0, got {k}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if k == 0:
        return disc0
    mean = disc0.mean + velocity.scale(k * dt)
    return GaussianDisc(mean=mean, cov=disc0.cov + cov_growth.scale(k), radius=disc0.radius)

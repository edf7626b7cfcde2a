"""Deterministic half-plane surrogate of a Gaussian collision chance constraint."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .prob import ChanceLevel, Cov2, GaussianDisc, Vec2, directional_stddev, margin_coefficient

DEGENERATE_DIST = 1e-9
SHARD_SIZE = 1 << 16


class DegenerateLinearization(ValueError):
    """The linearization point coincides with the obstacle mean, so no normal exists."""


class LinearizationPolicy(enum.Enum):
    FIXED = "fixed"
    ITERATIVE = "iterative"


@dataclass(frozen=True)
class LinearizedChanceConstraint:
    """Half-plane ``a . p - b >= 0`` at horizon step ``step``."""

    a: Vec2
    b: float
    step: int


def combined_radius(obstacle: GaussianDisc, robot_radius: float) -> float:
    return robot_radius + obstacle.radius


def constraint_from_normal(
    a: Vec2,
    obstacle: GaussianDisc,
    robot_radius: float,
    robot_cov: Cov2,
    delta: ChanceLevel,
    step: int,
) -> LinearizedChanceConstraint:
    """Build the tightened half-plane for a given unit normal ``a``."""
    if robot_radius < 0:
        raise ValueError(f"robot radius must be >= 0, got {robot_radius}")
    sigma = directional_stddev(robot_cov + obstacle.cov, a)
    margin = margin_coefficient(delta) * math.sqrt(2.0) * sigma
    b = a.dot(obstacle.mean) + combined_radius(obstacle, robot_radius) + margin
    return LinearizedChanceConstraint(a=a, b=b, step=step)


def linearize_collision(
    p_lin: Vec2,
    obstacle: GaussianDisc,
    robot_radius: float,
    robot_cov: Cov2,
    delta: ChanceLevel,
    step: int,
) -> LinearizedChanceConstraint:
    """Linearize the collision chance constraint at ``p_lin``.

    The normal points from the obstacle mean toward ``p_lin``. The offset is the
    combined radius plus ``c(delta) * sqrt(2) * sqrt(a^T Sigma a)`` with
    ``Sigma = robot_cov + obstacle.cov``.

    Raises
    ------
    DegenerateLinearization
        If ``p_lin`` is within 1e-9 m of the obstacle mean.
    """
    dx = p_lin.x - obstacle.mean.x
    dy = p_lin.y - obstacle.mean.y
    dist = math.hypot(dx, dy)
    if dist < DEGENERATE_DIST:
        raise DegenerateLinearization(
            f"step {step}: linearization point {p_lin} coincides with obstacle mean {obstacle.mean}"
        )
    a = Vec2(dx / dist, dy / dist)
    return constraint_from_normal(a, obstacle, robot_radius, robot_cov, delta, step)


def fallback_normal(angle: float) -> Vec2:
    """(0, 1) rotated counter-clockwise by ``angle``."""
    return Vec2(-math.sin(angle), math.cos(angle))


def constraint_residual(c: LinearizedChanceConstraint, p: Vec2) -> float:
    return c.a.dot(p) - c.b


def chance_residual(
    p: Vec2, obstacle: GaussianDisc, robot_radius: float, robot_cov: Cov2, delta: ChanceLevel
) -> float:
    """Nonlinear counterpart of the linearized constraint, evaluated at ``p`` itself.

    Equals ``constraint_residual(linearize_collision(p, ...), p)``: distance to the
    mean minus combined radius minus the uncertainty margin along that direction.
    At the mean itself the direction is undefined; the worst direction is used.
    """
    d = p - obstacle.mean
    dist = d.norm()
    sigma_total = robot_cov + obstacle.cov
    if dist < DEGENERATE_DIST:
        sigma = math.sqrt(sigma_total.eigen()[0])
    else:
        sigma = directional_stddev(sigma_total, d.scale(1.0 / dist))
    return dist - combined_radius(obstacle, robot_radius) - margin_coefficient(delta) * math.sqrt(2.0) * sigma


def _shard_hits(offset: np.ndarray, factor: np.ndarray, r2: float, seed: int, shard: int, n: int) -> int:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, shard])))
    z = rng.standard_normal((n, 2))
    rel = offset + z @ factor.T
    return int(np.count_nonzero(np.einsum("ij,ij->i", rel, rel) <= r2))


def chance_probability_oracle(
    p: Vec2,
    obstacle: GaussianDisc,
    robot_radius: float,
    robot_cov: Cov2,
    samples: int,
    seed: int,
    workers: int | None = None,
) -> float:
    """Monte-Carlo estimate of P(||obstacle - robot|| <= combined radius) at robot mean ``p``.

    Samples are drawn in shards of fixed size, each from a Philox stream keyed by
    ``(seed, shard_index)``, so the estimate does not depend on ``workers``.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    offset = (obstacle.mean - p).as_array()
    factor = (robot_cov + obstacle.cov).sqrt_factor()
    r = combined_radius(obstacle, robot_radius)
    r2 = r * r
    sizes = [min(SHARD_SIZE, samples - s) for s in range(0, samples, SHARD_SIZE)]
    jobs = [(offset, factor, r2, seed, i, n) for i, n in enumerate(sizes)]
    if workers and workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = sum(pool.map(lambda args: _shard_hits(*args), jobs))
    else:
        hits = sum(_shard_hits(*args) for args in jobs)
    return hits / samples

"""Sequential convex programming for chance-constrained trajectory optimization.

Positions are affine in the inputs, so each convex subproblem is a QP over
input increments and per-constraint slacks. The ``ITERATIVE`` policy
re-linearizes the collision chance constraints at every accepted iterate; the
``FIXED`` policy linearizes once at the guess and solves a single QP.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .prob import ChanceLevel, Cov2, GaussianDisc, Vec2
from .qp import DenseQP, QPStatus, solve_qp
from .reform import (
    DegenerateLinearization,
    LinearizationPolicy,
    LinearizedChanceConstraint,
    chance_residual,
    constraint_from_normal,
    fallback_normal,
    linearize_collision,
)

log = logging.getLogger(__name__)


class Dynamics(enum.Enum):
    SINGLE_INTEGRATOR = "single_integrator"
    DOUBLE_INTEGRATOR = "double_integrator"


class SolveStatus(enum.Enum):
    CONVERGED = "converged"
    STALLED = "stalled"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class ScpOptions:
    max_scp_iter: int = 50
    tol_step: float = 1e-5
    tol_feas: float = 1e-6
    trust_radius_init: float = 0.5
    trust_radius_min: float = 1e-4
    trust_radius_max: float = 0.5
    slack_weight: float = 1e4
    # small curvature on slacks keeps the QP Hessian positive definite
    slack_curvature: float = 1.0
    soft_constraints: bool = True
    accept_ratio: float = 0.1
    expand_ratio: float = 0.75
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        positive = ("tol_step", "tol_feas", "trust_radius_init", "trust_radius_min", "trust_radius_max", "qp_tol")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_scp_iter < 1 or self.qp_max_iter < 1:
            raise ValueError("iteration budgets must be >= 1")
        if self.slack_weight <= 0 or self.slack_curvature < 0:
            raise ValueError("slack_weight must be positive and slack_curvature nonnegative")
        if not 0.0 <= self.accept_ratio < self.expand_ratio <= 1.0:
            raise ValueError("need 0 <= accept_ratio < expand_ratio <= 1")
        if self.trust_radius_min > self.trust_radius_init:
            raise ValueError("trust_radius_min must not exceed trust_radius_init")

    @property
    def fallback_angle(self) -> float:
        """Rotation applied to the (0, 1) fallback normal, derived from ``seed``."""
        return float(np.random.default_rng(self.seed).uniform(-math.pi / 8, math.pi / 8))


@dataclass(frozen=True)
class TrajectoryProblem:
    start: Vec2
    goal: Vec2
    N: int
    dt: float
    u_max: float
    obstacles: tuple[tuple[GaussianDisc, ...], ...] = ()
    robot_radius: float = 0.3
    robot_cov: Cov2 = field(default_factory=Cov2.zero)
    delta: ChanceLevel = field(default_factory=lambda: ChanceLevel(0.03))
    dynamics: Dynamics = Dynamics.SINGLE_INTEGRATOR
    Q: float = 0.0
    R: float = 0.1
    Qf: float = 1e5

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError(f"horizon N must be >= 1, got {self.N}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.u_max > 0:
            raise ValueError(f"u_max must be positive, got {self.u_max}")
        if self.robot_radius < 0:
            raise ValueError(f"robot_radius must be >= 0, got {self.robot_radius}")
        if min(self.Q, self.R, self.Qf) < 0:
            raise ValueError("cost weights must be nonnegative")
        object.__setattr__(self, "obstacles", tuple(tuple(seq) for seq in self.obstacles))
        for j, seq in enumerate(self.obstacles):
            if len(seq) != self.N + 1:
                raise ValueError(f"obstacle {j} has {len(seq)} predictions, expected N+1 = {self.N + 1}")

    @cached_property
    def position_map(self) -> np.ndarray:
        """Scalar (N+1, N) matrix M with p_k - p_0 = sum_j M[k, j] u_j per axis."""
        k = np.arange(self.N + 1)[:, None]
        j = np.arange(self.N)[None, :]
        lag = k - j
        if self.dynamics is Dynamics.SINGLE_INTEGRATOR:
            return np.where(lag >= 1, self.dt, 0.0)
        return np.where(lag >= 1, self.dt**2 * (lag - 0.5), 0.0)

    @cached_property
    def stage_weights(self) -> np.ndarray:
        w = np.full(self.N + 1, self.Q)
        w[self.N] = self.Qf
        return w


@dataclass(frozen=True)
class Trajectory:
    positions: np.ndarray  # (N+1, 2)
    inputs: np.ndarray  # (N, 2)

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    def position(self, k: int) -> Vec2:
        return Vec2(float(self.positions[k, 0]), float(self.positions[k, 1]))


@dataclass
class Subproblem:
    qp: DenseQP
    constraints: list[tuple[int, LinearizedChanceConstraint]]
    fallback_steps: list[int]
    n_inputs: int

    def linear_violation(self, traj: Trajectory) -> float:
        """Total violation of the linearized constraints at ``traj`` (the optimal slack)."""
        return math.fsum(
            max(0.0, c.b - float(c.a.x * traj.positions[c.step, 0] + c.a.y * traj.positions[c.step, 1]))
            for _, c in self.constraints
        )


@dataclass
class SolveReport:
    trajectory: Trajectory
    status: SolveStatus
    iterations: int
    iterate_history: list[Trajectory]
    max_constraint_violation: float
    slack_used: float
    objective: float
    wall_time: float
    policy: LinearizationPolicy
    goal_error: float = 0.0
    step_norm: float = 0.0
    trust_radius: float = 0.0
    degenerate_fallbacks: int = 0
    qp_iterations: int = 0


def rollout(problem: TrajectoryProblem, inputs) -> Trajectory:
    """Integrate the discrete dynamics from ``problem.start`` (zero initial velocity)."""
    u = np.array(inputs, dtype=float).reshape(problem.N, 2)
    if not np.all(np.isfinite(u)):
        raise ValueError("inputs must be finite")
    if np.any(np.abs(u) > problem.u_max):
        worst = float(np.max(np.abs(u)))
        raise ValueError(f"input magnitude {worst} exceeds u_max = {problem.u_max}")
    dt = problem.dt
    p = np.empty((problem.N + 1, 2))
    p[0] = (problem.start.x, problem.start.y)
    if problem.dynamics is Dynamics.SINGLE_INTEGRATOR:
        for k in range(problem.N):
            p[k + 1] = p[k] + dt * u[k]
    else:
        v = np.zeros(2)
        for k in range(problem.N):
            p[k + 1] = p[k] + dt * v + 0.5 * dt * dt * u[k]
            v = v + dt * u[k]
    u.setflags(write=False)
    p.setflags(write=False)
    return Trajectory(positions=p, inputs=u)


def straight_line_guess(problem: TrajectoryProblem) -> Trajectory:
    """Travel along the start-goal segment, slowed down uniformly if ``u_max`` binds.

    Single integrator: constant velocity, so positions are evenly spaced.
    Double integrator: constant acceleration from rest along the segment.
    """
    diff = (problem.goal - problem.start).as_array()
    if problem.dynamics is Dynamics.SINGLE_INTEGRATOR:
        u = diff / (problem.N * problem.dt)
    else:
        u = 2.0 * diff / (problem.N * problem.dt) ** 2
    peak = float(np.max(np.abs(u)))
    if peak > problem.u_max:
        u = u * (problem.u_max / peak)
    return rollout(problem, np.tile(u, (problem.N, 1)))


def objective(problem: TrajectoryProblem, traj: Trajectory) -> float:
    err = traj.positions - problem.goal.as_array()
    return float(problem.stage_weights @ np.einsum("ij,ij->i", err, err) + problem.R * np.sum(traj.inputs**2))


def objective_gradient(problem: TrajectoryProblem, traj: Trajectory) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the flattened inputs."""
    err = traj.positions - problem.goal.as_array()
    M = problem.position_map
    grad = 2.0 * M.T @ (problem.stage_weights[:, None] * err) + 2.0 * problem.R * traj.inputs
    return grad.reshape(-1)


def constraint_residuals(problem: TrajectoryProblem, traj: Trajectory) -> np.ndarray:
    """Nonlinear chance-constraint residual per step (min over obstacles; +inf if none)."""
    out = np.full(problem.N + 1, np.inf)
    for seq in problem.obstacles:
        for k, obs in enumerate(seq):
            r = chance_residual(traj.position(k), obs, problem.robot_radius, problem.robot_cov, problem.delta)
            out[k] = min(out[k], r)
    return out


def constraint_violation(problem: TrajectoryProblem, traj: Trajectory) -> tuple[float, float]:
    """(max, total) violation of the nonlinear constraints over steps 1..N."""
    if not problem.obstacles:
        return 0.0, 0.0
    viol = []
    for seq in problem.obstacles:
        for k in range(1, problem.N + 1):
            r = chance_residual(traj.position(k), seq[k], problem.robot_radius, problem.robot_cov, problem.delta)
            viol.append(max(0.0, -r))
    return max(viol), math.fsum(viol)


def linearize_step(
    problem: TrajectoryProblem, p_lin: Vec2, obstacle: GaussianDisc, step: int, fallback_angle: float
) -> tuple[LinearizedChanceConstraint, bool]:
    try:
        c = linearize_collision(p_lin, obstacle, problem.robot_radius, problem.robot_cov, problem.delta, step)
        return c, False
    except DegenerateLinearization:
        a = fallback_normal(fallback_angle)
        c = constraint_from_normal(a, obstacle, problem.robot_radius, problem.robot_cov, problem.delta, step)
        return c, True


def build_subproblem(
    problem: TrajectoryProblem,
    lin_traj: Trajectory,
    trust_radius: float,
    slack_weight: float,
    *,
    slack_curvature: float = 1.0,
    soft: bool = True,
    fallback_angle: float = 0.0,
) -> Subproblem:
    """Convex QP in (input increments, slacks) around ``lin_traj``.

    Variables are ``du`` (2N, interleaved x/y per step) followed by one slack per
    (step, obstacle) collision constraint when ``soft`` is set. Pass
    ``trust_radius=inf`` to drop the trust-region rows.
    """
    N = problem.N
    nu = 2 * N
    M = problem.position_map
    # position block for step k: rows (2k, 2k+1) of kron(M, I2)
    P = np.kron(M, np.eye(2))

    constraints: list[tuple[int, LinearizedChanceConstraint]] = []
    fallback_steps: list[int] = []
    for j, seq in enumerate(problem.obstacles):
        for k in range(1, N + 1):
            c, degenerate = linearize_step(problem, lin_traj.position(k), seq[k], k, fallback_angle)
            constraints.append((j, c))
            if degenerate:
                fallback_steps.append(k)
    n_slack = len(constraints) if soft else 0
    n = nu + n_slack

    W = np.repeat(problem.stage_weights, 2)
    H = np.zeros((n, n))
    H[:nu, :nu] = 2.0 * (P.T @ (W[:, None] * P) + problem.R * np.eye(nu))
    H[nu:, nu:] = slack_curvature * np.eye(n_slack)
    f = np.zeros(n)
    f[:nu] = objective_gradient(problem, lin_traj)
    f[nu:] = slack_weight

    rows = []
    rhs = []
    for i, (_, c) in enumerate(constraints):
        k = c.step
        row = np.zeros(n)
        a = np.array([c.a.x, c.a.y])
        row[:nu] = -(a @ P[2 * k : 2 * k + 2])
        if soft:
            row[nu + i] = -1.0
        rows.append(row)
        rhs.append(a @ lin_traj.positions[k] - c.b)
    if math.isfinite(trust_radius):
        for k in range(1, N + 1):
            block = np.zeros((2, n))
            block[:, :nu] = P[2 * k : 2 * k + 2]
            rows.extend([block[0], block[1], -block[0], -block[1]])
            rhs.extend([trust_radius] * 4)
    G = np.array(rows).reshape(-1, n)
    h = np.array(rhs, dtype=float)

    u_flat = lin_traj.inputs.reshape(-1)
    lb = np.concatenate([-problem.u_max - u_flat, np.zeros(n_slack)])
    ub = np.concatenate([problem.u_max - u_flat, np.full(n_slack, np.inf)])
    qp = DenseQP(H=H, f=f, G=G, h=h, lb=lb, ub=ub)
    return Subproblem(qp=qp, constraints=constraints, fallback_steps=fallback_steps, n_inputs=nu)


def _apply_step(problem: TrajectoryProblem, lin_traj: Trajectory, x: np.ndarray, nu: int) -> Trajectory:
    u = lin_traj.inputs.reshape(-1) + x[:nu]
    # QP bound tolerance may overshoot u_max by round-off
    u = np.clip(u, -problem.u_max, problem.u_max)
    return rollout(problem, u.reshape(problem.N, 2))


def merit(problem: TrajectoryProblem, traj: Trajectory, slack_weight: float) -> float:
    return objective(problem, traj) + slack_weight * constraint_violation(problem, traj)[1]


def goal_error(problem: TrajectoryProblem, traj: Trajectory) -> float:
    return float(np.linalg.norm(traj.positions[-1] - problem.goal.as_array()))


def _report(problem, policy, traj, status, iterations, history, slack, step, radius, fallbacks, qp_iters, t0, opts):
    max_viol, _ = constraint_violation(problem, traj)
    return SolveReport(
        trajectory=traj,
        status=status,
        iterations=iterations,
        iterate_history=history,
        max_constraint_violation=max_viol,
        slack_used=slack,
        objective=objective(problem, traj),
        wall_time=time.perf_counter() - t0,
        policy=policy,
        goal_error=goal_error(problem, traj),
        step_norm=step,
        trust_radius=radius,
        degenerate_fallbacks=fallbacks,
        qp_iterations=qp_iters,
    )


def solve(
    problem: TrajectoryProblem,
    policy: LinearizationPolicy,
    guess: Trajectory,
    opts: ScpOptions | None = None,
) -> SolveReport:
    """Run the chosen linearization policy from ``guess``.

    ``ITERATIVE``: linearize at the current iterate, solve the QP, accept the step
    if the actual merit decrease is at least ``accept_ratio`` of the predicted
    one, otherwise halve the trust radius. Converged once the step is below
    ``tol_step`` with slack below ``tol_feas``.

    ``FIXED``: one QP linearized at ``guess``; Converged iff it needs no slack
    and the resulting trajectory satisfies the nonlinear constraints.
    """
    opts = opts or ScpOptions()
    t0 = time.perf_counter()
    guess = rollout(problem, guess.inputs)
    w = opts.slack_weight
    sub_kwargs = dict(slack_curvature=opts.slack_curvature, soft=opts.soft_constraints, fallback_angle=opts.fallback_angle)

    def subproblem(lin: Trajectory, radius: float):
        sub = build_subproblem(problem, lin, radius, w, **sub_kwargs)
        sol = solve_qp(sub.qp, tol_kkt=opts.qp_tol, max_iter=opts.qp_max_iter)
        return sub, sol

    def evaluate(sub: Subproblem, sol, lin: Trajectory):
        new = _apply_step(problem, lin, sol.x, sub.n_inputs)
        # slack read off the constraints rather than the QP variables, which carry round-off
        return new, sub.linear_violation(new)

    radius = opts.trust_radius_init
    fallbacks = 0
    qp_iters = 0

    if policy is LinearizationPolicy.FIXED:
        sub, sol = subproblem(guess, radius)
        fallbacks = len(sub.fallback_steps)
        qp_iters = sol.iterations
        if sol.status is QPStatus.INFEASIBLE:
            return _report(problem, policy, guess, SolveStatus.INFEASIBLE, 1, [], 0.0, 0.0, radius, fallbacks, qp_iters, t0, opts)
        traj, slack = evaluate(sub, sol, guess)
        step = float(np.max(np.abs(traj.positions - guess.positions)))
        max_viol, _ = constraint_violation(problem, traj)
        ok = slack <= opts.tol_feas and max_viol <= opts.tol_feas
        status = SolveStatus.CONVERGED if ok else SolveStatus.STALLED
        return _report(problem, policy, traj, status, 1, [], slack, step, radius, fallbacks, qp_iters, t0, opts)

    cur = guess
    phi_cur = merit(problem, cur, w)
    history: list[Trajectory] = []
    status = SolveStatus.MAX_ITER
    slack_used = 0.0
    step = 0.0
    iterations = 0
    for iterations in range(1, opts.max_scp_iter + 1):
        sub, sol = subproblem(cur, radius)
        fallbacks += len(sub.fallback_steps)
        qp_iters += sol.iterations
        if sol.status is QPStatus.INFEASIBLE:
            status = SolveStatus.INFEASIBLE
            break
        new, slack = evaluate(sub, sol, cur)
        step = float(np.max(np.abs(new.positions - cur.positions)))
        if step <= opts.tol_step:
            phi_new = merit(problem, new, w)
            # keep the final tiny step unless it worsens the merit beyond round-off
            if phi_new <= phi_cur + 1e-10:
                cur, phi_cur = new, phi_new
                history.append(new)
            slack_used = slack
            max_viol, _ = constraint_violation(problem, cur)
            ok = slack <= opts.tol_feas and max_viol <= opts.tol_feas
            status = SolveStatus.CONVERGED if ok else SolveStatus.STALLED
            break
        phi_new = merit(problem, new, w)
        predicted = phi_cur - (objective(problem, new) + w * slack)
        actual = phi_cur - phi_new
        log.debug(
            "scp it=%d radius=%.3g step=%.3e slack=%.3e predicted=%.3e actual=%.3e",
            iterations, radius, step, slack, predicted, actual,
        )
        if predicted > 0 and actual >= opts.accept_ratio * predicted:
            cur, phi_cur, slack_used = new, phi_new, slack
            history.append(new)
            if actual >= opts.expand_ratio * predicted:
                radius = min(2.0 * radius, opts.trust_radius_max)
        else:
            radius *= 0.5
            if radius < opts.trust_radius_min:
                radius = opts.trust_radius_min
                slack_used = slack
                status = SolveStatus.STALLED
                break
    return _report(problem, LinearizationPolicy.ITERATIVE, cur, status, iterations, history, slack_used, step, radius, fallbacks, qp_iters, t0, opts)

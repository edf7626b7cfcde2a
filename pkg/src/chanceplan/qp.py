"""Dense convex QP solver (dual active-set method) for small problems.

Solves::

    minimize    0.5 x^T H x + f^T x
    subject to  G x <= h,  lb <= x <= ub

Bounds are folded into the inequality rows internally. The method starts from
the unconstrained minimizer and adds the most violated constraint one at a time,
dropping active constraints whose multipliers would turn negative, in the manner
of Goldfarb and Idnani. Every iteration solves the KKT system of the current
active set from scratch, which is cheap at the sizes used here (n <= ~100).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

REGULARIZATION = 1e-9


class QPStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class DenseQP:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self) -> None:
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        f = np.asarray(self.f, dtype=float).reshape(-1)
        n = f.size
        G = np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if H.shape != (n, n):
            raise ValueError(f"H has shape {H.shape}, expected {(n, n)}")
        if G.shape[0] != h.size:
            raise ValueError(f"G has {G.shape[0]} rows but h has {h.size} entries")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-10):
            raise ValueError("H must be symmetric")
        lb = None if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        ub = None if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        for name, bound in (("lb", lb), ("ub", ub)):
            if bound is not None and bound.size != n:
                raise ValueError(f"{name} has {bound.size} entries, expected {n}")
        if lb is not None and ub is not None and np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.f.size

    @property
    def m(self) -> int:
        return self.h.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)


@dataclass
class QPSolution:
    x: np.ndarray
    status: QPStatus
    kkt_residual: float
    iterations: int
    duals: np.ndarray
    lb_duals: np.ndarray
    ub_duals: np.ndarray
    active_set: tuple[int, ...] = ()
    regularization: float = 0.0
    objective: float = field(default=float("nan"))
    # objective after each constraint addition; nondecreasing for this dual method
    objective_trace: tuple[float, ...] = ()


def _stacked_rows(qp: DenseQP) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int]]]:
    """All inequalities as ``C x <= d`` with a map back to (kind, index)."""
    rows = [qp.G]
    rhs = [qp.h]
    labels = [("G", i) for i in range(qp.m)]
    eye = np.eye(qp.n)
    if qp.lb is not None:
        idx = np.flatnonzero(np.isfinite(qp.lb))
        rows.append(-eye[idx])
        rhs.append(-qp.lb[idx])
        labels += [("lb", int(i)) for i in idx]
    if qp.ub is not None:
        idx = np.flatnonzero(np.isfinite(qp.ub))
        rows.append(eye[idx])
        rhs.append(qp.ub[idx])
        labels += [("ub", int(i)) for i in idx]
    return np.vstack(rows), np.concatenate(rhs), labels


def _kkt_solve(H: np.ndarray, CA: np.ndarray, rhs_x: np.ndarray, rhs_c: np.ndarray):
    n = H.shape[0]
    k = CA.shape[0]
    if k == 0:
        return np.linalg.solve(H, rhs_x), np.zeros(0)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = CA.T
    K[n:, :n] = CA
    sol = np.linalg.solve(K, np.concatenate([rhs_x, rhs_c]))
    return sol[:n], sol[n:]


def kkt_residual(
    qp: DenseQP,
    x: np.ndarray,
    duals: np.ndarray,
    lb_duals: np.ndarray | None = None,
    ub_duals: np.ndarray | None = None,
) -> float:
    """Largest of the stationarity, feasibility, dual sign and complementarity residuals."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(duals, dtype=float).reshape(-1)
    z_lb = np.zeros(qp.n) if lb_duals is None else np.asarray(lb_duals, dtype=float)
    z_ub = np.zeros(qp.n) if ub_duals is None else np.asarray(ub_duals, dtype=float)
    grad = qp.H @ x + qp.f + qp.G.T @ lam - z_lb + z_ub
    res = [float(np.max(np.abs(grad), initial=0.0))]

    slack = qp.G @ x - qp.h
    res.append(float(np.max(slack, initial=0.0)))
    res.append(float(np.max(-lam, initial=0.0)))
    res.append(float(np.max(np.abs(lam * slack), initial=0.0)))
    for bound, z, sign in ((qp.lb, z_lb, -1.0), (qp.ub, z_ub, 1.0)):
        if bound is None:
            res.append(float(np.max(np.abs(z), initial=0.0)))
            continue
        finite = np.isfinite(bound)
        gap = sign * (x - np.where(finite, bound, 0.0))
        res.append(float(np.max(gap[finite], initial=0.0)))
        res.append(float(np.max(-z, initial=0.0)))
        res.append(float(np.max(np.abs(np.where(finite, z * gap, z)), initial=0.0)))
    return max(res)


def _split_duals(qp: DenseQP, labels, active: list[int], lam: np.ndarray):
    duals = np.zeros(qp.m)
    lb_duals = np.zeros(qp.n)
    ub_duals = np.zeros(qp.n)
    target = {"G": duals, "lb": lb_duals, "ub": ub_duals}
    for row, value in zip(active, lam):
        kind, i = labels[row]
        target[kind][i] = value
    return duals, lb_duals, ub_duals


def _polish(qp: DenseQP, H: np.ndarray, labels, active: list[int], x: np.ndarray, lam: np.ndarray, tol: float):
    """Re-solve on the final active set with bound-active variables pinned exactly.

    Falls back to the unpolished iterate if the re-solve disagrees in sign.
    """
    x_pol = x.copy()
    pinned = {}
    rows = []
    for row in active:
        kind, i = labels[row]
        if kind == "G":
            rows.append(i)
        else:
            pinned[i] = kind
            x_pol[i] = qp.lb[i] if kind == "lb" else qp.ub[i]
    fixed = np.array(sorted(pinned), dtype=int)
    free = np.setdiff1d(np.arange(qp.n), fixed)
    GA = qp.G[rows]
    rhs_x = -qp.f[free] - H[np.ix_(free, fixed)] @ x_pol[fixed]
    rhs_c = qp.h[rows] - GA[:, fixed] @ x_pol[fixed]
    if free.size == 0 and rows:
        return (x, *_split_duals(qp, labels, active, lam))
    try:
        x_free, nu = _kkt_solve(H[np.ix_(free, free)], GA[:, free], rhs_x, rhs_c)
    except np.linalg.LinAlgError:
        return (x, *_split_duals(qp, labels, active, lam))
    x_pol[free] = x_free
    duals = np.zeros(qp.m)
    duals[rows] = nu
    grad = H @ x_pol + qp.f + qp.G.T @ duals
    lb_duals = np.zeros(qp.n)
    ub_duals = np.zeros(qp.n)
    for i, kind in pinned.items():
        if kind == "lb":
            lb_duals[i] = grad[i]
        else:
            ub_duals[i] = -grad[i]
    scale = max(1.0, float(np.max(np.abs(lam), initial=0.0)))
    if min(np.min(nu, initial=0.0), np.min(lb_duals), np.min(ub_duals)) < -tol * scale:
        return (x, *_split_duals(qp, labels, active, lam))
    return x_pol, np.maximum(duals, 0.0), np.maximum(lb_duals, 0.0), np.maximum(ub_duals, 0.0)


def solve_qp(qp: DenseQP, tol_kkt: float = 1e-8, max_iter: int = 200) -> QPSolution:
    """Solve a strictly convex (or regularized convex) dense QP.

    Parameters
    ----------
    qp : DenseQP
        Problem data. ``H`` must be positive semidefinite; if its Cholesky
        factorization fails, ``1e-9 * I`` is added and recorded in the result.
    tol_kkt : float
        Optimality is declared when the KKT residual is at most this value.
    max_iter : int
        Budget of active-set changes (additions plus removals).

    Returns
    -------
    QPSolution
        Status is ``INFEASIBLE`` when a violated constraint is linearly
        dependent on active ones with nonnegative multiplier direction (a
        certificate of primal infeasibility).
    """
    H = qp.H
    shift = 0.0
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        shift = REGULARIZATION
        H = H + shift * np.eye(qp.n)
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise ValueError("H is not positive semidefinite") from exc

    C, d, labels = _stacked_rows(qp)
    x = -scipy.linalg.cho_solve((L, True), qp.f)
    active: list[int] = []
    lam = np.zeros(0)
    feas_tol = 0.1 * tol_kkt
    iterations = 0
    status = QPStatus.OPTIMAL
    trace = [qp.objective(x)]

    while True:
        viol = C @ x - d
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol)) if viol.size else -1
        if p < 0 or viol[p] <= feas_tol:
            break
        cp = C[p]
        # reference curvature along cp with no constraints active, to detect dependence
        w = scipy.linalg.cho_solve((L, True), cp)
        ref = float(cp @ w)
        t_p = 0.0
        added = False
        while not added:
            if iterations >= max_iter:
                status = QPStatus.MAX_ITER
                break
            iterations += 1
            dx, dlam = _kkt_solve(H, C[active], -cp, np.zeros(len(active)))
            gain = -float(cp @ dx)
            t_full = np.inf
            if gain > 1e-12 * ref:
                t_full = (float(cp @ x) - d[p]) / gain
            t_part = np.inf
            block = -1
            for j, dl in enumerate(dlam):
                if dl < 0:
                    ratio = lam[j] / -dl
                    if ratio < t_part:
                        t_part, block = ratio, j
            if np.isinf(t_full) and np.isinf(t_part):
                status = QPStatus.INFEASIBLE
                break
            if t_full <= t_part:
                x = x + t_full * dx
                lam = np.append(lam + t_full * dlam, t_p + t_full)
                active.append(p)
                added = True
                trace.append(qp.objective(x))
            else:
                x = x + t_part * dx
                lam = lam + t_part * dlam
                t_p += t_part
                del active[block]
                lam = np.delete(lam, block)
        if status is not QPStatus.OPTIMAL:
            break

    if status is QPStatus.OPTIMAL and active:
        x, duals, lb_duals, ub_duals = _polish(qp, H, labels, active, x, lam, feas_tol)
    else:
        duals, lb_duals, ub_duals = _split_duals(qp, labels, active, lam)
    res = kkt_residual(qp, x, duals, lb_duals, ub_duals)
    if status is QPStatus.OPTIMAL and res > tol_kkt:
        status = QPStatus.MAX_ITER
    return QPSolution(
        x=x,
        status=status,
        kkt_residual=res,
        iterations=iterations,
        duals=duals,
        lb_duals=lb_duals,
        ub_duals=ub_duals,
        active_set=tuple(active),
        regularization=shift,
        objective=qp.objective(x),
        objective_trace=tuple(trace),
    )

"""Dependency-free SVG 1.1 figures of trajectories and Gaussian obstacles."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .prob import Cov2, margin_coefficient
from .scp import Trajectory, TrajectoryProblem

POLICY_COLORS = {"iterative": "#1f77b4", "fixed": "#d62728"}


def _f(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


class SvgCanvas:
    """World coordinates in metres mapped onto a fixed-width canvas with y pointing up."""

    def __init__(self, xmin: float, xmax: float, ymin: float, ymax: float, width: float = 720.0, margin: float = 30.0):
        self.scale = (width - 2 * margin) / max(xmax - xmin, 1e-9)
        self.xmin, self.ymax = xmin, ymax
        self.margin = margin
        self.width = width
        self.height = 2 * margin + self.scale * max(ymax - ymin, 1e-9)
        self.items: list[str] = []

    def px(self, x: float, y: float) -> tuple[float, float]:
        return self.margin + (x - self.xmin) * self.scale, self.margin + (self.ymax - y) * self.scale

    def polyline(self, pts, stroke: str, width: float = 2.0, dash: str | None = None) -> None:
        coords = " ".join(f"{_f(a)},{_f(b)}" for a, b in (self.px(x, y) for x, y in pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"{extra}/>'
        )

    def circle(self, x: float, y: float, r_world: float, fill: str = "none", stroke: str = "black", opacity: float = 1.0, r_px: float | None = None) -> None:
        cx, cy = self.px(x, y)
        r = r_px if r_px is not None else r_world * self.scale
        self.items.append(
            f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{fill}" stroke="{stroke}" opacity="{_f(opacity)}"/>'
        )

    def ellipse(self, x: float, y: float, a: float, b: float, angle: float, stroke: str, opacity: float = 1.0) -> None:
        cx, cy = self.px(x, y)
        # SVG rotation is clockwise in screen space, world angles are counter-clockwise
        deg = -math.degrees(angle)
        self.items.append(
            f'<ellipse cx="{_f(cx)}" cy="{_f(cy)}" rx="{_f(a * self.scale)}" ry="{_f(b * self.scale)}" '
            f'transform="rotate({_f(deg)} {_f(cx)} {_f(cy)})" fill="none" stroke="{stroke}" opacity="{_f(opacity)}"/>'
        )

    def text(self, x: float, y: float, label: str, size: int = 12, fill: str = "black") -> None:
        cx, cy = self.px(x, y)
        self.items.append(
            f'<text x="{_f(cx)}" y="{_f(cy)}" font-family="sans-serif" font-size="{size}" fill="{fill}">{escape(label)}</text>'
        )

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(self.width)}" '
            f'height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">\n'
            f'<rect width="{_f(self.width)}" height="{_f(self.height)}" fill="white"/>\n'
        )
        return head + "\n".join(self.items) + "\n</svg>\n"


def confidence_axes(cov: Cov2, delta: float) -> tuple[float, float, float]:
    """Semi-axes and orientation of the (1 - 2*delta) ellipse drawn for a step's obstacle."""
    lam1, lam2, angle = cov.eigen()
    k = math.sqrt(2.0) * margin_coefficient(delta)
    return k * math.sqrt(lam1), k * math.sqrt(lam2), angle


def _bounds(problem: TrajectoryProblem, trajectories) -> tuple[float, float, float, float]:
    pts = [problem.start.as_array(), problem.goal.as_array()]
    for t in trajectories:
        pts.extend(t.positions)
    for seq in problem.obstacles:
        for obs in seq:
            a, _, _ = confidence_axes(obs.cov, problem.delta.delta)
            reach = obs.radius + a
            pts.append(obs.mean.as_array() + reach)
            pts.append(obs.mean.as_array() - reach)
    pts = np.array(pts)
    lo, hi = pts.min(axis=0) - 0.3, pts.max(axis=0) + 0.3
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def render_figure(problem: TrajectoryProblem, trajectories: dict[str, Trajectory], title: str = "") -> str:
    """Trajectories, start/goal markers, obstacle discs and per-step confidence ellipses."""
    canvas = SvgCanvas(*_bounds(problem, trajectories.values()))
    delta = problem.delta.delta
    for seq in problem.obstacles:
        n = len(seq)
        for k, obs in enumerate(seq):
            a, b, angle = confidence_axes(obs.cov, delta)
            fade = 0.25 + 0.6 * k / max(n - 1, 1)
            if a > 0:
                canvas.ellipse(obs.mean.x, obs.mean.y, a, b, angle, stroke="#7f7f7f", opacity=fade)
        canvas.circle(seq[0].mean.x, seq[0].mean.y, seq[0].radius, fill="#bbbbbb", stroke="#555555", opacity=0.8)
        if seq[-1].mean != seq[0].mean:
            canvas.circle(seq[-1].mean.x, seq[-1].mean.y, seq[-1].radius, stroke="#555555")
    for name, traj in trajectories.items():
        color = POLICY_COLORS.get(name, "#2ca02c")
        canvas.polyline(traj.positions.tolist(), stroke=color)
        for x, y in traj.positions:
            canvas.circle(float(x), float(y), 0.0, fill=color, stroke=color, r_px=2.5)
        canvas.circle(float(traj.positions[-1, 0]), float(traj.positions[-1, 1]), problem.robot_radius, stroke=color)
    canvas.circle(problem.start.x, problem.start.y, 0.0, fill="black", r_px=5.0)
    canvas.text(problem.start.x, problem.start.y - 0.25, "start")
    canvas.circle(problem.goal.x, problem.goal.y, 0.0, fill="#2ca02c", stroke="#2ca02c", r_px=6.0)
    canvas.text(problem.goal.x, problem.goal.y - 0.25, "goal")
    xmin, _, _, ymax = _bounds(problem, trajectories.values())
    legend_y = ymax - 0.1
    if title:
        canvas.text(xmin + 0.05, legend_y, title, size=14)
        legend_y -= 0.25
    for name in trajectories:
        canvas.text(xmin + 0.05, legend_y, name, fill=POLICY_COLORS.get(name, "#2ca02c"))
        legend_y -= 0.2
    return canvas.render()

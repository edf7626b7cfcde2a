"""Scenario JSON parsing and JSON/CSV emission of solve and comparison reports.

Every physical quantity is in SI units: positions and radii in m, dt in s,
covariances in m^2, velocities in m/s, u_max in m/s (single integrator) or m/s^2
(double integrator). Floats are written with ``repr``, the shortest string that
round-trips exactly (at most 17 significant digits).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from typing import Any

import jsonschema

from .bench import ComparisonReport, ObstacleModel, PolicyResult, ProblemConfig, Scenario
from .prob import Cov2, Vec2
from .scp import Dynamics, ScpOptions, SolveReport, Trajectory, TrajectoryProblem, constraint_residuals


class ScenarioError(ValueError):
    """Malformed or invalid scenario file; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_COV = {
    "type": "object",
    "properties": {"xx": _NUM, "xy": _NUM, "yy": _NUM},
    "required": ["xx", "xy", "yy"],
    "additionalProperties": False,
}
_OPTION_TYPES = {f.name: f.type for f in dataclasses.fields(ScpOptions) if f.name != "seed"}

SCENARIO_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer"},
        "problem": {
            "type": "object",
            "properties": {
                "start": _VEC,
                "goal": _VEC,
                "horizon": {"type": "integer"},
                "dt": _NUM,
                "u_max": _NUM,
                "delta": _NUM,
                "robot_radius": _NUM,
                "robot_cov": _COV,
                "dynamics": {"enum": [d.value for d in Dynamics]},
                "weights": {
                    "type": "object",
                    "properties": {"Q": _NUM, "R": _NUM, "Qf": _NUM},
                    "additionalProperties": False,
                },
                "obstacles": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "mean": _VEC,
                            "velocity": _VEC,
                            "radius": _NUM,
                            "cov": _COV,
                            "cov_growth": _COV,
                        },
                        "required": ["mean", "radius", "cov"],
                        "additionalProperties": False,
                    },
                },
            },
            "required": ["start", "goal", "horizon", "dt", "u_max", "delta", "obstacles"],
            "additionalProperties": False,
        },
        "options": {
            "type": "object",
            "properties": {
                name: ({"type": "boolean"} if t in ("bool", bool) else {"type": "integer"} if t in ("int", int) else _NUM)
                for name, t in _OPTION_TYPES.items()
            },
            "additionalProperties": False,
        },
    },
    "required": ["name", "problem"],
    "additionalProperties": False,
}

SCHEMA_DOC = """\
Scenario JSON (SI units; unknown fields are rejected):
  name      string
  seed      integer (default 0): fallback-direction angle and Monte-Carlo seed
  problem:
    start, goal       [x, y] m
    horizon           integer N >= 1
    dt                s, > 0
    u_max             per-axis input bound (m/s single integrator, m/s^2 double)
    delta             chance level in (0, 0.5)
    robot_radius      m, >= 0 (default 0.3)
    robot_cov         {xx, xy, yy} m^2, PSD (default zero)
    dynamics          "single_integrator" | "double_integrator"
    weights           {Q, R, Qf} >= 0 (defaults 0, 0.1, 1e5)
    obstacles         [{mean [x, y] m, radius m, cov {xx, xy, yy} m^2,
                        velocity [vx, vy] m/s, cov_growth {xx, xy, yy} m^2 per step}]
  options             SCP settings: """ + ", ".join(_OPTION_TYPES) + "\n"


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _cov(d: dict, path: str) -> Cov2:
    try:
        return Cov2(float(d["xx"]), float(d["xy"]), float(d["yy"]))
    except ValueError as exc:
        raise ScenarioError(str(exc), path) from None


def _vec(v, path: str) -> Vec2:
    try:
        return Vec2.of(v)
    except ValueError as exc:
        raise ScenarioError(str(exc), path) from None


def scenario_from_dict(data: dict) -> Scenario:
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(exc.message, _path(exc.absolute_path) or "<root>") from None
    pd = data["problem"]
    delta = float(pd["delta"])
    if not 0.0 < delta < 0.5:
        raise ScenarioError(f"delta must lie in the open interval (0, 0.5), got {delta}", "problem.delta")
    checks = [
        ("horizon", pd["horizon"] >= 1, "must be >= 1"),
        ("dt", pd["dt"] > 0, "must be > 0"),
        ("u_max", pd["u_max"] > 0, "must be > 0"),
        ("robot_radius", pd.get("robot_radius", 0.3) >= 0, "must be >= 0"),
    ]
    for name, ok, msg in checks:
        if not ok:
            raise ScenarioError(f"{msg}, got {pd[name]}", f"problem.{name}")
    weights = pd.get("weights", {})
    for name, value in weights.items():
        if value < 0:
            raise ScenarioError(f"must be >= 0, got {value}", f"problem.weights.{name}")
    obstacles = []
    for i, od in enumerate(pd["obstacles"]):
        base = f"problem.obstacles[{i}]"
        if od["radius"] < 0:
            raise ScenarioError(f"must be >= 0, got {od['radius']}", f"{base}.radius")
        obstacles.append(
            ObstacleModel(
                mean=_vec(od["mean"], f"{base}.mean"),
                radius=float(od["radius"]),
                cov=_cov(od["cov"], f"{base}.cov"),
                velocity=_vec(od.get("velocity", [0.0, 0.0]), f"{base}.velocity"),
                cov_growth=_cov(od.get("cov_growth", {"xx": 0, "xy": 0, "yy": 0}), f"{base}.cov_growth"),
            )
        )
    defaults = ProblemConfig.__dataclass_fields__
    problem = ProblemConfig(
        start=_vec(pd["start"], "problem.start"),
        goal=_vec(pd["goal"], "problem.goal"),
        horizon=int(pd["horizon"]),
        dt=float(pd["dt"]),
        u_max=float(pd["u_max"]),
        delta=delta,
        obstacles=tuple(obstacles),
        robot_radius=float(pd.get("robot_radius", defaults["robot_radius"].default)),
        robot_cov=_cov(pd["robot_cov"], "problem.robot_cov") if "robot_cov" in pd else Cov2.zero(),
        dynamics=Dynamics(pd.get("dynamics", Dynamics.SINGLE_INTEGRATOR.value)),
        Q=float(weights.get("Q", defaults["Q"].default)),
        R=float(weights.get("R", defaults["R"].default)),
        Qf=float(weights.get("Qf", defaults["Qf"].default)),
    )
    try:
        options = ScpOptions(**data.get("options", {}))
    except ValueError as exc:
        raise ScenarioError(str(exc), "options") from None
    return Scenario(name=data["name"], problem=problem, options=options, seed=int(data.get("seed", 0)))


def parse_scenario(raw: bytes | str) -> Scenario:
    """Parse and validate a UTF-8 scenario document."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioError(f"not valid UTF-8: {exc}") from None
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def _cov_dict(c: Cov2) -> dict:
    return {"xx": c.xx, "xy": c.xy, "yy": c.yy}


def scenario_to_dict(s: Scenario) -> dict:
    p = s.problem
    options = {name: getattr(s.options, name) for name in _OPTION_TYPES}
    return {
        "name": s.name,
        "seed": s.seed,
        "problem": {
            "start": [p.start.x, p.start.y],
            "goal": [p.goal.x, p.goal.y],
            "horizon": p.horizon,
            "dt": p.dt,
            "u_max": p.u_max,
            "delta": p.delta,
            "robot_radius": p.robot_radius,
            "robot_cov": _cov_dict(p.robot_cov),
            "dynamics": p.dynamics.value,
            "weights": {"Q": p.Q, "R": p.R, "Qf": p.Qf},
            "obstacles": [
                {
                    "mean": [o.mean.x, o.mean.y],
                    "velocity": [o.velocity.x, o.velocity.y],
                    "radius": o.radius,
                    "cov": _cov_dict(o.cov),
                    "cov_growth": _cov_dict(o.cov_growth),
                }
                for o in p.obstacles
            ],
        },
        "options": options,
    }


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def serialize_scenario(s: Scenario) -> str:
    return dumps(scenario_to_dict(s))


def _num(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def trajectory_to_dict(t: Trajectory) -> dict:
    return {"positions": t.positions.tolist(), "inputs": t.inputs.tolist()}


def trajectory_from_dict(d: dict, problem: TrajectoryProblem) -> Trajectory:
    from .scp import rollout

    traj = rollout(problem, d["inputs"])
    if "positions" in d and traj.positions.tolist() != [list(map(float, p)) for p in d["positions"]]:
        raise ValueError("stored positions do not match the dynamics rollout of the stored inputs")
    return traj


def solve_report_to_dict(
    report: SolveReport, problem: TrajectoryProblem, *, failed: bool | None = None, mc_probabilities=None
) -> dict:
    residuals = constraint_residuals(problem, report.trajectory)
    out = {
        "policy": report.policy.value,
        "status": report.status.value,
    }
    if failed is not None:
        out["classification"] = "failure" if failed else "success"
    out.update(
        {
            "iterations": report.iterations,
            "qp_iterations": report.qp_iterations,
            "objective": report.objective,
            "goal_error": report.goal_error,
            "slack_used": report.slack_used,
            "max_constraint_violation": report.max_constraint_violation,
            "step_norm": report.step_norm,
            "trust_radius": report.trust_radius,
            "degenerate_fallbacks": report.degenerate_fallbacks,
            "wall_time": report.wall_time,
            "times": [k * problem.dt for k in range(problem.N + 1)],
            "trajectory": trajectory_to_dict(report.trajectory),
            "constraint_residuals": [_num(r) for r in residuals],
            "mc_probabilities": list(mc_probabilities) if mc_probabilities is not None else None,
            "iterate_history": [trajectory_to_dict(t) for t in report.iterate_history],
        }
    )
    return out


def _policy_result_dict(r: PolicyResult, problem: TrajectoryProblem) -> dict:
    if r.report is None:
        return {"policy": r.policy.value, "classification": "failure", "error": r.error}
    return solve_report_to_dict(r.report, problem, failed=r.failed, mc_probabilities=r.mc_probabilities)


def comparison_to_dict(c: ComparisonReport) -> dict:
    problem = c.scenario.problem.build()
    return {
        "scenario": scenario_to_dict(c.scenario),
        "samples": c.samples,
        "delta": c.scenario.problem.delta,
        "results": {name: _policy_result_dict(r, problem) for name, r in c.results.items()},
        "timing": {name: {"wall_time": t} for name, t in c.timing().items()},
    }


def normalize_timing(obj: Any) -> Any:
    """Zero every ``wall_time`` field; the only run-to-run varying content of a report."""
    if isinstance(obj, dict):
        return {k: (0.0 if k == "wall_time" else normalize_timing(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [normalize_timing(v) for v in obj]
    return obj


CSV_COLUMNS = ("k", "t", "x", "y", "u_x", "u_y", "constraint_residual", "mc_probability")


def _cell(v) -> str:
    return "" if v is None else repr(v)


def report_csv(report_dict: dict) -> str:
    """Per-step rows built from a solve-report dict so CSV and JSON values agree exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    positions = report_dict["trajectory"]["positions"]
    inputs = report_dict["trajectory"]["inputs"]
    probs = report_dict.get("mc_probabilities")
    for k, (x, y) in enumerate(positions):
        ux, uy = inputs[k] if k < len(inputs) else (None, None)
        row = (
            k,
            report_dict["times"][k],
            x,
            y,
            ux,
            uy,
            report_dict["constraint_residuals"][k],
            probs[k] if probs else None,
        )
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()

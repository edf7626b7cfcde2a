"""Command-line entry point: ``solve``, ``compare``, ``validate`` and ``quantile``.

Exit status is 0 on success (a policy classified as failing is a result, not an
error), 1 on operational errors (missing files, invalid scenarios, IO), and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import bench
from .bench import Scenario, canonical_benchmark, chance_bound, is_failure, run_comparison, validate_trajectory
from .prob import margin_coefficient
from .reform import LinearizationPolicy
from .scp import solve, straight_line_guess
from .serialize import (
    SCHEMA_DOC,
    ScenarioError,
    comparison_to_dict,
    dumps,
    parse_scenario,
    report_csv,
    solve_report_to_dict,
    trajectory_from_dict,
)
from .svg import render_figure

BUILTIN_SCENARIOS = {"canonical": canonical_benchmark}
EMIT_KINDS = ("json", "csv", "svg")


class CliError(Exception):
    """Operational failure reported with exit status 1."""


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    policy: str  # "fixed" | "iterative" | "compare"
    delta: float | None = None
    seed: int | None = None
    samples: int = bench.DEFAULT_SAMPLES
    out: Path | None = None
    emit: frozenset[str] = frozenset(EMIT_KINDS)

    def __post_init__(self) -> None:
        if self.policy not in ("fixed", "iterative", "compare"):
            raise CliError(f"unknown policy selector {self.policy!r}")
        if self.delta is not None and not 0.0 < self.delta < 0.5:
            raise CliError(f"--delta must lie in (0, 0.5), got {self.delta}")
        if self.samples < 1000:
            raise CliError(f"--samples must be >= 1000, got {self.samples}")
        unknown = set(self.emit) - set(EMIT_KINDS)
        if unknown:
            raise CliError(f"unknown --emit kinds: {', '.join(sorted(unknown))}")


def load_scenario(ref: str) -> Scenario:
    if ref in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[ref]()
    path = Path(ref)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CliError(f"scenario file not found: {path}") from None
    except OSError as exc:
        raise CliError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        return parse_scenario(raw)
    except ScenarioError as exc:
        raise CliError(f"invalid scenario {path}: {exc}") from None


def shipped_scenario_path(name: str = "canonical") -> Path:
    return Path(str(resources.files("chanceplan") / "data" / f"{name}.json"))


def apply_overrides(scenario: Scenario, config: RunConfig) -> Scenario:
    if config.delta is not None:
        scenario = dataclasses.replace(scenario, problem=dataclasses.replace(scenario.problem, delta=config.delta))
    if config.seed is not None:
        scenario = dataclasses.replace(scenario, seed=config.seed)
    return scenario


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}") from None


def emit_results(result, scenario: Scenario, config: RunConfig) -> list[Path]:
    """Write JSON/CSV/SVG files for a solve (``(name, report dict)``) or a comparison report."""
    if config.out is None:
        return []
    out = config.out
    problem = scenario.problem.build()
    written = []
    if isinstance(result, bench.ComparisonReport):
        full = comparison_to_dict(result)
        per_policy = full["results"]
        if "json" in config.emit:
            written.append(out / "comparison.json")
            _write(written[-1], dumps(full))
        if "svg" in config.emit:
            trajs = {name: r.report.trajectory for name, r in result.results.items() if r.report}
            written.append(out / "comparison.svg")
            _write(written[-1], render_figure(problem, trajs, title=f"{scenario.name}: fixed vs iterative"))
        trajectories = {name: r.report.trajectory for name, r in result.results.items() if r.report}
    else:
        name, report_dict, traj = result
        per_policy = {name: report_dict}
        trajectories = {name: traj}
    for name, rd in per_policy.items():
        if "trajectory" not in rd:
            continue
        if "json" in config.emit:
            written.append(out / f"{name}.json")
            _write(written[-1], dumps(rd))
        if "csv" in config.emit:
            written.append(out / f"{name}.csv")
            _write(written[-1], report_csv(rd))
        if "svg" in config.emit:
            written.append(out / f"{name}.svg")
            _write(written[-1], render_figure(problem, {name: trajectories[name]}, title=f"{scenario.name}: {name}"))
    return written


def _summary_line(name: str, rd: dict) -> str:
    if "trajectory" not in rd:
        return f"{name:<10} {rd['classification']:<8} error: {rd.get('error')}"
    return (
        f"{name:<10} {rd['classification']:<8} status={rd['status']} iterations={rd['iterations']} "
        f"goal_error={rd['goal_error']:.3e} slack={rd['slack_used']:.3e} wall_time={rd['wall_time']:.4f}s"
    )


def cmd_solve(args) -> int:
    config = RunConfig(args.scenario, args.policy, args.delta, args.seed, args.samples, args.out, _emit(args))
    scenario = apply_overrides(load_scenario(config.scenario), config)
    problem = scenario.problem.build()
    policy = LinearizationPolicy(config.policy)
    opts = scenario.solver_options()
    report = solve(problem, policy, straight_line_guess(problem), opts)
    probs = validate_trajectory(report.trajectory, problem, config.samples, scenario.seed)
    rd = solve_report_to_dict(report, problem, failed=is_failure(report, opts), mc_probabilities=probs)
    emit_results((policy.value, rd, report.trajectory), scenario, config)
    print(_summary_line(policy.value, rd))
    return 0


def cmd_compare(args) -> int:
    config = RunConfig(args.scenario, "compare", args.delta, args.seed, args.samples, args.out, _emit(args))
    scenario = apply_overrides(load_scenario(config.scenario), config)
    report = run_comparison(scenario, samples=config.samples, parallel=args.parallel)
    emit_results(report, scenario, config)
    full = comparison_to_dict(report)
    for name, rd in full["results"].items():
        print(_summary_line(name, rd))
    return 0


def cmd_validate(args) -> int:
    config = RunConfig(args.scenario, "iterative", args.delta, args.seed, args.samples)
    scenario = apply_overrides(load_scenario(config.scenario), config)
    problem = scenario.problem.build()
    path = Path(args.trajectory)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"trajectory file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read trajectory {path}: {exc}") from None
    try:
        traj = trajectory_from_dict(data.get("trajectory", data), problem)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"trajectory {path} does not fit scenario {scenario.name!r}: {exc}") from None
    probs = validate_trajectory(traj, problem, config.samples, scenario.seed)
    bound = chance_bound(problem.delta.delta, config.samples)
    worst = max(probs)
    for k, p in enumerate(probs):
        print(f"{k:3d} {p:.6f}")
    verdict = "pass" if worst <= bound else "violated"
    print(f"max={worst:.6f} bound={bound:.6f} {verdict}")
    return 0


def cmd_quantile(args) -> int:
    if not 0.0 < args.delta < 0.5:
        raise CliError(f"--delta must lie in (0, 0.5), got {args.delta}")
    print(repr(margin_coefficient(args.delta)))
    return 0


def _emit(args) -> frozenset[str]:
    return frozenset(s.strip() for s in args.emit.split(",") if s.strip())


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_help(sys.stderr)
        sys.stderr.write("\n" + SCHEMA_DOC)
        self.exit(2, f"\n{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chanceplan", description="Chance-constrained trajectory optimization benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, with_out=True):
        p.add_argument("--scenario", default="canonical", help="built-in name ('canonical') or scenario JSON path")
        p.add_argument("--delta", type=float, help="override the chance level, in (0, 0.5)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--samples", type=int, default=bench.DEFAULT_SAMPLES, help="Monte-Carlo samples per step")
        if with_out:
            p.add_argument("--out", type=Path, help="output directory (nothing is written if omitted)")
            p.add_argument("--emit", default="json,csv,svg", help="comma-separated subset of json,csv,svg")

    p = sub.add_parser("solve", help="solve with one linearization policy")
    common(p)
    p.add_argument("--policy", choices=["fixed", "iterative"], required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", help="solve with both policies and classify each")
    common(p)
    p.add_argument("--parallel", action="store_true", help="run the two policies concurrently")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", help="Monte-Carlo check of a stored trajectory")
    common(p, with_out=False)
    p.add_argument("--trajectory", required=True, help="report JSON (or bare {inputs, positions}) to check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("quantile", help="print the margin coefficient erf_inv(1 - 2*delta)")
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_quantile)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"chanceplan: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

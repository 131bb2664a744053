"""Command-line entry point: runs, sweeps, offline solving, benchmarks.

Exit codes are a stable contract: 0 success, 1 failed benchmark criterion,
2 configuration or validation problem, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from multiprocessing import Pool
from typing import Optional, Sequence

import numpy as np

from .core import Position3
from .report import (
    EmptyInput,
    error_stats,
    failure_rate,
    mean_latency_s,
    power_curve,
    success_pairs,
    write_accuracy_csv,
    write_latency_csv,
    write_power_csv,
)
from .scenario import (
    MIN_PERIOD_S,
    InfeasibleSpec,
    ParseError,
    ScenarioConfig,
    ValidationError,
    build_simulation,
    generate_layout,
    layout_to_csv,
    load_config,
    serialize_config,
)
from .simkernel import SimulationResult, run_simulation
from .solvers import (
    SolverError,
    SolverParams,
    TdoaMeasurement,
    TwrMeasurement,
    cc_ss_twr_range,
    particle_filter_solve,
    trilaterate,
)

EXIT_OK = 0
EXIT_CRITERIA = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

WORKERS_ENV = "UWBSIM_WORKERS"


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _read_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(fh.read())


def _worker_run(task: tuple[str, int]) -> SimulationResult:
    config_json, placement = task
    config = load_config(config_json)
    return run_simulation(build_simulation(config, placement))


def _run_placements(
    tasks: Sequence[tuple[str, int]], workers: int
) -> list[SimulationResult]:
    """Run (config, placement) tasks; result order matches task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [_worker_run(task) for task in tasks]
    with Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(_worker_run, tasks, chunksize=1)


def _refuse_overwrite(paths: Sequence[str], force: bool) -> None:
    if force:
        return
    for path in paths:
        if os.path.exists(path):
            raise ParseError(f"refusing to overwrite {path}; pass --force to allow")


# -- run ---------------------------------------------------------------------------


def execute_run(config: ScenarioConfig, out_dir: str, workers: int = 1) -> dict[str, str]:
    """Simulate every placement of a config and write the CSV outputs."""
    os.makedirs(out_dir, exist_ok=True)
    config_json = serialize_config(config)
    tasks = [(config_json, placement) for placement in range(config.tags.n_placements)]
    results = _run_placements(tasks, workers)

    outcomes = [o for result in results for o in result.outcomes]
    accuracy_rows = []
    for mode in sorted({o.mode for o in outcomes}):
        pairs = success_pairs(outcomes, mode)
        if not pairs:
            continue
        accuracy_rows.append(
            (config.scheme, mode, error_stats(pairs), failure_rate(outcomes, mode))
        )

    key = (config.scheme, config.protocol.localization_period_s, config.tags.count)
    points = power_curve({key: results}, config.energy)

    latency_rows = []
    for mode in ("active", "passive"):
        try:
            latency = mean_latency_s(outcomes, mode)
        except EmptyInput:
            continue
        latency_rows.append((config.scheme, len(results[0].anchor_ids), latency))
        break  # active latency preferred; passive only when no active rounds exist

    paths = {
        "accuracy": os.path.join(out_dir, "accuracy.csv"),
        "power": os.path.join(out_dir, "power.csv"),
        "latency": os.path.join(out_dir, "latency.csv"),
        "layout": os.path.join(out_dir, "layout.csv"),
    }
    write_accuracy_csv(paths["accuracy"], accuracy_rows)
    write_power_csv(paths["power"], points)
    write_latency_csv(paths["latency"], latency_rows)
    layout_to_csv(generate_layout(config.layout, config.seed), paths["layout"])
    return paths


def cmd_run(args: argparse.Namespace) -> int:
    config = _read_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out_dir = args.out or config.output_dir
    names = ("accuracy.csv", "power.csv", "latency.csv", "layout.csv")
    _refuse_overwrite([os.path.join(out_dir, n) for n in names], args.force)
    paths = execute_run(config, out_dir, args.workers)
    print(f"run complete; outputs in {out_dir}: {', '.join(sorted(paths))}")
    return EXIT_OK


# -- sweep -------------------------------------------------------------------------


def _parse_floats(raw: Optional[str], flag: str) -> list[float]:
    items = [token.strip() for token in (raw or "").split(",") if token.strip()]
    if not items:
        raise ParseError(f"{flag} must list at least one value")
    try:
        return [float(token) for token in items]
    except ValueError:
        raise ParseError(f"{flag} has a non-numeric entry") from None


def _parse_ints(raw: Optional[str], flag: str) -> list[int]:
    return [int(round(v)) for v in _parse_floats(raw, flag)]


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _read_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    periods = _parse_floats(args.periods, "--periods")
    tag_counts = _parse_ints(args.tag_counts, "--tag-counts")
    for period in periods:
        if period < MIN_PERIOD_S:
            raise ParseError(f"--periods: {period} is below the {MIN_PERIOD_S} s floor")
    if config.tags.positions_m is not None and set(tag_counts) != {config.tags.count}:
        raise ParseError("--tag-counts requires sampled tag positions in the base config")

    out_dir = args.out or config.output_dir
    power_path = os.path.join(out_dir, "power.csv")
    _refuse_overwrite([power_path], args.force)
    os.makedirs(out_dir, exist_ok=True)

    keys = []
    tasks = []
    for count in tag_counts:
        for period in periods:
            protocol = replace(config.protocol, localization_period_s=period)
            if config.scheme == "flextdoa":
                protocol = replace(protocol, t_f_s=period)
            combo = replace(config, protocol=protocol, tags=replace(config.tags, count=count))
            combo_json = serialize_config(combo)
            for placement in range(config.tags.n_placements):
                keys.append((config.scheme, period, count))
                tasks.append((combo_json, placement))
    results = _run_placements(tasks, args.workers)

    groups: dict[tuple[str, float, int], list[SimulationResult]] = {}
    for key, result in zip(keys, results):
        groups.setdefault(key, []).append(result)
    write_power_csv(power_path, power_curve(groups, config.energy))
    print(f"sweep complete; {len(groups)} curve points in {power_path}")
    return EXIT_OK


# -- solve -------------------------------------------------------------------------


def _solver_params(args: argparse.Namespace) -> tuple[SolverParams, int]:
    if args.config:
        config = _read_config(args.config)
        return config.solver, config.seed
    return SolverParams(), 0


def _position(row: dict, path: str, line: int) -> Position3:
    try:
        return Position3(float(row["x_m"]), float(row["y_m"]), float(row["z_m"]))
    except (KeyError, ValueError):
        raise ParseError(f"{path}:{line}: bad or missing x_m/y_m/z_m") from None


def _solve_twr(path: str, params: SolverParams) -> list[tuple[str, Position3, float]]:
    rounds: dict[str, list[TwrMeasurement]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            reported = row.get("t_reply_reported_s", "").strip()
            rounds.setdefault(row["round"], []).append(
                TwrMeasurement(
                    anchor_position=_position(row, path, line),
                    t_round_s=float(row["t_round_s"]),
                    t_reply_nominal_s=float(row["t_reply_nominal_s"]),
                    t_reply_reported_s=float(reported) if reported else None,
                    cfo=float(row.get("cfo", "") or 1.0),
                )
            )
    estimates = []
    for round_id in sorted(rounds):
        measurements = rounds[round_id]
        try:
            ranges = [(m.anchor_position, cc_ss_twr_range(m)) for m in measurements]
            result = trilaterate(ranges, params)
        except SolverError as exc:
            print(f"round {round_id}: {type(exc).__name__}: {exc}", file=sys.stderr)
            continue
        estimates.append((round_id, result.position, result.residual_rms_m))
    return estimates


def _solve_tdoa(
    path: str, params: SolverParams, seed: int
) -> list[tuple[str, Position3, float]]:
    rounds: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            entry = rounds.setdefault(row["round"], {"initiator": None, "measurements": []})
            kind = row.get("kind", "").strip()
            if kind == "reference":
                entry["initiator"] = _position(row, path, line)
                entry["measurements"].append(
                    TdoaMeasurement(t_arrival_s=float(row["t_arrival_s"]), is_reference=True)
                )
            elif kind == "response":
                entry["measurements"].append(
                    TdoaMeasurement(
                        t_arrival_s=float(row["t_arrival_s"]),
                        anchor_position=_position(row, path, line),
                        delta_t_s=float(row["delta_t_s"]),
                        cfo=float(row.get("cfo", "") or 1.0),
                    )
                )
            else:
                raise ParseError(f"{path}:{line}: kind must be reference or response")
    estimates = []
    for index, round_id in enumerate(sorted(rounds)):
        entry = rounds[round_id]
        if entry["initiator"] is None:
            print(f"round {round_id}: no reference row", file=sys.stderr)
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
        try:
            solution = particle_filter_solve(entry["measurements"], entry["initiator"], params, rng)
        except SolverError as exc:
            print(f"round {round_id}: {type(exc).__name__}: {exc}", file=sys.stderr)
            continue
        estimates.append((round_id, solution.position, solution.spread_m))
    return estimates


def cmd_solve(args: argparse.Namespace) -> int:
    if bool(args.twr) == bool(args.tdoa):
        raise ParseError("pass exactly one of --twr or --tdoa")
    params, seed = _solver_params(args)
    if args.seed is not None:
        seed = args.seed
    if args.twr:
        estimates = _solve_twr(args.twr, params)
        quality_column = "residual_rms_m"
    else:
        estimates = _solve_tdoa(args.tdoa, params, seed)
        quality_column = "spread_m"
    if not estimates:
        print("no round could be solved", file=sys.stderr)
        return EXIT_RUNTIME

    lines = [f"round,x_m,y_m,z_m,{quality_column}\n"]
    lines += [
        f"{round_id},{p.x!r},{p.y!r},{p.z!r},{quality!r}\n"
        for round_id, p, quality in estimates
    ]
    if args.out:
        _refuse_overwrite([args.out], args.force)
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    else:
        sys.stdout.writelines(lines)
    return EXIT_OK


# -- validate and paper-suite ---------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    config = _read_config(args.config)
    anchors = generate_layout(config.layout, config.seed)
    print(
        f"OK: scheme={config.scheme}, anchors={len(anchors)}, "
        f"tags={config.tags.count}, placements={config.tags.n_placements}"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "layout.csv")
        _refuse_overwrite([path], args.force)
        layout_to_csv(anchors, path)
        print(f"layout written to {path}")
    return EXIT_OK


def cmd_paper_suite(args: argparse.Namespace) -> int:
    from .suite import run_suite

    selected = None
    if args.criteria:
        selected = [token.strip() for token in args.criteria.split(",") if token.strip()]
    results = run_suite(selected)
    if not results:
        raise ParseError(f"--criteria matched nothing: {args.criteria}")
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.index:>2} {r.name:<{width}} {r.measured}  (target: {r.target})")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_CRITERIA if failed else EXIT_OK


# -- argument wiring -------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwbsim",
        description="Discrete-event simulator and solvers for UWB localization schemes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="scenario JSON path")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument(
            "--workers",
            type=int,
            default=_default_workers(),
            help=f"parallel placement workers (default ${WORKERS_ENV} or 1)",
        )
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p_run = sub.add_parser("run", help="simulate one scenario and write CSV reports")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="power curve over periods x tag counts")
    common(p_sweep)
    p_sweep.add_argument("--periods", help="comma-separated localization periods in seconds")
    p_sweep.add_argument(
        "--tag-counts", dest="tag_counts", help="comma-separated tag counts"
    )
    p_sweep.set_defaults(fn=cmd_sweep)

    p_solve = sub.add_parser("solve", help="solve measurement CSVs without simulating")
    common(p_solve, config_required=False)
    p_solve.add_argument("--twr", help="two-way-ranging measurement CSV")
    p_solve.add_argument("--tdoa", help="arrival-difference measurement CSV")
    p_solve.set_defaults(fn=cmd_solve)

    p_validate = sub.add_parser("validate", help="check a config and its layout")
    common(p_validate)
    p_validate.set_defaults(fn=cmd_validate)

    p_suite = sub.add_parser("paper-suite", help="run the benchmark criteria")
    common(p_suite, config_required=False)
    p_suite.add_argument("--criteria", help="comma-separated criterion names, groups, or indices")
    p_suite.set_defaults(fn=cmd_paper_suite)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError, InfeasibleSpec) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

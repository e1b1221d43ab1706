"""Command-line runner: ``potnash run <config>`` and ``potnash plot <kind> <files...>``.

Exit codes: 0 success, 2 invalid config or plot input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import ExpWeightsSchedule, exp_weights_run
from .config import ConfigError, strip_nulls, load_config, validate
from .finite_solver import FiniteSolverConfig, solve_finite
from .games import (
    CommonPoolGame,
    CommonPoolParams,
    CournotGame,
    CournotParams,
    GridGame,
    OracleError,
    common_pool_payoff,
    common_pool_trajectory,
    verify_nash_exhaustive,
)
from .gp_core import GPHyperparams, NumericalError
from .infinite_solver import InfiniteSolverConfig, LineSearchParams, solve_infinite
from .trace import dumps_json

log = logging.getLogger("potnash")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
BUNDLED = ("cournot_finite", "cournot_infinite", "common_pool", "cournot_expweights")


class PlotInputError(ValueError):
    pass


# --------------------------------------------------------------------------
# wiring
# --------------------------------------------------------------------------


def build_game(game_cfg: dict):
    """Continuous game for the config; finite solvers wrap it in a grid."""
    p = dict(game_cfg["params"])
    if game_cfg["id"] == "cournot":
        return CournotGame(CournotParams(**p), noise_std=game_cfg["noise_std"])
    return CommonPoolGame(CommonPoolParams(**p), noise_std=game_cfg["noise_std"])


def build_grid_game(game_cfg: dict) -> GridGame:
    base = build_game(game_cfg)
    grids = [np.linspace(lo, hi, game_cfg["grid_points"]) for lo, hi in base.bounds]
    return GridGame(base, grids)


def build_hyperparams(gp: dict) -> GPHyperparams:
    return GPHyperparams(
        output_scale=gp["output_scale"],
        length_scales=tuple(gp["length_scales"]),
        noise_variance=gp["noise_variance"],
        jitter=gp["jitter"],
        prior_mean=gp["prior_mean"],
    )


def _max_relative_gain(game, point, points: int = 200) -> list[float]:
    """Per player, best improvement over a uniform grid of unilateral deviations, relative to |u_i|."""
    base = game.true_utilities(point)
    gains = []
    for i, (lo, hi) in enumerate(game.bounds):
        best = base[i]
        for v in np.linspace(lo, hi, points):
            q = np.array(point, dtype=float)
            q[i] = v
            best = max(best, game.true_utilities(q)[i])
        gains.append(float((best - base[i]) / max(abs(base[i]), 1e-300)))
    return gains


def run_once(cfg: dict, seed: int):
    """Execute one repetition; returns ``(trace, report)`` where ``report`` holds oracle-based checks."""
    solver = cfg["solver"]
    h = build_hyperparams(cfg["gp"])
    rng = np.random.default_rng(seed)
    report: dict = {}
    if solver["id"] == "finite":
        game = build_grid_game(cfg["game"])
        conf = FiniteSolverConfig(
            hyperparams=h,
            n_initial=solver["n_initial"],
            ei_termination=solver["ei_termination"],
            max_iterations=solver["max_iterations"],
            seed=seed,
            correlated_noise=solver["correlated_noise"],
            criterion=solver["criterion"],
        )
        trace = solve_finite(game, conf, rng)
        is_nash, gain = verify_nash_exhaustive(game, trace.final_profile)
        report.update(nash_verified=is_nash, nash_max_gain=gain)
    elif solver["id"] == "infinite":
        game = build_game(cfg["game"])
        ls = LineSearchParams(**solver["line_search"])
        conf = InfiniteSolverConfig(
            hyperparams=h,
            line_search=ls,
            ei_termination=solver["ei_termination"],
            max_iterations=solver["max_iterations"],
            seed=seed,
            quadrature_order=solver["quadrature_order"],
            warmup_fraction=solver["warmup_fraction"],
            correlated_noise=solver["correlated_noise"],
            x0=None if solver["x0"] is None else tuple(solver["x0"]),
        )
        trace = solve_infinite(game, conf, rng)
        report["max_relative_gain_200"] = _max_relative_gain(game, trace.final_point)
        if isinstance(game, CommonPoolGame):
            report["payoffs"] = common_pool_payoff(trace.final_point, game.params).tolist()
    else:
        game = build_grid_game(cfg["game"])
        target = None
        if solver["track_nash"]:
            target = _grid_nash(game, game.utility_table())
            report["target_profile"] = list(target)
        sched = ExpWeightsSchedule(solver["eta0"], solver["explore_scale"], solver["explore_exponent"])
        trace = exp_weights_run(
            game,
            solver["steps"],
            sched,
            rng,
            utility_bounds=solver["utility_bounds"],
            target=target,
            stop_at_target=solver["stop_at_target"],
        )
    return trace, report


def _grid_nash(game: GridGame, table) -> tuple[int, ...]:
    """Pure Nash profile of the grid; the potential maximizer among them when a potential is known."""
    nash = [p for p in game.profiles() if verify_nash_exhaustive(table, p)[0]]
    if not nash:
        raise ValueError("the grid game has no pure Nash profile")
    if game.potential(nash[0]) is None:
        return nash[0]
    return max(nash, key=game.potential)


def run_experiment(cfg: dict, out_dir, seed: int | None = None, reps: int | None = None) -> list[dict]:
    """Run all repetitions and write traces, summaries and the manifest."""
    cfg = json.loads(json.dumps(cfg))
    if seed is not None:
        cfg["seed"] = seed
    if reps is not None:
        cfg["reps"] = reps
    cfg = validate(strip_nulls(cfg))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg["out_dir"] = str(out_dir)
    manifest = {"config": cfg, "version": __version__}
    (out / "manifest.json").write_text(dumps_json(manifest))
    summaries = []
    for r in range(cfg["reps"]):
        s = cfg["seed"] + r
        t0 = time.perf_counter()
        try:
            trace, report = run_once(cfg, s)
        except (NumericalError, OracleError, ArithmeticError, RuntimeError) as exc:
            raise RuntimeError(f"rep {r} (seed {s}): {type(exc).__name__}: {exc}") from exc
        wall = time.perf_counter() - t0
        summary_extra = dict(report, seed=s, rep=r, game=cfg["game"], wall_time_s=wall)
        trace.write(out / f"trace_rep{r:03d}.csv", out / f"summary_rep{r:03d}.json", **summary_extra)
        summary = trace.summary()
        summary.update(summary_extra)
        summaries.append(summary)
        log.info("rep %d (seed %d): %s", r, s, summary.get("stopping_reason", "done"))
    return summaries


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("potnash") / "configs" / f"{name}.toml"))


# --------------------------------------------------------------------------
# plot data
# --------------------------------------------------------------------------


def _read_trace(path) -> tuple[list[str], list[dict]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PlotInputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    return list(reader.fieldnames or []), list(reader)


def _coord_columns(header):
    return [c for c in header if c.startswith("x_")]


def plot_data(kind: str, files, points: int = 201) -> str:
    """Plot-ready CSV for ``path2d``, ``ei_curve`` or ``trajectory``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "trajectory":
        return _trajectory(files, points)
    schema = None
    rows = []
    for f in files:
        header, data = _read_trace(f)
        if not header:
            continue  # empty file: contributes no rows
        coords = _coord_columns(header)
        if kind == "path2d" and not coords:
            raise PlotInputError(f"{f}: no x_i columns; not a solver trace")
        if kind == "ei_curve" and "ei" not in header:
            raise PlotInputError(f"{f}: no ei column; ei_curve needs a GP solver trace")
        key = coords if kind == "path2d" else ["ei"]
        if schema is not None and key != schema:
            raise PlotInputError(f"{f}: columns {key} do not match {schema} of the first trace")
        schema = schema or key
        if kind == "path2d":
            for r in data:
                if r.get("y_1", "") != "":
                    rows.append([str(f), r["step"], *(r[c] for c in coords)])
        else:
            it = 0
            for r in data:
                if r.get("phase") == "search" and r.get("ei", "") != "":
                    it += 1
                    rows.append([str(f), it, r["ei"]])
    if kind == "path2d":
        w.writerow(["trace", "step", *(schema or ["x_1", "x_2"])])
    else:
        w.writerow(["trace", "iteration", "ei"])
    w.writerows(rows)
    return buf.getvalue()


def _trajectory(files, points: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header_written = False
    for f in files:
        try:
            summary = json.loads(Path(f).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise PlotInputError(f"{f}: cannot read summary JSON: {exc}") from exc
        game = summary.get("game") or {}
        if game.get("id") != "common_pool" or summary.get("final_point") is None:
            raise PlotInputError(f"{f}: trajectory needs a common_pool summary with a final_point")
        params = CommonPoolParams(**game["params"])
        gamma = np.asarray(summary["final_point"], dtype=float)
        t = np.linspace(0.0, params.horizon, points)
        s, x = common_pool_trajectory(gamma, params, t)
        if not header_written:
            w.writerow(["summary", "t", "s", *(f"x_{i + 1}" for i in range(len(gamma)))])
            header_written = True
        for k in range(points):
            w.writerow([str(f), repr(float(t[k])), repr(float(s[k])), *(repr(float(v)) for v in x[:, k])])
    if not header_written:
        w.writerow(["summary", "t", "s", "x_1", "x_2"])
    return buf.getvalue()


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="potnash", description="Nash equilibria of black-box potential games.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config (TOML) or a previous run's manifest.json")
    run.add_argument("config", help=f"path, or a bundled name: {', '.join(BUNDLED)}")
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir")
    run.add_argument("--reps", type=int)
    plot = sub.add_parser("plot", help="emit plot-ready CSV")
    plot.add_argument("kind", choices=("path2d", "ei_curve", "trajectory"))
    plot.add_argument("files", nargs="*", help="trace CSVs (summary JSONs for trajectory)")
    plot.add_argument("-o", "--output")
    plot.add_argument("--points", type=int, default=201, help="time samples for trajectory")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_plot(args)


def _cmd_run(args) -> int:
    path = Path(args.config)
    if not path.exists() and args.config in BUNDLED:
        path = bundled_config_path(args.config)
    try:
        cfg = load_config(path)
        if args.seed is not None and args.seed < 0:
            raise ConfigError([f"--seed: must be >= 0, got {args.seed}"])
        if args.reps is not None and args.reps < 1:
            raise ConfigError([f"--reps: must be >= 1, got {args.reps}"])
    except ConfigError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out_dir or cfg["out_dir"]
    try:
        summaries = run_experiment(cfg, out_dir, args.seed, args.reps)
    except ConfigError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for s in summaries:
        keys = ("rep", "seed", "final_profile", "iterations", "stopping_reason", "nash_verified", "first_hit")
        print(json.dumps({k: s[k] for k in keys if k in s}))
    return EXIT_OK


def _cmd_plot(args) -> int:
    try:
        text = plot_data(args.kind, args.files, args.points)
    except (PlotInputError, ValueError, TypeError) as exc:
        print(f"plot: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

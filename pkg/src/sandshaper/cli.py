"""Command-line front end.

Subcommands: ``simulate`` (scenario execution), ``plan`` (trench planning,
optionally executed on the simulator), ``trench`` (wheel tow runs and
sweeps), ``episode`` (shaping-environment rollouts), ``bench`` (bounded
versus full-grid comparison plus parameter sweeps). Primary artifacts are
deterministic given the same inputs and seed; wall-clock timings go to
separate ``*.timings.json`` sidecars.

Exit codes: 0 success, 2 bad input or file, 3 unsolvable plan,
4 non-convergence, 5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import Connectivity, GridGeometry, SoilParams, new_heightmap
from .erosion import Boundary
from .figures import (save_alpha_sweep_png, save_bench_cells_png, save_flow_rate_png,
                      save_heightmap_png, save_profiles_png)
from .gridio import HMapFormatError, read_heightmap, write_csv, write_heightmap, write_pgm
from .planner import (Problem, UnsolvableProblemError, astar_plan, load_goal_file,
                      plan_to_strokes)
from .rlenv import (ShapingEnv, StrokeAction, bar_trench_goal, goal_from_binary,
                    loss, run_episode, save_episode)
from .tool import BladeParams, Stroke, ToolPose, apply_placement, execute_stroke
from .trenchlab import WheelParams, sweep, write_profile_csv, write_sweep_csv
from . import bench as bench_mod

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_UNSOLVABLE = 3
EXIT_NO_CONVERGENCE = 4
EXIT_INVARIANT = 5

OUT_DIR_ENV = "SANDSHAPER_OUT"


class NonConvergenceError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Simulation run configuration loaded from a config JSON file."""

    geometry: GridGeometry
    soil: SoilParams
    blade: BladeParams
    fill: float
    boundary: Boundary
    seed: int


_DEFAULT_CONFIG = {
    "geometry": {"rows": 32, "cols": 32, "dx": 1.0},
    "fill": 5.0,
    "soil": {"repose_angle_deg": 29.0, "connectivity": "eight"},
    "blade": {"width": 3.0, "thickness": 1.0, "depth": 0.5},
    "boundary": "closed",
    "seed": 0,
}


def load_config(path: str | None) -> RunConfig:
    data = dict(_DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as f:
            loaded = json.load(f)
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        data.update(loaded)
    geo = data["geometry"]
    soil_d = dict(_DEFAULT_CONFIG["soil"])
    soil_d.update(data.get("soil", {}))
    blade_d = dict(_DEFAULT_CONFIG["blade"])
    blade_d.update(data.get("blade", {}))
    return RunConfig(
        geometry=GridGeometry(int(geo["rows"]), int(geo["cols"]), float(geo["dx"])),
        soil=SoilParams(
            repose_angle_deg=float(soil_d["repose_angle_deg"]),
            cohesion=float(soil_d.get("cohesion", 0.0)),
            connectivity=Connectivity(soil_d.get("connectivity", "eight")),
            flow_rate=soil_d.get("flow_rate"),
            convergence_tol=float(soil_d.get("convergence_tol", 1e-9)),
            max_relax_iters=soil_d.get("max_relax_iters"),
        ),
        blade=BladeParams(width=float(blade_d["width"]), thickness=float(blade_d["thickness"]),
                          depth=float(blade_d["depth"])),
        fill=float(data["fill"]),
        boundary=Boundary(data.get("boundary", "closed")),
        seed=int(data.get("seed", 0)),
    )


def _out_dir(args, default_name: str) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    else:
        base = os.environ.get(OUT_DIR_ENV, ".")
        out = Path(base) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- simulate -------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.init:
        current = read_heightmap(args.init)
        if current.geometry != cfg.geometry:
            raise ValueError("initial map geometry does not match config geometry")
    else:
        current = new_heightmap(cfg.geometry, cfg.fill)
    with open(args.scenario, encoding="utf-8") as f:
        scenario = json.load(f)
    actions = scenario.get("actions", [])
    surface_level = scenario.get("surface_level")
    if surface_level is None:
        surface_level = float(np.median(current.heights))
    out = _out_dir(args, "simulate_out")

    reports = []
    connectivity = cfg.soil.connectivity.value
    for i, action in enumerate(actions):
        if "stroke" in action:
            spec = action["stroke"]
            stroke = Stroke(start=tuple(spec["start"]), end=tuple(spec["end"]),
                            depth=float(spec.get("depth", cfg.blade.depth)))
            current, stats = execute_stroke(current, stroke, cfg.blade, cfg.soil,
                                            boundary=cfg.boundary,
                                            surface_level=surface_level)
            reports.append({"action": i, "kind": "stroke",
                            "connectivity": connectivity,
                            "displaced_volume": stats.displaced_volume,
                            "relax_iterations": stats.relax_iterations_total,
                            "cells_touched": stats.cells_touched,
                            "final_relax": stats.final_report.to_json()})
            converged = stats.final_report.converged
        elif "place" in action:
            spec = action["place"]
            pose = ToolPose(center=tuple(spec["center"]),
                            heading=float(spec.get("heading_rad", 0.0)),
                            bottom_height=surface_level - float(spec.get("depth", cfg.blade.depth)))
            current, displaced = apply_placement(current, pose, cfg.blade, cfg.soil,
                                                 boundary=cfg.boundary)
            reports.append({"action": i, "kind": "place", "displaced_volume": displaced})
            converged = True
        else:
            raise ValueError(f"action {i}: expected a 'stroke' or 'place' object")
        write_heightmap(current, out / f"step_{i:03d}.hmap")
        write_pgm(current, out / f"step_{i:03d}.pgm")
        if not converged:
            _write_json(out / "relax_reports.json", reports)
            raise NonConvergenceError(f"action {i} did not relax to steady state")

    write_heightmap(current, out / "final.hmap")
    write_pgm(current, out / "final.pgm")
    write_csv(current, out / "final.csv")
    save_heightmap_png(current, out / "final.png", title="final surface")
    _write_json(out / "relax_reports.json", reports)
    print(f"simulate: {len(actions)} actions -> {out}")
    return EXIT_OK


# --- plan -----------------------------------------------------------------

def _parse_cell(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'row,col', got {text!r}")
    return (int(parts[0]), int(parts[1]))


def cmd_plan(args) -> int:
    goal = load_goal_file(args.goal)
    out_path = Path(args.out) if args.out else Path("plan.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    if args.any_start:
        best = None
        for cell in goal.dug_cells():
            try:
                plan = astar_plan(Problem(goal, cell, dig_depth=args.depth, alpha=args.alpha))
            except UnsolvableProblemError:
                continue
            key = (plan.path_length, cell)
            if best is None or key < best[0]:
                best = (key, cell, plan)
        if best is None:
            raise UnsolvableProblemError("no start cell admits a single-stroke plan")
        _, start, plan = best
    else:
        if args.start is None:
            raise ValueError("--start row,col is required without --any-start")
        start = _parse_cell(args.start)
        plan = astar_plan(Problem(goal, start, dig_depth=args.depth, alpha=args.alpha))
    wall = time.perf_counter() - t0

    payload = plan.to_json()
    payload.update({"start_cell": list(start), "alpha": args.alpha,
                    "wall_time_s": wall})
    _write_json(out_path, payload)
    print(f"plan: {plan.path_length} moves, {plan.nodes_opened} nodes -> {out_path}")

    if args.execute:
        geometry = GridGeometry(goal.rows, goal.cols, args.dx)
        soil = SoilParams(29.0)
        blade = BladeParams(width=args.dx, thickness=args.dx, depth=args.depth)
        strokes = plan_to_strokes(plan, Problem(goal, start, dig_depth=args.depth,
                                                alpha=args.alpha), geometry, blade)
        current = new_heightmap(geometry, 0.0)
        for stroke in strokes:
            current, _ = execute_stroke(current, stroke, blade, soil, surface_level=0.0)
        stem = out_path.with_suffix("")
        write_heightmap(current, Path(str(stem) + "_exec.hmap"))
        write_pgm(current, Path(str(stem) + "_exec.pgm"))
        save_heightmap_png(current, Path(str(stem) + "_exec.png"), title="executed plan")
        target = goal_from_binary(goal, geometry, args.depth)
        print(f"plan: executed {len(strokes)} strokes, final l2 loss to goal "
              f"{loss(target, current):.6g}")
    return EXIT_OK


# --- trench ---------------------------------------------------------------

def cmd_trench(args) -> int:
    geometry = GridGeometry(args.rows, args.cols, args.dx_mm / 1000.0)
    soil = SoilParams(args.repose_deg, convergence_tol=args.convergence_tol,
                      max_relax_iters=args.max_relax_iters)
    wheel = WheelParams(radius=args.wheel_radius_mm / 1000.0,
                        width=args.wheel_width_mm / 1000.0,
                        grouser_height=args.grouser_height_mm / 1000.0,
                        grouser_fraction=args.grouser_fraction)
    sinkages = [v / 1000.0 for v in (args.sinkage_mm if args.sweep else args.sinkage_mm[:1])]
    betas = args.beta_deg if args.sweep else args.beta_deg[:1]
    out = _out_dir(args, "trench_out")

    runs = sweep(geometry, args.fill, wheel, soil, sinkages, betas)
    write_sweep_csv(runs, out / "sweep.csv")
    _write_json(out / "runs.json", [
        {**r.row(), "connectivity": soil.connectivity.value} for r in runs])
    for r in runs:
        tag = f"beta{r.slip_angle_deg:g}_h{r.sinkage * 1000:g}mm"
        write_profile_csv(r.profiles[len(r.profiles) // 2], out / f"profile_{tag}.csv")
        save_profiles_png({f"station {i}": p for i, p in enumerate(r.profiles)},
                          out / f"profile_{tag}.png", title=tag, units_mm=True)
        write_heightmap(r.final, out / f"surface_{tag}.hmap")
        write_pgm(r.final, out / f"surface_{tag}.pgm")
    if runs:
        save_heightmap_png(runs[-1].final, out / "surface_last.png")
    bad = [r for r in runs if not r.converged]
    print(f"trench: {len(runs)} runs -> {out}")
    if bad:
        raise NonConvergenceError(
            f"{len(bad)} of {len(runs)} tow runs did not converge")
    return EXIT_OK


# --- episode ---------------------------------------------------------------

def cmd_episode(args) -> int:
    cfg = load_config(args.config)
    geometry = cfg.geometry
    env = ShapingEnv(cfg.soil, cfg.blade, scheme=args.scheme,
                     dig_depth=cfg.blade.depth, horizon=args.horizon,
                     start_cell=_parse_cell(args.start) if args.start else None,
                     boundary=cfg.boundary)
    if args.goal:
        goal = read_heightmap(args.goal)
    else:
        goal = bar_trench_goal(geometry, depth=cfg.blade.depth, row=geometry.rows // 2,
                               col_start=geometry.cols // 4,
                               col_end=3 * geometry.cols // 4,
                               ambient=cfg.fill, width=3)
    initial = new_heightmap(geometry, cfg.fill)
    rng = np.random.default_rng(args.seed)

    if args.policy == "greedy":
        if args.scheme != "multi":
            raise ValueError("the greedy policy evaluates strokes; use --scheme multi")

        def policy(env_, state, i):
            return env_.greedy_baseline(state, args.candidates,
                                        rng_seed=args.seed * 100003 + i)
    elif args.policy == "random":
        if args.scheme == "multi":
            def policy(env_, state, i):
                w, hgt = state.current.geometry.extent
                d = rng.uniform(0.0, 1.0, 4)
                return StrokeAction(d[0] * w, d[1] * hgt, d[2] * w, d[3] * hgt)
        else:
            from .planner import Move

            moves = tuple(Move)

            def policy(env_, state, i):
                return moves[int(rng.integers(len(moves)))]
    else:
        raise ValueError(f"unknown policy {args.policy!r}")

    out_path = Path(args.out) if args.out else Path("episode.jsonl")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    transitions = run_episode(env, goal, initial, policy)
    save_episode(transitions, out_path)
    l0 = loss(goal, transitions[0].state.current)
    lf = loss(goal, transitions[-1].next_state.current)
    save_heightmap_png(transitions[-1].next_state.current,
                       out_path.with_suffix(".png"), title="episode final surface")
    _write_json(out_path.with_suffix(".summary.json"), {
        "steps": len(transitions),
        "initial_loss": l0,
        "final_loss": lf,
        "reward_sum": sum(t.reward for t in transitions),
        "done": transitions[-1].done,
    })
    print(f"episode: {len(transitions)} steps, loss {l0:.4g} -> {lf:.4g}, log {out_path}")
    return EXIT_OK


# --- bench ------------------------------------------------------------------

def cmd_bench(args) -> int:
    if args.cases != "default":
        raise ValueError(f"unknown bench case set {args.cases!r}")
    out_path = Path(args.out) if args.out else Path("bench_report.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report, timings = bench_mod.run_default_bench()
    _write_json(out_path, report)
    _write_json(Path(str(out_path.with_suffix("")) + ".timings.json"), timings)
    stem = out_path.with_suffix("")
    save_bench_cells_png(report["cases"], Path(str(stem) + "_cells.png"))
    save_flow_rate_png(report["flow_rate_sweep"], Path(str(stem) + "_flow_rate.png"))
    save_alpha_sweep_png(report["alpha_sweep"], Path(str(stem) + "_alpha.png"))
    with open(Path(str(stem) + "_alpha.csv"), "w", encoding="ascii") as f:
        f.write("shape,alpha,path_length,nodes_opened,admissible\n")
        for row in report["alpha_sweep"]:
            f.write(f"{row['shape']},{row['alpha']},{row['path_length']},"
                    f"{row['nodes_opened']},{row['admissible']}\n")
    for case in report["cases"]:
        frac = case["cells_fraction"]
        print(f"bench {case['name']}: bit_identical={case['bit_identical_to_full']} "
              f"cells bounded/full={frac:.3f}")
    if not report["all_bit_identical"]:
        raise AssertionError("bounded execution diverged from full-grid execution")
    print(f"bench: report -> {out_path}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandshaper",
        description="Height-map sand simulator with trench planning and shaping environments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--help-json", action="store_true",
                        help="print a machine-readable description of the CLI and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="run a scenario of strokes/placements")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--scenario", required=True, help="scenario JSON with an actions list")
    p.add_argument("--init", help="initial surface HMAP (default: level fill)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="plan a single-stroke trench with A*")
    p.add_argument("--goal", required=True, help="goal grid file (0 = dig)")
    p.add_argument("--start", help="blade start cell 'row,col'")
    p.add_argument("--alpha", type=float, default=1.0,
                   help="heuristic weight; values above 1 trade optimality for speed")
    p.add_argument("--any-start", action="store_true",
                   help="try every goal cell and keep the best plan")
    p.add_argument("--depth", type=float, default=0.5, help="dig depth in meters")
    p.add_argument("--dx", type=float, default=1.0, help="cell size for --execute")
    p.add_argument("--execute", action="store_true",
                   help="execute the plan on the simulator")
    p.add_argument("--out", help="plan JSON path")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("trench", help="wheel tow runs and sweeps")
    p.add_argument("--sweep", action="store_true", help="run the full sinkage x slip-angle grid")
    p.add_argument("--wheel-radius-mm", type=float, default=48.0)
    p.add_argument("--wheel-width-mm", type=float, default=50.0)
    p.add_argument("--grouser-height-mm", type=float, default=5.0)
    p.add_argument("--grouser-fraction", type=float, default=0.1)
    p.add_argument("--sinkage-mm", type=float, nargs="+", default=[5.0, 15.0, 25.0])
    p.add_argument("--beta-deg", type=float, nargs="+", default=[0.0, 22.5, 45.0, 67.5, 90.0])
    p.add_argument("--rows", type=int, default=160)
    p.add_argument("--cols", type=int, default=160)
    p.add_argument("--dx-mm", type=float, default=2.5)
    p.add_argument("--fill", type=float, default=0.05, help="initial surface height [m]")
    p.add_argument("--repose-deg", type=float, default=29.0)
    p.add_argument("--convergence-tol", type=float, default=1e-7,
                   help="per-step height-change tolerance [m]")
    p.add_argument("--max-relax-iters", type=int, default=10000)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_trench)

    p = sub.add_parser("episode", help="roll a shaping-environment episode")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--scheme", choices=["multi", "single"], default="multi")
    p.add_argument("--policy", choices=["greedy", "random"], default="greedy")
    p.add_argument("--goal", help="goal HMAP file (default: a bar trench)")
    p.add_argument("--start", help="blade start cell 'row,col' (single scheme)")
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--candidates", type=int, default=64,
                   help="stroke candidates per greedy step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="episode JSONL path")
    p.set_defaults(func=cmd_episode)

    p = sub.add_parser("bench", help="bounded vs full-grid benchmark and sweeps")
    p.add_argument("--cases", default="default")
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_bench)

    return parser


def _parser_spec(parser: argparse.ArgumentParser) -> dict:
    spec = {"prog": parser.prog, "version": __version__, "subcommands": {}}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sp in action.choices.items():
                options = []
                for a in sp._actions:
                    if a.dest == "help":
                        continue
                    options.append({
                        "flags": list(a.option_strings),
                        "required": bool(a.required),
                        "default": a.default if not isinstance(a.default, (list, tuple))
                        else list(a.default),
                        "help": a.help or "",
                    })
                spec["subcommands"][name] = {"help": sp.description or "", "options": options}
    return spec


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "help_json", False):
        print(json.dumps(_parser_spec(parser), indent=2, sort_keys=True))
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_BAD_INPUT
    try:
        return args.func(args)
    except UnsolvableProblemError as exc:
        print(f"error: unsolvable plan: {exc}", file=sys.stderr)
        return EXIT_UNSOLVABLE
    except NonConvergenceError as exc:
        print(f"error: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except AssertionError as exc:
        print(f"error: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, ValueError, KeyError, TypeError, HMapFormatError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())

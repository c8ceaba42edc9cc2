"""Deterministic benchmark harness: bounded-region versus full-grid updates,
a flow-rate sweep around the derived optimum, and the planner weight sweep.

Every case reports stable, machine-independent quantities (cell updates,
iterations, bit-identity); wall-clock times are collected separately so the
primary report stays reproducible byte for byte.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .core import Connectivity, GridGeometry, HeightMap, SoilParams, new_heightmap
from .erosion import optimal_flow_rate, relax_to_steady
from .planner import Problem, astar_plan, letter_suite
from .tool import BladeParams, Stroke, execute_stroke
from .trenchlab import TowRun, WheelParams, tow_wheel

__all__ = ["bounded_vs_full_cases", "flow_rate_sweep", "alpha_sweep", "run_default_bench"]


def _stroke_case_32() -> tuple[str, callable]:
    def run(use_bounds: bool):
        g = GridGeometry(32, 32, 1.0)
        soil = SoilParams(29.0)
        h = new_heightmap(g, 5.0)
        blade = BladeParams(width=3.0, thickness=1.0, depth=0.5)
        stroke = Stroke(start=g.cell_center(16, 6), end=g.cell_center(16, 25), depth=0.5)
        return execute_stroke(h, stroke, blade, soil, use_bounds=use_bounds)

    return "stroke_32x32", run


def _crossing_case_64() -> tuple[str, callable]:
    def run(use_bounds: bool):
        g = GridGeometry(64, 64, 1.0)
        soil = SoilParams(29.0)
        h = new_heightmap(g, 5.0)
        blade = BladeParams(width=3.0, thickness=1.0, depth=0.5)
        s1 = Stroke(start=g.cell_center(32, 10), end=g.cell_center(32, 52), depth=0.5)
        s2 = Stroke(start=g.cell_center(12, 30), end=g.cell_center(50, 30), depth=0.5)
        h1, st1 = execute_stroke(h, stroke=s1, blade=blade, soil=soil,
                                 use_bounds=use_bounds, surface_level=5.0)
        h2, st2 = execute_stroke(h1, stroke=s2, blade=blade, soil=soil,
                                 use_bounds=use_bounds, surface_level=5.0)
        merged_iters = st1.relax_iterations_total + st2.relax_iterations_total
        import dataclasses
        stats = dataclasses.replace(st2,
                                    displaced_volume=st1.displaced_volume + st2.displaced_volume,
                                    relax_iterations_total=merged_iters,
                                    cells_touched=st1.cells_touched + st2.cells_touched)
        return h2, stats

    return "crossing_strokes_64x64", run


def _tow_case_160() -> tuple[str, callable]:
    def run(use_bounds: bool):
        g = GridGeometry(160, 160, 0.0025)
        soil = SoilParams(29.0, convergence_tol=1e-7, max_relax_iters=10000)
        h = new_heightmap(g, 0.05)
        wheel = WheelParams(radius=0.048, width=0.050)
        run_ = TowRun(sinkage=0.015, slip_angle_deg=22.5, start=(0.1, 0.2), end=(0.3, 0.2))
        return tow_wheel(h, wheel, run_, soil, use_bounds=use_bounds, surface_level=0.05)

    return "tow_160x160", run


def bounded_vs_full_cases() -> tuple[list[dict], dict]:
    """Run each bench case both ways and compare the surfaces bit for bit.

    Returns (case rows, wall-time seconds per case).
    """
    rows = []
    timings = {}
    for name, runner in (_stroke_case_32(), _crossing_case_64(), _tow_case_160()):
        t0 = time.perf_counter()
        h_bounded, stats_bounded = runner(True)
        t1 = time.perf_counter()
        h_full, stats_full = runner(False)
        t2 = time.perf_counter()
        rows.append({
            "name": name,
            "bit_identical_to_full": bool(
                np.array_equal(h_bounded.heights, h_full.heights)),
            "cells_touched_bounded": stats_bounded.cells_touched,
            "cells_touched_full": stats_full.cells_touched,
            "cells_fraction": stats_bounded.cells_touched / stats_full.cells_touched,
            "relax_iterations": stats_bounded.relax_iterations_total,
            "final_converged": stats_bounded.final_report.converged,
        })
        timings[name] = {"bounded_s": t1 - t0, "full_s": t2 - t1}
    return rows, timings


def flow_rate_sweep(multipliers=(0.25, 0.5, 0.75, 1.0, 1.25)) -> list[dict]:
    """Relaxation cost of a fixed disturbance as the flow rate moves around
    the derived optimum k = dx²/8; non-convergence is reported, not raised."""
    g = GridGeometry(32, 32, 1.0)
    base = new_heightmap(g, 5.0)
    arr = base.mutable_copy()
    arr[16, 16] += 10.0 * g.dx * math.tan(math.radians(29.0))
    spike = HeightMap(g, arr)
    k_opt = optimal_flow_rate(Connectivity.EIGHT, g.dx)
    rows = []
    for mult in multipliers:
        soil = SoilParams(29.0, flow_rate=mult * k_opt)
        _, report = relax_to_steady(spike, soil)
        rows.append({
            "k_multiplier": mult,
            "flow_rate": mult * k_opt,
            "iterations": report.iterations,
            "converged": report.converged,
            "final_excess_slope": report.final_excess_slope,
        })
    return rows


def alpha_sweep(alphas=(1.0, 3.0, 7.2)) -> list[dict]:
    """Planner node counts over the letter suite for each heuristic weight."""
    rows = []
    for shape, (goal, start) in letter_suite().items():
        for alpha in alphas:
            plan = astar_plan(Problem(goal, start, alpha=alpha))
            rows.append({
                "shape": shape,
                "alpha": alpha,
                "path_length": plan.path_length,
                "nodes_opened": plan.nodes_opened,
                "admissible": alpha <= 1.0,
            })
    return rows


def run_default_bench() -> tuple[dict, dict]:
    """The full default benchmark. Returns (report, timings); the report is
    stable across runs, the timings are not."""
    cases, case_timings = bounded_vs_full_cases()
    t0 = time.perf_counter()
    flow = flow_rate_sweep()
    t1 = time.perf_counter()
    alphas = alpha_sweep()
    t2 = time.perf_counter()
    report = {
        "connectivity": Connectivity.EIGHT.value,
        "cases": cases,
        "flow_rate_sweep": flow,
        "alpha_sweep": alphas,
        "all_bit_identical": all(c["bit_identical_to_full"] for c in cases),
    }
    timings = {
        "cases": case_timings,
        "flow_rate_sweep_s": t1 - t0,
        "alpha_sweep_s": t2 - t1,
    }
    return report, timings

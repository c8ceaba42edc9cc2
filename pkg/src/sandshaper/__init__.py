"""Deterministic height-map sand simulator with tool interaction, a
single-stroke trench planner, a goal-conditioned shaping environment, and a
wheel-trenching experiment harness."""

__version__ = "0.1.0"

from .core import (CellMask, Connectivity, GridGeometry, HeightMap, Region,
                   SoilParams, local_excess_slope, new_heightmap, total_volume)
from .erosion import (Boundary, RelaxReport, full_region, optimal_flow_rate,
                      pairwise_flow_rate, relax_step, relax_to_steady)
from .gridio import (HMapFormatError, read_heightmap, write_csv, write_heightmap,
                     write_pgm)
from .planner import (BinaryMap, Move, Plan, PlanState, Problem,
                      UnsolvableProblemError, astar_plan, bfs_oracle, heuristic,
                      letter_suite, load_goal_file, parse_goal_text, plan_to_strokes,
                      random_connected_goal, successors)
from .rlenv import (EnvState, ShapingEnv, StrokeAction, Transition, bar_trench_goal,
                    discounted_return, goal_from_binary, loss, relabel_hindsight,
                    run_episode)
from .tool import (BladeParams, Stroke, StrokeStats, ToolPose, apply_move,
                   apply_placement, execute_stroke, footprint_cells, stroke_bounds)
from .trenchlab import (Profile, ProfileErrors, SweepRun, TowRun, WheelParams,
                        chord_length, cross_section, profile_errors, sweep, tow_wheel)

__all__ = [
    "__version__",
    # core
    "GridGeometry", "HeightMap", "SoilParams", "CellMask", "Region", "Connectivity",
    "new_heightmap", "total_volume", "local_excess_slope",
    # erosion
    "Boundary", "RelaxReport", "optimal_flow_rate", "pairwise_flow_rate",
    "full_region", "relax_step", "relax_to_steady",
    # gridio
    "HMapFormatError", "read_heightmap", "write_heightmap", "write_csv", "write_pgm",
    # tool
    "BladeParams", "ToolPose", "Stroke", "StrokeStats", "footprint_cells",
    "apply_placement", "apply_move", "execute_stroke", "stroke_bounds",
    # planner
    "BinaryMap", "Problem", "PlanState", "Plan", "Move", "UnsolvableProblemError",
    "successors", "heuristic", "astar_plan", "bfs_oracle", "plan_to_strokes",
    "parse_goal_text", "load_goal_file", "random_connected_goal", "letter_suite",
    # rlenv
    "EnvState", "Transition", "StrokeAction", "ShapingEnv", "loss",
    "discounted_return", "relabel_hindsight", "goal_from_binary", "bar_trench_goal",
    "run_episode",
    # trenchlab
    "WheelParams", "TowRun", "Profile", "ProfileErrors", "SweepRun", "chord_length",
    "tow_wheel", "cross_section", "profile_errors", "sweep",
]

"""Acceptance suite: one test per release criterion, each printing a PASS
line with its measured numbers (run with ``pytest tests/test_acceptance.py -v -s``).

Every tolerance is fixed here; nothing is calibrated at run time.
"""

import math
import time

import numpy as np
import pytest

from sandshaper.core import (CellMask, Connectivity, GridGeometry, HeightMap, SoilParams,
                             local_excess_slope, new_heightmap, total_volume)
from sandshaper.erosion import SLOPE_TOL, relax_step, relax_to_steady, resolve_flow_rate
from sandshaper.planner import Problem, astar_plan, bfs_oracle, letter_suite, random_connected_goal
from sandshaper.rlenv import (ShapingEnv, StrokeAction, Transition, EnvState,
                              loss, relabel_hindsight, run_episode)
from sandshaper.tool import BladeParams, Stroke, ToolPose, apply_move, apply_placement, execute_stroke
from sandshaper.trenchlab import TowRun, WheelParams, sweep, tow_wheel

TAN29 = math.tan(math.radians(29.0))
REPOSE_BAND = 0.01 * TAN29  # criterion 5: 1% of tan(29 deg)


def report(criterion: int, detail: str) -> None:
    print(f"ACCEPTANCE {criterion:2d} PASS - {detail}")


@pytest.fixture(scope="module")
def stroke32():
    """Criterion 4/5 artifact: a single centered stroke on a flat 32x32 map."""
    g = GridGeometry(32, 32, 1.0)
    soil = SoilParams(29.0)
    h = new_heightmap(g, 5.0)
    blade = BladeParams(width=3.0, thickness=1.0, depth=0.5)
    stroke = Stroke(start=g.cell_center(16, 6), end=g.cell_center(16, 25), depth=0.5)
    out, stats = execute_stroke(h, stroke, blade, soil)
    return soil, h, out, stats


@pytest.fixture(scope="module")
def tow160():
    """Criterion 4/5 artifact: a single-action-scale tow on the 160x160
    validation grid (5 mm sinkage, 100 mm path)."""
    g = GridGeometry(160, 160, 0.0025)
    soil = SoilParams(29.0, convergence_tol=4e-7, max_relax_iters=1600)
    h = new_heightmap(g, 0.05)
    wheel = WheelParams(radius=0.048, width=0.050)
    run = TowRun(sinkage=0.005, slip_angle_deg=22.5, start=(0.15, 0.2), end=(0.25, 0.2))
    out, stats = tow_wheel(h, wheel, run, soil, surface_level=0.05)
    return soil, h, out, stats


def test_criterion_01_two_cell_flow_rate_optimum():
    g = GridGeometry(2, 2, 1.0)
    h = HeightMap(g, [[2.0, 0.0], [0.0, 0.0]])
    mask = CellMask(g, [[False, False], [True, True]])
    soil = SoilParams(45.0, connectivity=Connectivity.FOUR, flow_rate=0.5)

    out, _ = relax_step(h, soil, mask)
    err = max(abs(out.heights[0, 0] - 1.5), abs(out.heights[0, 1] - 0.5))
    assert err <= 1e-12
    # Exactly at repose: the pair slope equals tan(45 deg) to within float eps.
    assert abs((out.heights[0, 0] - out.heights[0, 1]) - math.tan(math.radians(45.0))) <= 1e-12

    for k in (0.25, 0.4, 0.49):
        weak = SoilParams(45.0, connectivity=Connectivity.FOUR, flow_rate=k)
        stepped, _ = relax_step(h, weak, mask)
        assert local_excess_slope(stepped, weak, mask) > SLOPE_TOL
        _, rep = relax_to_steady(h, weak, mask)
        assert rep.iterations > 1

    relax_step(h, soil, mask)  # warm any compiled kernels before timing
    best = min(_time_one(lambda: relax_step(h, soil, mask)) for _ in range(5))
    assert best < 1e-3
    report(1, f"two-cell step lands on [1.5, 0.5] within {err:.2e}; "
              f"k<0.5 needs >1 step; relax_step {best * 1e3:.3f} ms")


def _time_one(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def test_criterion_02_eight_connectivity_stability():
    g = GridGeometry(32, 32, 1.0)
    soil = SoilParams(29.0)
    k = resolve_flow_rate(soil, g.dx)
    assert k == g.dx * g.dx / 8.0
    t0 = time.perf_counter()
    worst_iters = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        h = HeightMap(g, rng.uniform(0.0, 5.0 * g.dx, (32, 32)))
        _check_own_flux_no_overshoot(h, soil, k, steps=3)
        _, rep = relax_to_steady(h, soil)
        assert rep.converged, f"seed {seed} failed to converge"
        worst_iters = max(worst_iters, rep.iterations)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    report(2, f"200 random 32x32 maps converged at k=dx^2/8 "
              f"(worst {worst_iters} iters, cap 320); no pair's own flux "
              f"overshoots repose; {elapsed:.1f} s")


def _check_own_flux_no_overshoot(h: HeightMap, soil: SoilParams, k: float,
                                 steps: int) -> None:
    """The flux computed for a pair, applied to that pair alone, must land at
    or above the repose slope, never past it (the two-block stability
    argument behind the derived flow rate)."""
    cur = h
    dx = h.geometry.dx
    for _ in range(steps):
        arr = cur.heights
        for dr, dc, f in soil.connectivity.pair_offsets:
            d = f * dx
            a = arr[max(0, -dr):arr.shape[0] - max(0, dr),
                    max(0, -dc):arr.shape[1] - max(0, dc)]
            b = arr[max(0, dr):arr.shape[0] + min(0, dr),
                    max(0, dc):arr.shape[1] + min(0, dc)]
            slope = np.abs(a - b) / d
            excess = slope - soil.tan_repose
            active = excess > SLOPE_TOL
            if not active.any():
                continue
            own_change = 2.0 * k * excess[active] / (dx * dx)
            s_own = slope[active] - own_change
            assert np.all(s_own >= soil.tan_repose - 1e-12)
        cur, _ = relax_step(cur, soil)


def test_criterion_03_volume_conservation_sequences():
    g = GridGeometry(12, 12, 1.0)
    soil = SoilParams(29.0)
    blade = BladeParams(width=3.0, thickness=1.0, depth=0.4)
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(7)
    for _ in range(500):
        h = new_heightmap(g, 5.0)
        v0 = total_volume(h)
        for _ in range(int(rng.integers(1, 4))):
            kind = rng.integers(3)
            r = int(rng.integers(3, 9))
            c = int(rng.integers(3, 9))
            depth = float(rng.uniform(0.1, 0.5))
            bottom = 5.0 - depth
            if kind == 0:
                pose = ToolPose(center=g.cell_center(r, c), heading=0.0,
                                bottom_height=bottom)
                h, _ = apply_placement(h, pose, blade, soil)
            elif kind == 1:
                a = ToolPose(center=g.cell_center(r, c), heading=0.0, bottom_height=bottom)
                b = ToolPose(center=g.cell_center(r, c + 1), heading=0.0, bottom_height=bottom)
                h, _ = apply_move(h, a, b, blade, soil)
            else:
                length = int(rng.integers(2, 5))
                c0 = max(1, c - length)
                stroke = Stroke(start=g.cell_center(r, c0), end=g.cell_center(r, c),
                                depth=depth)
                h, _ = execute_stroke(h, stroke, blade, soil, surface_level=5.0)
        worst = max(worst, abs(total_volume(h) - v0) / v0)
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-9
    assert elapsed < 60.0
    report(3, f"500 random action sequences conserve volume "
              f"(worst relative drift {worst:.2e}); {elapsed:.1f} s")


def test_criterion_04_steady_state_step_counts(stroke32, tow160):
    _, _, _, stroke_stats = stroke32
    _, _, _, tow_stats = tow160
    s_rep = stroke_stats.final_report
    t_rep = tow_stats.final_report
    assert s_rep.converged and s_rep.iterations <= 100
    assert t_rep.converged and t_rep.iterations <= 280
    report(4, f"centered 32x32 stroke settles in {s_rep.iterations} iterations "
              f"(<=100); 160x160 tow in {t_rep.iterations} (<=280)")


def test_criterion_05_repose_everywhere(stroke32, tow160):
    soil29 = SoilParams(29.0)
    # Cone from a tall spike.
    g = GridGeometry(9, 9, 1.0)
    arr = np.zeros((9, 9))
    arr[4, 4] = 10.0 * g.dx * TAN29
    cone, rep = relax_to_steady(HeightMap(g, arr), soil29)
    assert rep.converged
    artifacts = {
        "cone": local_excess_slope(cone, soil29),
        "trench+berms": local_excess_slope(stroke32[2], soil29),
        "tow trench": local_excess_slope(tow160[2], soil29),
    }
    for name, excess in artifacts.items():
        assert excess <= REPOSE_BAND, f"{name}: excess {excess:.3e}"
    detail = ", ".join(f"{k} {v:.2e}" for k, v in artifacts.items())
    report(5, f"converged artifacts stay within 1% of tan(29 deg): {detail}")


def test_criterion_06_astar_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2025)
    checked = 0
    for _ in range(100):
        rows = int(rng.integers(4, 7))
        cols = int(rng.integers(4, 7))
        n = min(int(rng.integers(2, 11)), rows * cols)
        goal, start = random_connected_goal(rng, rows, cols, n)
        p = Problem(goal, start)
        assert astar_plan(p).path_length == bfs_oracle(p)
        checked += 1
    letters = letter_suite()
    for name, (goal, start) in letters.items():
        p = Problem(goal, start)
        assert astar_plan(p).path_length == bfs_oracle(p), name
    s_goal, s_start = letters["S"]
    nodes_a1 = astar_plan(Problem(s_goal, s_start, alpha=1.0)).nodes_opened
    nodes_a3 = astar_plan(Problem(s_goal, s_start, alpha=3.0)).nodes_opened
    assert nodes_a3 <= nodes_a1  # regression pin: 11 <= 11 at first measurement
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    report(6, f"A*(alpha=1) optimal on {checked} random goals + letter suite; "
              f"S-analog nodes alpha=3: {nodes_a3} <= alpha=1: {nodes_a1}; {elapsed:.1f} s")


def test_criterion_07_reward_telescoping():
    g = GridGeometry(10, 10, 1.0)
    soil = SoilParams(29.0)
    blade = BladeParams(width=3.0, thickness=1.0, depth=0.3)
    env = ShapingEnv(soil, blade, scheme="multi", dig_depth=0.3, horizon=3)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        goal_arr = rng.uniform(-0.3, 0.0, (10, 10))
        goal = HeightMap(g, goal_arr)
        init = new_heightmap(g, 0.0)

        def policy(env_, state, i):
            w, hgt = state.current.geometry.extent
            d = rng.uniform(0.0, 1.0, 4)
            return StrokeAction(d[0] * w, d[1] * hgt, d[2] * w, d[3] * hgt)

        episode = run_episode(env, goal, init, policy)
        l0 = loss(goal, episode[0].state.current)
        lf = loss(goal, episode[-1].next_state.current)
        worst = max(worst, abs(sum(t.reward for t in episode) - (l0 - lf)))
    assert worst <= 1e-12
    report(7, f"100 episodes telescope to L0 - Lfinal (worst gap {worst:.2e})")


def test_criterion_08_hindsight_relabeling():
    g = GridGeometry(6, 6, 1.0)
    rng = np.random.default_rng(99)
    for i in range(1000):
        goal = HeightMap(g, rng.uniform(-1, 1, (6, 6)))
        current = HeightMap(g, rng.uniform(-1, 1, (6, 6)))
        nxt = current if i % 7 == 0 else HeightMap(g, rng.uniform(-1, 1, (6, 6)))
        state = EnvState(goal=goal, current=current, step_index=0, horizon=5,
                         surface_level=0.0)
        next_state = EnvState(goal=goal, current=nxt, step_index=1, horizon=5,
                              surface_level=0.0)
        t = Transition(state=state, action=StrokeAction(0, 0, 3, 3),
                       reward=loss(goal, current) - loss(goal, nxt),
                       next_state=next_state, done=False)
        rt = relabel_hindsight(t)
        assert loss(rt.next_state.goal, rt.next_state.current) == 0.0
        assert rt.reward == loss(rt.state.goal, t.state.current)
        assert rt.done
        rt2 = relabel_hindsight(rt)
        assert rt2.reward == rt.reward
        assert rt2.state.goal == rt.state.goal
        assert rt2.next_state.goal == rt.next_state.goal
    report(8, "1000 relabeled transitions: zero next-state loss, exact reward, "
              "idempotent relabeling")


def test_criterion_09_bounded_update_exactness(bench_artifacts):
    cases = bench_artifacts["report"]["cases"]
    assert len(cases) == 3
    for case in cases:
        assert case["bit_identical_to_full"], case["name"]
    tow = next(c for c in cases if c["name"] == "tow_160x160")
    assert tow["cells_fraction"] <= 0.5
    detail = ", ".join(f"{c['name']} {c['cells_fraction']:.2f}" for c in cases)
    report(9, f"bounded == full bit for bit on all bench cases; "
              f"cell-update fractions: {detail}")


def test_criterion_10_trench_sweep_properties():
    g = GridGeometry(160, 160, 0.0025)
    soil = SoilParams(29.0, convergence_tol=1e-7, max_relax_iters=10000)
    wheel = WheelParams(radius=0.048, width=0.050, grouser_height=0.005,
                        grouser_fraction=0.1)
    t0 = time.perf_counter()
    runs = sweep(g, 0.05, wheel, soil, sinkages=[0.005, 0.015, 0.025],
                 slip_angles_deg=[0.0, 22.5, 45.0, 67.5, 90.0])
    elapsed = time.perf_counter() - t0
    assert len(runs) == 15
    worst_vol = 0.0
    worst_rms = 0.0
    for r in runs:
        assert r.converged, f"beta={r.slip_angle_deg} h0={r.sinkage} did not converge"
        assert abs(r.excavated_volume - r.berm_volume) <= 1e-6 * r.excavated_volume
        assert r.station_rms_mm <= 0.5
        assert local_excess_slope(r.final, soil) <= REPOSE_BAND
        worst_vol = max(worst_vol,
                        abs(r.excavated_volume - r.berm_volume) / r.excavated_volume)
        worst_rms = max(worst_rms, r.station_rms_mm)
    for beta in (0.0, 22.5, 45.0, 67.5, 90.0):
        depths = [(r.sinkage, r.trench_depth) for r in runs if r.slip_angle_deg == beta]
        depths.sort()
        for (_, d1), (_, d2) in zip(depths, depths[1:]):
            assert d2 >= d1 - 1e-12, f"depth not monotone in sinkage at beta={beta}"
    assert elapsed < 300.0
    report(10, f"5x3 sweep converged; excavated==berm (worst {worst_vol:.1e}); "
               f"mid-path RMS <= {worst_rms:.3f} mm; depth monotone in sinkage; "
               f"{elapsed:.0f} s")

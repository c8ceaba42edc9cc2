import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandshaper.core import GridGeometry, HeightMap, SoilParams, new_heightmap
from sandshaper.planner import Move, parse_goal_text
from sandshaper.rlenv import (EnvState, ShapingEnv, StrokeAction, bar_trench_goal,
                              discounted_return, goal_from_binary, load_episode,
                              loss, relabel_hindsight, run_episode, save_episode)
from sandshaper.tool import BladeParams


@pytest.fixture
def env16():
    g = GridGeometry(16, 16, 1.0)
    soil = SoilParams(29.0)
    blade = BladeParams(width=3.0, thickness=1.0, depth=0.5)
    env = ShapingEnv(soil, blade, scheme="multi", dig_depth=0.5, horizon=6)
    goal = bar_trench_goal(g, depth=0.5, row=8, col_start=3, col_end=12, width=3)
    init = new_heightmap(g, 0.0)
    return g, env, goal, init


def random_policy(rng):
    def policy(env, state, i):
        w, h = state.current.geometry.extent
        d = rng.uniform(0.0, 1.0, 4)
        return StrokeAction(d[0] * w, d[1] * h, d[2] * w, d[3] * h)
    return policy


class TestLoss:
    def test_identical_maps(self):
        h = new_heightmap(GridGeometry(4, 4, 1.0), 1.0)
        assert loss(h, h) == 0.0

    def test_four_cells_differ(self):
        g = GridGeometry(4, 4, 1.0)
        a = new_heightmap(g, 0.0)
        arr = a.mutable_copy()
        arr[0, 0] = arr[1, 1] = arr[2, 2] = arr[3, 3] = 0.3
        b = HeightMap(g, arr)
        assert loss(a, b) == pytest.approx(0.6, abs=1e-15)

    def test_geometry_mismatch(self):
        with pytest.raises(ValueError):
            loss(new_heightmap(GridGeometry(4, 4, 1.0), 0.0),
                 new_heightmap(GridGeometry(4, 5, 1.0), 0.0))

    @given(seed=st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_triangle(self, seed):
        rng = np.random.default_rng(seed)
        g = GridGeometry(5, 5, 1.0)
        a, b, c = (HeightMap(g, rng.uniform(-2, 2, (5, 5))) for _ in range(3))
        assert loss(a, b) == loss(b, a)
        assert loss(a, c) <= loss(a, b) + loss(b, c) + 1e-12


class TestDiscountedReturn:
    def test_undiscounted(self):
        assert discounted_return([1.0, 1.0, 1.0], 1.0) == 3.0

    def test_half(self):
        assert discounted_return([1.0, 1.0, 1.0], 0.5) == 1.75

    def test_single(self):
        assert discounted_return([7.25], 0.123) == 7.25

    def test_gamma_out_of_range(self):
        with pytest.raises(ValueError):
            discounted_return([1.0], 1.5)
        with pytest.raises(ValueError):
            discounted_return([1.0], -0.1)


class TestResetAndStep:
    def test_reset_fresh_state(self, env16):
        g, env, goal, init = env16
        state = env.reset(goal, init)
        assert state.step_index == 0
        assert state.horizon == 6
        assert state.current == init
        assert state.surface_level == 0.0

    def test_reset_geometry_mismatch(self, env16):
        _, env, goal, _ = env16
        with pytest.raises(ValueError):
            env.reset(goal, new_heightmap(GridGeometry(8, 8, 1.0), 0.0))

    def test_reset_bad_horizon(self, env16):
        _, env, goal, init = env16
        with pytest.raises(ValueError):
            env.reset(goal, init, horizon=0)

    def test_noop_stroke_zero_reward(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init)
        t = env.step(state, StrokeAction(2.0, 2.0, 2.0, 2.1))  # shorter than a cell
        assert t.reward == 0.0
        assert t.next_state.current == init

    def test_improving_stroke_positive_reward(self, env16):
        g, env, goal, init = env16
        state = env.reset(goal, init)
        t = env.step(state, StrokeAction(*g.cell_center(8, 3), *g.cell_center(8, 12)))
        assert t.reward > 0.0
        assert loss(goal, t.next_state.current) < loss(goal, init)

    def test_worsening_stroke_negative_reward(self, env16):
        g, env, goal, init = env16
        state = env.reset(goal, init)
        t = env.step(state, StrokeAction(*g.cell_center(2, 2), *g.cell_center(2, 13)))
        assert t.reward < 0.0

    def test_out_of_bounds_clamped_and_flagged(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init)
        t = env.step(state, StrokeAction(-5.0, 8.5, 50.0, 8.5))
        assert t.clamped

    def test_stepping_done_state_raises(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init, horizon=1)
        t = env.step(state, StrokeAction(1.0, 1.0, 5.0, 1.0))
        assert t.done
        with pytest.raises(ValueError, match="finished"):
            env.step(t.next_state, StrokeAction(1.0, 1.0, 5.0, 1.0))

    def test_goal_reached_is_done(self, env16):
        g, env, goal, init = env16
        near_goal_env = ShapingEnv(env.soil, env.blade, scheme="multi",
                                   dig_depth=0.5, horizon=6, done_threshold=1e9)
        state = near_goal_env.reset(goal, init)
        with pytest.raises(ValueError, match="finished"):
            near_goal_env.step(state, StrokeAction(1.0, 1.0, 5.0, 1.0))

    def test_wrong_action_type(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init)
        with pytest.raises(TypeError):
            env.step(state, Move.EAST)


class TestDeterminism:
    def test_identical_step_inputs_give_bit_identical_transitions(self, env16):
        g, env, goal, init = env16
        state = env.reset(goal, init)
        action = StrokeAction(*g.cell_center(8, 3), *g.cell_center(8, 12))
        a = env.step(state, action)
        b = env.step(state, action)
        assert a.reward == b.reward
        assert np.array_equal(a.next_state.current.heights, b.next_state.current.heights)
        assert a.done == b.done and a.clamped == b.clamped


class TestTelescoping:
    def test_random_episodes_telescope_exactly(self, env16):
        g, env, goal, init = env16
        for seed in range(5):
            episode = run_episode(env, goal, init, random_policy(np.random.default_rng(seed)))
            l0 = loss(goal, episode[0].state.current)
            lf = loss(goal, episode[-1].next_state.current)
            assert sum(t.reward for t in episode) == pytest.approx(l0 - lf, abs=1e-12)

    def test_reward_sign_tracks_loss(self, env16):
        g, env, goal, init = env16
        episode = run_episode(env, goal, init, random_policy(np.random.default_rng(9)))
        for t in episode:
            before = loss(t.state.goal, t.state.current)
            after = loss(t.state.goal, t.next_state.current)
            assert (t.reward > 0) == (after < before)


class TestSingleScheme:
    def test_blade_tracked_and_digs(self):
        g = GridGeometry(12, 12, 1.0)
        soil = SoilParams(29.0)
        blade = BladeParams(width=1.0, thickness=1.0, depth=0.3)
        env = ShapingEnv(soil, blade, scheme="single", dig_depth=0.3, horizon=5,
                         start_cell=(6, 3))
        goal = bar_trench_goal(g, depth=0.3, row=6, col_start=3, col_end=8, width=1)
        init = new_heightmap(g, 0.0)
        state = env.reset(goal, init)
        assert state.blade_cell == (6, 3)
        assert state.current.heights[6, 3] == pytest.approx(-0.3)
        t = env.step(state, Move.EAST)
        assert t.next_state.blade_cell == (6, 4)
        assert t.next_state.current.heights[6, 4] == pytest.approx(-0.3)

    def test_off_grid_move_is_noop_flagged(self):
        g = GridGeometry(12, 12, 1.0)
        env = ShapingEnv(SoilParams(29.0), BladeParams(1.0, 1.0, 0.3), scheme="single",
                         dig_depth=0.3, horizon=5, start_cell=(0, 0))
        goal = bar_trench_goal(g, depth=0.3, row=0, col_start=0, col_end=4, width=1)
        state = env.reset(goal, new_heightmap(g, 0.0))
        t = env.step(state, Move.NORTH)
        assert t.clamped
        assert t.next_state.blade_cell == (0, 0)

    def test_requires_start_cell(self):
        env = ShapingEnv(SoilParams(29.0), BladeParams(1.0, 1.0, 0.3), scheme="single",
                         dig_depth=0.3)
        g = GridGeometry(8, 8, 1.0)
        with pytest.raises(ValueError, match="start_cell"):
            env.reset(new_heightmap(g, 0.0), new_heightmap(g, 0.0))


class TestHindsight:
    def _one_transition(self, env16, seed=0):
        _, env, goal, init = env16
        return run_episode(env, goal, init, random_policy(np.random.default_rng(seed)))[0]

    def test_relabeled_next_loss_zero(self, env16):
        t = self._one_transition(env16)
        rt = relabel_hindsight(t)
        assert loss(rt.next_state.goal, rt.next_state.current) == 0.0
        assert rt.reward == loss(rt.state.goal, rt.state.current)
        assert rt.reward >= 0.0
        assert rt.done

    def test_noop_transition_relabels_to_zero(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init)
        t = env.step(state, StrokeAction(2.0, 2.0, 2.0, 2.1))
        rt = relabel_hindsight(t)
        assert rt.reward == 0.0

    def test_idempotent(self, env16):
        t = self._one_transition(env16, seed=4)
        r1 = relabel_hindsight(t)
        r2 = relabel_hindsight(r1)
        assert r1.reward == r2.reward
        assert r1.state.goal == r2.state.goal
        assert r1.next_state.goal == r2.next_state.goal
        assert r1.action == r2.action


class TestGreedyBaseline:
    def test_picks_injected_exact_stroke(self, env16):
        g, env, goal, init = env16
        state = env.reset(goal, init)
        exact = StrokeAction(*g.cell_center(8, 3), *g.cell_center(8, 12))
        decoys = [StrokeAction(1.0, 1.0, 5.0, 5.0), StrokeAction(14.0, 2.0, 14.0, 9.0)]
        picked = env.greedy_baseline(state, 3, rng_seed=0,
                                     candidates=decoys + [exact])
        assert picked == exact

    def test_single_candidate_returned(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init)
        action = env.greedy_baseline(state, 1, rng_seed=42)
        again = env.greedy_baseline(state, 1, rng_seed=42)
        assert action == again

    def test_deterministic_given_seed(self, env16):
        _, env, goal, init = env16
        state = env.reset(goal, init)
        a = env.greedy_baseline(state, 8, rng_seed=7)
        b = env.greedy_baseline(state, 8, rng_seed=7)
        assert a == b

    def test_requires_multi_scheme(self):
        env = ShapingEnv(SoilParams(29.0), BladeParams(1.0, 1.0, 0.3), scheme="single",
                         dig_depth=0.3, start_cell=(0, 0))
        g = GridGeometry(8, 8, 1.0)
        goal = new_heightmap(g, 0.0)
        state = EnvState(goal=goal, current=goal, step_index=0, horizon=5,
                         surface_level=0.0, blade_cell=(0, 0))
        with pytest.raises(ValueError, match="multi"):
            env.greedy_baseline(state, 4, rng_seed=0)


class TestGreedyRegressionPin:
    def test_bar_trench_campaign_pinned(self):
        # 50 deterministic episodes on reachable bar-trench goals (each goal
        # is the surface a reference stroke actually produces). Myopic greedy
        # with 64 uniform candidates digs most of the trench but each extra
        # stroke also spoils clean goal areas with its own berms, so full
        # halving of the loss is rare. The campaign is fully seeded, making
        # the observed outcome a stable regression pin: 1/50 episodes halved
        # the loss within 10 strokes, and the median best loss fraction was
        # 0.71 when first measured.
        from sandshaper.tool import Stroke, execute_stroke

        g = GridGeometry(10, 10, 1.0)
        soil = SoilParams(29.0)
        blade = BladeParams(width=3.0, thickness=1.0, depth=0.3)
        env = ShapingEnv(soil, blade, scheme="multi", dig_depth=0.3, horizon=10)

        successes = 0
        best_fractions = []
        for ep in range(50):
            rng = np.random.default_rng(1000 + ep)
            row = int(rng.integers(3, 7))
            c0 = int(rng.integers(1, 3))
            c1 = int(rng.integers(6, 9))
            init = new_heightmap(g, 0.0)
            ref = Stroke(start=g.cell_center(row, c0), end=g.cell_center(row, c1),
                         depth=0.3)
            goal, _ = execute_stroke(init, ref, blade, soil, surface_level=0.0)
            state = env.reset(goal, init)
            l0 = loss(goal, state.current)
            best = 1.0
            for i in range(10):
                action = env.greedy_baseline(state, 64, rng_seed=ep * 101 + i)
                t = env.step(state, action)
                state = t.next_state
                best = min(best, loss(goal, state.current) / l0)
                if best <= 0.5:
                    successes += 1
                    break
                if t.done:
                    break
            best_fractions.append(best)

        # Pinned from the first measurement of this fully-seeded campaign:
        # 1 success, median best fraction 0.7135, 49/50 episodes below 0.95.
        assert successes >= 1
        assert sum(b < 0.95 for b in best_fractions) >= 49
        assert float(np.median(best_fractions)) <= 0.72


class TestGoalIngestion:
    def test_goal_from_binary(self):
        goal = parse_goal_text("111\n100\n111")
        g = GridGeometry(3, 3, 0.5)
        h = goal_from_binary(goal, g, dig_depth=0.25, ambient=1.0)
        assert h.heights[1, 1] == 0.75
        assert h.heights[1, 2] == 0.75
        assert h.heights[0, 0] == 1.0

    def test_bar_goal(self):
        g = GridGeometry(8, 8, 1.0)
        h = bar_trench_goal(g, depth=0.4, row=4, col_start=2, col_end=5, width=1)
        assert h.heights[4, 2] == -0.4
        assert h.heights[4, 6] == 0.0
        assert h.heights[3, 3] == 0.0


class TestEpisodeLog:
    def test_round_trip(self, env16, tmp_path):
        _, env, goal, init = env16
        episode = run_episode(env, goal, init, random_policy(np.random.default_rng(2)))
        path = tmp_path / "episode.jsonl"
        save_episode(episode, path)
        back = load_episode(path)
        assert len(back) == len(episode)
        for orig, restored in zip(episode, back):
            assert restored.reward == orig.reward
            assert restored.done == orig.done
            assert restored.action == orig.action
            assert restored.state.current == orig.state.current
            assert restored.next_state.current == orig.next_state.current

    def test_sidecars_deduplicate(self, env16, tmp_path):
        _, env, goal, init = env16
        episode = run_episode(env, goal, init, random_policy(np.random.default_rng(3)))
        path = tmp_path / "ep.jsonl"
        save_episode(episode, path)
        maps_dir = tmp_path / "ep_maps"
        hmap_files = list(maps_dir.glob("*.hmap"))
        # goal is shared by every snapshot; states chain, so the sidecar
        # count is at most steps+2 distinct surfaces.
        assert len(hmap_files) <= len(episode) + 2

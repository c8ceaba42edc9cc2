"""Goal-conditioned shaping environment: l2 loss, loss-difference rewards,
discounted returns, hindsight relabeling, and a learning-free greedy baseline.

The environment object is a pure function of its configuration: ``step``
takes a state and returns a transition without mutating anything, so
independent episodes can run in parallel and identical inputs give
bit-identical outputs. Deep agents are out of scope; the stepping interface
is what an external learner would attach to.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import GridGeometry, HeightMap
from .erosion import Boundary
from .planner import BinaryMap, Move
from .tool import BladeParams, Stroke, ToolPose, apply_move, apply_placement, execute_stroke

__all__ = [
    "StrokeAction",
    "EnvState",
    "Transition",
    "ShapingEnv",
    "loss",
    "discounted_return",
    "relabel_hindsight",
    "goal_from_binary",
    "bar_trench_goal",
    "run_episode",
    "save_episode",
    "load_episode",
]


@dataclass(frozen=True)
class StrokeAction:
    """Continuous action: start and end of one straight push."""

    x0: float
    y0: float
    x1: float
    y1: float


Action = StrokeAction | Move


@dataclass(frozen=True)
class EnvState:
    """Goal and current surface plus episode bookkeeping. ``blade_cell`` is
    tracked only by the discrete scheme; ``surface_level`` is the ambient
    datum sampled at reset."""

    goal: HeightMap
    current: HeightMap
    step_index: int
    horizon: int
    surface_level: float
    blade_cell: tuple[int, int] | None = None


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: Action
    reward: float
    next_state: EnvState
    done: bool
    clamped: bool = False


def loss(goal: HeightMap, current: HeightMap) -> float:
    """Plain l2 distance between surfaces: sqrt(Σ (goal − current)²) over
    cells, unweighted by cell area."""
    if goal.geometry != current.geometry:
        raise ValueError("goal and current geometries differ")
    diff = goal.heights - current.heights
    return math.sqrt(float((diff * diff).sum()))


def discounted_return(rewards, gamma: float) -> float:
    """Σ gamma^i · r_i from the first reward."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    total = 0.0
    factor = 1.0
    for r in rewards:
        total += factor * r
        factor *= gamma
    return total


def relabel_hindsight(t: Transition) -> Transition:
    """Hindsight relabel: the achieved next surface becomes the goal of both
    snapshots, the reward is recomputed (its second loss term is exactly
    zero), and the transition is marked done. Idempotent."""
    new_goal = t.next_state.current
    state = replace(t.state, goal=new_goal)
    next_state = replace(t.next_state, goal=new_goal)
    reward = loss(new_goal, t.state.current) - loss(new_goal, t.next_state.current)
    return Transition(state=state, action=t.action, reward=reward,
                      next_state=next_state, done=True, clamped=t.clamped)


class ShapingEnv:
    """Sand-shaping environment over the simulator.

    ``scheme`` selects the action space: "multi" takes continuous stroke
    endpoints, "single" takes one of the four blade moves with the blade
    held at depth. The reward for a step is the drop in l2 loss, so episode
    rewards telescope to L_0 − L_final exactly.
    """

    def __init__(self, soil, blade: BladeParams, *, scheme: str = "multi",
                 dig_depth: float | None = None, horizon: int = 50,
                 done_threshold: float | None = None,
                 start_cell: tuple[int, int] | None = None,
                 boundary: Boundary = Boundary.CLOSED):
        if scheme not in ("multi", "single"):
            raise ValueError(f"scheme must be 'multi' or 'single', got {scheme!r}")
        self.soil = soil
        self.blade = blade
        self.scheme = scheme
        self.dig_depth = blade.depth if dig_depth is None else dig_depth
        self.horizon = horizon
        self.done_threshold = done_threshold
        self.start_cell = start_cell
        self.boundary = boundary

    def _threshold(self, geometry: GridGeometry) -> float:
        if self.done_threshold is not None:
            return self.done_threshold
        return 1e-3 * math.sqrt(geometry.cell_count) * geometry.dx

    def reset(self, goal: HeightMap, initial: HeightMap,
              horizon: int | None = None) -> EnvState:
        """Fresh episode state. The discrete scheme lowers the blade at the
        configured start cell, digging it as the episode's first state."""
        if goal.geometry != initial.geometry:
            raise ValueError("goal and initial geometries differ")
        horizon = self.horizon if horizon is None else horizon
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        surface_level = float(np.median(initial.heights))
        blade_cell = None
        current = initial
        if self.scheme == "single":
            if self.start_cell is None:
                raise ValueError("single-stroke scheme requires a start_cell")
            r, c = self.start_cell
            pose = ToolPose(center=initial.geometry.cell_center(r, c), heading=0.0,
                            bottom_height=surface_level - self.dig_depth)
            current, _ = apply_placement(initial, pose, self.blade, self.soil,
                                         boundary=self.boundary)
            blade_cell = (r, c)
        return EnvState(goal=goal, current=current, step_index=0, horizon=horizon,
                        surface_level=surface_level, blade_cell=blade_cell)

    def step(self, state: EnvState, action: Action) -> Transition:
        """Apply one action through the simulator and score it by loss drop."""
        geometry = state.current.geometry
        if state.step_index >= state.horizon:
            raise ValueError("stepping a finished episode (horizon reached)")
        threshold = self._threshold(geometry)
        if loss(state.goal, state.current) <= threshold:
            raise ValueError("stepping a finished episode (goal reached)")
        if self.scheme == "multi":
            next_current, clamped = self._step_stroke(state, action)
            blade_cell = None
        else:
            next_current, blade_cell, clamped = self._step_move(state, action)
        next_state = EnvState(goal=state.goal, current=next_current,
                              step_index=state.step_index + 1, horizon=state.horizon,
                              surface_level=state.surface_level, blade_cell=blade_cell)
        l_before = loss(state.goal, state.current)
        l_after = loss(state.goal, next_current)
        done = next_state.step_index >= state.horizon or l_after <= threshold
        return Transition(state=state, action=action, reward=l_before - l_after,
                          next_state=next_state, done=done, clamped=clamped)

    def _step_stroke(self, state: EnvState, action: Action) -> tuple[HeightMap, bool]:
        if not isinstance(action, StrokeAction):
            raise TypeError("multi-stroke scheme takes StrokeAction actions")
        geometry = state.current.geometry
        w, hgt = geometry.extent
        coords = [action.x0, action.y0, action.x1, action.y1]
        bounds = [w, hgt, w, hgt]
        clamped = False
        for i, (v, hi) in enumerate(zip(coords, bounds)):
            cv = min(max(v, 0.0), hi)
            if cv != v:
                clamped = True
            coords[i] = cv
        x0, y0, x1, y1 = coords
        if math.hypot(x1 - x0, y1 - y0) < geometry.dx:
            # A push shorter than one cell moves nothing: a no-op action.
            return state.current, clamped
        stroke = Stroke(start=(x0, y0), end=(x1, y1), depth=self.dig_depth)
        next_current, _ = execute_stroke(state.current, stroke, self.blade, self.soil,
                                         boundary=self.boundary,
                                         surface_level=state.surface_level)
        return next_current, clamped

    def _step_move(self, state: EnvState, action: Action) -> tuple[
            HeightMap, tuple[int, int], bool]:
        if not isinstance(action, Move):
            raise TypeError("single-stroke scheme takes Move actions")
        geometry = state.current.geometry
        r, c = state.blade_cell
        nr, nc = r + action.drow, c + action.dcol
        if not (0 <= nr < geometry.rows and 0 <= nc < geometry.cols):
            # Off-grid moves keep the blade in place, flagged like a clamp.
            return state.current, (r, c), True
        bottom = state.surface_level - self.dig_depth
        from_pose = ToolPose(center=geometry.cell_center(r, c), heading=0.0,
                             bottom_height=bottom)
        to_pose = ToolPose(center=geometry.cell_center(nr, nc), heading=0.0,
                           bottom_height=bottom)
        next_current, _ = apply_move(state.current, from_pose, to_pose, self.blade,
                                     self.soil, boundary=self.boundary)
        return next_current, (nr, nc), False

    def greedy_baseline(self, state: EnvState, candidate_count: int, rng_seed: int,
                        candidates: list[StrokeAction] | None = None) -> StrokeAction:
        """Best of ``candidate_count`` random strokes by one-step reward,
        evaluated through simulator rollouts; deterministic given the seed.
        Explicit ``candidates`` replace the random sampling."""
        if self.scheme != "multi":
            raise ValueError("greedy baseline needs the multi-stroke scheme")
        if candidates is None:
            rng = np.random.default_rng(rng_seed)
            w, hgt = state.current.geometry.extent
            draws = rng.uniform(0.0, 1.0, size=(candidate_count, 4))
            candidates = [StrokeAction(d[0] * w, d[1] * hgt, d[2] * w, d[3] * hgt)
                          for d in draws]
        if not candidates:
            raise ValueError("no candidates to evaluate")
        best_action = candidates[0]
        best_reward = -math.inf
        for cand in candidates:
            reward = self.step(state, cand).reward
            if reward > best_reward:
                best_reward = reward
                best_action = cand
        return best_action


def goal_from_binary(goal: BinaryMap, geometry: GridGeometry, dig_depth: float,
                     ambient: float = 0.0) -> HeightMap:
    """Lift a planner goal grid to heights: dug cells at ambient − dig_depth,
    the rest at ambient."""
    if (goal.rows, goal.cols) != (geometry.rows, geometry.cols):
        raise ValueError("goal grid and geometry shapes differ")
    heights = np.where(goal.cells, ambient, ambient - dig_depth)
    return HeightMap(geometry, heights)


def bar_trench_goal(geometry: GridGeometry, depth: float, row: int,
                    col_start: int, col_end: int, ambient: float = 0.0,
                    width: int = 1) -> HeightMap:
    """A straight bar trench goal: ``width`` rows centered on ``row`` dug to
    ambient − depth between the given columns (inclusive)."""
    heights = np.full((geometry.rows, geometry.cols), ambient, dtype=float)
    r_lo = row - (width - 1) // 2
    heights[r_lo:r_lo + width, col_start:col_end + 1] = ambient - depth
    return HeightMap(geometry, heights)


def run_episode(env: ShapingEnv, goal: HeightMap, initial: HeightMap, policy,
                horizon: int | None = None) -> list[Transition]:
    """Roll one episode: ``policy(env, state, step_index)`` returns an action."""
    state = env.reset(goal, initial, horizon)
    transitions: list[Transition] = []
    while True:
        action = policy(env, state, state.step_index)
        t = env.step(state, action)
        transitions.append(t)
        if t.done:
            return transitions
        state = t.next_state


# --- episode logs: JSON lines with content-addressed height-map sidecars ---

def _hash_map(h: HeightMap) -> str:
    payload = h.heights.tobytes() + repr(h.geometry).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _state_json(state: EnvState, store) -> dict:
    return {
        "goal": store(state.goal),
        "current": store(state.current),
        "step_index": state.step_index,
        "horizon": state.horizon,
        "surface_level": state.surface_level,
        "blade_cell": list(state.blade_cell) if state.blade_cell else None,
    }


def _action_json(action: Action) -> dict:
    if isinstance(action, StrokeAction):
        return {"type": "stroke", "params": [action.x0, action.y0, action.x1, action.y1]}
    return {"type": "move", "dir": action.letter}


def save_episode(transitions: list[Transition], path) -> Path:
    """Write one transition per line; height-maps go to content-hashed HMAP
    sidecars in ``<log stem>_maps/`` so repeated maps are stored once."""
    from .gridio import write_heightmap

    path = Path(path)
    maps_dir = path.parent / (path.stem + "_maps")
    maps_dir.mkdir(parents=True, exist_ok=True)
    written: set[str] = set()

    def store(h: HeightMap) -> str:
        key = _hash_map(h)
        if key not in written:
            write_heightmap(h, maps_dir / f"{key}.hmap")
            written.add(key)
        return key

    lines = []
    for t in transitions:
        lines.append(json.dumps({
            "state": _state_json(t.state, store),
            "action": _action_json(t.action),
            "reward": t.reward,
            "next_state": _state_json(t.next_state, store),
            "done": t.done,
            "clamped": t.clamped,
        }, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def load_episode(path) -> list[Transition]:
    from .gridio import read_heightmap

    path = Path(path)
    maps_dir = path.parent / (path.stem + "_maps")
    cache: dict[str, HeightMap] = {}

    def fetch(key: str) -> HeightMap:
        if key not in cache:
            cache[key] = read_heightmap(maps_dir / f"{key}.hmap")
        return cache[key]

    def state_from(d: dict) -> EnvState:
        return EnvState(goal=fetch(d["goal"]), current=fetch(d["current"]),
                        step_index=d["step_index"], horizon=d["horizon"],
                        surface_level=d["surface_level"],
                        blade_cell=tuple(d["blade_cell"]) if d["blade_cell"] else None)

    def action_from(d: dict) -> Action:
        if d["type"] == "stroke":
            return StrokeAction(*d["params"])
        return Move.from_letter(d["dir"])

    transitions = []
    for line in path.read_text(encoding="ascii").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        transitions.append(Transition(
            state=state_from(d["state"]), action=action_from(d["action"]),
            reward=d["reward"], next_state=state_from(d["next_state"]),
            done=d["done"], clamped=d["clamped"]))
    return transitions

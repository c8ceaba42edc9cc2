"""Single-stroke trench planner over a binarized height-map.

The continuous map reduces to ones (undug) and zeros (dug). The blade sits
at a cell, never leaves the trenching depth, and each of the four moves digs
the cell it enters. A* searches (map, blade) states with cost-so-far the
distance traveled and cost-to-go alpha times the count of cells that still
differ from the goal; alpha ≤ 1 keeps the estimate admissible because one
move repairs at most one cell. An exhaustive breadth-first oracle provides
exact optima on small instances for checking that claim.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import GridGeometry
from .tool import BladeParams, Stroke

__all__ = [
    "Move",
    "BinaryMap",
    "Problem",
    "PlanState",
    "Plan",
    "UnsolvableProblemError",
    "successors",
    "heuristic",
    "astar_plan",
    "bfs_oracle",
    "plan_to_strokes",
    "parse_goal_text",
    "format_goal_text",
    "load_goal_file",
    "random_connected_goal",
    "letter_suite",
    "ORACLE_CELL_LIMIT",
]

# The exhaustive oracle enumerates subsets of the goal's dug set, so it is
# capped at instances small enough to finish quickly.
ORACLE_CELL_LIMIT = 12


class UnsolvableProblemError(ValueError):
    """The goal's dug set cannot be traced by a single stroke from the start."""


class Move(Enum):
    """The four discrete blade moves; enum order is the tie-break order."""

    NORTH = ("N", -1, 0)
    EAST = ("E", 0, 1)
    SOUTH = ("S", 1, 0)
    WEST = ("W", 0, -1)

    def __init__(self, letter: str, drow: int, dcol: int):
        self.letter = letter
        self.drow = drow
        self.dcol = dcol

    @classmethod
    def from_letter(cls, letter: str) -> "Move":
        for m in cls:
            if m.letter == letter:
                return m
        raise ValueError(f"unknown move {letter!r}")


class BinaryMap:
    """Boolean dig state per cell: True = undug (1), False = dug (0)."""

    __slots__ = ("rows", "cols", "cells")

    def __init__(self, rows: int, cols: int, cells) -> None:
        arr = np.array(cells, dtype=bool, copy=True)
        if arr.shape == (rows * cols,):
            arr = arr.reshape(rows, cols)
        if arr.shape != (rows, cols):
            raise ValueError(f"cells shape {arr.shape} does not match {rows}x{cols}")
        arr.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "cells", arr)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMap is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMap):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and bool(
            np.array_equal(self.cells, other.cells))

    @classmethod
    def all_undug(cls, rows: int, cols: int) -> "BinaryMap":
        return cls(rows, cols, np.ones((rows, cols), dtype=bool))

    def dug_cells(self) -> list[tuple[int, int]]:
        return [(int(r), int(c)) for r, c in np.argwhere(~self.cells)]

    @property
    def dug_count(self) -> int:
        return int((~self.cells).sum())

    def with_dug(self, row: int, col: int) -> "BinaryMap":
        arr = np.array(self.cells, copy=True)
        arr[row, col] = False
        return BinaryMap(self.rows, self.cols, arr)


@dataclass(frozen=True)
class Problem:
    """Planning instance: goal dig pattern, blade start cell, the physical
    dig depth for execution, and the heuristic weight alpha."""

    goal: BinaryMap
    start_cell: tuple[int, int]
    dig_depth: float = 1.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        r, c = self.start_cell
        if not (0 <= r < self.goal.rows and 0 <= c < self.goal.cols):
            raise ValueError(f"start cell {self.start_cell} outside {self.goal.rows}x{self.goal.cols}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.dig_depth > 0:
            raise ValueError("dig_depth must be positive")


@dataclass(frozen=True)
class PlanState:
    """Search node: dig state plus blade cell."""

    map: BinaryMap
    blade: tuple[int, int]

    def __post_init__(self) -> None:
        r, c = self.blade
        if not (0 <= r < self.map.rows and 0 <= c < self.map.cols):
            raise ValueError(f"blade {self.blade} outside the map")
        if self.map.cells[r, c]:
            raise ValueError("the blade cell must be dug")


@dataclass(frozen=True)
class Plan:
    """A* result: the action sequence and search effort."""

    actions: tuple[Move, ...]
    nodes_opened: int
    path_length: int
    optimal: bool

    def to_json(self) -> dict:
        return {
            "actions": [m.letter for m in self.actions],
            "path_length": self.path_length,
            "nodes_opened": self.nodes_opened,
            "optimal": self.optimal,
        }


def successors(s: PlanState) -> list[tuple[Move, PlanState]]:
    """All in-bounds moves; entering a cell digs it, revisiting changes nothing."""
    out = []
    r, c = s.blade
    for move in Move:
        nr, nc = r + move.drow, c + move.dcol
        if not (0 <= nr < s.map.rows and 0 <= nc < s.map.cols):
            continue
        nmap = s.map if not s.map.cells[nr, nc] else s.map.with_dug(nr, nc)
        out.append((move, PlanState(nmap, (nr, nc))))
    return out


def heuristic(s: PlanState, p: Problem) -> float:
    """alpha × number of cells whose dig state differs from the goal."""
    if (s.map.rows, s.map.cols) != (p.goal.rows, p.goal.cols):
        raise ValueError("state and problem geometries differ")
    return p.alpha * int((s.map.cells ^ p.goal.cells).sum())


def _goal_bits(goal: BinaryMap) -> int:
    bits = 0
    for r, c in goal.dug_cells():
        bits |= 1 << (r * goal.cols + c)
    return bits


def astar_plan(p: Problem) -> Plan:
    """Weighted A* over packed (dug-bits, blade) states.

    f = g + alpha·(cells still differing); ties break on lower heuristic,
    then generating-action order N, E, S, W, then insertion order, so plans
    and node counts are reproducible. States that dig outside the goal are
    dead ends (sand cannot be undug) and are pruned. Raises
    UnsolvableProblemError when the reachable space is exhausted.
    """
    rows, cols = p.goal.rows, p.goal.cols
    goal_bits = _goal_bits(p.goal)
    start_r, start_c = p.start_cell
    start_bit = 1 << (start_r * cols + start_c)
    if not goal_bits & start_bit:
        raise UnsolvableProblemError("start cell is not part of the goal trench")
    goal_count = p.goal.dug_count
    moves = tuple(Move)

    start = (start_bit, start_r, start_c)
    h0 = p.alpha * (goal_count - 1)
    counter = 0
    heap = [(h0, h0, 0, counter, start, 0)]
    parents: dict[tuple[int, int, int], tuple[tuple[int, int, int] | None, Move | None]] = {
        start: (None, None)}
    best_g = {start: 0}
    closed: set[tuple[int, int, int]] = set()
    nodes_opened = 0

    while heap:
        f, h, _, _, state, g = heapq.heappop(heap)
        if state in closed:
            continue
        closed.add(state)
        nodes_opened += 1
        bits, r, c = state
        if bits == goal_bits:
            actions: list[Move] = []
            cur = state
            while True:
                parent, move = parents[cur]
                if parent is None:
                    break
                actions.append(move)
                cur = parent
            actions.reverse()
            return Plan(tuple(actions), nodes_opened, len(actions), p.alpha <= 1.0)
        dug = bin(bits).count("1")
        for ai, move in enumerate(moves):
            nr, nc = r + move.drow, c + move.dcol
            if not (0 <= nr < rows and 0 <= nc < cols):
                continue
            bit = 1 << (nr * cols + nc)
            if not goal_bits & bit:
                continue  # digging outside the goal is unrecoverable
            nbits = bits | bit
            nstate = (nbits, nr, nc)
            if nstate in closed:
                continue
            ng = g + 1
            if best_g.get(nstate, math.inf) <= ng:
                continue
            best_g[nstate] = ng
            nh = p.alpha * (goal_count - (dug if nbits == bits else dug + 1))
            counter += 1
            heapq.heappush(heap, (ng + nh, nh, ai, counter, nstate, ng))
            parents[nstate] = (state, move)
    raise UnsolvableProblemError(
        "goal trench is not reachable by a single stroke from the start cell")


def bfs_oracle(p: Problem, max_cells: int = ORACLE_CELL_LIMIT) -> int:
    """Exact optimal stroke length by exhaustive breadth-first search.

    Independent of the A* machinery: no heuristic, plain FIFO layers.
    Guarded to goals of at most ``max_cells`` dug cells.
    """
    if p.goal.dug_count > max_cells:
        raise ValueError(
            f"goal has {p.goal.dug_count} dug cells; oracle is limited to {max_cells}")
    rows, cols = p.goal.rows, p.goal.cols
    goal_bits = _goal_bits(p.goal)
    start_r, start_c = p.start_cell
    start_bit = 1 << (start_r * cols + start_c)
    if not goal_bits & start_bit:
        raise UnsolvableProblemError("start cell is not part of the goal trench")
    start = (start_bit, start_r, start_c)
    if start_bit == goal_bits:
        return 0
    seen = {start}
    frontier = deque([start])
    depth = 0
    deltas = tuple((m.drow, m.dcol) for m in Move)
    while frontier:
        depth += 1
        for _ in range(len(frontier)):
            bits, r, c = frontier.popleft()
            for dr, dc in deltas:
                nr, nc = r + dr, c + dc
                if not (0 <= nr < rows and 0 <= nc < cols):
                    continue
                bit = 1 << (nr * cols + nc)
                if not goal_bits & bit:
                    continue
                nbits = bits | bit
                if nbits == goal_bits:
                    return depth
                nstate = (nbits, nr, nc)
                if nstate not in seen:
                    seen.add(nstate)
                    frontier.append(nstate)
    raise UnsolvableProblemError(
        "goal trench is not reachable by a single stroke from the start cell")


def plan_to_strokes(plan: Plan, p: Problem, geometry: GridGeometry,
                    blade: BladeParams) -> list[Stroke]:
    """Merge consecutive same-direction moves into straight strokes at the
    problem's dig depth, in map coordinates."""
    if (p.goal.rows, p.goal.cols) != (geometry.rows, geometry.cols):
        raise ValueError("problem and geometry shapes differ")
    strokes: list[Stroke] = []
    r, c = p.start_cell
    i = 0
    actions = plan.actions
    while i < len(actions):
        move = actions[i]
        run = 1
        while i + run < len(actions) and actions[i + run] is move:
            run += 1
        nr, nc = r + move.drow * run, c + move.dcol * run
        sx, sy = geometry.cell_center(r, c)
        ex, ey = geometry.cell_center(nr, nc)
        strokes.append(Stroke(start=(sx, sy), end=(ex, ey), depth=p.dig_depth))
        r, c = nr, nc
        i += run
    return strokes


def parse_goal_text(text: str) -> BinaryMap:
    """Parse a goal grid: one row per line of 0 (to dig) and 1 characters;
    lines starting with # and blank lines are skipped."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if set(line) - {"0", "1"}:
            raise ValueError(f"line {lineno}: goal rows may contain only 0 and 1")
        rows.append([ch == "1" for ch in line])
    if not rows:
        raise ValueError("goal file has no grid rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("goal rows have differing lengths")
    return BinaryMap(len(rows), width, rows)


def format_goal_text(goal: BinaryMap) -> str:
    return "\n".join("".join("1" if v else "0" for v in row) for row in goal.cells) + "\n"


def load_goal_file(path) -> BinaryMap:
    return parse_goal_text(Path(path).read_text(encoding="ascii"))


def random_connected_goal(rng: np.random.Generator, rows: int, cols: int,
                          n_cells: int) -> tuple[BinaryMap, tuple[int, int]]:
    """A 4-connected dug set of ``n_cells`` grown from a random seed cell;
    returns the goal and a start cell inside it."""
    if n_cells < 1 or n_cells > rows * cols:
        raise ValueError("n_cells out of range")
    start = (int(rng.integers(rows)), int(rng.integers(cols)))
    dug = {start}
    frontier = [start]
    while len(dug) < n_cells:
        r, c = frontier[int(rng.integers(len(frontier)))]
        candidates = [(r + m.drow, c + m.dcol) for m in Move]
        candidates = [(rr, cc) for rr, cc in candidates
                      if 0 <= rr < rows and 0 <= cc < cols and (rr, cc) not in dug]
        if not candidates:
            frontier.remove((r, c))
            continue
        pick = candidates[int(rng.integers(len(candidates)))]
        dug.add(pick)
        frontier.append(pick)
    cells = np.ones((rows, cols), dtype=bool)
    for r, c in dug:
        cells[r, c] = False
    return BinaryMap(rows, cols, cells), start


# 7x7 letter-shaped goals (own designs, kept within the oracle cell limit).
_LETTERS = {
    "A": (
        "1111111",
        "1100011",
        "1101011",
        "1100011",
        "1101011",
        "1111111",
        "1111111",
    ),
    "S": (
        "1111111",
        "1100011",
        "1101111",
        "1100011",
        "1111011",
        "1100011",
        "1111111",
    ),
    "T": (
        "1111111",
        "1000001",
        "1110111",
        "1110111",
        "1110111",
        "1110111",
        "1111111",
    ),
    "R": (
        "1111111",
        "1100011",
        "1101011",
        "1100011",
        "1101011",
        "1101011",
        "1111111",
    ),
}

_LETTER_STARTS = {"A": (4, 2), "S": (1, 4), "T": (1, 1), "R": (5, 2)}


def letter_suite() -> dict[str, tuple[BinaryMap, tuple[int, int]]]:
    """The fixed 7x7 letter goals with their stroke start cells."""
    return {name: (parse_goal_text("\n".join(rows)), _LETTER_STARTS[name])
            for name, rows in _LETTERS.items()}

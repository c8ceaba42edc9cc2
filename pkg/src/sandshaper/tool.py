"""The action phase: blade footprints, placement and movement displacement,
stroke rasterization, and bounded-region bookkeeping.

Tool interaction follows a two-phase loop: an action displaces the sand the
tool overlaps, then relaxation restores the angle of repose. Overlap volume
under a newly placed tool leaves radially from the tool center; overlap
under a moving tool leaves in the movement direction. Deposits go to the
nearest unoccupied cell along the chosen ray, split between the two compass
directions straddling the ray angle with weights linear in angular distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CellMask, GridGeometry, HeightMap, Region, SoilParams
from .erosion import Boundary, RelaxReport, _relax_adaptive, resolve_flow_rate

__all__ = [
    "BladeParams",
    "ToolPose",
    "Stroke",
    "StrokeStats",
    "footprint_cells",
    "apply_placement",
    "apply_move",
    "execute_stroke",
    "stroke_bounds",
    "sweep_rigid_tool",
]

# Compass direction vectors (drow, dcol) ordered by angle: E, SE, S, SW, W,
# NW, N, NE at 0°, 45°, ... 315° in the y-south map frame.
_COMPASS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))

# Iteration cap for the relaxations between rasterization steps of a sweep;
# a full relax_to_steady runs once at the end.
INTER_STEP_RELAX_ITERS = 10


@dataclass(frozen=True)
class BladeParams:
    """Flat rectangular blade: width across the motion, thickness along it,
    and nominal cutting depth below the reference surface."""

    width: float
    thickness: float
    depth: float

    def __post_init__(self) -> None:
        for name in ("width", "thickness", "depth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"blade {name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class ToolPose:
    """Tool placement: continuous center (x, y), heading in radians, and the
    absolute height of the tool's bottom face."""

    center: tuple[float, float]
    heading: float
    bottom_height: float


@dataclass(frozen=True)
class Stroke:
    """One straight push from start to end at a fixed cutting depth."""

    start: tuple[float, float]
    end: tuple[float, float]
    depth: float

    def __post_init__(self) -> None:
        if tuple(self.start) == tuple(self.end):
            raise ValueError("stroke start and end coincide")
        if not self.depth > 0:
            raise ValueError(f"stroke depth must be positive, got {self.depth}")

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    @property
    def heading(self) -> float:
        return math.atan2(self.end[1] - self.start[1], self.end[0] - self.start[0])


@dataclass(frozen=True)
class StrokeStats:
    """Accounting for one stroke or tow: volume moved by the tool, total
    relaxation iterations, cell-update slots processed, and the report of
    the final steady-state relaxation."""

    displaced_volume: float
    relax_iterations_total: int
    cells_touched: int
    final_report: RelaxReport


def _footprint_bool(center: tuple[float, float], heading: float, width: float,
                    thickness: float, geometry: GridGeometry) -> np.ndarray:
    """Cells whose centers lie inside the rotated width × thickness rectangle."""
    xs = (np.arange(geometry.cols) + 0.5) * geometry.dx - center[0]
    ys = (np.arange(geometry.rows) + 0.5) * geometry.dx - center[1]
    dxs = xs[np.newaxis, :]
    dys = ys[:, np.newaxis]
    cos_h, sin_h = math.cos(heading), math.sin(heading)
    along = dxs * cos_h + dys * sin_h
    across = -dxs * sin_h + dys * cos_h
    return (np.abs(along) <= thickness / 2.0) & (np.abs(across) <= width / 2.0)


def footprint_cells(pose: ToolPose, blade: BladeParams, geometry: GridGeometry) -> CellMask:
    """Mask of cells the blade covers at ``pose``.

    Raises if the footprint misses every cell center or the blade is
    narrower than a cell.
    """
    if blade.width < geometry.dx:
        raise ValueError(
            f"blade width {blade.width} is narrower than one cell (dx={geometry.dx})")
    fp = _footprint_bool(pose.center, pose.heading, blade.width, blade.thickness, geometry)
    if not fp.any():
        raise ValueError("blade footprint covers no grid cell")
    return CellMask(geometry, fp)


def _compass_split(angle: float) -> tuple[tuple[int, float], ...]:
    """The one or two compass directions straddling ``angle`` with their
    linear angular weights."""
    a = math.degrees(angle) % 360.0
    idx = int(a // 45.0) % 8
    frac = (a - idx * 45.0) / 45.0
    if frac < 1e-12:
        return ((idx, 1.0),)
    if frac > 1.0 - 1e-12:
        return (((idx + 1) % 8, 1.0),)
    return ((idx, 1.0 - frac), ((idx + 1) % 8, frac))


def _nearest_free(occ: np.ndarray, anchor: tuple[int, int]) -> tuple[int, int]:
    """Deterministic near-neighbor search for an unoccupied cell, scanning
    outward by Chebyshev rings; ties break on squared distance, then row,
    then column."""
    rows, cols = occ.shape
    ar, ac = anchor
    for radius in range(1, max(rows, cols)):
        best = None
        r_lo, r_hi = max(ar - radius, 0), min(ar + radius, rows - 1)
        c_lo, c_hi = max(ac - radius, 0), min(ac + radius, cols - 1)
        for r in range(r_lo, r_hi + 1):
            for c in range(c_lo, c_hi + 1):
                if max(abs(r - ar), abs(c - ac)) != radius or occ[r, c]:
                    continue
                key = ((r - ar) ** 2 + (c - ac) ** 2, r, c)
                if best is None or key < best:
                    best = key
        if best is not None:
            return (best[1], best[2])
    raise RuntimeError("no unoccupied cell available to receive displaced sand")


def _walk_deposit(occ: np.ndarray, start: tuple[int, int], direction: tuple[int, int],
                  boundary: Boundary) -> tuple[int, int] | None:
    """First unoccupied cell along the ray from ``start`` in ``direction``.

    Under open boundaries a ray that exits the grid drops its load outside
    (returns None); under closed boundaries the deposit falls back to the
    nearest unoccupied cell around the last in-bounds ray cell.
    """
    rows, cols = occ.shape
    dr, dc = direction
    r, c = start[0] + dr, start[1] + dc
    last_inside = start
    while 0 <= r < rows and 0 <= c < cols:
        if not occ[r, c]:
            return (r, c)
        last_inside = (r, c)
        r += dr
        c += dc
    if boundary is Boundary.OPEN:
        return None
    return _nearest_free(occ, last_inside)


def _deposit(arr: np.ndarray, occ: np.ndarray, cell: tuple[int, int], volume: float,
             splits: tuple[tuple[int, float], ...], inv_area: float,
             boundary: Boundary, targets: list[tuple[int, int]]) -> None:
    """Distribute ``volume`` from ``cell`` along the split directions."""
    remaining = volume
    for i, (dir_idx, weight) in enumerate(splits):
        amount = remaining if i == len(splits) - 1 else volume * weight
        remaining -= amount
        if amount == 0.0:
            continue
        target = _walk_deposit(occ, cell, _COMPASS[dir_idx], boundary)
        if target is None:
            continue  # open boundary: sand left the map
        arr[target] += amount * inv_area
        targets.append(target)


def _bbox_of(fp: np.ndarray, extra: list[tuple[int, int]]) -> Region | None:
    rows = np.flatnonzero(fp.any(axis=1))
    cols = np.flatnonzero(fp.any(axis=0))
    if rows.size == 0 and not extra:
        return None
    if rows.size:
        r_lo, r_hi = int(rows[0]), int(rows[-1])
        c_lo, c_hi = int(cols[0]), int(cols[-1])
    else:
        r_lo = r_hi = extra[0][0]
        c_lo = c_hi = extra[0][1]
    for r, c in extra:
        r_lo, r_hi = min(r_lo, r), max(r_hi, r)
        c_lo, c_hi = min(c_lo, c), max(c_hi, c)
    return Region(r_lo, r_hi, c_lo, c_hi)


def _displace_radial(arr: np.ndarray, fp: np.ndarray, geometry: GridGeometry,
                     center: tuple[float, float], bottom: float,
                     boundary: Boundary) -> tuple[float, list[tuple[int, int]]]:
    """Remove overlap volume under the footprint and push it radially
    outward from the tool center. Returns (displaced volume, deposit cells)."""
    area = geometry.cell_area
    inv_area = 1.0 / area
    displaced = 0.0
    targets: list[tuple[int, int]] = []
    tiny = 1e-9 * geometry.dx
    eight_way = tuple((i, 1.0 / 8.0) for i in range(8))
    for r, c in np.argwhere(fp):
        lift = arr[r, c] - bottom
        if lift <= 0.0:
            continue
        volume = lift * area
        arr[r, c] = bottom
        displaced += volume
        cx, cy = geometry.cell_center(r, c)
        vx, vy = cx - center[0], cy - center[1]
        if math.hypot(vx, vy) < tiny:
            # Cell under the exact tool center: no radial direction, split
            # evenly across all eight compass rays to keep symmetry.
            remaining = volume
            for i, (dir_idx, _) in enumerate(eight_way):
                amount = remaining if i == 7 else volume / 8.0
                remaining -= amount
                target = _walk_deposit(occ=fp, start=(int(r), int(c)),
                                       direction=_COMPASS[dir_idx], boundary=boundary)
                if target is not None:
                    arr[target] += amount * inv_area
                    targets.append(target)
            continue
        splits = _compass_split(math.atan2(vy, vx))
        _deposit(arr, fp, (int(r), int(c)), volume, splits, inv_area, boundary, targets)
    return displaced, targets


def _displace_directional(arr: np.ndarray, fp: np.ndarray, geometry: GridGeometry,
                          move_angle: float, bottom: float,
                          boundary: Boundary) -> tuple[float, list[tuple[int, int]]]:
    """Remove overlap volume under the footprint and push it toward the
    movement direction."""
    area = geometry.cell_area
    inv_area = 1.0 / area
    splits = _compass_split(move_angle)
    displaced = 0.0
    targets: list[tuple[int, int]] = []
    for r, c in np.argwhere(fp):
        lift = arr[r, c] - bottom
        if lift <= 0.0:
            continue
        volume = lift * area
        arr[r, c] = bottom
        displaced += volume
        _deposit(arr, fp, (int(r), int(c)), volume, splits, inv_area, boundary, targets)
    return displaced, targets


def _relax(arr: np.ndarray, fp: np.ndarray | None, geometry: GridGeometry,
           soil: SoilParams, region: Region, boundary: Boundary,
           max_iters: int | None, use_bounds: bool) -> tuple[int, int, Region, RelaxReport]:
    """Run the adaptive relaxation in place; returns (iterations,
    cells_touched, grown region, report)."""
    free = None if fp is None else ~fp
    k = resolve_flow_rate(soil, geometry.dx)
    cap = max_iters if max_iters is not None else (
        soil.max_relax_iters or 10 * max(geometry.rows, geometry.cols))
    if not use_bounds:
        region = Region.full(geometry)
    iters, converged, final_excess, cells, region = _relax_adaptive(
        arr, free, geometry, soil, k, region, boundary, cap)
    report = RelaxReport(iterations=iters, converged=converged,
                         final_excess_slope=final_excess, cells_touched=cells)
    return iters, cells, region, report


def apply_placement(h: HeightMap, pose: ToolPose, blade: BladeParams, soil: SoilParams,
                    *, boundary: Boundary = Boundary.CLOSED,
                    use_bounds: bool = True) -> tuple[HeightMap, float]:
    """Lower the blade at ``pose``: overlap volume moves radially outward,
    then the neighborhood relaxes to repose with the footprint masked."""
    geometry = h.geometry
    fp = footprint_cells(pose, blade, geometry).occupied
    arr = h.mutable_copy()
    displaced, targets = _displace_radial(arr, fp, geometry, pose.center,
                                          pose.bottom_height, boundary)
    region = _bbox_of(fp, targets).dilated(3, geometry)
    _relax(arr, fp, geometry, soil, region, boundary, None, use_bounds)
    return HeightMap(geometry, arr), displaced


def apply_move(h: HeightMap, from_pose: ToolPose, to_pose: ToolPose, blade: BladeParams,
               soil: SoilParams, *, boundary: Boundary = Boundary.CLOSED,
               use_bounds: bool = True,
               relax_iters: int | None = None) -> tuple[HeightMap, float]:
    """Advance the tool one rasterization step (at most one cell).

    Overlap volume under the new footprint is pushed toward the movement
    direction, then the neighborhood relaxes with the new footprint masked.
    """
    geometry = h.geometry
    step_x = to_pose.center[0] - from_pose.center[0]
    step_y = to_pose.center[1] - from_pose.center[1]
    dist = math.hypot(step_x, step_y)
    if dist == 0.0:
        raise ValueError("move step has zero length")
    if dist > geometry.dx * (1.0 + 1e-9):
        raise ValueError(f"move step {dist} exceeds one cell (dx={geometry.dx})")
    fp = footprint_cells(to_pose, blade, geometry).occupied
    arr = h.mutable_copy()
    move_angle = math.atan2(step_y, step_x)
    displaced, targets = _displace_directional(arr, fp, geometry, move_angle,
                                               to_pose.bottom_height, boundary)
    region = _bbox_of(fp, targets).dilated(3, geometry)
    _relax(arr, fp, geometry, soil, region, boundary, relax_iters, use_bounds)
    return HeightMap(geometry, arr), displaced


def sweep_rigid_tool(h: HeightMap, start: tuple[float, float], end: tuple[float, float],
                     blade: BladeParams, pose_heading: float, bottom: float,
                     soil: SoilParams, *, boundary: Boundary = Boundary.CLOSED,
                     use_bounds: bool = True,
                     inter_relax_iters: int = INTER_STEP_RELAX_ITERS,
                     ) -> tuple[HeightMap, StrokeStats]:
    """Drag a rigid footprint from ``start`` to ``end`` at constant bottom
    height: placement, one-cell moves, then a final unmasked relaxation.

    ``pose_heading`` is the footprint orientation, which may differ from
    the travel direction (a wheel at a slip angle). Footprints that cover
    no cell center are skipped rather than raised so degenerate geometry
    (a vanishing contact patch) degrades to a no-op.
    """
    geometry = h.geometry
    for x, y in (start, end):
        if not geometry.contains_point(x, y):
            raise ValueError(f"sweep endpoint ({x}, {y}) lies outside the map")
    seg_x, seg_y = end[0] - start[0], end[1] - start[1]
    length = math.hypot(seg_x, seg_y)
    if length < geometry.dx:
        raise ValueError(f"sweep length {length} is shorter than one cell")
    ux, uy = seg_x / length, seg_y / length
    dx = geometry.dx

    arr = h.mutable_copy()
    displaced_total = 0.0
    relax_iters_total = 0
    cells_total = 0
    running: Region | None = None

    def _one_op(pos: tuple[float, float], prev: tuple[float, float] | None) -> None:
        nonlocal displaced_total, relax_iters_total, cells_total, running
        fp = _footprint_bool(pos, pose_heading, blade.width, blade.thickness, geometry)
        if not fp.any():
            return
        if prev is None:
            displaced, targets = _displace_radial(arr, fp, geometry, pos, bottom, boundary)
        else:
            angle = math.atan2(pos[1] - prev[1], pos[0] - prev[0])
            displaced, targets = _displace_directional(arr, fp, geometry, angle,
                                                       bottom, boundary)
        displaced_total += displaced
        op_region = _bbox_of(fp, targets).dilated(3, geometry)
        running = op_region if running is None else running.union(op_region)
        iters, cells, grown, _ = _relax(arr, fp, geometry, soil, running, boundary,
                                        inter_relax_iters, use_bounds)
        relax_iters_total += iters
        cells_total += cells
        running = running.union(grown)

    # Rasterize: steps of dx, plus a final partial step onto the endpoint.
    positions = [(start[0] + k * dx * ux, start[1] + k * dx * uy)
                 for k in range(1, int(math.floor(length / dx + 1e-12)) + 1)]
    if length - math.floor(length / dx + 1e-12) * dx > 1e-9 * dx:
        positions.append(end)

    _one_op(start, None)
    prev = start
    for pos in positions:
        _one_op(pos, prev)
        prev = pos

    # Tool raised: settle everything without a mask.
    if running is None:
        running = Region.full(geometry)
    iters, cells, grown, final_report = _relax(arr, None, geometry, soil, running,
                                               boundary, None, use_bounds)
    relax_iters_total += iters
    cells_total += cells
    stats = StrokeStats(
        displaced_volume=displaced_total,
        relax_iterations_total=relax_iters_total,
        cells_touched=cells_total,
        final_report=final_report,
    )
    return HeightMap(geometry, arr), stats


def execute_stroke(h: HeightMap, stroke: Stroke, blade: BladeParams, soil: SoilParams,
                   *, boundary: Boundary = Boundary.CLOSED, use_bounds: bool = True,
                   surface_level: float | None = None,
                   inter_relax_iters: int = INTER_STEP_RELAX_ITERS,
                   ) -> tuple[HeightMap, StrokeStats]:
    """Execute one straight push: lower the blade at the stroke start, advance
    in one-cell steps, raise it at the end, and settle.

    The blade bottom stays constant at ``surface_level − stroke.depth``;
    when ``surface_level`` is not given it defaults to the median height of
    the input map, which on a mostly undisturbed surface recovers the
    ambient level regardless of earlier trenches and berms.
    """
    if surface_level is None:
        surface_level = float(np.median(h.heights))
    bottom = surface_level - stroke.depth
    return sweep_rigid_tool(h, stroke.start, stroke.end, blade, stroke.heading, bottom,
                            soil, boundary=boundary, use_bounds=use_bounds,
                            inter_relax_iters=inter_relax_iters)


def stroke_bounds(stroke: Stroke, blade: BladeParams, geometry: GridGeometry,
                  soil: SoilParams | None = None, margin: int | None = None) -> Region:
    """Axis-aligned cell region covering the swept footprint, dilated by
    ``margin`` cells (default: the repose-cone reach of the stroke depth,
    ⌈depth / (dx·tanφ)⌉ + 2, which requires ``soil``)."""
    if margin is None:
        if soil is None:
            raise ValueError("either margin or soil must be given")
        margin = int(math.ceil(stroke.depth / (geometry.dx * soil.tan_repose))) + 2
    cos_h, sin_h = math.cos(stroke.heading), math.sin(stroke.heading)
    half_t, half_w = blade.thickness / 2.0, blade.width / 2.0
    xs, ys = [], []
    for cx, cy in (stroke.start, stroke.end):
        for st in (-1.0, 1.0):
            for sw in (-1.0, 1.0):
                xs.append(cx + st * half_t * cos_h - sw * half_w * sin_h)
                ys.append(cy + st * half_t * sin_h + sw * half_w * cos_h)
    r_lo, c_lo = geometry.cell_at(min(xs), min(ys))
    r_hi, c_hi = geometry.cell_at(max(xs), max(ys))
    return Region(r_lo, r_hi, c_lo, c_hi).dilated(margin, geometry)

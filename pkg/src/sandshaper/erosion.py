"""Iterative flux relaxation of a height-map to the angle of repose.

The update phase is synchronous and double-buffered: every pair flux is
computed from the pre-step surface, then all height changes are applied at
once. For neighboring cells i, j at center distance d with slope
s = (h_i − h_j) / d beyond the repose slope t = tan(φ), the flux

    q = k · d · (|s| − t)

moves from the higher to the lower cell, and each cell's height change is
its signed flux sum divided by the cell area dx². Computing q once per
unordered pair and applying it with opposite signs makes the scheme
conservative regardless of parameter choices.

Per-cell flux sums accumulate in the fixed neighbor order N, NE, E, SE, S,
SW, W, NW so results are reproducible bit for bit, including between
bounded-region and full-grid execution on inputs whose activity stays
inside the region.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .core import CellMask, Connectivity, GridGeometry, HeightMap, Region, SoilParams

__all__ = [
    "Boundary",
    "RelaxReport",
    "optimal_flow_rate",
    "pairwise_flow_rate",
    "full_region",
    "relax_step",
    "relax_to_steady",
    "SLOPE_TOL",
]

# Dimensionless slope tolerance below which a surface counts as at repose.
SLOPE_TOL = 1e-6


class Boundary(Enum):
    """Edge behavior: closed conserves volume; open lets sand exit toward a
    virtual exterior cell at height zero."""

    CLOSED = "closed"
    OPEN = "open"


@dataclass(frozen=True)
class RelaxReport:
    """Outcome of one relax_to_steady run."""

    iterations: int
    converged: bool
    final_excess_slope: float
    cells_touched: int

    def to_json(self) -> dict:
        return asdict(self)


def optimal_flow_rate(connectivity: Connectivity | str, dx: float) -> float:
    """Largest per-step flow coefficient that cannot overshoot repose.

    Eight connectivity: dx²/8. Four connectivity: dx/4, following the same
    per-neighbor stability argument. The string ``"pairwise"`` selects the
    isolated two-cell (1D) optimum dx/2, which reaches repose in a single
    step; see also :func:`pairwise_flow_rate`.
    """
    if not dx > 0:
        raise ValueError(f"dx must be positive, got {dx}")
    if connectivity == "pairwise":
        return dx / 2.0
    conn = connectivity if isinstance(connectivity, Connectivity) else Connectivity(connectivity)
    if conn is Connectivity.FOUR:
        return dx / 4.0
    return dx * dx / 8.0


def pairwise_flow_rate(dx: float) -> float:
    """Two-cell optimum dx/2: one step lands exactly on the repose slope."""
    return optimal_flow_rate("pairwise", dx)


def full_region(geometry: GridGeometry) -> Region:
    """The whole-grid region."""
    return Region.full(geometry)


def resolve_flow_rate(soil: SoilParams, dx: float) -> float:
    """The soil's explicit flow rate, or the connectivity optimum for dx."""
    if soil.flow_rate is not None:
        return soil.flow_rate
    return optimal_flow_rate(soil.connectivity, dx)


def _edge_band(shape: tuple[int, int], dr: int, dc: int, region: Region,
               geometry: GridGeometry) -> np.ndarray | None:
    """Cells of the region slice whose (dr, dc) neighbor falls off the grid.

    Only nonempty where the region touches the corresponding grid edges.
    """
    rows, cols = shape
    band = None
    if dr == -1 and region.row_min == 0:
        band = np.zeros(shape, dtype=bool)
        band[0, :] = True
    elif dr == 1 and region.row_max == geometry.rows - 1:
        band = np.zeros(shape, dtype=bool)
        band[rows - 1, :] = True
    if dc == -1 and region.col_min == 0:
        if band is None:
            band = np.zeros(shape, dtype=bool)
        band[:, 0] = True
    elif dc == 1 and region.col_max == geometry.cols - 1:
        if band is None:
            band = np.zeros(shape, dtype=bool)
        band[:, cols - 1] = True
    return band


try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised on minimal installs
    _HAVE_NUMBA = False


if _HAVE_NUMBA:
    @_njit(cache=True, fastmath=False)
    def _step_kernel(sub, free, acc, involved, track_involved, drs, dcs, dists, kds,
                     tan_phi, slope_tol, r0, c0, rows, cols, open_boundary):
        """Scalar reference kernel: per cell, neighbor contributions accumulate
        in the fixed N, NE, E, SE, S, SW, W, NW order with strict IEEE floats,
        so results match the vectorized fallback bit for bit."""
        nrows, ncols = sub.shape
        n_dirs = drs.shape[0]
        max_excess = -np.inf
        for i in range(nrows):
            for j in range(ncols):
                if not free[i, j]:
                    acc[i, j] = 0.0
                    continue
                a = sub[i, j]
                total = 0.0
                for d in range(n_dirs):
                    li = i + drs[d]
                    lj = j + dcs[d]
                    if 0 <= li < nrows and 0 <= lj < ncols:
                        if not free[li, lj]:
                            continue
                        diff = a - sub[li, lj]
                        mag = diff if diff >= 0.0 else -diff
                        excess = mag / dists[d] - tan_phi
                        if excess > max_excess:
                            max_excess = excess
                        if excess > slope_tol:
                            q = kds[d] * excess
                            total += -q if diff > 0.0 else q
                            if track_involved:
                                involved[i, j] = True
                    elif open_boundary:
                        gi = r0 + li
                        gj = c0 + lj
                        if gi < 0 or gi >= rows or gj < 0 or gj >= cols:
                            mag = a if a >= 0.0 else -a
                            excess = mag / dists[d] - tan_phi
                            if excess > max_excess:
                                max_excess = excess
                            if excess > slope_tol:
                                q = kds[d] * excess
                                total += -q if a > 0.0 else q
                                if track_involved:
                                    involved[i, j] = True
                acc[i, j] = total
        max_abs = 0.0
        for i in range(nrows):
            for j in range(ncols):
                v = acc[i, j]
                if v < 0.0:
                    v = -v
                if v > max_abs:
                    max_abs = v
        return max_excess, max_abs

    _DIR_CACHE: dict = {}
    _DUMMY_INVOLVED = np.zeros((1, 1), dtype=bool)

    def _dir_arrays(connectivity, dx: float):
        key = (connectivity, dx)
        cached = _DIR_CACHE.get(key)
        if cached is None:
            offs = connectivity.offsets
            drs = np.array([o[0] for o in offs], dtype=np.int64)
            dcs = np.array([o[1] for o in offs], dtype=np.int64)
            dists = np.array([o[2] * dx for o in offs], dtype=np.float64)
            cached = (drs, dcs, dists)
            _DIR_CACHE[key] = cached
        return cached


def _compute_step(arr: np.ndarray, free: np.ndarray | None, geometry: GridGeometry,
                  soil: SoilParams, k: float, region: Region, boundary: Boundary,
                  involved: np.ndarray | None = None) -> tuple[np.ndarray, float, float]:
    """One synchronous update restricted to ``region``.

    Returns (acc, max_excess, max_dh): the signed flux sums for the region
    slice, the worst pre-step excess slope over considered pairs, and the
    largest per-cell height change the step would apply. Only pairs with
    excess above SLOPE_TOL carry flux; slopes within one part in 10⁶ of
    repose count as settled so a converged patch stays exactly inert.
    When ``involved`` (a bool array of the region's shape) is given, cells
    that participate in any flux-carrying pair are marked in it.

    Dispatches to a compiled scalar kernel when numba is available; the
    vectorized fallback below is the same arithmetic in the same order.
    """
    if _HAVE_NUMBA:
        rs, cs = region.slices
        sub = arr[rs, cs]
        free_sub = np.ones(sub.shape, dtype=bool) if free is None else free[rs, cs]
        drs, dcs, dists = _dir_arrays(soil.connectivity, geometry.dx)
        kds = k * dists
        acc = np.empty_like(sub)
        track = involved is not None
        inv = involved if track else _DUMMY_INVOLVED
        tan_phi = soil.tan_repose
        max_excess, max_abs = _step_kernel(
            sub, free_sub, acc, inv, track, drs, dcs, dists, kds,
            tan_phi, SLOPE_TOL, region.row_min, region.col_min,
            geometry.rows, geometry.cols, boundary is Boundary.OPEN)
        if max_excess == -math.inf:
            max_excess = -tan_phi
        inv_area = 1.0 / (geometry.dx * geometry.dx)
        return acc, float(max_excess), float(max_abs) * inv_area
    return _compute_step_numpy(arr, free, geometry, soil, k, region, boundary, involved)


def _compute_step_numpy(arr: np.ndarray, free: np.ndarray | None, geometry: GridGeometry,
                        soil: SoilParams, k: float, region: Region, boundary: Boundary,
                        involved: np.ndarray | None = None) -> tuple[np.ndarray, float, float]:
    rs, cs = region.slices
    sub = arr[rs, cs]
    fsub = None if free is None else free[rs, cs]
    tan_phi = soil.tan_repose
    dx = geometry.dx
    inv_area = 1.0 / (dx * dx)
    acc = np.zeros_like(sub)
    max_excess = -math.inf
    nrows, ncols = sub.shape

    for dr, dc, f in soil.connectivity.offsets:
        d = f * dx
        # Pairs whose both endpoints lie inside the region slice.
        a_rs = slice(max(0, -dr), nrows - max(0, dr))
        a_cs = slice(max(0, -dc), ncols - max(0, dc))
        if a_rs.start < a_rs.stop and a_cs.start < a_cs.stop:
            b_rs = slice(max(0, dr), nrows + min(0, dr))
            b_cs = slice(max(0, dc), ncols + min(0, dc))
            a = sub[a_rs, a_cs]
            b = sub[b_rs, b_cs]
            diff = a - b
            excess = np.abs(diff) / d - tan_phi
            if fsub is not None:
                valid = fsub[a_rs, a_cs] & fsub[b_rs, b_cs]
                if valid.any():
                    m = float(np.where(valid, excess, -np.inf).max())
                    if m > max_excess:
                        max_excess = m
                active = valid & (excess > SLOPE_TOL)
            else:
                m = float(excess.max())
                if m > max_excess:
                    max_excess = m
                active = excess > SLOPE_TOL
            q = np.where(active, (k * d) * excess, 0.0)
            acc[a_rs, a_cs] += np.where(diff > 0.0, -q, q)
            if involved is not None and active.any():
                involved[a_rs, a_cs] |= active
                involved[b_rs, b_cs] |= active

        if boundary is Boundary.OPEN:
            band = _edge_band(sub.shape, dr, dc, region, geometry)
            if band is not None:
                if fsub is not None:
                    band &= fsub
                if band.any():
                    excess = np.abs(sub) / d - tan_phi
                    m = float(np.where(band, excess, -np.inf).max())
                    if m > max_excess:
                        max_excess = m
                    active = band & (excess > SLOPE_TOL)
                    q = np.where(active, (k * d) * excess, 0.0)
                    acc += np.where(sub > 0.0, -q, q)
                    if involved is not None:
                        involved |= active

    if max_excess == -math.inf:
        max_excess = -tan_phi
    max_dh = float(np.abs(acc).max()) * inv_area if acc.size else 0.0
    return acc, max_excess, max_dh


def _check_args(h: HeightMap, mask: CellMask | None, region: Region | None) -> tuple[
        np.ndarray | None, Region]:
    if mask is not None and mask.geometry != h.geometry:
        raise ValueError("mask geometry does not match height-map geometry")
    if region is None:
        region = Region.full(h.geometry)
    else:
        region.require_within(h.geometry)
    free = None if mask is None else ~mask.occupied
    return free, region


# Cells added per side when activity reaches a region border.
_GROW = 8


def _grown_region(involved: np.ndarray, region: Region, geometry: GridGeometry) -> Region | None:
    """Region grown on the sides where a flux-carrying cell reached a border
    that is not the grid edge, or None when no growth is needed."""
    top = region.row_min > 0 and bool(involved[0, :].any())
    bottom = region.row_max < geometry.rows - 1 and bool(involved[-1, :].any())
    left = region.col_min > 0 and bool(involved[:, 0].any())
    right = region.col_max < geometry.cols - 1 and bool(involved[:, -1].any())
    if not (top or bottom or left or right):
        return None
    return Region(
        max(region.row_min - _GROW, 0) if top else region.row_min,
        min(region.row_max + _GROW, geometry.rows - 1) if bottom else region.row_max,
        max(region.col_min - _GROW, 0) if left else region.col_min,
        min(region.col_max + _GROW, geometry.cols - 1) if right else region.col_max,
    )


def _relax_adaptive(arr: np.ndarray, free: np.ndarray | None, geometry: GridGeometry,
                    soil: SoilParams, k: float, region: Region, boundary: Boundary,
                    max_iters: int, slope_tol: float = SLOPE_TOL,
                    ) -> tuple[int, bool, float, int, Region]:
    """In-place relaxation whose region grows when activity nears its border.

    Growing the region before a step is computed leaves the step's result
    bit-identical to full-grid execution, so the bounding box stays an
    optimization rather than an approximation. Returns (iterations,
    converged, final_excess, cells_touched, region); final_excess is the
    pre-step value of the last iteration when the cap was hit.
    """
    inv_area = 1.0 / (geometry.dx * geometry.dx)
    iterations = 0
    converged = False
    cells_touched = 0
    last_excess = -soil.tan_repose
    for _ in range(max_iters):
        while True:
            involved = np.zeros((region.rows, region.cols), dtype=bool)
            acc, max_excess, max_dh = _compute_step(
                arr, free, geometry, soil, k, region, boundary, involved)
            grown = _grown_region(involved, region, geometry)
            if grown is not None:
                region = grown
                continue
            break
        iterations += 1
        cells_touched += region.area
        last_excess = max_excess
        if max_excess <= slope_tol:
            converged = True
            break
        rs, cs = region.slices
        arr[rs, cs] += acc * inv_area
        if max_dh <= soil.convergence_tol:
            converged = True
            _, last_excess, _ = _compute_step(arr, free, geometry, soil, k, region, boundary)
            break
    return iterations, converged, last_excess, cells_touched, region


def relax_step(h: HeightMap, soil: SoilParams, mask: CellMask | None = None,
               region: Region | None = None, *,
               boundary: Boundary = Boundary.CLOSED) -> tuple[HeightMap, float]:
    """One synchronous relaxation step.

    Returns the updated map and the worst excess slope of the *input*
    surface over the pairs the step considered (≤ 0 means nothing moved).
    Masked cells neither emit nor receive flux; cells outside the region
    are untouched.
    """
    free, region = _check_args(h, mask, region)
    k = resolve_flow_rate(soil, h.geometry.dx)
    arr = h.mutable_copy()
    acc, max_excess, _ = _compute_step(arr, free, h.geometry, soil, k, region, boundary)
    rs, cs = region.slices
    inv_area = 1.0 / (h.geometry.dx * h.geometry.dx)
    arr[rs, cs] = arr[rs, cs] + acc * inv_area
    return HeightMap(h.geometry, arr), max_excess


def relax_to_steady(h: HeightMap, soil: SoilParams, mask: CellMask | None = None,
                    region: Region | None = None, *,
                    boundary: Boundary = Boundary.CLOSED,
                    slope_tol: float = SLOPE_TOL) -> tuple[HeightMap, RelaxReport]:
    """Repeat relax steps until the surface is at repose or the cap is hit.

    Convergence triggers on whichever comes first: the worst excess slope
    dropping to ``slope_tol`` (checked before applying a step, so an
    already-settled map costs one verification pass), or the largest
    per-cell height change of an applied step falling to
    ``soil.convergence_tol``. Non-convergence within ``max_relax_iters``
    (default 10·max(rows, cols)) is reported, not raised.
    """
    free, region = _check_args(h, mask, region)
    geometry = h.geometry
    k = resolve_flow_rate(soil, geometry.dx)
    max_iters = soil.max_relax_iters or 10 * max(geometry.rows, geometry.cols)
    inv_area = 1.0 / (geometry.dx * geometry.dx)
    rs, cs = region.slices

    arr = h.mutable_copy()
    iterations = 0
    converged = False
    last_excess = -soil.tan_repose
    for _ in range(max_iters):
        iterations += 1
        acc, max_excess, max_dh = _compute_step(arr, free, geometry, soil, k, region, boundary)
        last_excess = max_excess
        if max_excess <= slope_tol:
            converged = True
            break
        arr[rs, cs] = arr[rs, cs] + acc * inv_area
        if max_dh <= soil.convergence_tol:
            converged = True
            last_excess = math.nan  # state changed; recompute below
            break
    if math.isnan(last_excess) or not converged:
        _, last_excess, _ = _compute_step(arr, free, geometry, soil, k, region, boundary)
    report = RelaxReport(
        iterations=iterations,
        converged=converged,
        final_excess_slope=last_excess,
        cells_touched=region.area * iterations,
    )
    return HeightMap(geometry, arr), report

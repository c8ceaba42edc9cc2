"""Grid geometry, height-map storage, and soil parameter records.

Conventions used throughout the package:

* grids are row-major; row 0 is the north edge, column 0 the west edge
* continuous map coordinates put the center of cell (r, c) at
  x = (c + 0.5) * dx, y = (r + 0.5) * dx, with y increasing southward
* heights are meters; parameters given in millimeters are converted to
  meters before they reach these types
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Connectivity",
    "GridGeometry",
    "HeightMap",
    "SoilParams",
    "CellMask",
    "Region",
    "new_heightmap",
    "total_volume",
    "local_excess_slope",
]

_SQRT2 = math.sqrt(2.0)

# Neighbor offsets as (drow, dcol, distance factor), in the fixed
# N, NE, E, SE, S, SW, W, NW accumulation order. Reduction order matters:
# flux sums must be reproducible bit for bit.
_OFFSETS8 = (
    (-1, 0, 1.0),
    (-1, 1, _SQRT2),
    (0, 1, 1.0),
    (1, 1, _SQRT2),
    (1, 0, 1.0),
    (1, -1, _SQRT2),
    (0, -1, 1.0),
    (-1, -1, _SQRT2),
)
_OFFSETS4 = ((-1, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (0, -1, 1.0))

# One direction per unordered neighbor pair, for scans that must visit
# each pair exactly once.
_PAIR_OFFSETS8 = ((0, 1, 1.0), (1, 1, _SQRT2), (1, 0, 1.0), (1, -1, _SQRT2))
_PAIR_OFFSETS4 = ((0, 1, 1.0), (1, 0, 1.0))


class Connectivity(Enum):
    """Neighborhood used by the relaxation: orthogonal only, or with diagonals."""

    FOUR = "four"
    EIGHT = "eight"

    @property
    def offsets(self) -> tuple[tuple[int, int, float], ...]:
        return _OFFSETS4 if self is Connectivity.FOUR else _OFFSETS8

    @property
    def pair_offsets(self) -> tuple[tuple[int, int, float], ...]:
        return _PAIR_OFFSETS4 if self is Connectivity.FOUR else _PAIR_OFFSETS8


@dataclass(frozen=True)
class GridGeometry:
    """Shape and cell size of a height-map grid.

    ``dx`` is the edge length of a square cell in meters; cell area is dx².
    """

    rows: int
    cols: int
    dx: float

    def __post_init__(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")
        if not (isinstance(self.dx, (int, float)) and math.isfinite(self.dx) and self.dx > 0):
            raise ValueError(f"dx must be positive and finite, got {self.dx!r}")
        object.__setattr__(self, "dx", float(self.dx))

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @property
    def cell_count(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> tuple[float, float]:
        """(width, height) of the map in meters: cols*dx by rows*dx."""
        return (self.cols * self.dx, self.rows * self.dx)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return ((col + 0.5) * self.dx, (row + 0.5) * self.dx)

    def cell_at(self, x: float, y: float) -> tuple[int, int]:
        """Cell containing map point (x, y), clamped to the grid."""
        col = min(max(int(math.floor(x / self.dx)), 0), self.cols - 1)
        row = min(max(int(math.floor(y / self.dx)), 0), self.rows - 1)
        return (row, col)

    def contains_point(self, x: float, y: float) -> bool:
        w, h = self.extent
        return 0.0 <= x <= w and 0.0 <= y <= h


class HeightMap:
    """Immutable row-major grid of surface heights (meters).

    The underlying array is read-only; operations return new maps.
    """

    __slots__ = ("geometry", "heights")

    def __init__(self, geometry: GridGeometry, heights) -> None:
        arr = np.array(heights, dtype=np.float64, order="C", copy=True)
        if arr.shape == (geometry.cell_count,):
            arr = arr.reshape(geometry.rows, geometry.cols)
        if arr.shape != (geometry.rows, geometry.cols):
            raise ValueError(
                f"heights shape {arr.shape} does not match geometry "
                f"{geometry.rows}x{geometry.cols}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("heights must all be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "heights", arr)

    def __setattr__(self, name, value):
        raise AttributeError("HeightMap is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeightMap):
            return NotImplemented
        return self.geometry == other.geometry and bool(
            np.array_equal(self.heights, other.heights)
        )

    def __repr__(self) -> str:
        g = self.geometry
        return f"HeightMap({g.rows}x{g.cols}, dx={g.dx}, mean={self.heights.mean():.6g})"

    def with_heights(self, heights) -> "HeightMap":
        return HeightMap(self.geometry, heights)

    def mutable_copy(self) -> np.ndarray:
        return np.array(self.heights, dtype=np.float64, order="C", copy=True)


@dataclass(frozen=True)
class SoilParams:
    """Granular material parameters governing the relaxation.

    ``flow_rate`` is the per-step flux coefficient k; leave it ``None`` to
    use the stability-derived optimum for the connectivity and grid size.
    ``cohesion`` is carried for completeness of the material record but the
    dry-sand relaxation law does not use it.
    """

    repose_angle_deg: float
    cohesion: float = 0.0
    connectivity: Connectivity = Connectivity.EIGHT
    flow_rate: float | None = None
    convergence_tol: float = 1e-9
    max_relax_iters: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.repose_angle_deg < 90.0:
            raise ValueError(f"repose angle must be in (0, 90) degrees, got {self.repose_angle_deg}")
        if self.cohesion < 0.0:
            raise ValueError("cohesion cannot be negative")
        if not isinstance(self.connectivity, Connectivity):
            object.__setattr__(self, "connectivity", Connectivity(self.connectivity))
        if self.flow_rate is not None and not self.flow_rate > 0.0:
            raise ValueError(f"flow_rate must be positive, got {self.flow_rate}")
        if not self.convergence_tol > 0.0:
            raise ValueError("convergence_tol must be positive")
        if self.max_relax_iters is not None and self.max_relax_iters < 1:
            raise ValueError("max_relax_iters must be at least 1")

    @property
    def tan_repose(self) -> float:
        return math.tan(math.radians(self.repose_angle_deg))


class CellMask:
    """Boolean per-cell occupancy; True marks cells a tool occupies.

    Sand neither flows into nor out of occupied cells.
    """

    __slots__ = ("geometry", "occupied")

    def __init__(self, geometry: GridGeometry, occupied=None) -> None:
        if occupied is None:
            arr = np.zeros((geometry.rows, geometry.cols), dtype=bool)
        else:
            arr = np.array(occupied, dtype=bool, copy=True)
            if arr.shape == (geometry.cell_count,):
                arr = arr.reshape(geometry.rows, geometry.cols)
            if arr.shape != (geometry.rows, geometry.cols):
                raise ValueError(
                    f"mask shape {arr.shape} does not match geometry "
                    f"{geometry.rows}x{geometry.cols}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "occupied", arr)

    def __setattr__(self, name, value):
        raise AttributeError("CellMask is immutable")

    @classmethod
    def none(cls, geometry: GridGeometry) -> "CellMask":
        return cls(geometry)

    @classmethod
    def from_cells(cls, geometry: GridGeometry, cells) -> "CellMask":
        arr = np.zeros((geometry.rows, geometry.cols), dtype=bool)
        for r, c in cells:
            arr[r, c] = True
        return cls(geometry, arr)

    @property
    def count(self) -> int:
        return int(self.occupied.sum())


@dataclass(frozen=True)
class Region:
    """Inclusive axis-aligned cell-index rectangle."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self) -> None:
        if self.row_min < 0 or self.col_min < 0:
            raise ValueError(f"region indices cannot be negative: {self}")
        if self.row_max < self.row_min or self.col_max < self.col_min:
            raise ValueError(f"region is empty: {self}")

    @classmethod
    def full(cls, geometry: GridGeometry) -> "Region":
        return cls(0, geometry.rows - 1, 0, geometry.cols - 1)

    @property
    def rows(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def cols(self) -> int:
        return self.col_max - self.col_min + 1

    @property
    def area(self) -> int:
        return self.rows * self.cols

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.row_min, self.row_max + 1), slice(self.col_min, self.col_max + 1))

    def within(self, geometry: GridGeometry) -> bool:
        return self.row_max < geometry.rows and self.col_max < geometry.cols

    def require_within(self, geometry: GridGeometry) -> None:
        if not self.within(geometry):
            raise ValueError(
                f"region {self} exceeds grid {geometry.rows}x{geometry.cols}"
            )

    def dilated(self, margin: int, geometry: GridGeometry) -> "Region":
        """Grow by ``margin`` cells on every side, clamped to the grid."""
        if margin < 0:
            raise ValueError("margin cannot be negative")
        return Region(
            max(self.row_min - margin, 0),
            min(self.row_max + margin, geometry.rows - 1),
            max(self.col_min - margin, 0),
            min(self.col_max + margin, geometry.cols - 1),
        )

    def union(self, other: "Region") -> "Region":
        return Region(
            min(self.row_min, other.row_min),
            max(self.row_max, other.row_max),
            min(self.col_min, other.col_min),
            max(self.col_max, other.col_max),
        )

    def contains_cell(self, row: int, col: int) -> bool:
        return self.row_min <= row <= self.row_max and self.col_min <= col <= self.col_max


def new_heightmap(geometry: GridGeometry, fill: float) -> HeightMap:
    """Level surface at height ``fill``."""
    if not math.isfinite(fill):
        raise ValueError(f"fill must be finite, got {fill!r}")
    return HeightMap(geometry, np.full((geometry.rows, geometry.cols), float(fill)))


def total_volume(h: HeightMap) -> float:
    """Σ heights × dx². Negative heights count as negative volume."""
    return float(h.heights.sum() * h.geometry.cell_area)


def local_excess_slope(h: HeightMap, soil: SoilParams, mask: CellMask | None = None) -> float:
    """Worst repose violation over all unmasked neighbor pairs.

    Returns max(|Δh| / distance − tan(φ)); at or below 0 everywhere means
    the surface is at repose. A map with no unmasked pair reports −tan(φ),
    the same value a flat surface would.
    """
    if mask is not None and mask.geometry != h.geometry:
        raise ValueError("mask geometry does not match height-map geometry")
    arr = h.heights
    free = None if mask is None else ~mask.occupied
    tan_phi = soil.tan_repose
    dx = h.geometry.dx
    best = -math.inf
    for dr, dc, f in soil.connectivity.pair_offsets:
        a_rs = slice(max(0, -dr), arr.shape[0] - max(0, dr))
        a_cs = slice(max(0, -dc), arr.shape[1] - max(0, dc))
        b_rs = slice(max(0, dr), arr.shape[0] + min(0, dr))
        b_cs = slice(max(0, dc), arr.shape[1] + min(0, dc))
        diff = np.abs(arr[a_rs, a_cs] - arr[b_rs, b_cs])
        excess = diff / (f * dx) - tan_phi
        if free is not None:
            valid = free[a_rs, a_cs] & free[b_rs, b_cs]
            if not valid.any():
                continue
            m = float(np.where(valid, excess, -np.inf).max())
        else:
            m = float(excess.max())
        if m > best:
            best = m
    return best if best > -math.inf else -tan_phi

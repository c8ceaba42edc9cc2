"""Wheel-trenching experiment harness: tow a wheel footprint at fixed sinkage
and slip angle, extract trench cross-sections, and score simulated profiles
against references.

The wheel-soil contact patch is simplified to its chord rectangle: the chord
of the wheel circle at the given sinkage (capped at the diameter) by the
wheel width, rotated by the slip angle relative to the travel direction.
The tow is quasi-static; speed is recorded but unused. Grousers are carried
on the parameter record for completeness but not simulated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GridGeometry, HeightMap, SoilParams, new_heightmap, total_volume
from .erosion import Boundary
from .tool import BladeParams, StrokeStats, sweep_rigid_tool

__all__ = [
    "WheelParams",
    "TowRun",
    "Profile",
    "ProfileErrors",
    "chord_length",
    "tow_wheel",
    "cross_section",
    "profile_errors",
    "read_profile_csv",
    "write_profile_csv",
    "SweepRun",
    "sweep",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class WheelParams:
    """Wheel geometry in meters; grouser fields are informational only."""

    radius: float
    width: float
    grouser_height: float = 0.0
    grouser_fraction: float = 0.0

    def __post_init__(self) -> None:
        if not self.radius > 0 or not self.width > 0:
            raise ValueError("wheel radius and width must be positive")


@dataclass(frozen=True)
class TowRun:
    """One tow: fixed sinkage, slip angle in degrees, straight path, and an
    informational towing speed (the simulation is quasi-static)."""

    sinkage: float
    slip_angle_deg: float
    start: tuple[float, float]
    end: tuple[float, float]
    speed: float = 0.03

    def __post_init__(self) -> None:
        if not self.sinkage > 0:
            raise ValueError("sinkage must be positive")
        if not 0.0 <= self.slip_angle_deg <= 90.0:
            raise ValueError("slip angle must lie in [0, 90] degrees")


@dataclass(frozen=True)
class Profile:
    """A 2D surface section: lateral stations and their heights, in meters."""

    stations: tuple[float, ...]
    heights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.stations) != len(self.heights):
            raise ValueError("stations and heights lengths differ")
        if any(b <= a for a, b in zip(self.stations, self.stations[1:])):
            raise ValueError("stations must be strictly increasing")


@dataclass(frozen=True)
class ProfileErrors:
    """Trench-profile comparison statistics, all in millimeters."""

    avg_error: float
    median_error: float
    depth_error: float


def chord_length(wheel: WheelParams, sinkage: float) -> float:
    """Chord of the wheel circle at the given sinkage, capped at the diameter."""
    if sinkage >= wheel.radius:
        return 2.0 * wheel.radius
    return 2.0 * math.sqrt(2.0 * wheel.radius * sinkage - sinkage * sinkage)


def tow_wheel(h: HeightMap, wheel: WheelParams, run: TowRun, soil: SoilParams, *,
              boundary: Boundary = Boundary.CLOSED, use_bounds: bool = True,
              surface_level: float | None = None) -> tuple[HeightMap, StrokeStats]:
    """Sweep the chord-rectangle footprint along the tow path at bottom height
    surface − sinkage, then settle to repose."""
    if surface_level is None:
        surface_level = float(np.median(h.heights))
    chord = chord_length(wheel, run.sinkage)
    blade = BladeParams(width=wheel.width, thickness=chord, depth=run.sinkage)
    travel = math.atan2(run.end[1] - run.start[1], run.end[0] - run.start[0])
    pose_heading = travel + math.radians(run.slip_angle_deg)
    bottom = surface_level - run.sinkage
    return sweep_rigid_tool(h, run.start, run.end, blade, pose_heading, bottom, soil,
                            boundary=boundary, use_bounds=use_bounds)


def cross_section(h: HeightMap, station: float, travel_axis: str = "x") -> Profile:
    """One row or column of heights perpendicular to the travel direction.

    ``station`` is the distance along the travel axis in meters;
    ``travel_axis`` is "x" (tow along columns) or "y" (along rows).
    """
    g = h.geometry
    if travel_axis == "x":
        limit = g.cols * g.dx
        if not 0.0 <= station <= limit:
            raise ValueError(f"station {station} outside [0, {limit}]")
        col = min(int(station / g.dx), g.cols - 1)
        heights = h.heights[:, col]
        stations = (np.arange(g.rows) + 0.5) * g.dx
    elif travel_axis == "y":
        limit = g.rows * g.dx
        if not 0.0 <= station <= limit:
            raise ValueError(f"station {station} outside [0, {limit}]")
        row = min(int(station / g.dx), g.rows - 1)
        heights = h.heights[row, :]
        stations = (np.arange(g.cols) + 0.5) * g.dx
    else:
        raise ValueError("travel_axis must be 'x' or 'y'")
    return Profile(tuple(float(s) for s in stations), tuple(float(v) for v in heights))


def profile_errors(simulated: Profile, reference: Profile) -> ProfileErrors:
    """Average, median and depth error in millimeters over the overlapping
    station range, with the reference linearly resampled to the simulated
    stations."""
    ref_s = np.asarray(reference.stations)
    ref_h = np.asarray(reference.heights)
    sim_s = np.asarray(simulated.stations)
    sim_h = np.asarray(simulated.heights)
    inside = (sim_s >= ref_s[0]) & (sim_s <= ref_s[-1])
    if not inside.any():
        raise ValueError("profiles have no overlapping station range")
    sim_s, sim_h = sim_s[inside], sim_h[inside]
    ref_resampled = np.interp(sim_s, ref_s, ref_h)
    diff = np.abs(sim_h - ref_resampled) * 1000.0
    depth_err = abs(float(sim_h.min()) - float(ref_resampled.min())) * 1000.0
    return ProfileErrors(
        avg_error=float(diff.mean()),
        median_error=float(np.median(diff)),
        depth_error=depth_err,
    )


def read_profile_csv(path) -> Profile:
    """Two-column reference profile CSV: station_mm, height_mm (no header,
    or a header line that fails to parse as numbers and is skipped)."""
    stations, heights = [], []
    with open(path, newline="", encoding="ascii") as f:
        for row in csv.reader(f):
            if len(row) < 2:
                continue
            try:
                s, v = float(row[0]), float(row[1])
            except ValueError:
                continue
            stations.append(s / 1000.0)
            heights.append(v / 1000.0)
    if not stations:
        raise ValueError(f"{path}: no profile samples")
    return Profile(tuple(stations), tuple(heights))


def write_profile_csv(profile: Profile, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        for s, v in zip(profile.stations, profile.heights):
            writer.writerow([repr(s * 1000.0), repr(v * 1000.0)])


@dataclass(frozen=True)
class SweepRun:
    """Result record of one tow in a sweep."""

    slip_angle_deg: float
    sinkage: float
    final: HeightMap
    stats: StrokeStats
    excavated_volume: float
    berm_volume: float
    volume_error_rel: float
    trench_depth: float
    profiles: tuple[Profile, ...]
    station_rms_mm: float
    converged: bool
    errors: ProfileErrors | None = None

    def row(self) -> dict:
        out = {
            "beta_deg": self.slip_angle_deg,
            "sinkage_mm": self.sinkage * 1000.0,
            "trench_depth_mm": self.trench_depth * 1000.0,
            "excavated_mm3": self.excavated_volume * 1e9,
            "berm_mm3": self.berm_volume * 1e9,
            "volume_error_rel": self.volume_error_rel,
            "station_rms_mm": self.station_rms_mm,
            "relax_iterations": self.stats.final_report.iterations,
            "converged": self.converged,
        }
        if self.errors is not None:
            out.update({
                "avg_error_mm": self.errors.avg_error,
                "median_error_mm": self.errors.median_error,
                "depth_error_mm": self.errors.depth_error,
            })
        return out


def _station_positions(run: TowRun, count: int) -> list[float]:
    """Stations along the travel axis in the steady mid-path region.

    Kept within the central 5% of the path: the piles left at the tow ends
    relax into long shallow ridges whose along-trench gradient breaks
    translational invariance further out.
    """
    x0, x1 = run.start[0], run.end[0]
    return [x0 + (x1 - x0) * f for f in np.linspace(0.475, 0.525, count)]


def sweep(geometry: GridGeometry, fill: float, wheel: WheelParams, soil: SoilParams,
          sinkages: list[float], slip_angles_deg: list[float], *,
          path: tuple[tuple[float, float], tuple[float, float]] | None = None,
          stations: int = 3, boundary: Boundary = Boundary.CLOSED,
          use_bounds: bool = True,
          references: dict[tuple[float, float], Profile] | None = None) -> list[SweepRun]:
    """Tow once per (slip angle × sinkage) combination on a fresh level map.

    Each run records excavated versus berm volume, trench depth, mid-path
    cross-sections with their pairwise RMS spread, and, when a reference
    profile is supplied for the (beta, sinkage) pair, Table-style error
    statistics in millimeters.
    """
    if path is None:
        w, hgt = geometry.extent
        path = ((0.125 * w, 0.5 * hgt), (0.875 * w, 0.5 * hgt))
    runs: list[SweepRun] = []
    for beta in slip_angles_deg:
        for h0 in sinkages:
            run = TowRun(sinkage=h0, slip_angle_deg=beta, start=path[0], end=path[1])
            initial = new_heightmap(geometry, fill)
            final, stats = tow_wheel(initial, wheel, run, soil, boundary=boundary,
                                     use_bounds=use_bounds, surface_level=fill)
            area = geometry.cell_area
            below = fill - final.heights
            excavated = float(below[below > 0].sum() * area) if (below > 0).any() else 0.0
            above = final.heights - fill
            berm = float(above[above > 0].sum() * area) if (above > 0).any() else 0.0
            v_err = abs(total_volume(final) - total_volume(initial)) / abs(total_volume(initial))
            depth = float(max(fill - final.heights.min(), 0.0))
            profs = tuple(cross_section(final, s) for s in _station_positions(run, stations))
            hs = np.array([p.heights for p in profs])
            rms = 0.0
            for i in range(len(profs)):
                for j in range(i + 1, len(profs)):
                    rms = max(rms, math.sqrt(float(((hs[i] - hs[j]) ** 2).mean())))
            errors = None
            if references and (beta, h0) in references:
                errors = profile_errors(profs[len(profs) // 2], references[(beta, h0)])
            runs.append(SweepRun(
                slip_angle_deg=beta, sinkage=h0, final=final, stats=stats,
                excavated_volume=excavated, berm_volume=berm, volume_error_rel=v_err,
                trench_depth=depth, profiles=profs, station_rms_mm=rms * 1000.0,
                converged=stats.final_report.converged, errors=errors))
    return runs


def write_sweep_csv(runs: list[SweepRun], path) -> None:
    """Summary table grouped the way the validation campaign reports it:
    one row per run plus per-factor aggregate rows."""
    if not runs:
        Path(path).write_text("", encoding="ascii")
        return
    fields = list(runs[0].row().keys())
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.DictWriter(f, fieldnames=["trench_type"] + fields)
        writer.writeheader()
        for r in runs:
            writer.writerow({"trench_type": f"beta={r.slip_angle_deg} h0={r.sinkage * 1000:g}mm",
                             **r.row()})
        for beta in sorted({r.slip_angle_deg for r in runs}):
            group = [r for r in runs if r.slip_angle_deg == beta]
            writer.writerow(_aggregate_row(f"beta={beta}", group, fields))
        for h0 in sorted({r.sinkage for r in runs}):
            group = [r for r in runs if r.sinkage == h0]
            writer.writerow(_aggregate_row(f"h0={h0 * 1000:g}mm", group, fields))


def _aggregate_row(label: str, group: list[SweepRun], fields: list[str]) -> dict:
    row = {"trench_type": label}
    table = [r.row() for r in group]
    for name in fields:
        values = [t[name] for t in table if isinstance(t.get(name), (int, float))
                  and not isinstance(t.get(name), bool)]
        row[name] = sum(values) / len(values) if values else ""
    return row

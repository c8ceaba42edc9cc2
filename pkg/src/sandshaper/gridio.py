"""Text file formats for height-maps: HMAP (round-trip), CSV and PGM exports.

HMAP v1 layout::

    HMAP 1
    <rows> <cols> <dx>
    <cols space-separated heights>   (one line per row)

Heights are written with shortest round-trip precision, so a write/read
cycle reproduces the map bit for bit.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import GridGeometry, HeightMap

__all__ = ["HMapFormatError", "read_heightmap", "write_heightmap", "write_csv", "write_pgm"]

_MAGIC = "HMAP 1"


class HMapFormatError(ValueError):
    """Malformed HMAP content: bad header, wrong cell count, or non-finite value."""


def write_heightmap(h: HeightMap, path: str | os.PathLike) -> None:
    g = h.geometry
    lines = [_MAGIC, f"{g.rows} {g.cols} {g.dx!r}"]
    for row in h.heights:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_heightmap(path: str | os.PathLike) -> HeightMap:
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise HMapFormatError(f"{path}: missing 'HMAP 1' header")
    if len(lines) < 2:
        raise HMapFormatError(f"{path}: truncated file, no dimension line")
    dims = lines[1].split()
    if len(dims) != 3:
        raise HMapFormatError(f"{path}: dimension line must be '<rows> <cols> <dx>'")
    try:
        rows, cols = int(dims[0]), int(dims[1])
        dx = float(dims[2])
    except ValueError as exc:
        raise HMapFormatError(f"{path}: bad dimension line: {exc}") from exc
    try:
        geometry = GridGeometry(rows, cols, dx)
    except ValueError as exc:
        raise HMapFormatError(f"{path}: {exc}") from exc
    tokens = " ".join(lines[2:]).split()
    if len(tokens) != rows * cols:
        raise HMapFormatError(
            f"{path}: header promises {rows * cols} heights, body has {len(tokens)}"
        )
    try:
        values = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise HMapFormatError(f"{path}: non-numeric height value: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise HMapFormatError(f"{path}: non-finite height value in body")
    return HeightMap(geometry, values.reshape(rows, cols))


def write_csv(h: HeightMap, path: str | os.PathLike) -> None:
    """Comma-separated heights, no header; same body layout as HMAP."""
    lines = [",".join(repr(float(v)) for v in row) for row in h.heights]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_pgm(h: HeightMap, path: str | os.PathLike) -> None:
    """P2 grayscale image, heights scaled linearly to 0..255 over [min, max].

    A constant map renders as all zeros.
    """
    arr = h.heights
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        scaled = np.rint((arr - lo) / (hi - lo) * 255.0).astype(int)
    else:
        scaled = np.zeros(arr.shape, dtype=int)
    g = h.geometry
    lines = ["P2", f"{g.cols} {g.rows}", "255"]
    for row in scaled:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

"""Figure rendering for report outputs: height-map images, trench
cross-sections, and benchmark charts, written as PNG files next to the
delimited data they illustrate."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .core import HeightMap  # noqa: E402

__all__ = [
    "save_heightmap_png",
    "save_profiles_png",
    "save_flow_rate_png",
    "save_alpha_sweep_png",
    "save_bench_cells_png",
]


def save_heightmap_png(h: HeightMap, path, title: str | None = None) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    extent = (0.0, h.geometry.cols * h.geometry.dx, h.geometry.rows * h.geometry.dx, 0.0)
    im = ax.imshow(h.heights, cmap="terrain", extent=extent, interpolation="nearest")
    fig.colorbar(im, ax=ax, label="height [m]")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_profiles_png(profiles: dict, path, title: str | None = None,
                      units_mm: bool = False) -> Path:
    """Overlay labelled cross-section profiles."""
    path = Path(path)
    scale = 1000.0 if units_mm else 1.0
    unit = "mm" if units_mm else "m"
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, profile in profiles.items():
        ax.plot([s * scale for s in profile.stations],
                [v * scale for v in profile.heights], label=str(label), lw=1.2)
    ax.set_xlabel(f"station [{unit}]")
    ax.set_ylabel(f"height [{unit}]")
    if title:
        ax.set_title(title)
    if len(profiles) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_flow_rate_png(rows: list[dict], path) -> Path:
    """Convergence iterations against the flow-rate multiplier."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    xs = [r["k_multiplier"] for r in rows]
    ys = [r["iterations"] for r in rows]
    ok = [r["converged"] for r in rows]
    ax.plot(xs, ys, "-o", color="tab:blue")
    for x, y, conv in zip(xs, ys, ok):
        if not conv:
            ax.plot([x], [y], "x", color="tab:red", markersize=10)
    ax.set_xlabel("k / k_optimal")
    ax.set_ylabel("iterations to steady state")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_alpha_sweep_png(rows: list[dict], path) -> Path:
    """Nodes opened per heuristic weight, one line per goal shape."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    shapes = sorted({r["shape"] for r in rows})
    for shape in shapes:
        pts = sorted((r["alpha"], r["nodes_opened"]) for r in rows if r["shape"] == shape)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "-o", label=shape)
    ax.set_xlabel("alpha")
    ax.set_ylabel("nodes opened")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_bench_cells_png(cases: list[dict], path) -> Path:
    """Bounded versus full-grid cell updates per bench case."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    names = [c["name"] for c in cases]
    xs = range(len(names))
    ax.bar([x - 0.2 for x in xs], [c["cells_touched_bounded"] for c in cases],
           width=0.4, label="bounded")
    ax.bar([x + 0.2 for x in xs], [c["cells_touched_full"] for c in cases],
           width=0.4, label="full grid")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, fontsize=8)
    ax.set_ylabel("cell updates")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path

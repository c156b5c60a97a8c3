"""Mission output artifacts: map/trajectory images, CSVs, report JSON, figures.

The delimited outputs (report.json, map.pgm, disease.csv, frontier/particle
CSVs) are byte-deterministic for a given run. Matplotlib figures are rendered
alongside them on every report write and can be regenerated later from the
logged data alone (`fieldnav replay`).
"""

from __future__ import annotations

import json
import math
from pathlib import Path as FsPath

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import cropsense, mapping  # noqa: E402

# RGB palette for rendered maps
RGB_FREE = (254, 254, 254)
RGB_UNKNOWN = (205, 205, 205)
RGB_OCCUPIED = (0, 0, 0)
RGB_PATH = (0, 200, 0)
RGB_START = (30, 90, 255)
RGB_GOAL = (230, 40, 230)
CLASS_RGB = {"brown": (170, 70, 20), "yellow": (235, 200, 30),
             "healthy": (60, 170, 60), "unresolved": (150, 60, 150)}


def write_pgm(grid: mapping.OccupancyGrid, path: FsPath) -> None:
    path.write_bytes(mapping.grid_to_pgm_bytes(grid))
    path.with_suffix(".meta").write_text(mapping.grid_metadata_text(grid))


def _grid_rgb(grid: mapping.OccupancyGrid) -> np.ndarray:
    img = np.empty((grid.height, grid.width, 3), dtype=np.uint8)
    img[:] = RGB_UNKNOWN
    img[grid.free_mask()] = RGB_FREE
    img[grid.occupied_mask()] = RGB_OCCUPIED
    return img


def _draw_segment(img: np.ndarray, x0: int, y0: int, x1: int, y1: int,
                  color: tuple[int, int, int]) -> None:
    n = max(abs(x1 - x0), abs(y1 - y0))
    h, w = img.shape[:2]
    for k in range(n + 1):
        t = k / n if n else 0.0
        x = int(math.floor(x0 + (x1 - x0) * t + 0.5))
        y = int(math.floor(y0 + (y1 - y0) * t + 0.5))
        if 0 <= x < w and 0 <= y < h:
            img[y, x] = color


def _stamp(img: np.ndarray, x: int, y: int, color, size: int = 2) -> None:
    h, w = img.shape[:2]
    for dy in range(-size, size + 1):
        for dx in range(-size, size + 1):
            if 0 <= x + dx < w and 0 <= y + dy < h:
                img[y + dy, x + dx] = color


def render_trajectory_ppm(grid: mapping.OccupancyGrid,
                          trajectory: list[tuple[float, float]],
                          disease_cells: list[tuple[int, int, str]],
                          scale: int = 3) -> bytes:
    """P6 image: map with fused disease cells and the flown path overlaid."""
    base = _grid_rgb(grid)
    img = np.repeat(np.repeat(base, scale, axis=0), scale, axis=1)
    for cx, cy, cls in disease_cells:
        color = CLASS_RGB.get(cls)
        if color is None:
            continue
        img[cy * scale:(cy + 1) * scale, cx * scale:(cx + 1) * scale] = color

    def to_px(p):
        cx = (p[0] - grid.origin[0]) / grid.resolution * scale
        cy = (p[1] - grid.origin[1]) / grid.resolution * scale
        return int(cx), int(cy)

    pts = [to_px(p) for p in trajectory]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        _draw_segment(img, x0, y0, x1, y1, RGB_PATH)
    if pts:
        _stamp(img, *pts[0], RGB_START)
        _stamp(img, *pts[-1], RGB_GOAL)
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img[::-1].tobytes()


def _fused_disease_cells(dmap: cropsense.DiseaseMap) -> list[tuple[int, int, str]]:
    labels = dmap.fused_labels()
    ys, xs = np.nonzero(labels != -2)
    return [(int(x), int(y), cropsense.CLASS_NAMES[int(labels[y, x])])
            for y, x in sorted(zip(ys.tolist(), xs.tolist()))]


# --- matplotlib figures --------------------------------------------------------

def render_overview_png(grid: mapping.OccupancyGrid, trajectory,
                        disease_cells, path: FsPath, title: str) -> None:
    ox, oy = grid.origin
    extent = (ox, ox + grid.width * grid.resolution,
              oy, oy + grid.height * grid.resolution)
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(_grid_rgb(grid), origin="lower", extent=extent,
              interpolation="nearest")
    drawn = set()
    for cx, cy, cls in disease_cells:
        color = np.array(CLASS_RGB.get(cls, (0, 0, 0))) / 255.0
        label = cls if cls not in drawn else None
        drawn.add(cls)
        ax.plot(ox + (cx + 0.5) * grid.resolution,
                oy + (cy + 0.5) * grid.resolution,
                marker="s", ms=2.0, ls="", color=color, label=label)
    if trajectory:
        xs = [p[0] for p in trajectory]
        ys = [p[1] for p in trajectory]
        ax.plot(xs, ys, color="tab:green", lw=1.2, label="trajectory")
        ax.plot(xs[0], ys[0], "o", color="tab:blue", ms=6, label="start")
        ax.plot(xs[-1], ys[-1], "*", color="m", ms=10, label="end")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7, framealpha=0.9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_coverage_png(curves: dict, total_cells: int, path: FsPath) -> None:
    rows = curves.get("coverage", [])
    fig, ax1 = plt.subplots(figsize=(7, 4))
    if rows:
        t = [r[0] for r in rows]
        unknown_pct = [100.0 * r[1] / total_cells for r in rows]
        crop_cov = [100.0 * r[2] for r in rows]
        ax1.plot(t, unknown_pct, color="tab:gray", label="unknown cells")
        ax1.set_ylabel("unknown cells [%]", color="tab:gray")
        ax2 = ax1.twinx()
        ax2.plot(t, crop_cov, color="tab:green", label="crop coverage")
        ax2.set_ylabel("crop coverage [%]", color="tab:green")
        ax2.set_ylim(-2, 102)
    ax1.set_xlabel("tick")
    ax1.set_title("exploration and survey progress")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_altitude_png(curves: dict, setpoint: float, path: FsPath) -> None:
    rows = curves.get("altitude", [])
    fig, ax = plt.subplots(figsize=(7, 3))
    if rows:
        ax.plot([r[0] for r in rows], [r[1] for r in rows], label="z")
    ax.axhline(setpoint, color="tab:red", ls="--", lw=0.8, label="setpoint")
    ax.set_xlabel("tick")
    ax.set_ylabel("altitude [m]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


# --- top-level writers ----------------------------------------------------------

def write_mission_artifacts(report, runner, out_dir) -> list[str]:
    """Write every mission output into out_dir; returns artifact names."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names: list[str] = []

    grid = mapping.best_map(runner.slam.particles)
    write_pgm(grid, out / "map.pgm")
    names += ["map.pgm", "map.meta"]

    disease_lines = cropsense.disease_csv_lines(runner.dmap, runner.world)
    (out / "disease.csv").write_text("\n".join(disease_lines) + "\n")
    names.append("disease.csv")

    for n, rows in runner.explore.snapshots:
        name = f"frontiers_{n}.csv"
        (out / name).write_text("cluster_id,cell_x,cell_y\n"
                                + "\n".join(rows) + ("\n" if rows else ""))
        names.append(name)
    for n, rows in runner.slam.particle_dumps:
        name = f"particles_{n}.csv"
        (out / name).write_text("step,x,y,yaw,weight\n" + "\n".join(rows) + "\n")
        names.append(name)

    disease_cells = _fused_disease_cells(runner.dmap)
    ppm = render_trajectory_ppm(grid, runner.trajectory, disease_cells)
    (out / "trajectory.ppm").write_bytes(ppm)
    names.append("trajectory.ppm")

    render_overview_png(grid, runner.trajectory, disease_cells,
                        out / "overview.png",
                        f"mission overview (seed {report.seed})")
    render_coverage_png(report.curves, grid.width * grid.height,
                        out / "coverage.png")
    render_altitude_png(report.curves, runner.cfg.altitude_setpoint,
                        out / "altitude.png")
    names += ["overview.png", "coverage.png", "altitude.png"]

    report.artifacts = sorted(names) + ["report.json"]
    (out / "report.json").write_text(report.to_json())
    return report.artifacts


def write_timing(out_dir, wall_seconds: float, phase_walls: dict) -> None:
    """Wall-clock timing sidecar; deliberately outside report.json so the
    report stays byte-identical across runs."""
    payload = {"wall_seconds": round(wall_seconds, 3),
               "phases": {k: round(v, 3) for k, v in phase_walls.items()}}
    (FsPath(out_dir) / "timing.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _parse_disease_csv(text: str) -> list[tuple[int, int, str]]:
    cells = []
    for line in text.splitlines()[1:]:
        parts = line.split(",")
        if len(parts) < 6 or parts[5] == "none":
            continue
        cells.append((int(parts[0]), int(parts[1]), parts[5]))
    return cells


def replay(report_path, out_dir=None) -> list[str]:
    """Re-render the trajectory image and figures from logged artifacts."""
    rp = FsPath(report_path)
    src = rp.parent
    out = FsPath(out_dir) if out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    report = json.loads(rp.read_text())
    grid = mapping.pgm_to_grid((src / "map.pgm").read_bytes(),
                               (src / "map.meta").read_text())
    disease_csv = src / "disease.csv"
    cells = _parse_disease_csv(disease_csv.read_text()) if disease_csv.exists() else []
    trajectory = [tuple(p) for p in report.get("trajectory", [])]

    (out / "trajectory.ppm").write_bytes(
        render_trajectory_ppm(grid, trajectory, cells))
    render_overview_png(grid, trajectory, cells, out / "overview.png",
                        f"mission overview (replay, seed {report.get('seed')})")
    render_coverage_png(report.get("curves", {}), grid.width * grid.height,
                        out / "coverage.png")
    render_altitude_png(report.get("curves", {}),
                        report.get("pid", {}).get("setpoint", 0.0),
                        out / "altitude.png")
    return ["trajectory.ppm", "overview.png", "coverage.png", "altitude.png"]

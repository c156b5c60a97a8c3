"""Command-line interface.

    fieldnav run    --world f.world --config mission.cfg --seed 7 --out out/
    fieldnav plan   --map out/map.pgm --start 2,2 --goal 30,35
    fieldnav replay --report out/report.json [--out dir]

Exit codes: 0 success, 1 planning failure, 2 tick budget exhausted,
3 SLAM degeneracy, 4 input error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import artifacts, mapping, planning
from .config import Config, ConfigError, config_hash, parse_config
from .mission import EXIT_INPUT, MissionRunner
from .simworld import WorldFormatError, load_world


class InputError(Exception):
    pass


def _load_world_file(path: str):
    p = Path(path)
    if not p.exists():
        raise InputError(f"world file not found: {path}")
    try:
        return load_world(p.read_text())
    except WorldFormatError as e:
        raise InputError(f"bad world file {path}: {e}") from e


def _load_config_file(path: str | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {path}")
    try:
        return parse_config(p.read_text())
    except ConfigError as e:
        raise InputError(f"bad config {path}: {e}") from e


def _parse_xy(raw: str, name: str) -> tuple[float, float]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise InputError(f"--{name} must be 'x,y', got {raw!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise InputError(f"--{name} has non-numeric values: {raw!r}") from None


def cmd_run(args) -> int:
    world = _load_world_file(args.world)
    cfg = _load_config_file(args.config)
    runner = MissionRunner(world, cfg, args.seed)
    t0 = time.perf_counter()
    report = runner.run()
    wall = time.perf_counter() - t0
    out = Path(args.out)
    artifacts.write_mission_artifacts(report, runner, out)
    phase_walls = {}  # per-phase wall time is not tracked tick-by-tick
    artifacts.write_timing(out, wall, phase_walls)
    print(f"mission {report.exit_status}: {report.ticks_total} ticks "
          f"({report.sim_time_s:.1f} s simulated, {wall:.1f} s wall)")
    print(f"  exploration coverage {report.exploration['free_coverage_pct']:.1f}% "
          f"| map fidelity {report.map_fidelity.get('correct_pct', 0.0):.1f}% "
          f"| collisions {report.collisions}")
    print(f"  crop coverage {report.survey['crop_coverage'] * 100:.1f}% "
          f"| detector frames {report.disease['frames']}")
    print(f"  config {config_hash(cfg)[:12]} -> {out}/report.json")
    return report.exit_code


def cmd_plan(args) -> int:
    pgm = Path(args.map)
    meta = Path(args.meta) if args.meta else pgm.with_suffix(".meta")
    if not pgm.exists() or not meta.exists():
        raise InputError(f"map files not found: {pgm} / {meta}")
    grid = mapping.pgm_to_grid(pgm.read_bytes(), meta.read_text())
    costmap = planning.inflate(grid, args.radius, args.decay)
    start = costmap.world_to_cell(*_parse_xy(args.start, "start"))
    goal = costmap.world_to_cell(*_parse_xy(args.goal, "goal"))
    try:
        path = planning.plan_astar(costmap, start, goal)
    except planning.InvalidEndpointError as e:
        raise InputError(str(e)) from e
    if path is None:
        print("NO PATH", file=sys.stderr)
        return 1
    lines = ["x,y"] + [f"{x:.3f},{y:.3f}" for x, y in path.points]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"# cost {path.total_cost:.3f} over {len(path)} cells",
          file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    rp = Path(args.report)
    if not rp.exists():
        raise InputError(f"report not found: {args.report}")
    names = artifacts.replay(rp, args.out)
    print("re-rendered: " + ", ".join(names))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldnav",
                                 description="2D field-survey navigation stack")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a full mission")
    run.add_argument("--world", required=True)
    run.add_argument("--config", default=None)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    plan = sub.add_parser("plan", help="A* on an exported map")
    plan.add_argument("--map", required=True, help="map.pgm path")
    plan.add_argument("--meta", default=None, help="metadata path (default: <map>.meta)")
    plan.add_argument("--start", required=True, help="x,y in meters")
    plan.add_argument("--goal", required=True, help="x,y in meters")
    plan.add_argument("--radius", type=float, default=0.3)
    plan.add_argument("--decay", type=float, default=1.0)
    plan.add_argument("--out", default=None, help="write CSV here instead of stdout")
    plan.set_defaults(func=cmd_plan)

    rep = sub.add_parser("replay", help="re-render images from a report")
    rep.add_argument("--report", required=True)
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

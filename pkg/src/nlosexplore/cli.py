"""Command line entry point.

Subcommands: explore, scan, gen, eval, render. Exit status is 0 on success,
1 for usage or configuration errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics, nlos, render, scenes
from .config import ConfigError, add_flags, load_config, overrides_from
from .explore import ExplorationError, ExploreSettings, ExplorationTrace, run_exploration
from .gridmap import FREE, GridFormatError, OccupancyGrid, Pose, estimate_normals, load_grid, save_grid, visible_cells
from .predict import PredictorError
from .spad_sim import SensorConfig, simulate_scan, write_scan_dump

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"
SELF_TEST_TOLERANCE = 2.0  # cells


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _xy(text):
    try:
        x, y = (int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise RuntimeFailure(f"output directory {out} is not writable: {exc}") from exc
    return out


# ---------------------------------------------------------------- explore


def cmd_explore(args) -> int:
    cfg = load_config(args.config, overrides_from(args))
    gt = cfg.ground_truth()
    out = _out_dir(cfg.output)
    sensor, settings = cfg.sensor(), cfg.settings()
    save_grid(gt, out / "gt.pgm")
    for k, start in enumerate(cfg.start):
        stem = f"trace_{k}"

        def snapshot(state, k=k):
            if cfg.snapshot_interval and state.t % cfg.snapshot_interval == 0:
                render.render_belief(out / f"snap_{k}_{state.t:05d}.png", state.belief,
                                     carved=state.carved, evidence=state.evidence,
                                     path=state.path, robot=state.pose.cell)

        trace = run_exploration(gt, start, sensor, cfg.mode, cfg.steps, cfg.seed, settings, snapshot)
        trace.write_csv(out / f"{stem}.csv")
        save_grid(trace.belief, out / f"belief_{k}.pgm")
        meta = {
            "mode": cfg.mode,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "start": list(start),
            "gt": "gt.pgm",
            "width": gt.width,
            "height": gt.height,
            "resolution": gt.resolution,
        }
        (out / f"{stem}.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        print(f"pose {k} ({start[0]},{start[1]}) mode={cfg.mode} steps={len(trace) - 1} "
              f"path={trace.path_len[-1]} coverage={trace.coverage[-1]:.4f} iou={trace.iou[-1]:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- scan


def _scan_outputs(out: Path, gt, pose: Pose, sensor: SensorConfig, settings):
    scan = simulate_scan(gt, estimate_normals(gt), pose, sensor)
    belief = OccupancyGrid.filled(gt.width, gt.height, resolution=gt.resolution)
    seen = visible_cells(gt, pose, sensor.n_primary, sensor.max_range)
    belief.cells[seen] = gt.cells[seen]
    carved_belief, ev, bp = nlos.extract_evidence(belief, scan, settings.gap, settings.percentile)
    write_scan_dump(scan, out / "scan.txt")
    nlos.write_float_grid(out / "backprojection.f32", bp, gt.resolution)
    render.render_backprojection(out / "backprojection.png", bp)
    save_grid(carved_belief, out / "carved.pgm")
    render.render_belief(out / "carved.png", carved_belief, carved=ev.carved_free,
                         evidence=ev.occupied_evidence, robot=pose.cell)
    return scan, bp


def cmd_scan(args) -> int:
    if args.self_test:
        return _scan_self_test(args)
    if args.config is None:
        raise UsageError("scan needs a config file unless --self-test is given")
    cfg = load_config(args.config, overrides_from(args))
    gt = cfg.ground_truth()
    x, y = args.pose if args.pose else cfg.start[0]
    if not (0 <= x < gt.width and 0 <= y < gt.height) or gt.cells[y, x] != FREE:
        raise RuntimeFailure(f"pose ({x}, {y}) is not a free cell")
    out = _out_dir(cfg.output)
    scan, bp = _scan_outputs(out, gt, Pose.at_cell(x, y), cfg.sensor(), cfg.settings())
    print(f"scan at ({x},{y}): {int(scan.hit.sum())}/{len(scan)} hits, "
          f"{len(scan.secondary)} secondary hits, backprojection max {bp.max():.4g}")
    return EXIT_OK


def _scan_self_test(args) -> int:
    gt, lay = scenes.l_corner()
    out = _out_dir(args.output or "scan-self-test")
    _, bp = _scan_outputs(out, gt, Pose.at_cell(*lay.robot), SensorConfig(), ExploreSettings())
    iy, ix = np.unravel_index(int(np.argmax(bp)), bp.shape)
    x0, y0, x1, y1 = lay.pillar_cells
    dist = float(np.hypot(max(x0 - ix, 0, ix - (x1 - 1)), max(y0 - iy, 0, iy - (y1 - 1))))
    ok = dist <= SELF_TEST_TOLERANCE
    print(f"self-test: backprojection argmax ({ix},{iy}), pillar cells x[{x0},{x1}) y[{y0},{y1}), "
          f"distance {dist:.2f} cells: {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise RuntimeFailure("backprojection argmax is not within 2 cells of the hidden pillar")
    return EXIT_OK


# ---------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    params = {}
    for tok in args.param:
        name, sep, value = tok.partition("=")
        if not sep:
            raise UsageError(f"--param {tok!r} is not name=value")
        try:
            params[name] = int(value)
        except ValueError:
            raise UsageError(f"--param {name}: expected an integer, got {value!r}") from None
    if args.kind not in scenes.KINDS:
        raise UsageError(f"unknown kind {args.kind!r}; choose from {', '.join(scenes.KINDS)}")
    if args.kind not in ("rooms", "maze") and args.seed:
        print(f"note: {args.kind} is not randomized; --seed ignored", file=sys.stderr)
    try:
        grid = scenes.generate(args.kind, seed=args.seed, resolution=args.resolution, **params)
    except TypeError as exc:
        raise UsageError(f"bad parameter for {args.kind}: {exc}") from exc
    except scenes.SceneError as exc:
        raise UsageError(str(exc)) from exc
    path = Path(args.output)
    try:
        save_grid(grid, path)
    except OSError as exc:
        raise RuntimeFailure(f"cannot write {path}: {exc}") from exc
    print(f"wrote {path} ({grid.width}x{grid.height})")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def load_traces(trace_dir, gt_dir=None):
    """Trace CSVs with their JSON sidecars; lattices are checked against the
    ground truth named in each sidecar."""
    trace_dir = Path(trace_dir)
    gt_dir = Path(gt_dir) if gt_dir else trace_dir
    if not trace_dir.is_dir():
        raise UsageError(f"trace directory {trace_dir} does not exist")
    traces = []
    for csv_path in sorted(trace_dir.glob("*.csv")):
        meta_path = csv_path.with_suffix(".json")
        if not meta_path.exists():
            continue
        meta = json.loads(meta_path.read_text())
        gt_path = gt_dir / meta["gt"]
        try:
            gt = load_grid(gt_path, kind="ground_truth")
        except (OSError, GridFormatError) as exc:
            raise RuntimeFailure(f"{csv_path.name}: cannot load ground truth {gt_path}: {exc}") from exc
        if gt.shape != (meta["height"], meta["width"]):
            raise RuntimeFailure(
                f"{csv_path.name}: lattice {meta['width']}x{meta['height']} does not match "
                f"{gt_path.name} ({gt.width}x{gt.height})"
            )
        traces.append(ExplorationTrace.read_csv(csv_path, meta["mode"], meta["steps"]))
    if not traces:
        raise UsageError(f"no traces (CSV with JSON sidecar) in {trace_dir}")
    return traces


def cmd_eval(args) -> int:
    traces = load_traces(args.traces, args.gt)
    rows = metrics.aggregate(traces)
    out = Path(args.output)
    try:
        metrics.write_summary(rows, out)
    except OSError as exc:
        raise RuntimeFailure(f"cannot write {out}: {exc}") from exc
    for mode, metric, bucket, mean, std, n in rows:
        if metric == "coverage_auc":
            print(f"{mode}: coverage AUC {mean:.4f} +- {std:.4f} (n={n})")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- render


def _mask(path):
    if path is None:
        return None
    try:
        return load_grid(path).occupied
    except (OSError, GridFormatError) as exc:
        raise RuntimeFailure(f"cannot read mask {path}: {exc}") from exc


def cmd_render(args) -> int:
    src = Path(args.input)
    try:
        head = src.read_bytes()[:len(nlos.FLOAT_GRID_MAGIC)]
    except OSError as exc:
        raise RuntimeFailure(f"cannot read {src}: {exc}") from exc
    try:
        if head == nlos.FLOAT_GRID_MAGIC.encode():
            values, _ = nlos.read_float_grid(src)
            render.render_backprojection(args.output, values, args.scale)
        else:
            grid = load_grid(src)
            carved, evidence = _mask(args.carved), _mask(args.evidence)
            for name, m in (("carved", carved), ("evidence", evidence)):
                if m is not None and m.shape != grid.shape:
                    raise RuntimeFailure(f"--{name} mask shape {m.shape} differs from {grid.shape}")
            render.render_belief(args.output, grid, args.scale, carved=carved,
                                 evidence=evidence, robot=args.robot)
    except (GridFormatError, ValueError) as exc:
        raise RuntimeFailure(f"{src}: {exc}") from exc
    except OSError as exc:
        raise RuntimeFailure(f"cannot write {args.output}: {exc}") from exc
    print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nlosexplore", description="NLOS-aided exploration simulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("explore", help="run exploration from every start pose of a config",
                       description="Run exploration; writes trace_<k>.csv, trace_<k>.json, "
                                   "belief_<k>.pgm and optional snapshots to the output directory.")
    p.add_argument("config", help="scenario INI file")
    add_flags(p)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("scan", help="one scan: histogram dump, backprojection and carved belief",
                       description="Simulate one scan and write scan.txt, backprojection.f32/.png "
                                   "and carved.pgm/.png.")
    p.add_argument("config", nargs="?", help="scenario INI file")
    p.add_argument("--pose", type=_xy, help="scan cell 'x,y' (default: first start pose)")
    p.add_argument("--self-test", action="store_true",
                   help="built-in L-corner scene; fail unless the argmax is within 2 cells of the pillar")
    add_flags(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("gen", help="generate a ground-truth PGM")
    p.add_argument("kind", help=f"one of {', '.join(scenes.KINDS)}")
    p.add_argument("output", help="output PGM path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--param", action="append", default=[], metavar="NAME=INT",
                   help="generator parameter, repeatable (e.g. --param n_x=3)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval", help="aggregate traces into a summary CSV")
    p.add_argument("traces", help="directory of trace CSVs with JSON sidecars")
    p.add_argument("--gt", help="directory holding the ground-truth maps (default: traces dir)")
    p.add_argument("-o", "--output", default="summary.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a belief PGM or backprojection grid to PNG")
    p.add_argument("input", help="PGM grid or float grid")
    p.add_argument("output", help="PNG path")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--carved", help="PGM mask drawn light blue")
    p.add_argument("--evidence", help="PGM mask drawn orange")
    p.add_argument("--robot", type=_xy, help="robot cell 'x,y' drawn red")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, ExplorationError, PredictorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

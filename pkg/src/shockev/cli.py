"""Command-line front end.

    shockev simulate --out run1/ [--config scene.cfg]
    shockev calibrate --run run1/
    shockev extract --run run1/
    shockev measure --run run1/
    shockev reconstruct --run run1/
    shockev invert --run run1/ --distance 8
    shockev invert --radius 4 --velocity 402.03
    shockev report --run run1/

Every run-directory subcommand reads ``<run>/run.cfg`` when it exists, or
the file named by ``--config``. Errors print one line,
``error: CODE: message``; exit status is 2 for invalid input and 3 when a
computation fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .config import RunConfig, dump_config, load_config
from .errors import NumericError, ShockevError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValidationError):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shockev", description="Shock-wave measurement from event-camera streams.")
    p.add_argument("--version", action="version", version=f"shockev {__version__}")
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved run configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def run_cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--run", required=True, help="run directory")
        sp.add_argument("--config", help="run config (default: <run>/run.cfg if present)")
        sp.add_argument("--dump-config", action="store_true",
                        help="print the resolved run configuration and exit")
        return sp

    sp = sub.add_parser("simulate", help="render a synthetic blast into a new run directory")
    sp.add_argument("--out", required=True, help="run directory to write")
    sp.add_argument("--config", help="scene config (default: built-in rig)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-clutter", action="store_true", help="disable firelight/product/noise")
    sp.add_argument("--dump-config", action="store_true",
                    help="print the resolved scene configuration and exit")

    sp = run_cmd("calibrate", "LED marker detection and projection estimation")
    sp.add_argument("--auto-period", action="store_true",
                    help="size the trigger window from the event-rate autocorrelation")

    sp = run_cmd("extract", "per-angle shock-front extraction")
    sp.add_argument("--angles", help="start:stop:step in degrees (default 0:360:5)")
    sp.add_argument("--workers", type=int, help="worker threads")

    sp = run_cmd("measure", "radius and velocity per angle")
    sp.add_argument("--degree", type=int, help="polynomial degree, 1..6")

    run_cmd("reconstruct", "3D tangent-point cloud")

    sp = sub.add_parser("invert", help="TNT-equivalent charge from radius and velocity")
    sp.add_argument("--run", help="run directory with models.json")
    sp.add_argument("--config", help="run config (default: <run>/run.cfg if present)")
    sp.add_argument("--dump-config", action="store_true",
                    help="print the resolved run configuration and exit")
    sp.add_argument("--distance", type=_positive, action="append",
                    help="distance in m (repeatable; default: configured distances)")
    sp.add_argument("--radius", type=_positive, help="radius in m (standalone mode)")
    sp.add_argument("--velocity", type=_positive, help="front velocity in m/s (standalone mode)")

    sp = run_cmd("report", "CSV series, SVG figures and report.json")
    sp.add_argument("--reference-mass", type=_positive,
                    help="charge mass in kg for the empirical-law comparison")
    return p


def _resolve_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    run = getattr(args, "run", None)
    if path is None and run and os.path.exists(os.path.join(run, "run.cfg")):
        path = os.path.join(run, "run.cfg")
    cfg = load_config(path) if path else RunConfig()
    kw = {}
    if getattr(args, "angles", None):
        kw["angles"] = args.angles
    if getattr(args, "workers", None) is not None:
        kw["workers"] = args.workers
    if getattr(args, "degree", None) is not None:
        from .config import MeasureConfig
        kw["measure"] = MeasureConfig(args.degree, cfg.measure.distances)
    if kw:
        from dataclasses import replace
        cfg = replace(cfg, **kw)
    return cfg


def _check_run(run):
    if not os.path.isdir(run):
        raise ValidationError(f"run directory not found: {run}")


def _simulate(args, out):
    from . import pipeline, synth

    if args.config:
        scene, cameras = synth.load_scene_config(args.config)
    else:
        scene, cameras = synth.default_scene(), synth.default_cameras()
    if args.no_clutter:
        from dataclasses import replace
        scene = replace(scene, clutter=synth.ClutterSpec.off())
    if args.dump_config:
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "scene.cfg")
            synth.write_scene_config(path, scene, cameras)
            with open(path, encoding="utf-8") as fh:
                out.write(fh.read())
        return
    res = pipeline.simulate(args.out, scene, cameras, args.seed)
    for i, cam in enumerate(res.cameras):
        counts = " ".join(f"{k}={v}" for k, v in cam.tallies.items())
        out.write(f"cam{i}: {len(cam.stream)} events ({counts})\n")


def _invert(args, cfg, out):
    from . import blast, pipeline

    standalone = args.radius is not None or args.velocity is not None
    if standalone:
        if args.radius is None or args.velocity is None:
            raise UsageError("--radius and --velocity must be given together")
        if args.run or args.distance:
            raise UsageError("standalone inversion takes no --run/--distance")
        est = blast.invert_charge(args.radius, args.velocity, cfg.physics)
        out.write(f"{est.grams:.2f} g  (r={est.r:g} m, v={est.v:g} m/s, "
                  f"P={est.P:.6g} MPa, delta={est.delta:.6g} m/kg^(1/3))\n")
        return
    if not args.run:
        raise UsageError("give --run (with optional --distance) or --radius and --velocity")
    _check_run(args.run)
    distances = args.distance or list(cfg.measure.distances)
    for e in pipeline.invert_run(args.run, distances, cfg):
        lo, hi = e["W_g_bounds"]
        out.write(f"{e['W_g']:.2f} g  (r={e['distance_m']:g} m, v={e['v_mean']:.6g} m/s from "
                  f"{e['n']} angles, P={e['P_MPa']:.6g} MPa, bounds {lo:.2f}..{hi:.2f} g)\n")


def _dispatch(args, out):
    from . import pipeline

    if args.command == "simulate":
        _simulate(args, out)
        return
    cfg = _resolve_config(args)
    if args.dump_config:
        out.write(dump_config(cfg))
        return
    if args.command == "invert":
        _invert(args, cfg, out)
        return
    _check_run(args.run)
    if args.command == "calibrate":
        models = pipeline.calibrate(args.run, cfg, auto_period=args.auto_period)
        for view, m in models.items():
            out.write(f"cam{view}: f={m.f:.2f} principal=({m.principal[0]:.2f}, "
                      f"{m.principal[1]:.2f}) reproj={m.reproj_error:.3f} px\n")
    elif args.command == "extract":
        results = pipeline.extract(args.run, cfg)
        for view, res in results.items():
            ok = sum(r.ok for r in res)
            n = sum(len(r.extraction) for r in res if r.ok)
            out.write(f"cam{view}: {ok}/{len(res)} angles, {n} front events\n")
    elif args.command == "measure":
        models = pipeline.measure(args.run, cfg)
        fitted = sum(am.model is not None for am in models)
        out.write(f"{fitted}/{len(models)} angle models fitted\n")
        for e in pipeline.distance_summary(models, cfg.measure.distances):
            if e["n"]:
                out.write(f"r={e['distance_m']:g} m: v={e['v_mean']:.2f} m/s "
                          f"(median {e['v_median']:.2f}, sd {e['v_std']:.2f}, n={e['n']})\n")
            else:
                out.write(f"r={e['distance_m']:g} m: no model reaches this distance\n")
    elif args.command == "reconstruct":
        n = pipeline.reconstruct(args.run)
        out.write(f"{n} cloud points\n")
    elif args.command == "report":
        from .report import build_report
        summary = build_report(args.run, cfg, args.reference_mass)
        out.write(f"report written: {len(summary['files']) + 1} files in "
                  f"{os.path.join(args.run, 'report')}\n")


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            if args.dump_config:
                out.write(dump_config(RunConfig()))
                return EXIT_OK
            raise UsageError("a subcommand is required")
        _dispatch(args, out)
        return EXIT_OK
    except ShockevError as exc:
        err.write(f"error: {exc.code}: {exc}\n")
        return EXIT_NUMERIC if isinstance(exc, NumericError) else EXIT_INVALID
    except OSError as exc:
        err.write(f"error: E_IO: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

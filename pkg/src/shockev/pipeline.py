"""File-based measurement chain.

A run directory holds every artifact; each stage reads what earlier stages
wrote and writes its own files only after all of its work has succeeded.

    simulate     scene.cfg, cam{i}.evs, labels.csv, ground_truth.json,
                 markers.txt, blast.cfg, truth/cam{i}.cam
    calibrate    cameras/cam{i}.cam, calibration.csv  (optional on simulated
                 runs: later stages then use truth/cam{i}.cam)
    extract      fronts.csv, trace.json
    measure      radii.csv, models.json
    reconstruct  cloud.csv
    invert       invert.json
    report       report/ (CSV series, SVG figures, report.json)

Times in fronts.csv are raw stream timestamps; every later file uses time
since detonation.
"""

from __future__ import annotations

import configparser
import contextlib
import csv
import glob
import hashlib
import json
import logging
import math
import os
import re
import shutil
import tempfile
from dataclasses import asdict, dataclass

import numpy as np

from . import blast, calib, evcore, frontx, geom, synth
from .config import RunConfig
from .errors import (ConfigError, DomainError, FitError, NumericError, ParseError, SeedingError,
                     ShockevError, ValidationError)

log = logging.getLogger(__name__)

GT_STEP_US = 10


# -- small file helpers -----------------------------------------------------

class Staging:
    """Collects outputs in a scratch directory and moves them into place on commit."""

    def __init__(self, root):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".stage-", dir=self.root)
        self.names: list[str] = []

    def path(self, name: str) -> str:
        full = os.path.join(self.tmp, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.names.append(name)
        return full

    def commit(self):
        for name in self.names:
            dest = os.path.join(self.root, name)
            os.makedirs(os.path.dirname(dest), exist_ok=True)
            os.replace(os.path.join(self.tmp, name), dest)
        shutil.rmtree(self.tmp, ignore_errors=True)

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


@contextlib.contextmanager
def staged(root):
    st = Staging(root)
    try:
        yield st
    except BaseException:
        st.discard()
        raise
    st.commit()


def _write_json(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _read_json(path):
    _require(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from None


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, header):
    """Columns of a CSV file with a fixed header, as float arrays."""
    _require(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != list(header):
            raise ParseError(f"{path}: expected header {','.join(header)}", line=1)
        rows = list(reader)
    try:
        data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    except ValueError:
        raise ParseError(f"{path}: malformed row") from None
    return {name: data[:, i] for i, name in enumerate(header)}


def _require(path):
    if not os.path.exists(path):
        raise ValidationError(f"missing file: {path}")


def _f(v) -> float:
    return float(v)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- run-directory contents -------------------------------------------------

@dataclass(frozen=True)
class BlastSite:
    """Surveyed blast centre and detonation time, shared by all views."""

    world: tuple[float, float, float]
    detonation_us: int

    def write(self, path):
        X, Y, Z = self.world
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"[blast]\nworld = {X!r} {Y!r} {Z!r}\ndetonation_us = {self.detonation_us}\n")

    @classmethod
    def read(cls, path) -> "BlastSite":
        _require(path)
        cp = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
            sec = cp["blast"]
            extra = set(sec) - {"world", "detonation_us"}
            if extra:
                raise ConfigError(f"{path}: unknown keys {sorted(extra)}")
            world = tuple(float(v) for v in sec["world"].split())
            if len(world) != 3:
                raise ValueError("world needs 3 values")
            return cls(world, int(sec["detonation_us"]))
        except (configparser.Error, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: {exc}") from None


def view_files(run_dir) -> list[tuple[int, str]]:
    """(view index, event file) pairs in view order."""
    out = []
    for path in glob.glob(os.path.join(run_dir, "cam*.evs")):
        m = re.fullmatch(r"cam(\d+)\.evs", os.path.basename(path))
        if m:
            out.append((int(m.group(1)), path))
    if not out:
        raise ValidationError(f"no cam*.evs event files in {run_dir}")
    return sorted(out)


def camera_path(run_dir, view: int) -> str:
    return os.path.join(run_dir, "cameras", f"cam{view}.cam")


def camera_source(run_dir) -> str:
    """``calibrated`` when calibrate has run, else ``truth`` for simulated runs."""
    views = [v for v, _ in view_files(run_dir)]
    if views and all(os.path.exists(camera_path(run_dir, v)) for v in views):
        return "calibrated"
    if views and all(os.path.exists(os.path.join(run_dir, "truth", f"cam{v}.cam")) for v in views):
        return "truth"
    return "calibrated"


def load_geometries(run_dir) -> tuple[BlastSite, dict[int, geom.ViewGeometry]]:
    """Per-view geometry from the calibrated cameras, falling back to the
    simulator's true cameras when calibrate has not been run."""
    site = BlastSite.read(os.path.join(run_dir, "blast.cfg"))
    source = camera_source(run_dir)
    if source == "truth":
        log.warning("no calibrated cameras in %s; using the simulator's true cameras", run_dir)
    out = {}
    for view, _ in view_files(run_dir):
        if source == "truth":
            path = os.path.join(run_dir, "truth", f"cam{view}.cam")
        else:
            path = camera_path(run_dir, view)
        _require(path)
        out[view] = geom.ViewGeometry.from_projection(calib.read_camera(path), site.world)
    return site, out


# -- simulate ---------------------------------------------------------------

def simulate(out_dir, scene: synth.BlastScene, cameras, seed: int = 0) -> synth.SimResult:
    """Render a scene and write the raw inputs of a measurement run."""
    result = synth.simulate_events(scene, cameras, seed)
    track = result.track
    with staged(out_dir) as st:
        synth.write_scene_config(st.path("scene.cfg"), scene, cameras)
        calib.write_markers(st.path("markers.txt"), [led.as_marker() for led in scene.leds])
        BlastSite(tuple(_f(v) for v in scene.blast_world), int(scene.t0)).write(st.path("blast.cfg"))
        label_rows = []
        for i, out in enumerate(result.cameras):
            evcore.write_events(st.path(f"cam{i}.evs"), out.stream)
            calib.write_camera(st.path(f"truth/cam{i}.cam"), cameras[i].model)
            s = out.stream
            names = np.asarray(synth.LABELS)[out.labels]
            label_rows.extend(zip(np.full(len(s), i), s.t, s.x, s.y, names))
        _write_csv(st.path("labels.csv"), ("cam", "t_us", "x", "y", "label"), label_rows)
        t_rel = np.arange(0, int(scene.duration) + 1, GT_STEP_US, dtype=np.float64)
        t_rel = t_rel[t_rel <= track.t[-1]]
        truth = {
            "W_kg": _f(scene.W),
            "blast_world": [_f(v) for v in scene.blast_world],
            "detonation_us": int(scene.t0),
            "seed": int(seed),
            "radius_table": {"t_us": [_f(t) for t in t_rel],
                             "r_m": [_f(r) for r in track.radius(t_rel)]},
            "cameras": [{"view": i, "zeta_m": _f(out.geometry.zeta),
                         "blast_image": [_f(v) for v in out.geometry.blast_image],
                         "tallies": out.tallies}
                        for i, out in enumerate(result.cameras)],
        }
        _write_json(st.path("ground_truth.json"), truth)
    return result


# -- calibrate --------------------------------------------------------------

def calibrate(run_dir, cfg: RunConfig, auto_period: bool = False) -> dict[int, calib.CameraModel]:
    """Detect LED markers before detonation and estimate each projection."""
    markers = calib.read_markers(os.path.join(run_dir, "markers.txt"))
    site = BlastSite.read(os.path.join(run_dir, "blast.cfg"))
    models = {}
    rows = []
    for view, path in view_files(run_dir):
        _, stream = evcore.read_events(path)
        pre = stream.time_window(int(stream.t[0]) if len(stream) else 0, site.detonation_us)
        if len(pre) == 0:
            raise ValidationError(f"view {view}: no events before detonation for calibration")
        window = calib.estimate_flicker_period(pre) if auto_period else None
        dets = calib.detect_markers(pre, markers, q=cfg.calib.q, window_us=window)
        by_id = {m.marker_id: m for m in markers}
        corr = [calib.Correspondence(d.refined, by_id[d.marker_id].world) for d in dets]
        model = calib.estimate_projection(corr, normalize=cfg.calib.normalize,
                                          refine=cfg.calib.refine,
                                          width=stream.width, height=stream.height)
        models[view] = model
        for d, c in zip(dets, corr):
            px = geom.project_point(model.gamma, c.world)
            rows.append((view, d.marker_id, _f(d.refined[0]), _f(d.refined[1]), *map(_f, c.world),
                         _f(math.hypot(px[0] - d.refined[0], px[1] - d.refined[1]))))
    with staged(run_dir) as st:
        for view, model in models.items():
            calib.write_camera(st.path(f"cameras/cam{view}.cam"), model)
        _write_csv(st.path("calibration.csv"),
                   ("view", "marker_id", "x", "y", "X", "Y", "Z", "reproj_px"), rows)
    return models


# -- extract ----------------------------------------------------------------

def _band_dict(band):
    return None if band is None else {k: _f(v) for k, v in asdict(band).items()}


def _angle_trace(res: frontx.AngleResult) -> dict:
    entry = {"alpha_lo": _f(res.alpha_lo), "alpha_hi": _f(res.alpha_hi), "ok": res.ok,
             "error": res.error, "band": _band_dict(res.band),
             "n_candidates": 0 if res.candidates is None else len(res.candidates)}
    if res.seeds is not None:
        entry["seeds"] = {k: int(v) for k, v in asdict(res.seeds).items()}
    if res.ok:
        ex = res.extraction
        cand = res.candidates.events
        entry["n_front"] = len(ex)
        entry["k_tau0"] = _f(ex.k_tau0)
        entry["updates"] = [
            {"stage": u.stage, "t_us": int(cand.t[u.position]), "d_px": _f(cand.d[u.position]),
             "reference_t_us": int(cand.t[u.reference]), "benchmark_t_us": int(cand.t[u.benchmark]),
             "k_tau": _f(u.k_tau)}
            for u in ex.trace
        ]
    return entry


def extract(run_dir, cfg: RunConfig) -> dict[int, list[frontx.AngleResult]]:
    """Per-angle front extraction for every view."""
    site, geoms = load_geometries(run_dir)
    results = {}
    rows = []
    views_trace = []
    for view, path in view_files(run_dir):
        _, stream = evcore.read_events(path)
        g = geoms[view]
        pole = g.blast_point
        pole.check_inside(stream.width, stream.height)
        polar = evcore.polar_encode(stream, pole, workers=cfg.workers)
        res = frontx.extract_view(polar, cfg.angle_range, cfg.front, t_start=site.detonation_us,
                                  workers=cfg.workers)
        results[view] = res
        for r in res:
            if r.ok:
                s = r.extraction.s_prime
                rows.extend(zip(np.full(len(s), view), map(_f, s.alpha), s.t, map(_f, s.d)))
        views_trace.append({"view": view, "blast_image": [_f(v) for v in g.blast_image],
                            "angles": [_angle_trace(r) for r in res]})
    if not rows:
        raise SeedingError("no front extracted at any angle of any view")
    with staged(run_dir) as st:
        _write_csv(st.path("fronts.csv"), ("view", "alpha_deg", "t_us", "d_px"), rows)
        _write_json(st.path("trace.json"), {"angles": cfg.angles, "detonation_us": site.detonation_us,
                                            "cameras": camera_source(run_dir),
                                            "views": views_trace})
    return results


def read_fronts(run_dir):
    return _read_csv(os.path.join(run_dir, "fronts.csv"), ("view", "alpha_deg", "t_us", "d_px"))


def _angle_bins(alpha, angles: str):
    start, stop, step = frontx.parse_angles(angles)
    k = np.floor((alpha - start) / step + 1e-9)
    lo = start + k * step
    return lo, np.minimum(lo + step, stop)


# -- measure ----------------------------------------------------------------

@dataclass(frozen=True)
class AngleModel:
    view: int
    alpha_lo: float
    alpha_hi: float
    model: geom.RadiusTimeModel | None
    error: str | None = None

    @property
    def alpha(self) -> float:
        return 0.5 * (self.alpha_lo + self.alpha_hi)


def front_samples(run_dir):
    """(view, alpha, t since detonation, x, y, bin lo, bin hi) from fronts.csv."""
    fronts = read_fronts(run_dir)
    trace = _read_json(os.path.join(run_dir, "trace.json"))
    site, geoms = load_geometries(run_dir)
    view = fronts["view"].astype(int)
    lo, hi = _angle_bins(fronts["alpha_deg"], trace["angles"])
    x = np.empty(len(view))
    y = np.empty(len(view))
    for v, g in geoms.items():
        m = view == v
        a = np.deg2rad(fronts["alpha_deg"][m])
        x[m] = g.blast_image[0] + fronts["d_px"][m] * np.cos(a)
        y[m] = g.blast_image[1] + fronts["d_px"][m] * np.sin(a)
    unknown = set(np.unique(view)) - set(geoms)
    if unknown:
        raise ValidationError(f"fronts.csv names views without cameras: {sorted(unknown)}")
    t = fronts["t_us"] - site.detonation_us
    return site, geoms, view, fronts["alpha_deg"], t, x, y, lo, hi


def measure(run_dir, cfg: RunConfig) -> list[AngleModel]:
    """Radii per front event, one radius-time polynomial per (view, angle)."""
    site, geoms, view, alpha, t, x, y, lo, hi = front_samples(run_dir)
    radii_rows = []
    models = []
    keys = sorted(set(zip(view.tolist(), lo.tolist())))
    for v, a_lo in keys:
        m = (view == v) & (lo == a_lo)
        a_hi = float(hi[m][0])
        try:
            theta, r = geom.radii_for_points(geoms[v], x[m], y[m])
        except ShockevError as exc:
            models.append(AngleModel(v, a_lo, a_hi, None, f"{exc.code}: {exc}"))
            continue
        radii_rows.extend(zip(np.full(m.sum(), v), map(_f, alpha[m]), map(_f, t[m]), map(_f, r),
                              map(_f, theta)))
        try:
            fit = geom.fit_radius_time(t[m], r, cfg.measure.degree)
            models.append(AngleModel(v, a_lo, a_hi, fit))
        except NumericError as exc:
            models.append(AngleModel(v, a_lo, a_hi, None, f"{exc.code}: {exc}"))
    if not any(am.model is not None for am in models):
        raise FitError("no angle produced a radius-time model")
    summary = distance_summary(models, cfg.measure.distances)
    with staged(run_dir) as st:
        _write_csv(st.path("radii.csv"), ("view", "alpha_deg", "t_us", "r_m", "theta_rad"),
                   radii_rows)
        _write_json(st.path("models.json"), {
            "degree": cfg.measure.degree,
            "time_origin": "detonation",
            "detonation_us": site.detonation_us,
            "models": [{"view": am.view, "alpha_lo": am.alpha_lo, "alpha_hi": am.alpha_hi,
                        "model": None if am.model is None else am.model.to_dict(),
                        "error": am.error} for am in models],
            "distances": summary,
        })
    return models


def velocities_at(models, distance: float):
    """(view, alpha, t, v) for every monotone model whose range reaches ``distance``."""
    out = []
    for am in models:
        if am.model is None or not am.model.monotone:
            continue
        t = am.model.time_at_radius(distance)
        if t is None:
            continue
        out.append((am.view, am.alpha, t, geom.velocity(am.model, t)))
    return out


def distance_summary(models, distances) -> list[dict]:
    out = []
    for R in distances:
        hits = velocities_at(models, R)
        entry = {"distance_m": _f(R), "n": len(hits)}
        if hits:
            mean, median, std = geom.aggregate_statistics([h[3] for h in hits])
            entry.update(v_mean=mean, v_median=median, v_std=std,
                         t_mean_us=_f(np.mean(sorted(h[2] for h in hits))))
            per_view = {}
            for h in hits:
                per_view.setdefault(h[0], []).append(h[3])
            entry["views"] = [{"view": v, "n": len(vals),
                               "v_mean": geom.aggregate_statistics(vals)[0]}
                              for v, vals in sorted(per_view.items())]
        out.append(entry)
    return out


def load_models(run_dir) -> tuple[dict, list[AngleModel]]:
    data = _read_json(os.path.join(run_dir, "models.json"))
    models = [AngleModel(m["view"], m["alpha_lo"], m["alpha_hi"],
                         None if m["model"] is None else geom.RadiusTimeModel.from_dict(m["model"]),
                         m.get("error"))
              for m in data["models"]]
    return data, models


# -- reconstruct ------------------------------------------------------------

def reconstruct(run_dir) -> int:
    """3D tangent point for every front event; returns the point count."""
    _, geoms, view, alpha, t, x, y, _, _ = front_samples(run_dir)
    parts = []
    for v in sorted(set(view.tolist())):
        m = np.flatnonzero(view == v)
        _, r = geom.radii_for_points(geoms[v], x[m], y[m])
        X, tangency, sphere = geom.reconstruct_points(geoms[v], r, x[m], y[m])
        parts.append(zip(map(_f, t[m]), np.full(len(m), v), map(_f, alpha[m]), map(_f, X[:, 0]),
                         map(_f, X[:, 1]), map(_f, X[:, 2]), map(_f, tangency), map(_f, sphere)))
    with staged(run_dir) as st:
        _write_csv(st.path("cloud.csv"), ("t_us", "view", "alpha_deg", "X", "Y", "Z",
                                          "tangency_residual", "sphere_residual"),
                   (row for part in parts for row in part))
    return len(view)


# -- invert -----------------------------------------------------------------

def radius_interval(geometry: geom.ViewGeometry, r: float, alpha: float,
                    budget: blast.UncertaintyBudget) -> blast.RadiusInterval:
    """Uncertainty interval for the silhouette point of radius ``r`` at ``alpha``."""
    theta = math.asin(r / geometry.zeta)
    xy = geom.solve_image_point(geometry, theta, alpha)
    return blast.radius_uncertainty(geometry, xy, budget)


def invert_distance(run_dir, distance: float, cfg: RunConfig) -> dict:
    """Charge estimate from the mean measured velocity at ``distance``."""
    _, models = load_models(run_dir)
    hits = velocities_at(models, distance)
    if not hits:
        raise DomainError(f"no radius-time model reaches r = {distance} m")
    v_mean, v_median, v_std = geom.aggregate_statistics([h[3] for h in hits])
    est = blast.invert_charge(distance, v_mean, cfg.physics)
    _, geoms = load_geometries(run_dir)
    intervals = []
    W_lo, W_hi = est.W, est.W
    for v in sorted({h[0] for h in hits}):
        alpha = min(h[1] for h in hits if h[0] == v)
        iv = radius_interval(geoms[v], distance, alpha, cfg.budget)
        lo = blast.invert_charge(iv.r_lo, v_mean, cfg.physics).W
        hi = blast.invert_charge(iv.r_hi, v_mean, cfg.physics).W
        W_lo, W_hi = min(W_lo, lo, hi), max(W_hi, lo, hi)
        intervals.append({"view": v, "alpha_deg": _f(alpha), "r_lo": iv.r_lo, "r_hi": iv.r_hi,
                          "conservative": iv.conservative})
    return {"distance_m": _f(distance), "n": len(hits), "v_mean": v_mean, "v_median": v_median,
            "v_std": v_std, "P_MPa": est.P, "delta": est.delta, "W_kg": est.W,
            "W_g": est.grams, "radius_intervals": intervals,
            "W_g_bounds": [W_lo * 1000.0, W_hi * 1000.0]}


def invert_run(run_dir, distances, cfg: RunConfig) -> list[dict]:
    out = [invert_distance(run_dir, R, cfg) for R in distances]
    with staged(run_dir) as st:
        _write_json(st.path("invert.json"), {"estimates": out})
    return out

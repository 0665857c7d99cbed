"""Post-hoc report: CSV series, static SVG figures and a JSON summary.

Figures are written with a fixed SVG hash salt and no date metadata so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import os

import matplotlib
import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from . import __version__, blast, geom
from .config import RunConfig
from .errors import ValidationError
from .pipeline import (_read_json, _sha256, _write_csv, _write_json, camera_source, load_models,
                       staged)

SERIES_STEP_US = 50.0
SVG_SALT = "shockev"


def _series(models, step=SERIES_STEP_US):
    """Evaluate every usable model on a regular time grid inside its domain."""
    r_rows, v_rows = [], []
    for am in models:
        if am.model is None:
            continue
        lo, hi = am.model.t_domain
        t = np.arange(np.ceil(lo / step) * step, hi + 1e-9, step)
        if not len(t):
            continue
        r = np.atleast_1d(am.model.radius(t))
        v = np.atleast_1d(geom.velocity(am.model, t))
        for ti, ri, vi in zip(t, r, v):
            r_rows.append((am.view, am.alpha, float(ti), float(ri)))
            v_rows.append((am.view, am.alpha, float(ti), float(vi)))
    return r_rows, v_rows


def _save(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        FigureCanvasSVG(fig)
        fig.savefig(path, format="svg", metadata={"Date": None})


def _line_figure(rows, ylabel, title, path):
    fig = Figure(figsize=(7.0, 4.5))
    ax = fig.add_subplot()
    data = np.array([r[:4] for r in rows], dtype=np.float64).reshape(-1, 4)
    views = sorted(set(data[:, 0].astype(int).tolist()))
    colors = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")
    for v in views:
        m = data[:, 0] == v
        first = True
        for a in sorted(set(data[m, 1].tolist())):
            k = m & (data[:, 1] == a)
            ax.plot(data[k, 2] / 1000.0, data[k, 3], lw=0.6, alpha=0.6,
                    color=colors[v % len(colors)], label=f"view {v}" if first else None)
            first = False
    ax.set_xlabel("time since detonation (ms)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if views:
        ax.legend(loc="best", fontsize=8)
    ax.grid(True, lw=0.3)
    _save(fig, path)


def _bar_figure(rows, path):
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    dists = [r["distance_m"] for r in rows]
    x = np.arange(len(dists))
    measured = [r.get("v_mean", np.nan) for r in rows]
    err = [r.get("v_std", 0.0) for r in rows]
    ax.bar(x - 0.2, measured, 0.4, yerr=err, capsize=3, label="measured mean")
    ref = [r.get("v_reference", np.nan) for r in rows]
    if not np.all(np.isnan(ref)):
        ax.bar(x + 0.2, ref, 0.4, label="empirical law")
    ax.set_xticks(x, [f"{d:g} m" for d in dists])
    ax.set_ylabel("front velocity (m/s)")
    ax.set_title("Velocity by distance")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, axis="y", lw=0.3)
    _save(fig, path)


def build_report(run_dir, cfg: RunConfig, reference_mass: float | None = None) -> dict:
    """Write ``report/`` under ``run_dir`` and return the summary dictionary.

    The empirical-law comparison uses ``reference_mass`` (kg) when given,
    else the simulator truth if the run has one, else it is omitted.
    """
    data, models = load_models(run_dir)
    truth_path = os.path.join(run_dir, "ground_truth.json")
    ref_source = None
    if reference_mass is not None:
        if reference_mass <= 0:
            raise ValidationError("reference mass must be positive")
        ref_source = "flag"
    elif os.path.exists(truth_path):
        reference_mass = float(_read_json(truth_path)["W_kg"])
        ref_source = "ground_truth.json"
    inv_path = os.path.join(run_dir, "invert.json")
    estimates = _read_json(inv_path)["estimates"] if os.path.exists(inv_path) else []

    r_rows, v_rows = _series(models)
    by_dist = []
    for entry in data["distances"]:
        row = dict(entry)
        row.pop("views", None)
        if reference_mass is not None:
            row["v_reference"] = blast.velocity_at(entry["distance_m"], reference_mass, cfg.physics)
        by_dist.append(row)

    out_dir = os.path.join(run_dir, "report")
    files = {}
    with staged(out_dir) as st:
        _write_csv(st.path("radius_series.csv"), ("view", "alpha_deg", "t_us", "r_m"), r_rows)
        _write_csv(st.path("velocity_series.csv"), ("view", "alpha_deg", "t_us", "v_mps"), v_rows)
        cols = ("distance_m", "n", "v_mean", "v_median", "v_std", "v_reference")
        _write_csv(st.path("velocity_by_distance.csv"), cols,
                   [tuple(row.get(c, "") for c in cols) for row in by_dist])
        _line_figure(r_rows, "radius (m)", "Shock radius per angle", st.path("radius_vs_time.svg"))
        _line_figure(v_rows, "velocity (m/s)", "Shock velocity per angle",
                     st.path("velocity_vs_time.svg"))
        _bar_figure(by_dist, st.path("velocity_by_distance.svg"))
        for name in list(st.names):
            files[name] = _sha256(os.path.join(st.tmp, name))
        summary = {
            "version": __version__,
            "parameters": cfg.ledger(),
            "cameras": camera_source(run_dir),
            "reference_mass_kg": reference_mass,
            "reference_source": ref_source,
            "models": {"total": len(models),
                       "fitted": sum(am.model is not None for am in models),
                       "monotone": sum(am.model is not None and am.model.monotone for am in models)},
            "distances": by_dist,
            "estimates": [{k: e[k] for k in ("distance_m", "n", "v_mean", "P_MPa", "W_g",
                                             "W_g_bounds")} for e in estimates],
            "files": files,
        }
        _write_json(st.path("report.json"), summary)
    return summary

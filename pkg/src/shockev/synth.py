"""Ground-truth event generator.

An expanding shock sphere, driven by the scaled-distance velocity law, is
observed by pinhole event cameras. Intensity changes are deposited as log
steps; a pixel emits one event per monitoring interval while its sampled
log intensity moves by at least the contrast threshold, so a step of size
``S`` yields ``floor(|S| / phi)`` events on consecutive ticks.

Clutter (firelight burst, combustion products, background noise) and
flickering LED markers are generated alongside, and every event carries a
label.
"""

from __future__ import annotations

import configparser
import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .blast import DEFAULT_CONSTANTS, BlastConstants, velocity_at
from .calib import CameraModel, MarkerSpec
from .errors import ConfigError, GeometryError, OutOfModelError
from .evcore import EventStream
from .geom import ViewGeometry, reconstruct_point, solve_image_point, view_angles

LABELS = ("front", "firelight", "product", "noise", "led")
FRONT, FIRELIGHT, PRODUCT, NOISE, LED = range(5)


# -- radius law -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadiusTrack:
    """r(t) sampled on a uniform grid; ``t`` is microseconds after detonation."""

    t: np.ndarray
    r: np.ndarray
    W: float
    constants: BlastConstants

    def radius(self, t):
        return np.interp(t, self.t, self.r)

    def time_of(self, r):
        return np.interp(r, self.r, self.t, left=np.nan, right=np.nan)

    def velocity(self, t):
        r = self.radius(t)
        if np.ndim(r) == 0:
            return velocity_at(float(r), self.W, self.constants)
        return np.array([velocity_at(float(v), self.W, self.constants) for v in r])

    @property
    def r_max(self) -> float:
        return float(self.r[-1])


@functools.lru_cache(maxsize=16)
def _integrate(W, t_end, step_us, r_init, constants):
    n = int(math.ceil(t_end / step_us))
    h = step_us * 1e-6
    out = np.empty(n + 1)
    r = r_init
    out[0] = r
    cb = W ** (1.0 / 3.0)
    eta, P0, c0 = constants.eta, constants.P0, constants.c0
    k = 1000.0 * (eta + 1.0) / (2.0 * eta * P0)

    def v(r):
        u = cb / r
        return c0 * math.sqrt(1.0 + ((1.772 * u + 0.114) * u + 0.108) * u * k)

    for i in range(n):
        k1 = v(r)
        k2 = v(r + 0.5 * h * k1)
        k3 = v(r + 0.5 * h * k2)
        k4 = v(r + h * k3)
        r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = r
    return out


def propagate_radius(W: float, t_end_us: float, constants: BlastConstants = DEFAULT_CONSTANTS,
                     r_init: float = 0.1, step_us: float = 1.0) -> RadiusTrack:
    """Integrate dr/dt = v(r; W) with fixed-step RK4 from ``r_init`` at t=0."""
    if not r_init > 0:
        raise ConfigError(f"r_init must be > 0, got {r_init}")
    if not W > 0:
        raise ConfigError(f"charge mass must be > 0, got {W}")
    if not step_us > 0:
        raise ConfigError("integration step must be > 0")
    r = _integrate(float(W), float(t_end_us), float(step_us), float(r_init), constants)
    r.setflags(write=False)
    t = np.arange(len(r)) * step_us
    return RadiusTrack(t, r, W, constants)


# -- scene description ------------------------------------------------------

@dataclass(frozen=True)
class ClutterSpec:
    firelight_t_start: float = 0.0  # us after detonation
    firelight_t_len: float = 300.0
    firelight_intensity: float = 0.45  # peak log step at the blast point
    firelight_extent: float = 250.0  # px
    product_max_radius: float = 120.0  # px
    product_grow_us: float = 1500.0
    product_decay_us: float = 10000.0
    product_rate: float = 500.0  # events / px / s at detonation
    noise_rate: float = 10.0  # events / px / s

    def __post_init__(self):
        for name, value in vars(self).items():
            if name != "firelight_t_start" and value < 0:
                raise ConfigError(f"clutter {name} must be non-negative")

    @classmethod
    def off(cls) -> "ClutterSpec":
        return cls(firelight_intensity=0.0, product_rate=0.0, noise_rate=0.0)


@dataclass(frozen=True)
class LedMarkerSpec:
    marker_id: str
    world: tuple[float, float, float]
    period_us: float
    duty: float = 0.5
    brightness: float = 3.0  # linear contrast at the spot centre
    sigma_px: float = 1.5
    t_on: float = 0.0  # absolute us
    t_off: float | None = None  # absolute us; None = detonation time

    def __post_init__(self):
        if self.period_us < 2:
            raise ConfigError("LED period must be >= 2 us")
        if not 0 < self.duty < 1:
            raise ConfigError("LED duty cycle must be in (0, 1)")

    def as_marker(self) -> MarkerSpec:
        return MarkerSpec(self.marker_id, tuple(self.world), self.period_us)


@dataclass(frozen=True)
class SimCamera:
    model: CameraModel
    xi: float = 1.0  # pixel monitoring interval, us
    phi: float = 0.2  # contrast threshold, log units
    front_contrast: float = 0.3

    def __post_init__(self):
        if self.xi < 1:
            raise ConfigError("monitoring interval must be >= 1 us")
        if not self.phi > 0:
            raise ConfigError("contrast threshold must be > 0")

    def n_events(self, step):
        return np.floor(np.abs(step) / self.phi + 1e-12).astype(np.int64)

    def tick(self, t):
        return (np.ceil(np.asarray(t) / self.xi - 1e-9) * self.xi).astype(np.int64)


@dataclass(frozen=True)
class BlastScene:
    W: float = 0.6
    blast_world: tuple[float, float, float] = (0.0, 0.0, 1.5)
    t0: float = 3000.0
    duration: float = 26000.0
    clutter: ClutterSpec = field(default_factory=ClutterSpec)
    leds: tuple[LedMarkerSpec, ...] = ()
    front_width: int = 1
    r_init: float = 0.1
    constants: BlastConstants = DEFAULT_CONSTANTS

    def __post_init__(self):
        if not self.W > 0:
            raise ConfigError("charge mass must be > 0")
        if self.duration < 0:
            raise ConfigError("duration must be >= 0")
        if self.front_width < 1:
            raise ConfigError("front width must be >= 1 px")

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def track(self) -> RadiusTrack:
        return propagate_radius(self.W, max(self.duration, 1.0), self.constants, self.r_init)


# -- forward silhouette -----------------------------------------------------

def silhouette_image_point(geometry: ViewGeometry, r: float, alpha: float):
    """Image point of the sphere outline at angle ``alpha`` and its tangent point."""
    zeta = geometry.zeta
    if r >= zeta:
        raise OutOfModelError(f"radius {r} >= zeta {zeta}: front has passed the camera")
    theta = math.asin(r / zeta)
    a = solve_image_point(geometry, theta, alpha)
    X = reconstruct_point(geometry, r, a, alpha=alpha)
    return a, np.asarray(X.world)


# -- event generation -------------------------------------------------------

@dataclass(eq=False)
class _Batch:
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    p: list = field(default_factory=list)
    label: list = field(default_factory=list)

    def add(self, t, x, y, p, label):
        t = np.asarray(t, np.int64).ravel()
        n = len(t)
        self.t.append(t)
        self.x.append(np.broadcast_to(np.asarray(x, np.int64), t.shape).ravel())
        self.y.append(np.broadcast_to(np.asarray(y, np.int64), t.shape).ravel())
        self.p.append(np.broadcast_to(np.asarray(p, np.int64), t.shape).ravel())
        self.label.append(np.full(n, label, np.int8))

    def arrays(self):
        if not self.t:
            e = np.zeros(0, np.int64)
            return e, e, e, e, np.zeros(0, np.int8)
        return tuple(np.concatenate(v) for v in (self.t, self.x, self.y, self.p, self.label))


def _repeat_ticks(start_ticks, counts, xi, direction=1):
    """Consecutive ticks: ``counts[i]`` events beginning at ``start_ticks[i]``."""
    idx = np.repeat(np.arange(len(counts)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return idx, start_ticks[idx] + direction * offs * int(xi)


def _front_events(batch, cam, geometry, scene, track):
    h, w = cam.model.height, cam.model.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    x_b, y_b = geometry.blast_image
    s = np.hypot(xx - x_b, yy - y_b)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(s > 0, (xx - x_b) / s, 1.0)
        uy = np.where(s > 0, (yy - y_b) / s, 0.0)
    zeta = geometry.zeta
    n_per = int(cam.n_events(cam.front_contrast))
    if n_per == 0:
        return
    for k in range(scene.front_width):
        if k == 0:
            theta = view_angles(geometry, xx, yy)
        else:
            theta = view_angles(geometry, x_b + (s + k) * ux, y_b + (s + k) * uy)
        ok = theta < 0.5 * math.pi
        r = np.where(ok, zeta * np.sin(theta), np.nan)
        t_rel = track.time_of(r)
        m = np.isfinite(t_rel) & (t_rel <= scene.duration)
        if not m.any():
            continue
        ticks = cam.tick(scene.t0 + t_rel[m])
        counts = np.full(len(ticks), n_per)
        idx, tt = _repeat_ticks(ticks, counts, cam.xi)
        keep = tt < scene.t_end
        pol = 1 if k == 0 else -1
        batch.add(tt[keep], xx[m][idx][keep], yy[m][idx][keep], pol, FRONT)


def _firelight_events(batch, cam, geometry, scene, rng):
    c = scene.clutter
    if c.firelight_intensity <= 0 or c.firelight_extent <= 0 or c.firelight_t_len <= 0:
        return
    h, w = cam.model.height, cam.model.width
    x_b, y_b = geometry.blast_image
    yy, xx = np.mgrid[0:h, 0:w]
    s = np.hypot(xx - x_b, yy - y_b)
    m = s < c.firelight_extent
    level = c.firelight_intensity * (1.0 - s[m] / c.firelight_extent)
    n = cam.n_events(level)
    px, py = xx[m], yy[m]
    sel = n > 0
    px, py, n, level = px[sel], py[sel], n[sel], level[sel]
    if not len(n):
        return
    half = 0.5 * c.firelight_t_len
    t_start = scene.t0 + c.firelight_t_start
    idx = np.repeat(np.arange(len(n)), n)
    j = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + 1
    frac = j * cam.phi / level[idx]
    jitter = rng.uniform(0.0, 3.0, size=len(idx))
    up = t_start + frac * half + jitter
    down = t_start + half + frac * half + jitter
    for times, pol in ((up, 1), (down, -1)):
        tt = cam.tick(times)
        keep = tt < scene.t_end
        batch.add(tt[keep], px[idx][keep], py[idx][keep], pol, FIRELIGHT)


def _product_events(batch, cam, geometry, scene, rng):
    c = scene.clutter
    if c.product_rate <= 0 or c.product_max_radius <= 0:
        return
    h, w = cam.model.height, cam.model.width
    x_b, y_b = geometry.blast_image
    R = c.product_max_radius
    x0, x1 = max(0, int(x_b - R) - 1), min(w, int(x_b + R) + 2)
    y0, y1 = max(0, int(y_b - R) - 1), min(h, int(y_b + R) + 2)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    s = np.hypot(xx - x_b, yy - y_b)
    m = s < R
    px, py, ps = xx[m], yy[m], s[m]
    # disc radius R (1 - exp(-tau/tau_g)); pixel joins at tau_enter
    tau_e = -c.product_grow_us * np.log1p(-ps / R)
    tau_end = scene.duration
    texture = rng.uniform(0.5, 1.5, size=len(px))
    lam0 = c.product_rate * 1e-6 * texture  # per us
    td = c.product_decay_us
    a = np.exp(-tau_e / td)
    b = math.exp(-tau_end / td)
    mean = lam0 * td * np.clip(a - b, 0.0, None)
    n = rng.poisson(mean)
    idx = np.repeat(np.arange(len(n)), n)
    u = rng.uniform(size=len(idx))
    # inverse CDF of a truncated exponential on [tau_e, tau_end]
    tau = -td * np.log(a[idx] - u * (a[idx] - b))
    tt = cam.tick(scene.t0 + tau)
    pol = rng.choice(np.array([-1, 1]), size=len(idx))
    keep = tt < scene.t_end
    batch.add(tt[keep], px[idx][keep], py[idx][keep], pol[keep], PRODUCT)


def _noise_events(batch, cam, scene, rng):
    rate = scene.clutter.noise_rate
    if rate <= 0 or scene.t_end <= 0:
        return
    h, w = cam.model.height, cam.model.width
    n = rng.poisson(rate * 1e-6 * scene.t_end * w * h)
    tt = cam.tick(rng.uniform(0.0, scene.t_end, size=n))
    keep = tt < scene.t_end
    px = rng.integers(0, w, size=n)
    py = rng.integers(0, h, size=n)
    pol = rng.choice(np.array([-1, 1]), size=n)
    batch.add(tt[keep], px[keep], py[keep], pol[keep], NOISE)


def _led_events(batch, cam, scene, index):
    h, w = cam.model.height, cam.model.width
    for i, led in enumerate(scene.leds):
        try:
            u, v = cam.model.project(np.asarray(led.world, float))
        except GeometryError:
            continue
        rad = int(math.ceil(4 * led.sigma_px)) + 1
        xs = np.arange(max(0, int(round(u)) - rad), min(w, int(round(u)) + rad + 1))
        ys = np.arange(max(0, int(round(v)) - rad), min(h, int(round(v)) + rad + 1))
        if not len(xs) or not len(ys):
            continue
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        gx, gy = gx.ravel(), gy.ravel()
        step = np.log1p(led.brightness * np.exp(-((gx - u) ** 2 + (gy - v) ** 2) /
                                                (2 * led.sigma_px ** 2)))
        n = cam.n_events(step)
        sel = n > 0
        gx, gy, n = gx[sel], gy[sel], n[sel]
        if not len(n):
            continue
        t_off = scene.t0 if led.t_off is None else led.t_off
        phase = (37.0 * (i + 1)) % led.period_us
        on_times = np.arange(led.t_on + phase, t_off, led.period_us)
        for t_on in on_times:
            for t_edge, pol in ((t_on, 1), (t_on + led.duty * led.period_us, -1)):
                if t_edge >= t_off:
                    continue
                start = np.full(len(n), cam.tick(t_edge))
                idx, tt = _repeat_ticks(start, n, cam.xi)
                keep = tt < min(t_off, scene.t_end)
                batch.add(tt[keep], gx[idx][keep], gy[idx][keep], pol, LED)


@dataclass(frozen=True, eq=False)
class CameraOutput:
    stream: EventStream
    labels: np.ndarray
    geometry: ViewGeometry
    tallies: dict


@dataclass(frozen=True, eq=False)
class SimResult:
    scene: BlastScene
    cameras: tuple[CameraOutput, ...]
    track: RadiusTrack


def simulate_camera(scene: BlastScene, cam: SimCamera, index: int, seed: int,
                    track: RadiusTrack | None = None) -> CameraOutput:
    rng = np.random.default_rng([int(seed), int(index)])
    geometry = ViewGeometry.from_projection(cam.model, scene.blast_world)
    batch = _Batch()
    if scene.duration > 0:
        track = track or scene.track()
        _front_events(batch, cam, geometry, scene, track)
        _firelight_events(batch, cam, geometry, scene, rng)
        _product_events(batch, cam, geometry, scene, rng)
        _led_events(batch, cam, scene, index)
        _noise_events(batch, cam, scene, rng)
    t, x, y, p, label = batch.arrays()
    inside = (x >= 0) & (x < cam.model.width) & (y >= 0) & (y < cam.model.height) & (t >= 0)
    t, x, y, p, label = t[inside], x[inside], y[inside], p[inside], label[inside]
    order = np.lexsort((label, x, y, t))
    t, x, y, p, label = t[order], x[order], y[order], p[order], label[order]
    stream = EventStream(t, x, y, p, cam.model.width, cam.model.height)
    tallies = {name: int(np.count_nonzero(label == k)) for k, name in enumerate(LABELS)}
    return CameraOutput(stream, label, geometry, tallies)


def simulate_events(scene: BlastScene, cameras, seed: int = 0) -> SimResult:
    """Simulate every camera; identical seed and scene give identical output."""
    track = scene.track()
    outs = tuple(simulate_camera(scene, cam, i, seed, track) for i, cam in enumerate(cameras))
    return SimResult(scene, outs, track)


# -- default rig ------------------------------------------------------------

TABLE_I_INTRINSICS = (
    (856.54, (632.04, 355.46)),
    (855.27, (631.90, 364.76)),
    (852.26, (631.09, 342.95)),
)


def default_cameras(blast_world=(0.0, 0.0, 1.5)) -> list[SimCamera]:
    """Three cameras with table-like intrinsics on a ~22 m arc."""
    bw = np.asarray(blast_world, float)
    placements = (
        (-40.0, 21.0, 2.2, (0.25, -0.15)),
        (0.0, 22.5, 1.9, (-0.2, 0.1)),
        (35.0, 24.0, 2.5, (0.1, 0.2)),
    )
    cams = []
    for (f, pp), (az, dist, height, aim) in zip(TABLE_I_INTRINSICS, placements):
        a = math.radians(az)
        center = bw + np.array([dist * math.sin(a), -dist * math.cos(a), height - bw[2]])
        target = bw + np.array([aim[0], 0.0, aim[1]])
        cams.append(SimCamera(CameraModel.look_at(center, target, f, pp)))
    return cams


def default_leds(blast_world=(0.0, 0.0, 1.5)) -> tuple[LedMarkerSpec, ...]:
    bx, by, bz = blast_world
    spots = (
        (-5.0, 2.0, 0.3), (5.5, 1.0, 0.5), (-3.0, -4.0, 2.8), (3.5, -3.5, 3.3),
        (0.5, 4.5, 4.0), (-6.0, -1.0, 3.6), (6.0, 3.5, 2.0), (2.5, -5.0, 0.6),
    )
    return tuple(
        LedMarkerSpec(f"M{i + 1}", (bx + dx, by + dy, dz), 400.0 + 90.0 * i)
        for i, (dx, dy, dz) in enumerate(spots)
    )


def default_scene(clutter: bool = True) -> BlastScene:
    return BlastScene(clutter=ClutterSpec() if clutter else ClutterSpec.off(),
                      leds=default_leds())


# -- scene config -----------------------------------------------------------

def _vec(text, n, key):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != n:
        raise ConfigError(f"{key!r} needs {n} values")
    return tuple(vals)


_SCENE_KEYS = {"W", "blast", "t0", "duration", "front_width", "r_init"}
_PHYS_KEYS = {"eta", "P0", "c0"}
_CAM_KEYS = {"f", "principal", "center", "target", "up", "width", "height", "xi", "phi",
             "front_contrast"}
_LED_KEYS = {"world", "period_us", "duty", "brightness", "sigma", "t_on", "t_off"}


def _check_keys(section, allowed, name):
    unknown = set(section.keys()) - allowed
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")


def load_scene_config(path) -> tuple[BlastScene, list[SimCamera]]:
    """Read a scene config (INI sections: charge, physics, camera.N, clutter, led.ID).

    Missing sections fall back to the default rig.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known = {"charge", "physics", "clutter"}
    for name in cp.sections():
        if name not in known and not name.startswith(("camera.", "led.")):
            raise ConfigError(f"unknown section [{name}]")
    try:
        return _parse_scene(cp)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def _parse_scene(cp):
    constants = DEFAULT_CONSTANTS
    if "physics" in cp:
        sec = cp["physics"]
        _check_keys(sec, _PHYS_KEYS, "physics")
        constants = BlastConstants(**{k: float(v) for k, v in sec.items()})
    kw = {}
    if "charge" in cp:
        sec = cp["charge"]
        _check_keys(sec, _SCENE_KEYS, "charge")
        for key in ("W", "t0", "duration", "r_init"):
            if key in sec:
                kw[key] = float(sec[key])
        if "front_width" in sec:
            kw["front_width"] = int(sec["front_width"])
        if "blast" in sec:
            kw["blast_world"] = _vec(sec["blast"], 3, "blast")
    blast_world = kw.get("blast_world", (0.0, 0.0, 1.5))

    clutter = ClutterSpec()
    if "clutter" in cp:
        sec = cp["clutter"]
        allowed = set(ClutterSpec.__dataclass_fields__) | {"enabled"}
        _check_keys(sec, allowed, "clutter")
        if not sec.getboolean("enabled", True):
            clutter = ClutterSpec.off()
        values = {k: float(v) for k, v in sec.items() if k != "enabled"}
        clutter = replace(clutter, **values)

    led_sections = [s for s in cp.sections() if s.startswith("led.")]
    if led_sections:
        leds = []
        for name in led_sections:
            sec = cp[name]
            _check_keys(sec, _LED_KEYS, name)
            leds.append(LedMarkerSpec(
                name.split(".", 1)[1], _vec(sec["world"], 3, "world"), float(sec["period_us"]),
                duty=float(sec.get("duty", 0.5)), brightness=float(sec.get("brightness", 3.0)),
                sigma_px=float(sec.get("sigma", 1.5)), t_on=float(sec.get("t_on", 0.0)),
                t_off=float(sec["t_off"]) if "t_off" in sec else None))
        leds = tuple(leds)
    else:
        leds = default_leds(blast_world)

    cam_sections = sorted((s for s in cp.sections() if s.startswith("camera.")),
                          key=lambda s: int(s.split(".", 1)[1]))
    if cam_sections:
        cameras = []
        for name in cam_sections:
            sec = cp[name]
            _check_keys(sec, _CAM_KEYS, name)
            model = CameraModel.look_at(
                _vec(sec["center"], 3, "center"),
                _vec(sec.get("target", " ".join(map(str, blast_world))), 3, "target"),
                float(sec["f"]), _vec(sec["principal"], 2, "principal"),
                up=_vec(sec.get("up", "0 0 1"), 3, "up"),
                width=int(sec.get("width", 1280)), height=int(sec.get("height", 720)))
            cameras.append(SimCamera(model, xi=float(sec.get("xi", 1.0)),
                                     phi=float(sec.get("phi", 0.2)),
                                     front_contrast=float(sec.get("front_contrast", 0.3))))
    else:
        cameras = default_cameras(blast_world)
    scene = BlastScene(clutter=clutter, leds=leds, constants=constants, **kw)
    return scene, cameras


def write_scene_config(path, scene: BlastScene, cameras) -> None:
    """Write a scene config that reproduces ``scene`` and ``cameras`` exactly."""
    def vec(v):
        return " ".join(repr(float(x)) for x in v)

    lines = ["[charge]", f"W = {scene.W!r}", f"blast = {vec(scene.blast_world)}",
             f"t0 = {scene.t0!r}", f"duration = {scene.duration!r}",
             f"front_width = {scene.front_width}", f"r_init = {scene.r_init!r}", "",
             "[physics]", f"eta = {scene.constants.eta!r}", f"P0 = {scene.constants.P0!r}",
             f"c0 = {scene.constants.c0!r}", "", "[clutter]"]
    for key, value in vars(scene.clutter).items():
        lines.append(f"{key} = {value!r}")
    for i, cam in enumerate(cameras):
        m = cam.model
        C = m.optical_center
        lines += ["", f"[camera.{i}]", f"f = {m.f!r}", f"principal = {vec(m.principal)}",
                  f"center = {vec(C)}", f"target = {vec(C + m.principal_axis)}",
                  f"up = {vec(-m.rotation[1])}", f"width = {m.width}", f"height = {m.height}",
                  f"xi = {cam.xi!r}", f"phi = {cam.phi!r}",
                  f"front_contrast = {cam.front_contrast!r}"]
    for led in scene.leds:
        lines += ["", f"[led.{led.marker_id}]", f"world = {vec(led.world)}",
                  f"period_us = {led.period_us!r}", f"duty = {led.duty!r}",
                  f"brightness = {led.brightness!r}", f"sigma = {led.sigma_px!r}",
                  f"t_on = {led.t_on!r}"]
        if led.t_off is not None:
            lines.append(f"t_off = {led.t_off!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

"""LED-marker detection from event statistics and camera estimation from
2D-3D correspondences.

Convention: ``rotation`` maps world to camera coordinates, ``translation``
is the world origin in the camera frame, and the optical centre is
``C = -R^T T``. Intrinsics are a single focal length with zero skew and no
distortion.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DetectionError, EstimationError, ParseError, ValidationError
from .evcore import EventStream


@dataclass(frozen=True, eq=False)
class CameraModel:
    f: float
    principal: tuple[float, float]
    rotation: np.ndarray
    translation: np.ndarray
    reproj_error: float = 0.0
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValidationError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValidationError("rotation has negative determinant")
        if not self.f > 0:
            raise ValidationError(f"focal length must be > 0, got {self.f}")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)
        object.__setattr__(self, "principal", (float(self.principal[0]), float(self.principal[1])))

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.principal
        return np.array([[self.f, 0.0, cx], [0.0, self.f, cy], [0.0, 0.0, 1.0]])

    @property
    def optical_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def gamma(self) -> np.ndarray:
        """3x4 projection matrix; the third row yields camera depth."""
        return self.K @ np.hstack([self.rotation, self.translation[:, None]])

    @property
    def principal_axis(self) -> np.ndarray:
        return self.rotation[2].copy()

    def project(self, X) -> np.ndarray:
        from .geom import project_point
        return project_point(self.gamma, X)

    @classmethod
    def look_at(cls, center, target, f, principal, up=(0.0, 0.0, 1.0), **kw) -> "CameraModel":
        """Camera at ``center`` whose principal axis points at ``target``.

        Image x runs right and image y runs down relative to ``up``.
        """
        center = np.asarray(center, float)
        z = np.asarray(target, float) - center
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.vstack([x, y, z])
        return cls(f, principal, R, -R @ center, **kw)


# -- trigger statistics -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriggerMatrices:
    D: np.ndarray
    D_pos: np.ndarray
    D_neg: np.ndarray
    window: tuple[int, int]

    @property
    def balanced(self) -> np.ndarray:
        """Per-pixel weight ``min(D_pos, D_neg)``."""
        return np.minimum(self.D_pos, self.D_neg)


def accumulate_trigger_matrices(stream: EventStream, window) -> TriggerMatrices:
    """Per-pixel trigger counts over ``[t_start, t_end)``, indexed ``[y, x]``."""
    t_start, t_end = int(window[0]), int(window[1])
    ev = stream.time_window(t_start, t_end)
    shape = (stream.height, stream.width)
    flat = ev.y.astype(np.int64) * stream.width + ev.x
    size = shape[0] * shape[1]
    pos = np.bincount(flat[ev.p > 0], minlength=size).reshape(shape)
    neg = np.bincount(flat[ev.p < 0], minlength=size).reshape(shape)
    return TriggerMatrices(pos + neg, pos, neg, (t_start, t_end))


def led_coarse(matrices: TriggerMatrices, D=None) -> tuple[int, int]:
    """Pixel with the most triggers; ties go to the smallest y, then x."""
    D = matrices.D if D is None else D
    if D.size == 0 or D.max() <= 0:
        raise DetectionError("no triggers in window; cannot locate marker")
    y, x = np.unravel_index(int(np.argmax(D)), D.shape)
    return int(x), int(y)


def led_refine(matrices: TriggerMatrices, coarse, q: int = 5) -> tuple[float, float]:
    """Centroid of ``min(D_pos, D_neg)`` over the ``(2q+1)``-square window."""
    x0, y0 = coarse
    h, w = matrices.D.shape
    xs = slice(max(0, x0 - q), min(w, x0 + q + 1))
    ys = slice(max(0, y0 - q), min(h, y0 + q + 1))
    Dp = matrices.balanced[ys, xs].astype(np.float64)
    total = Dp.sum()
    if total <= 0:
        raise DetectionError(f"no balanced-polarity support around {coarse}")
    gy, gx = np.mgrid[ys, xs]
    return float((gx * Dp).sum() / total), float((gy * Dp).sum() / total)


@dataclass(frozen=True)
class LedDetection:
    coarse: tuple[int, int]
    refined: tuple[float, float]
    support: float
    marker_id: str | None = None
    period_us: float | None = None


def estimate_flicker_period(stream: EventStream, max_lag: int = 20000) -> float:
    """Dominant period (us) from the autocorrelation of the per-us event rate."""
    if len(stream) < 4:
        raise DetectionError("too few events to estimate a flicker period")
    rate = np.bincount(stream.t - stream.t[0]).astype(np.float64)
    rate -= rate.mean()
    n = len(rate)
    spec = np.fft.rfft(rate, 2 * n)
    ac = np.fft.irfft(spec * np.conj(spec))[:min(n, max_lag)]
    if len(ac) < 4 or ac[0] <= 0:
        raise DetectionError("flat event rate; no flicker found")
    # first local maximum after the autocorrelation has dipped below zero
    below = np.flatnonzero(ac < 0)
    if not len(below):
        raise DetectionError("no periodicity in event rate")
    start = below[0]
    lag = start + int(np.argmax(ac[start:]))
    return float(lag)


def _burst_period(times, min_coincident: int = 2) -> float | None:
    # an LED edge fires many pixels on the same tick; lone events are noise
    times, counts = np.unique(times, return_counts=True)
    times = times[counts >= min_coincident]
    if len(times) < 3:
        return None
    starts = times[np.concatenate([[True], np.diff(times) > 1])]
    if len(starts) < 2:
        return None
    return float(np.median(np.diff(starts)))


def detect_markers(stream: EventStream, markers, q: int = 5, t_start=None,
                   window_us: float | None = None) -> list[LedDetection]:
    """Locate every configured marker and tie it to its id by flicker period.

    The trigger window spans one period of the slowest marker unless
    ``window_us`` overrides it. Blobs are
    taken greedily (coarse peak, refine, suppress) and matched to markers by
    the period measured from the positive-polarity bursts at each blob.
    """
    if not markers:
        raise ConfigError("no markers configured")
    t0 = int(stream.t[0]) if t_start is None else int(t_start)
    period = max(m.period_us for m in markers) if window_us is None else float(window_us)
    if period < 2:
        raise ValidationError("trigger window must be >= 2 us")
    mats = accumulate_trigger_matrices(stream, (t0, t0 + int(math.ceil(period)) + 1))
    D = mats.D.copy()
    found = []
    for _ in markers:
        coarse = led_coarse(mats, D)
        refined = led_refine(mats, coarse, q)
        x0, y0 = coarse
        support = float(mats.balanced[max(0, y0 - q):y0 + q + 1, max(0, x0 - q):x0 + q + 1].sum())
        found.append((coarse, refined, support))
        D[max(0, y0 - 2 * q):y0 + 2 * q + 1, max(0, x0 - 2 * q):x0 + 2 * q + 1] = 0

    if len(markers) == 1:
        (coarse, refined, support), = found
        m = markers[0]
        return [LedDetection(coarse, refined, support, m.marker_id, m.period_us)]

    measured = []
    for coarse, _, _ in found:
        x0, y0 = coarse
        near = (np.abs(stream.x - x0) <= q) & (np.abs(stream.y - y0) <= q) & (stream.p > 0)
        measured.append(_burst_period(stream.t[near]))
    if any(p is None for p in measured):
        raise DetectionError("could not measure flicker period at every marker")
    cost = np.abs(np.log(np.asarray(measured)[:, None] /
                         np.asarray([m.period_us for m in markers])[None, :]))
    rows, cols = optimize.linear_sum_assignment(cost)
    out = []
    for r, c in sorted(zip(rows, cols), key=lambda rc: rc[1]):
        coarse, refined, support = found[r]
        out.append(LedDetection(coarse, refined, support, markers[c].marker_id, measured[r]))
    return out


# -- projection estimation --------------------------------------------------

@dataclass(frozen=True)
class Correspondence:
    image: tuple[float, float]
    world: tuple[float, float, float]


def _split(correspondences):
    img = np.array([c.image for c in correspondences], dtype=np.float64)
    wld = np.array([c.world for c in correspondences], dtype=np.float64)
    if not (np.isfinite(img).all() and np.isfinite(wld).all()):
        raise ValidationError("correspondences must be finite")
    return img, wld


def _similarity(points):
    c = points.mean(axis=0)
    dist = np.linalg.norm(points - c, axis=1).mean()
    dim = points.shape[1]
    s = math.sqrt(dim) / dist if dist > 0 else 1.0
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * c
    return T


def dlt(image, world, normalize: bool = True) -> np.ndarray:
    """3x4 projection matrix minimizing the algebraic error."""
    n = len(image)
    if normalize:
        T2, T3 = _similarity(image), _similarity(world)
    else:
        T2, T3 = np.eye(3), np.eye(4)
    xh = (T2 @ np.column_stack([image, np.ones(n)]).T).T
    Xh = (T3 @ np.column_stack([world, np.ones(n)]).T).T
    A = np.zeros((2 * n, 12))
    for i in range(n):
        X = Xh[i]
        x, y, w = xh[i]
        A[2 * i, 4:8] = -w * X
        A[2 * i, 8:12] = y * X
        A[2 * i + 1, 0:4] = w * X
        A[2 * i + 1, 8:12] = -x * X
    _, s, Vt = np.linalg.svd(A)
    if s[-2] <= 1e-12 * s[0]:
        raise EstimationError("rank-deficient DLT system (degenerate point configuration)")
    P = Vt[-1].reshape(3, 4)
    return np.linalg.inv(T2) @ P @ T3


def decompose_projection(P) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``P ~ K [R | T]`` into upper-triangular ``K`` (K[2,2]=1), ``R``, ``T``."""
    P = np.asarray(P, dtype=np.float64)
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = -M
    K, R = linalg.rq(M)
    S = np.diag(np.sign(np.diag(K)))
    K, R = K @ S, S @ R
    lam = K[2, 2]
    K = K / lam
    T = np.linalg.solve(K, P[:, 3]) / lam
    return K, R, T


def reprojection_error(model: CameraModel, correspondences) -> float:
    """RMS image distance between observed points and projected world points."""
    from .geom import project_point
    img, wld = _split(correspondences)
    proj = project_point(model.gamma, wld)
    return float(np.sqrt(np.mean(np.sum((proj - img) ** 2, axis=1))))


def estimate_projection(correspondences, normalize: bool = True, refine: bool = True,
                        width: int = 1280, height: int = 720) -> CameraModel:
    """Camera model from at least six non-coplanar correspondences.

    The DLT solution is decomposed into a square-pixel, zero-skew camera and,
    with ``refine``, polished by minimizing the geometric reprojection error.
    """
    if len(correspondences) < 6:
        raise EstimationError(f"need >= 6 correspondences, got {len(correspondences)}")
    img, wld = _split(correspondences)
    centred = wld - wld.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[2] <= 1e-9 * s[0]:
        raise EstimationError("world points are coplanar; projection is not identifiable")
    P = dlt(img, wld, normalize=normalize)
    K, R, T = decompose_projection(P)
    f = 0.5 * (K[0, 0] + K[1, 1])
    model = CameraModel(f, (K[0, 2], K[1, 2]), R, T, width=width, height=height)
    if refine:
        model = _refine(model, img, wld)
    err = reprojection_error(model, correspondences)
    return CameraModel(model.f, model.principal, model.rotation, model.translation, err,
                       width, height)


def _refine(model, img, wld):
    from .geom import project_point

    def unpack(p):
        R = Rotation.from_rotvec(p[3:6]).as_matrix()
        return CameraModel(p[0], (p[1], p[2]), R, p[6:9], width=model.width, height=model.height)

    def residual(p):
        return (project_point(unpack(p).gamma, wld) - img).ravel()

    p0 = np.concatenate([[model.f, *model.principal],
                         Rotation.from_matrix(model.rotation).as_rotvec(), model.translation])
    res = optimize.least_squares(residual, p0, method="lm")
    return unpack(res.x)


# -- file formats -----------------------------------------------------------

def _floats(text, n, key):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != n:
        raise ParseError(f"camera key {key!r} needs {n} values, got {len(vals)}")
    return vals


def write_camera(path, model: CameraModel) -> None:
    def fmt(values):
        return " ".join(repr(float(v)) for v in np.ravel(values))

    lines = [
        "[camera]",
        f"f = {fmt([model.f])}",
        f"cx = {fmt([model.principal[0]])}",
        f"cy = {fmt([model.principal[1]])}",
        f"R = {fmt(model.rotation)}",
        f"T = {fmt(model.translation)}",
        f"C = {fmt(model.optical_center)}",
        f"reproj_error = {fmt([model.reproj_error])}",
        f"width = {model.width}",
        f"height = {model.height}",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_camera(path) -> CameraModel:
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if "camera" not in cp:
        raise ParseError(f"{path}: missing [camera] section")
    sec = cp["camera"]
    try:
        model = CameraModel(
            _floats(sec["f"], 1, "f")[0],
            (_floats(sec["cx"], 1, "cx")[0], _floats(sec["cy"], 1, "cy")[0]),
            np.array(_floats(sec["R"], 9, "R")).reshape(3, 3),
            np.array(_floats(sec["T"], 3, "T")),
            float(sec.get("reproj_error", "0")),
            int(sec.get("width", "1280")),
            int(sec.get("height", "720")),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing key {exc}") from None
    if "C" in sec:
        C = np.array(_floats(sec["C"], 3, "C"))
        if np.abs(C - model.optical_center).max() > 1e-6:
            raise ValidationError(f"{path}: C disagrees with -R^T T")
    return model


@dataclass(frozen=True)
class MarkerSpec:
    marker_id: str
    world: tuple[float, float, float]
    period_us: float


def read_markers(path) -> list[MarkerSpec]:
    """Marker config: ``marker_id, X, Y, Z, period_us`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise ParseError("expected 'marker_id, X, Y, Z, period_us'", line=lineno)
            try:
                X, Y, Z, period = (float(v) for v in parts[1:])
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", line=lineno) from None
            if period < 2:
                raise ValidationError(f"line {lineno}: period must be >= 2 us")
            out.append(MarkerSpec(parts[0], (X, Y, Z), period))
    return out


def write_markers(path, markers) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# marker_id, X, Y, Z, period_us\n")
        for m in markers:
            X, Y, Z = m.world
            fh.write(f"{m.marker_id}, {X!r}, {Y!r}, {Z!r}, {m.period_us!r}\n")

"""Tangent-sphere geometry: image points to physical radius, radius-time
polynomials and their derivative, cross-view image points and 3D front
points.

Image quantities are pixels, world quantities metres, time microseconds.
The only unit conversion lives in :func:`velocity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize

from .calib import CameraModel
from .errors import (DomainError, FitError, GeometryError, OutOfModelError, ProjectionError,
                     ReconstructionError, ValidationError)
from .evcore import BlastImagePoint

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True, eq=False)
class ViewGeometry:
    camera: CameraModel
    blast_image: tuple[float, float]
    blast_world: np.ndarray

    def __post_init__(self):
        bi = self.blast_image
        if isinstance(bi, BlastImagePoint):
            bi = (bi.x_b, bi.y_b)
        object.__setattr__(self, "blast_image", (float(bi[0]), float(bi[1])))
        bw = np.array(self.blast_world, dtype=np.float64).reshape(3)
        bw.setflags(write=False)
        object.__setattr__(self, "blast_world", bw)

    @classmethod
    def from_projection(cls, camera: CameraModel, blast_world) -> "ViewGeometry":
        x, y = project_point(camera.gamma, blast_world)
        return cls(camera, (x, y), blast_world)

    @property
    def zeta(self) -> float:
        return float(np.linalg.norm(self.blast_world - self.camera.optical_center))

    @property
    def blast_point(self) -> BlastImagePoint:
        return BlastImagePoint(*self.blast_image)


# -- radius from a single image point ---------------------------------------

def ray_lengths(geometry: ViewGeometry, a) -> tuple[float, float, float]:
    """Pixel-space lengths |CA|, |CB|, |AB| for image point ``a``."""
    x_o, y_o = geometry.camera.principal
    x_b, y_b = geometry.blast_image
    f = geometry.camera.f
    x_a, y_a = a
    CA = math.sqrt((x_o - x_a) ** 2 + (y_o - y_a) ** 2 + f * f)
    CB = math.sqrt((x_o - x_b) ** 2 + (y_o - y_b) ** 2 + f * f)
    AB = math.hypot(x_a - x_b, y_a - y_b)
    return CA, CB, AB


def view_angle(lengths) -> float:
    """Angle at C opposite side AB (law of cosines)."""
    CA, CB, AB = lengths
    if not (CA > 0 and CB > 0):
        raise GeometryError("ray lengths must be positive")
    c = (CA * CA + CB * CB - AB * AB) / (2.0 * CB * CA)
    if abs(c) > 1.0 + 1e-12:
        raise GeometryError(f"inconsistent lengths (cos = {c:.15g})")
    # Kahan's stable form; acos(c) loses ~1e-8 rad near zero
    a, b = max(CA, CB), min(CA, CB)
    mu = AB - (a - b) if b >= AB else b - (a - AB)
    num = ((a - b) + AB) * mu
    den = (a + (b + AB)) * ((a - AB) + b)
    if den <= 0:
        return math.pi
    return 2.0 * math.atan(math.sqrt(max(num, 0.0) / den))


def _theta_from_values(x_o, y_o, x_a, y_a, x_b, y_b, f) -> float:
    CA = math.sqrt((x_o - x_a) ** 2 + (y_o - y_a) ** 2 + f * f)
    CB = math.sqrt((x_o - x_b) ** 2 + (y_o - y_b) ** 2 + f * f)
    AB2 = (x_a - x_b) ** 2 + (y_a - y_b) ** 2
    c = (CA * CA + CB * CB - AB2) / (2.0 * CB * CA)
    return math.acos(min(1.0, max(-1.0, c)))


def view_angles(geometry: ViewGeometry, x, y) -> np.ndarray:
    """Vectorized view angle for image points ``(x, y)``."""
    x_o, y_o = geometry.camera.principal
    x_b, y_b = geometry.blast_image
    f = geometry.camera.f
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    CA2 = (x_o - x) ** 2 + (y_o - y) ** 2 + f * f
    CB2 = (x_o - x_b) ** 2 + (y_o - y_b) ** 2 + f * f
    AB2 = (x - x_b) ** 2 + (y - y_b) ** 2
    c = (CA2 + CB2 - AB2) / (2.0 * np.sqrt(CB2 * CA2))
    return np.arccos(np.clip(c, -1.0, 1.0))


def radius_from_event(zeta: float, theta: float) -> float:
    if not 0.0 <= theta < HALF_PI:
        raise OutOfModelError(f"view angle {theta:.6g} rad outside [0, pi/2): front reached camera")
    return zeta * math.sin(theta)


class FrontSample(NamedTuple):
    view: int
    alpha: float
    t: int
    r: float
    theta: float


def radii_for_points(geometry: ViewGeometry, x, y) -> tuple[np.ndarray, np.ndarray]:
    """``(theta, r)`` for arrays of image points."""
    theta = view_angles(geometry, x, y)
    if np.any(theta >= HALF_PI):
        raise OutOfModelError("some image points imply a view angle >= pi/2")
    return theta, geometry.zeta * np.sin(theta)


# -- radius-time polynomial -------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadiusTimeModel:
    """Least-squares polynomial r(t); coefficients are in the scaled time
    variable mapping ``t_domain`` onto [-1, 1]."""

    coeffs: np.ndarray
    t_domain: tuple[float, float]
    rms_residual: float = 0.0
    monotone: bool = True
    n_samples: int = 0

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coeffs, domain=list(self.t_domain), window=[-1.0, 1.0])

    def covers(self, t) -> bool:
        return self.t_domain[0] <= t <= self.t_domain[1]

    def _check(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any((t < self.t_domain[0]) | (t > self.t_domain[1])):
            raise DomainError(f"t outside model domain {self.t_domain}")
        return t

    def radius(self, t):
        t = self._check(t)
        out = self.poly(t)
        return float(out) if out.ndim == 0 else out

    def time_at_radius(self, r: float) -> float | None:
        """Time at which the fitted radius first equals ``r``, if in domain."""
        p = self.poly
        lo, hi = self.t_domain
        grid = np.linspace(lo, hi, 257)
        vals = p(grid) - r
        idx = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)
        if not len(idx):
            return None
        i = int(idx[0])
        if vals[i] == 0:
            return float(grid[i])
        return float(optimize.brentq(lambda t: p(t) - r, grid[i], grid[i + 1], xtol=1e-9))

    def to_dict(self) -> dict:
        return {"coeffs": [float(c) for c in self.coeffs], "degree": self.degree,
                "t_domain": [float(self.t_domain[0]), float(self.t_domain[1])],
                "rms_residual": float(self.rms_residual), "monotone": bool(self.monotone),
                "n_samples": int(self.n_samples)}

    @classmethod
    def from_dict(cls, data) -> "RadiusTimeModel":
        return cls(np.asarray(data["coeffs"], dtype=np.float64), tuple(data["t_domain"]),
                   data.get("rms_residual", 0.0), data.get("monotone", True),
                   data.get("n_samples", 0))


def fit_radius_time(t, r, degree: int = 3) -> RadiusTimeModel:
    """Least-squares polynomial over time scaled to [-1, 1].

    A fit that decreases anywhere on its domain (checked at 1 us steps) is
    returned with ``monotone=False`` rather than rejected.
    """
    if not 1 <= degree <= 6:
        raise ValidationError(f"polynomial degree must be in 1..6, got {degree}")
    t = np.asarray(t, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if len(t) != len(r):
        raise ValidationError("t and r differ in length")
    if len(np.unique(t)) < degree + 1:
        raise FitError(f"need >= {degree + 1} distinct times for degree {degree}, got "
                       f"{len(np.unique(t))}")
    lo, hi = float(t.min()), float(t.max())
    p = Polynomial.fit(t, r, degree, domain=[lo, hi], window=[-1.0, 1.0])
    coeffs = np.zeros(degree + 1)
    coeffs[:len(p.coef)] = p.coef
    rms = float(np.sqrt(np.mean((p(t) - r) ** 2)))
    steps = np.arange(lo, hi + 1.0, 1.0)
    monotone = bool(np.all(np.diff(p(steps)) >= -1e-12))
    return RadiusTimeModel(coeffs, (lo, hi), rms, monotone, len(t))


def velocity(model: RadiusTimeModel, t):
    """Front velocity in m/s at ``t`` (us) from the analytic derivative."""
    t = model._check(t)
    out = model.poly.deriv()(t) * 1e6
    return float(out) if out.ndim == 0 else out


# -- cross-view projection and 3D reconstruction -----------------------------

def solve_image_point(geometry: ViewGeometry, theta: float, alpha: float) -> tuple[float, float]:
    """Image point at polar angle ``alpha`` (deg) whose view angle is ``theta``.

    With ``A = B + s (cos a, sin a)`` the angle constraint squares to a
    quadratic in ``s``; the admissible root is confirmed by recomputing the
    view angle.
    """
    if not 0.0 <= theta < HALF_PI:
        raise OutOfModelError(f"view angle {theta:.6g} rad outside [0, pi/2)")
    x_b, y_b = geometry.blast_image
    if theta == 0.0:
        return x_b, y_b
    x_o, y_o = geometry.camera.principal
    f = geometry.camera.f
    a = math.radians(alpha)
    ux, uy = math.cos(a), math.sin(a)
    bx, by = x_b - x_o, y_b - y_o
    B2 = bx * bx + by * by + f * f
    g = ux * bx + uy * by
    c2 = math.cos(theta) ** 2
    s2 = math.sin(theta) ** 2
    qa = g * g - c2 * B2
    qb = 2.0 * B2 * g * s2
    qc = B2 * B2 * s2
    roots = []
    if abs(qa) <= 1e-15 * B2:
        if qb != 0:
            roots.append(-qc / qb)
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0:
            sq = math.sqrt(disc)
            q = -0.5 * (qb + math.copysign(sq, qb))
            if q != 0:
                roots.extend([q / qa, qc / q])
    best = None
    for s in roots:
        if not s > 0 or B2 + s * g < 0:
            continue
        pt = (x_b + s * ux, y_b + s * uy)
        err = abs(view_angle(ray_lengths(geometry, pt)) - theta)
        if err <= 1e-9 and (best is None or err < best[0]):
            best = (err, pt)
    if best is None:
        raise ProjectionError(f"no image point at alpha={alpha:.3f} deg for theta={theta:.6g} rad")
    return best[1]


@dataclass(frozen=True)
class ReconstructedPoint:
    world: tuple[float, float, float]
    view: int
    alpha: float
    t: float
    tangency_residual: float
    sphere_residual: float


def viewing_ray(camera: CameraModel, image_point) -> tuple[np.ndarray, np.ndarray]:
    """Origin and unit direction of the ray defined by the two projection rows."""
    G = camera.gamma
    x, y = image_point
    rows = np.vstack([G[0] - x * G[2], G[1] - y * G[2]])
    d = np.cross(rows[0, :3], rows[1, :3])
    d /= np.linalg.norm(d)
    if d @ camera.principal_axis < 0:
        d = -d
    return camera.optical_center, d


def reconstruct_point(geometry: ViewGeometry, r: float, image_point, view: int = 0,
                      alpha: float = float("nan"), t: float = float("nan"),
                      tol: float = 1e-6) -> ReconstructedPoint:
    """3D tangent point: closest approach of the viewing ray to the blast centre.

    Raises when the ray misses the sphere by more than ``tol`` (relative to
    zeta squared).
    """
    zeta = geometry.zeta
    if not 0 <= r < zeta:
        raise ReconstructionError(f"radius {r} outside [0, zeta={zeta:.6g})")
    C, d = viewing_ray(geometry.camera, image_point)
    B = geometry.blast_world
    lam = float(d @ (B - C))
    target = zeta * zeta - r * r
    disc = lam * lam - target
    if disc < -tol * zeta * zeta:
        raise ReconstructionError(f"viewing ray misses the sphere (discriminant {disc:.3g})")
    X = C + lam * d
    tangency = float(np.sum((X - C) ** 2) - target)
    sphere = float(abs(np.linalg.norm(X - B) - r))
    return ReconstructedPoint(tuple(float(v) for v in X), view, alpha, t, tangency, sphere)


def reconstruct_points(geometry: ViewGeometry, r, x, y, tol: float = 1e-6):
    """Vectorized ``reconstruct_point``: world points (n, 3), tangency and
    sphere residuals for image points ``(x, y)`` with radii ``r``."""
    r = np.asarray(r, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    zeta = geometry.zeta
    if np.any((r < 0) | (r >= zeta)):
        raise ReconstructionError(f"radius outside [0, zeta={zeta:.6g})")
    cam = geometry.camera
    G = cam.gamma
    rows0 = G[0, :3][None, :] - x[:, None] * G[2, :3][None, :]
    rows1 = G[1, :3][None, :] - y[:, None] * G[2, :3][None, :]
    d = np.cross(rows0, rows1)
    d /= np.linalg.norm(d, axis=1)[:, None]
    d *= np.where(d @ cam.principal_axis < 0, -1.0, 1.0)[:, None]
    C = cam.optical_center
    B = geometry.blast_world
    lam = d @ (B - C)
    target = zeta * zeta - r * r
    if np.any(lam * lam - target < -tol * zeta * zeta):
        raise ReconstructionError("a viewing ray misses the sphere")
    X = C[None, :] + lam[:, None] * d
    tangency = np.sum((X - C) ** 2, axis=1) - target
    sphere = np.abs(np.linalg.norm(X - B, axis=1) - r)
    return X, tangency, sphere


def project_point(gamma, X) -> np.ndarray:
    """Pinhole projection with homogeneous normalization; accepts (3,) or (n, 3)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    Xh = np.column_stack([np.atleast_2d(X), np.ones(len(np.atleast_2d(X)))])
    h = Xh @ gamma.T
    scale = np.abs(gamma[2, :3]).max() * (np.abs(Xh[:, :3]).max() + 1.0)
    if np.any(np.abs(h[:, 2]) <= 1e-12 * scale):
        raise ProjectionError("point lies on the principal plane (projects to infinity)")
    xy = h[:, :2] / h[:, 2:3]
    return xy[0] if single else xy


# -- statistics -------------------------------------------------------------

def aggregate_statistics(values) -> tuple[float, float, float]:
    """Mean, median and population standard deviation (sorted reduction)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        raise ValidationError("no values to aggregate")
    return float(np.mean(v)), float(np.median(v)), float(np.std(v))

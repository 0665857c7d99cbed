"""Shock physics: Mach/overpressure relations, the scaled-distance law,
TNT-equivalence inversion and radius uncertainty intervals.

Units: velocities in m/s, radii in m, charge mass in kg, ``P0`` in kPa.
The scaled-distance law returns MPa; ``overpressure_from_mach`` returns kPa.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, DomainError, NumericError, SubsonicError

# scaled-distance law coefficients (MPa, delta in m/kg^(1/3))
_A1, _A2, _A3 = 0.108, 0.114, 1.772


@dataclass(frozen=True)
class BlastConstants:
    eta: float = 1.4
    P0: float = 101.325  # kPa
    c0: float = 340.0  # m/s

    def __post_init__(self):
        if not self.eta > 1:
            raise ConfigError(f"eta must be > 1, got {self.eta}")
        if not self.P0 > 0:
            raise ConfigError(f"P0 must be > 0, got {self.P0}")
        if not self.c0 > 0:
            raise ConfigError(f"c0 must be > 0, got {self.c0}")


DEFAULT_CONSTANTS = BlastConstants()


@dataclass(frozen=True)
class ChargeEstimate:
    W: float  # kg TNT
    delta: float  # m/kg^(1/3)
    P: float  # MPa
    v: float  # m/s
    r: float  # m

    @property
    def grams(self) -> float:
        return self.W * 1000.0


def overpressure_from_mach(M: float, constants: BlastConstants = DEFAULT_CONSTANTS) -> float:
    """Rankine-Hugoniot overpressure in kPa for a front at Mach ``M``."""
    if M < 1:
        raise SubsonicError(f"Mach number {M:.6g} < 1 is not a shock")
    eta = constants.eta
    return 2.0 * eta / (eta + 1.0) * (M * M - 1.0) * constants.P0


def overpressure_from_scaled_distance(delta: float) -> float:
    """Empirical overpressure in MPa at scaled distance ``delta``."""
    if not delta > 0:
        raise DomainError(f"scaled distance must be > 0, got {delta}")
    u = 1.0 / delta
    return ((_A3 * u + _A2) * u + _A1) * u


def mach_from_overpressure(P_kpa: float, constants: BlastConstants = DEFAULT_CONSTANTS) -> float:
    eta = constants.eta
    return math.sqrt(1.0 + P_kpa * (eta + 1.0) / (2.0 * eta * constants.P0))


def velocity_from_scaled_distance(delta: float, constants: BlastConstants = DEFAULT_CONSTANTS) -> float:
    P_kpa = overpressure_from_scaled_distance(delta) * 1000.0
    return constants.c0 * mach_from_overpressure(P_kpa, constants)


def velocity_at(r: float, W: float, constants: BlastConstants = DEFAULT_CONSTANTS) -> float:
    """Front velocity of a ``W`` kg charge at radius ``r``."""
    if not W > 0:
        raise DomainError(f"charge mass must be > 0, got {W}")
    return velocity_from_scaled_distance(r / W ** (1.0 / 3.0), constants)


def invert_charge(r: float, v: float, constants: BlastConstants = DEFAULT_CONSTANTS) -> ChargeEstimate:
    """TNT-equivalent charge from a front velocity ``v`` observed at radius ``r``.

    The cubic in ``u = 1/delta`` is solved by bisection on ``(1e-6, 1e3)``.
    """
    if not r > 0:
        raise DomainError(f"radius must be > 0, got {r}")
    if not v > constants.c0:
        raise SubsonicError(f"velocity {v:.6g} m/s does not exceed c0={constants.c0} m/s")
    P_mpa = overpressure_from_mach(v / constants.c0, constants) / 1000.0

    def residual(u):
        return ((_A3 * u + _A2) * u + _A1) * u - P_mpa

    lo, hi = 1e-6, 1e3
    if residual(lo) * residual(hi) > 0:
        raise NumericError(f"no bracket for overpressure {P_mpa:.6g} MPa on u in ({lo}, {hi})")
    u = optimize.bisect(residual, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=2000)
    delta = 1.0 / u
    W = (r * u) ** 3
    return ChargeEstimate(W=W, delta=delta, P=P_mpa, v=v, r=r)


@dataclass(frozen=True)
class UncertaintyBudget:
    """Half-widths of the error box. Pixel terms are per axis."""

    eps_zeta: float = 0.001
    eps_f: float = 20.0
    eps_xo: float = 5.0
    eps_yo: float = 5.0
    eps_a: float = 2.0
    eps_pi: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")

    def half_widths(self) -> np.ndarray:
        # order: zeta, f, xo, yo, a_x, a_y, pi_x, pi_y
        return np.array([self.eps_zeta, self.eps_f, self.eps_xo, self.eps_yo,
                         self.eps_a, self.eps_a, self.eps_pi, self.eps_pi])


@dataclass(frozen=True)
class RadiusInterval:
    r_lo: float
    nominal: float
    r_hi: float
    conservative: bool = False

    @property
    def width(self) -> float:
        return self.r_hi - self.r_lo

    def contains(self, r: float) -> bool:
        return self.r_lo <= r <= self.r_hi


def _perturbed_radius(geometry, image_point, delta):
    from .geom import _theta_from_values

    x_a, y_a = image_point
    x_b, y_b = geometry.blast_image
    x_o, y_o = geometry.camera.principal
    d_zeta, d_f, d_xo, d_yo, d_ax, d_ay, d_px, d_py = delta
    theta = _theta_from_values(
        x_o + d_xo, y_o + d_yo,
        x_a + d_ax + d_px, y_a + d_ay + d_py,
        x_b + d_px, y_b + d_py,
        geometry.camera.f + d_f,
    )
    clamped = False
    if theta >= math.pi / 2:
        theta = math.nextafter(math.pi / 2, 0.0)
        clamped = True
    return (geometry.zeta + d_zeta) * math.sin(theta), clamped


def radius_uncertainty(geometry, image_point, budget: UncertaintyBudget,
                       polish: bool = True) -> RadiusInterval:
    """Interval on the radius implied by ``image_point`` under an error box.

    Every sign corner of the box is evaluated. Because the view angle is not
    monotone in the principal-point and pixel offsets, the corner extremes are
    then polished by a bounded local search, which can only widen the result.
    """
    hw = budget.half_widths()
    nominal, _ = _perturbed_radius(geometry, image_point, np.zeros(8))
    active = hw > 0
    if not active.any():
        return RadiusInterval(nominal, nominal, nominal)

    conservative = False
    values = []
    corners = []
    for signs in itertools.product((-1.0, 1.0), repeat=int(active.sum())):
        delta = np.zeros(8)
        delta[active] = np.asarray(signs) * hw[active]
        r, clamped = _perturbed_radius(geometry, image_point, delta)
        conservative |= clamped
        values.append(r)
        corners.append(delta)
    values = np.asarray(values)
    r_lo, r_hi = min(values.min(), nominal), max(values.max(), nominal)

    if polish:
        bounds = [(-h, h) for h in hw]
        scale = np.where(hw > 0, hw, 1.0)

        def run(sign, start):
            res = optimize.minimize(
                lambda z: sign * _perturbed_radius(geometry, image_point, z * scale)[0],
                start / scale, method="L-BFGS-B",
                bounds=[(lo / s, hi / s) for (lo, hi), s in zip(bounds, scale)],
            )
            return sign * res.fun

        order = np.argsort(values)
        starts_lo = [corners[order[0]], np.zeros(8)]
        starts_hi = [corners[order[-1]], np.zeros(8)]
        for start in starts_lo:
            r_lo = min(r_lo, run(1.0, start))
        for start in starts_hi:
            r_hi = max(r_hi, run(-1.0, start))
    return RadiusInterval(float(r_lo), float(nominal), float(r_hi), conservative)

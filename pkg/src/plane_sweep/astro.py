"""Mean-element orbit model: types, J2 secular propagation, conversions.

The toolkit's truth model is the secular J2 drift of mean classical
elements: a, e, i are constant; RAAN, argument of perigee and mean
anomaly advance linearly at rates evaluated from the constant a, e, i.
Mean elements are converted to Cartesian states as if they were the
geometric (osculating) orbit -- a deliberate consistency convention so
that conjunction geometry, maneuvers and verification all live in one
self-consistent world.

Units: km, km/s, rad, s throughout.  Time is seconds from mission start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi


class KeplerConvergenceError(RuntimeError):
    """Kepler's equation failed to converge (numerical fault)."""


def wrap_angle(x: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = (x + math.pi) % TWO_PI - math.pi
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class Constants:
    """Gravitational parameter, equatorial radius and J2 coefficient."""
    mu: float = 398600.4418       # km^3/s^2
    re: float = 6378.137          # km
    j2: float = 1.08262668e-3

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.re <= 0 or self.j2 <= 0:
            raise ValueError("constants must be strictly positive")


EARTH = Constants()


@dataclass(frozen=True)
class MeanElements:
    """Mean classical orbital elements plus epoch (s from mission start).

    Angles are normalized to (-pi, pi] on construction.  a, e, i are
    invariants of the J2 secular model; raan/argp/mean_anomaly drift.
    """
    a: float
    e: float
    i: float
    raan: float
    argp: float
    mean_anomaly: float
    epoch: float = 0.0

    def __post_init__(self) -> None:
        if not (self.e >= 0.0 and self.e < 1.0):
            raise ValueError(f"eccentricity out of [0, 1): {self.e}")
        if not (0.0 < self.i < math.pi):
            raise ValueError(f"inclination out of (0, pi): {self.i}")
        if not math.isfinite(self.a) or self.a <= 0.0:
            raise ValueError(f"semi-major axis not positive: {self.a}")
        object.__setattr__(self, "raan", wrap_angle(self.raan))
        object.__setattr__(self, "argp", wrap_angle(self.argp))
        object.__setattr__(self, "mean_anomaly", wrap_angle(self.mean_anomaly))

    @property
    def arglat_mean(self) -> float:
        """Mean argument of latitude, argp + M, wrapped."""
        return wrap_angle(self.argp + self.mean_anomaly)


@dataclass(frozen=True)
class CartesianState:
    """Inertial position (km) and velocity (km/s) at an epoch."""
    position: np.ndarray
    velocity: np.ndarray
    epoch: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))


def mean_motion(a: float, c: Constants = EARTH) -> float:
    """Keplerian mean motion sqrt(mu/a^3), rad/s."""
    return math.sqrt(c.mu / a**3)


def orbital_period(a: float, c: Constants = EARTH) -> float:
    """Keplerian period 2*pi*sqrt(a^3/mu), s."""
    return TWO_PI / mean_motion(a, c)


def secular_rates(el: MeanElements, c: Constants = EARTH) -> tuple[float, float, float]:
    """J2 secular drift rates (raan_rate, argp_rate, mean_anomaly_rate), rad/s.

    raan_rate  = -(3/2) J2 (Re/p)^2 n cos i
    argp_rate  =  (3/2) J2 (Re/p)^2 n (2 - (5/2) sin^2 i)
    manom_rate = n + (3/2) J2 (Re/p)^2 n (1 - (3/2) sin^2 i) sqrt(1 - e^2)

    with p = a (1 - e^2).  The mean-anomaly rate includes the Keplerian n.
    """
    n = mean_motion(el.a, c)
    p = el.a * (1.0 - el.e * el.e)
    k = 1.5 * c.j2 * (c.re / p) ** 2 * n
    sin2 = math.sin(el.i) ** 2
    raan_rate = -k * math.cos(el.i)
    argp_rate = k * (2.0 - 2.5 * sin2)
    manom_rate = n + k * (1.0 - 1.5 * sin2) * math.sqrt(1.0 - el.e * el.e)
    return raan_rate, argp_rate, manom_rate


def arglat_rate(el: MeanElements, c: Constants = EARTH) -> float:
    """Secular rate of the mean argument of latitude (argp + M), rad/s."""
    _, argp_rate, manom_rate = secular_rates(el, c)
    return argp_rate + manom_rate


def propagate_mean(el: MeanElements, dt: float, c: Constants = EARTH) -> MeanElements:
    """Advance mean elements by dt seconds under the J2 secular model.

    a, e, i are returned bit-identical; the three angles drift linearly
    at the rates evaluated from the (constant) a, e, i.
    """
    if dt == 0.0:
        return el
    raan_rate, argp_rate, manom_rate = secular_rates(el, c)
    return replace(
        el,
        raan=wrap_angle(el.raan + raan_rate * dt),
        argp=wrap_angle(el.argp + argp_rate * dt),
        mean_anomaly=wrap_angle(el.mean_anomaly + manom_rate * dt),
        epoch=el.epoch + dt,
    )


def solve_kepler(mean_anom: float, e: float, tol: float = 1e-13,
                 max_iter: int = 50) -> float:
    """Solve Kepler's equation E - e sin E = M for E, same 2*pi branch as M.

    Newton iteration seeded with M (pi for high eccentricity), bisection
    fallback if Newton stalls.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity out of [0, 1): {e}")
    branch = math.floor((mean_anom + math.pi) / TWO_PI)
    m = mean_anom - branch * TWO_PI          # m in (-pi, pi]
    E = m if e < 0.8 else math.copysign(math.pi, m if m != 0.0 else 1.0)
    for _ in range(max_iter):
        f = E - e * math.sin(E) - m
        if abs(f) < tol:
            return E + branch * TWO_PI
        E -= f / (1.0 - e * math.cos(E))
    # Newton stalled; bisect (f is increasing in E on the wrapped branch).
    lo, hi = (-math.pi, 0.0) if m <= 0 else (0.0, math.pi)
    for _ in range(200):
        E = 0.5 * (lo + hi)
        f = E - e * math.sin(E) - m
        if abs(f) < tol:
            return E + branch * TWO_PI
        if f < 0.0:
            lo = E
        else:
            hi = E
    raise KeplerConvergenceError(f"no convergence for M={mean_anom}, e={e}")


def mean_to_cartesian(el: MeanElements, c: Constants = EARTH) -> CartesianState:
    """Convert elements to an inertial state, treating them geometrically."""
    E = solve_kepler(el.mean_anomaly, el.e)
    nu = 2.0 * math.atan2(math.sqrt(1.0 + el.e) * math.sin(0.5 * E),
                          math.sqrt(1.0 - el.e) * math.cos(0.5 * E))
    p = el.a * (1.0 - el.e * el.e)
    r = p / (1.0 + el.e * math.cos(nu))
    pos_pf = np.array([r * math.cos(nu), r * math.sin(nu), 0.0])
    vf = math.sqrt(c.mu / p)
    vel_pf = np.array([-vf * math.sin(nu), vf * (el.e + math.cos(nu)), 0.0])

    cO, sO = math.cos(el.raan), math.sin(el.raan)
    ci, si = math.cos(el.i), math.sin(el.i)
    cw, sw = math.cos(el.argp), math.sin(el.argp)
    rot = np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])
    return CartesianState(rot @ pos_pf, rot @ vel_pf, el.epoch)


def cartesian_to_mean(state: CartesianState, c: Constants = EARTH) -> MeanElements:
    """Inverse of mean_to_cartesian (round-trips within 1e-9 relative)."""
    r = state.position
    v = state.velocity
    rn = float(np.linalg.norm(r))
    vn2 = float(v @ v)
    h = np.cross(r, v)
    hn = float(np.linalg.norm(h))
    if hn <= 0.0:
        raise ValueError("degenerate state: zero angular momentum")

    a = 1.0 / (2.0 / rn - vn2 / c.mu)
    e_vec = np.cross(v, h) / c.mu - r / rn
    e = float(np.linalg.norm(e_vec))
    i = math.acos(max(-1.0, min(1.0, h[2] / hn)))

    node = np.array([-h[1], h[0], 0.0])
    nn = float(np.linalg.norm(node))
    if nn < 1e-14:                      # equatorial: node undefined, use x-axis
        node = np.array([1.0, 0.0, 0.0])
        nn = 1.0
    raan = math.atan2(node[1], node[0])

    if e > 1e-12:
        argp = math.acos(max(-1.0, min(1.0, float(node @ e_vec) / (nn * e))))
        if e_vec[2] < 0.0:
            argp = -argp
        nu = math.acos(max(-1.0, min(1.0, float(e_vec @ r) / (e * rn))))
        if float(r @ v) < 0.0:
            nu = -nu
    else:                               # circular: anchor perigee at the node
        argp = 0.0
        nu = math.acos(max(-1.0, min(1.0, float(node @ r) / (nn * rn))))
        if r[2] < 0.0:
            nu = -nu

    E = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(0.5 * nu),
                         math.sqrt(1.0 + e) * math.cos(0.5 * nu))
    mean_anom = E - e * math.sin(E)
    return MeanElements(a, e, i, raan, argp, mean_anom, state.epoch)

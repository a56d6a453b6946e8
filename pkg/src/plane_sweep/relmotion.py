"""Differential elements and linearized RTN relative motion.

The linear model maps small element differences between a chaser and a
near-circular reference satellite to relative position/velocity in the
satellite's RTN frame (T along-track, N orbit-normal, R radial out).
It is a design tool, valid near conjunctions; verification never uses
it -- flyby checks rotate absolutely propagated states instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .astro import (
    Constants,
    EARTH,
    CartesianState,
    MeanElements,
    mean_motion,
    secular_rates,
    wrap_angle,
)


@dataclass(frozen=True)
class DiffElements:
    """Component-wise element differences, chaser minus reference."""
    d_a: float          # km
    d_ex: float         # e*cos(argp) difference
    d_ey: float         # e*sin(argp) difference
    d_u: float          # mean argument-of-latitude difference, rad
    d_i: float          # rad
    d_raan: float       # rad

    @property
    def d_e(self) -> float:
        """Magnitude of the relative eccentricity vector."""
        return math.hypot(self.d_ex, self.d_ey)

    @property
    def u_e(self) -> float:
        """Phase of the relative eccentricity vector, rad."""
        return math.atan2(self.d_ey, self.d_ex)


@dataclass(frozen=True)
class RtnState:
    """Relative position (km) and velocity (km/s) in the reference RTN frame."""
    r_t: float
    r_n: float
    r_r: float
    v_t: float
    v_n: float
    v_r: float

    @property
    def range(self) -> float:
        return math.sqrt(self.r_t**2 + self.r_n**2 + self.r_r**2)

    @property
    def speed(self) -> float:
        return math.sqrt(self.v_t**2 + self.v_n**2 + self.v_r**2)


def diff_elements(sc: MeanElements, sat: MeanElements) -> DiffElements:
    """Element differences sc - sat with shortest-arc wrapping on angles.

    Both states must carry the same epoch; comparing states at different
    times is a caller bug.
    """
    if sc.epoch != sat.epoch:
        raise ValueError(f"epoch mismatch: {sc.epoch} vs {sat.epoch}")
    return DiffElements(
        d_a=sc.a - sat.a,
        d_ex=sc.e * math.cos(sc.argp) - sat.e * math.cos(sat.argp),
        d_ey=sc.e * math.sin(sc.argp) - sat.e * math.sin(sat.argp),
        d_u=wrap_angle((sc.argp + sc.mean_anomaly) - (sat.argp + sat.mean_anomaly)),
        d_i=wrap_angle(sc.i - sat.i),
        d_raan=wrap_angle(sc.raan - sat.raan),
    )


def rtn_linear(d: DiffElements, a0: float, n0: float, dt: float, u: float,
               i0: float) -> RtnState:
    """Linearized RTN state at time dt after the differencing epoch.

    u is the reference satellite's argument of latitude at that time and
    i0 its inclination (needed by the d_raan coupling terms).  Position
    rows, all in km (the cross-track row carries the a0 factor the raw
    dimensionless form omits):

        r_t = a0 (d_u - 1.5 (d_a/a0) n0 dt + d_raan cos i0) + 2 a0 d_e sin(u - u_e)
        r_n = a0 (d_i sin u - d_raan sin i0 cos u)
        r_r = d_a - a0 d_e cos(u - u_e)

    Velocities are the rotating-frame time derivative (u advances at n0;
    secular drifts of d_raan and u_e are not modeled).  At u = u_e = 0
    they reduce to v_t = V0(-1.5 d_a/a0 + 2 d_e), v_n = V0 d_i, v_r = 0
    with V0 = a0 n0.
    """
    v0 = a0 * n0
    ci, si = math.cos(i0), math.sin(i0)
    cu, su = math.cos(u), math.sin(u)
    ce = math.cos(u - d.u_e)
    se = math.sin(u - d.u_e)
    du_t = d.d_u - 1.5 * (d.d_a / a0) * n0 * dt
    return RtnState(
        r_t=a0 * (du_t + d.d_raan * ci) + 2.0 * a0 * d.d_e * se,
        r_n=a0 * (d.d_i * su - d.d_raan * si * cu),
        r_r=d.d_a - a0 * d.d_e * ce,
        v_t=v0 * (-1.5 * d.d_a / a0 + 2.0 * d.d_e * ce),
        v_n=v0 * (d.d_i * cu + d.d_raan * si * su),
        v_r=v0 * d.d_e * se,
    )


def cartesian_to_rtn(reference: CartesianState, chaser: CartesianState) -> RtnState:
    """Exact relative state: rotate (chaser - reference) into reference RTN.

    Velocity components are the inertial velocity difference projected on
    the RTN axes (the flyby constraint bounds the inertial speed).
    """
    r_ref = reference.position
    v_ref = reference.velocity
    r_hat = r_ref / np.linalg.norm(r_ref)
    n_vec = np.cross(r_ref, v_ref)
    n_hat = n_vec / np.linalg.norm(n_vec)
    t_hat = np.cross(n_hat, r_hat)
    dp = chaser.position - r_ref
    dv = chaser.velocity - v_ref
    return RtnState(
        r_t=float(dp @ t_hat), r_n=float(dp @ n_hat), r_r=float(dp @ r_hat),
        v_t=float(dv @ t_hat), v_n=float(dv @ n_hat), v_r=float(dv @ r_hat),
    )


def flyby_relative_speed_exact(sc: MeanElements, sat: MeanElements,
                               c: Constants = EARTH) -> float:
    """Conjunction relative speed, km/s, for the node-anchored flyby geometry.

    The chaser sits at its perigee radius directly above the circular
    reference satellite; the in-plane speed difference comes from
    vis-viva at the conjunction point and the inclination difference
    adds a normal component V0*di, root-sum-squared.
    """
    r_conj = sc.a * (1.0 - sc.e)
    v_sc = math.sqrt(c.mu * (2.0 / r_conj - 1.0 / sc.a))
    v0 = sat.a * mean_motion(sat.a, c)        # circular speed sqrt(mu/a)
    d_i = wrap_angle(sc.i - sat.i)
    return math.hypot(v_sc - v0, v0 * d_i)


def delta_raan_drift(d_a: float, d_i: float, plane_el: MeanElements,
                     duration: float, c: Constants = EARTH) -> float:
    """Differential RAAN drift over a duration, linearized in (da, di).

    d(draan) = duration * (-3.5 da/a0 - tan i * di) * raan_rate(plane).
    At i = pi/2 the tan blows up but raan_rate is zero; the da term alone
    (also zero) is returned there.
    """
    raan_rate, _, _ = secular_rates(plane_el, c)
    factor = -3.5 * d_a / plane_el.a
    cos_i = math.cos(plane_el.i)
    if abs(cos_i) > 1e-12:
        factor -= math.tan(plane_el.i) * d_i
    return duration * factor * raan_rate


def delta_argp_drift(d_a: float, d_i: float, plane_el: MeanElements,
                     duration: float, c: Constants = EARTH) -> float:
    """Differential perigee drift over a duration, linearized in (da, di).

    d(dargp) = duration * (-3.5 da/a0 - 5 sin i cos i * di) * argp_rate(plane).
    """
    _, argp_rate, _ = secular_rates(plane_el, c)
    factor = -3.5 * d_a / plane_el.a - 5.0 * math.sin(plane_el.i) * math.cos(plane_el.i) * d_i
    return duration * factor * argp_rate

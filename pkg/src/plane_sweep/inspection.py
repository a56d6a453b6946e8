"""Analytic synthesis of maneuver-free inspection orbits.

One inspection orbit per orbital plane: the chaser's semi-major axis is
raised so its per-revolution phase slip equals the inter-satellite
spacing, producing one flyby per revolution at the chaser's perigee,
directly above each satellite as it crosses the ascending node.  Two
normalized coefficients remain free inside the flyby constraints:

    k_i     scales the inclination offset within the relative-speed slack,
    k_omega scales the initial RAAN offset within the cross-track slack.

The synthesis centers the secular RAAN and perigee drifts over the stay
so the cross-track excursion is symmetric and the radial separation
stays pinned to the configured standoff; a final two-variable polish
zeroes the along-track residual at the first and last flyby against the
toolkit's own truth model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .astro import (
    Constants,
    EARTH,
    MeanElements,
    TWO_PI,
    arglat_rate,
    mean_motion,
    mean_to_cartesian,
    orbital_period,
    secular_rates,
    wrap_angle,
)
from .relmotion import cartesian_to_rtn

# Fraction of each flyby bound held back when mapping k_i / k_omega to
# physical offsets, so |k| = 1 sits strictly inside the constraint after
# linear-model and truth-model deviations.
FEASIBILITY_MARGIN = 0.01


class InfeasiblePlane(Exception):
    """The maneuver-free strategy cannot satisfy the flyby constraints."""


class InvalidCoefficient(ValueError):
    """A normalized offset coefficient lies outside [-1, 1]."""


@dataclass(frozen=True)
class FlybyLimits:
    """Per-flyby bounds: max relative range (km) and speed (km/s)."""
    dr_flyby: float = 50.0
    dv_flyby: float = 0.15


@dataclass(frozen=True)
class OrbitalPlane:
    """One candidate orbital plane with uniformly phased satellites.

    Satellite k has mean argument of latitude phase0 + 2*pi*k/n_sats at
    mission start.
    """
    constellation_id: int
    plane_id: int
    a0: float           # km, Re + altitude
    i0: float           # rad
    raan0: float        # rad at t = 0
    n_sats: int
    phase0: float = 0.0

    def satellite_elements(self, sat_index: int, t: float,
                           c: Constants = EARTH) -> MeanElements:
        """Mean elements of one satellite at time t (circular, e = 0)."""
        base = MeanElements(self.a0, 0.0, self.i0, self.raan0, 0.0,
                            self.phase0 + TWO_PI * sat_index / self.n_sats,
                            epoch=0.0)
        raan_rate, argp_rate, manom_rate = secular_rates(base, c)
        return MeanElements(
            self.a0, 0.0, self.i0,
            base.raan + raan_rate * t,
            0.0,
            base.mean_anomaly + (argp_rate + manom_rate) * t,
            epoch=t,
        )


@dataclass(frozen=True)
class InspectionOffsets:
    """Offsets of the inspection orbit relative to the target satellites."""
    d_a: float              # km, nominal 2 a0 / (3 N)
    d_e: float              # chaser eccentricity (satellites circular)
    d_i: float              # rad, k_i * di_max
    d_raan0: float          # rad, initial RAAN offset
    d_argp0: float          # rad, initial perigee placement
    d_u0: float             # rad, initial argument-of-latitude offset
    d_a_correction: float   # km, drift-matching correction on d_a


@dataclass(frozen=True)
class InspectionOrbit:
    """Output of the synthesis: chaser elements plus bookkeeping."""
    elements: MeanElements          # at epoch t_start
    plane: OrbitalPlane
    start_sat: int
    t_start: float                  # s, after the node-alignment wait
    dt_stay: float                  # s, (N-1)(N+1)/N * T0
    k_i: float
    k_omega: float
    offsets: InspectionOffsets
    delta_r0: float                 # km, radial standoff at flybys

    @property
    def t_end(self) -> float:
        return self.t_start + self.dt_stay

    def flyby_period(self, c: Constants = EARTH) -> float:
        """Nominal spacing between flybys: (N+1)/N nodal periods."""
        n = self.plane.n_sats
        sat = self.plane.satellite_elements(0, 0.0, c)
        return (n + 1) / n * (TWO_PI / arglat_rate(sat, c))

    def target_index(self, flyby: int) -> int:
        """Satellite index of the k-th flyby (decreasing phase order)."""
        return (self.start_sat - flyby) % self.plane.n_sats


def wait_time(u0: float, n0: float) -> float:
    """Time for a body at argument of latitude u0 to reach the ascending
    node at angular rate n0; u0 = 0 maps to 0 (already there)."""
    return (TWO_PI - u0) % TWO_PI / n0


def stay_duration(n_sats: int, t0_period: float) -> float:
    """Inspection stay for n_sats uniformly phased targets:
    (N-1)(N+1)/N orbital periods."""
    if n_sats < 1:
        raise ValueError(f"n_sats must be >= 1: {n_sats}")
    return (n_sats - 1) * (n_sats + 1) / n_sats * t0_period


def max_inclination_offset(plane: OrbitalPlane, d_a: float, d_e: float,
                           dv_flyby: float, c: Constants = EARTH) -> float:
    """Largest inclination offset keeping conjunction speed under dv_flyby.

    di_max = sqrt(dv_flyby^2 - dv_t^2) / V0, with dv_t the exact vis-viva
    conjunction speed at the chaser perigee (the linear form understates
    it).  Returns 0 when dv_t equals the bound.
    """
    a_sc = plane.a0 + d_a
    r_conj = a_sc * (1.0 - d_e)               # chaser perigee radius
    v_sc = math.sqrt(c.mu * (2.0 / r_conj - 1.0 / a_sc))
    dv_t = v_sc - math.sqrt(c.mu / plane.a0)
    if dv_t > dv_flyby:
        raise InfeasiblePlane(
            f"conjunction speed {dv_t * 1e3:.1f} m/s exceeds the "
            f"{dv_flyby * 1e3:.1f} m/s flyby bound")
    v0 = plane.a0 * mean_motion(plane.a0, c)
    return math.sqrt(max(dv_flyby**2 - dv_t**2, 0.0)) / v0


def raan_offset_slack(plane: OrbitalPlane, d_raan_drift_total: float,
                      dr_flyby: float, delta_r0: float) -> float:
    """Remaining one-sided RAAN freedom after centering the drift span.

    slack = sqrt(dr_flyby^2 - delta_r0^2)/(a0 sin i) - |drift|/2, >= 0.
    """
    if not dr_flyby > delta_r0 >= 0.0:
        raise ValueError("need dr_flyby > delta_r0 >= 0")
    bound = math.sqrt(dr_flyby**2 - delta_r0**2) / (plane.a0 * math.sin(plane.i0))
    half_drift = abs(d_raan_drift_total) / 2.0
    if half_drift > bound:
        raise InfeasiblePlane(
            f"RAAN drift span {d_raan_drift_total:.5f} rad exceeds the "
            f"cross-track corridor (+-{bound:.5f} rad)")
    return bound - half_drift


def _node_crossing_time(u_at_pred: float, t_pred: float, udot: float) -> float:
    """Nearest time around t_pred at which a mean arglat hits 0 mod 2*pi."""
    return t_pred - wrap_angle(u_at_pred) / udot


def _flyby_along_track(el_sc: MeanElements, rates_sc: tuple[float, float, float],
                       plane: OrbitalPlane, start_sat: int, flyby: int,
                       t_start: float, t_flyby: float, udot_sat: float,
                       c: Constants) -> float:
    """Truth-model along-track separation at one flyby (km)."""
    n = plane.n_sats
    t_pred = t_start + flyby * t_flyby
    u0 = -TWO_PI * flyby / n + udot_sat * (t_pred - t_start)
    t_node = _node_crossing_time(u0, t_pred, udot_sat)
    sat_idx = (start_sat - flyby) % n
    sat = plane.satellite_elements(sat_idx, t_node, c)
    dt = t_node - el_sc.epoch
    sc = MeanElements(
        el_sc.a, el_sc.e, el_sc.i,
        el_sc.raan + rates_sc[0] * dt,
        el_sc.argp + rates_sc[1] * dt,
        el_sc.mean_anomaly + rates_sc[2] * dt,
        epoch=t_node,
    )
    rel = cartesian_to_rtn(mean_to_cartesian(sat, c), mean_to_cartesian(sc, c))
    return rel.r_t


def compute_inspection_orbit(plane: OrbitalPlane, start_sat: int, t0: float,
                             k_i: float, k_omega: float, delta_r0: float,
                             limits: FlybyLimits,
                             c: Constants = EARTH) -> InspectionOrbit:
    """Synthesize the maneuver-free inspection orbit for one plane.

    Steps: node-alignment wait for the start satellite; stay duration;
    nominal semi-major offset 2 a0/(3N) and the eccentricity pinning the
    perigee at a0 + delta_r0; inclination offset k_i * di_max; RAAN
    offset -drift/2 + k_omega * slack (drift centered); perigee placed
    at -drift/2 of its own secular travel; initial phase offset chosen
    to zero the along-track separation, then the semi-major axis
    corrected so it stays zero through the final flyby.

    Raises InfeasiblePlane when either flyby bound cannot be met and
    InvalidCoefficient for |k| > 1.
    """
    if abs(k_i) > 1.0 or abs(k_omega) > 1.0:
        raise InvalidCoefficient(f"k_i={k_i}, k_omega={k_omega}")
    if plane.n_sats < 2:
        raise ValueError("inspection needs at least 2 satellites per plane")
    if not limits.dr_flyby > delta_r0 >= 0.0:
        raise ValueError("need dr_flyby > delta_r0 >= 0")

    n = plane.n_sats
    a0 = plane.a0
    sat0 = plane.satellite_elements(start_sat, 0.0, c)
    rates_sat = secular_rates(sat0, c)
    udot_sat = rates_sat[1] + rates_sat[2]

    u_start = (sat0.argp + sat0.mean_anomaly) + udot_sat * t0
    wait = wait_time(u_start % TWO_PI, udot_sat)
    t_start = t0 + wait

    dt_stay = stay_duration(n, orbital_period(a0, c))
    t_flyby = (n + 1) / n * (TWO_PI / udot_sat)
    span = (n - 1) * t_flyby

    d_a = 2.0 * a0 / (3.0 * n)
    r_perigee = a0 + delta_r0
    v_circ = math.sqrt(c.mu / a0)
    dv_eff = (1.0 - FEASIBILITY_MARGIN) * limits.dv_flyby
    cross_bound = (1.0 - FEASIBILITY_MARGIN) * math.sqrt(
        limits.dr_flyby**2 - delta_r0**2)
    v0 = a0 * mean_motion(a0, c)

    # Fixed-point assembly: e, rates, drift spans and the corrected a are
    # mutually coupled but converge in a few passes.
    a_sc = a0 + d_a
    for _ in range(4):
        e_sc = (a_sc - r_perigee) / a_sc
        v_per = math.sqrt(c.mu * (2.0 / r_perigee - 1.0 / a_sc))
        dv_t = v_per - v_circ
        if dv_t >= limits.dv_flyby:
            raise InfeasiblePlane(
                f"conjunction speed {dv_t * 1e3:.1f} m/s exceeds the "
                f"{limits.dv_flyby * 1e3:.1f} m/s flyby bound "
                f"(plane {plane.constellation_id}-{plane.plane_id}, "
                f"N={n})")
        di_max = math.sqrt(max(dv_eff**2 - dv_t**2, 0.0)) / v0
        d_i = k_i * di_max
        i_sc = plane.i0 + d_i

        rates_sc = secular_rates(
            MeanElements(a_sc, e_sc, i_sc, 0.0, 0.0, 0.0), c)
        d_raan_d = (rates_sc[0] - rates_sat[0]) * span
        perigee_travel = rates_sc[1] * span

        # Inclination offsets swing the conjunction off the node by the
        # perigee half-travel; reserve that cross-track coupling.
        coupling = r_perigee * abs(d_i) * abs(perigee_travel) / 2.0
        corridor = (cross_bound - coupling) / (r_perigee * math.sin(plane.i0))
        slack = corridor - abs(d_raan_d) / 2.0
        if slack < 0.0:
            raise InfeasiblePlane(
                f"RAAN drift span {d_raan_d:.5f} rad exceeds the cross-track "
                f"corridor (plane {plane.constellation_id}-{plane.plane_id})")
        d_raan0 = -d_raan_d / 2.0 + k_omega * slack
        d_argp0 = -perigee_travel / 2.0

        d_u0 = -d_raan0 * math.cos(plane.i0) + 2.0 * e_sc * math.sin(d_argp0)
        d_u_end = (-(d_raan0 + d_raan_d) * math.cos(plane.i0)
                   + 2.0 * e_sc * math.sin(d_argp0 + perigee_travel))
        udot_req = (TWO_PI * (n - 1) + d_u_end - d_u0) / span

        # Secant solve for the a matching the required nodal rate; e is
        # re-tied to the perigee condition at each trial a.
        def _udot(a: float) -> float:
            e = (a - r_perigee) / a
            r = secular_rates(MeanElements(a, e, i_sc, 0.0, 0.0, 0.0), c)
            return r[1] + r[2]

        x0, x1 = a_sc, a_sc - 2.0
        f0, f1 = _udot(x0) - udot_req, _udot(x1) - udot_req
        for _ in range(30):
            if f0 == f1:
                break
            x2 = x0 - f0 * (x0 - x1) / (f0 - f1)
            x1, f1 = x0, f0
            x0, f0 = x2, _udot(x2) - udot_req
            if abs(f0) < 1e-20:
                break
        a_sc = x0

    e_sc = (a_sc - r_perigee) / a_sc
    raan_sc = (plane.raan0 + rates_sat[0] * t_start) + d_raan0
    argp_sc = d_argp0
    manom_sc = d_u0 - d_argp0

    # Polish (M, a) against the truth model: zero the along-track
    # separation at the first and last flyby.  The analytic solution
    # above is km-accurate; two Newton steps take it to meters.
    def _residuals(a: float, m0: float) -> tuple[float, float]:
        e = (a - r_perigee) / a
        el = MeanElements(a, e, i_sc, raan_sc, argp_sc, m0, epoch=t_start)
        r = secular_rates(el, c)
        s0 = _flyby_along_track(el, r, plane, start_sat, 0, t_start,
                                t_flyby, udot_sat, c)
        s1 = _flyby_along_track(el, r, plane, start_sat, n - 1, t_start,
                                t_flyby, udot_sat, c)
        return s0, s1

    m0 = manom_sc
    for _ in range(4):
        s0, s1 = _residuals(a_sc, m0)
        if max(abs(s0), abs(s1)) < 1e-6:
            break
        d_m, d_a_step = 1e-5, 0.05
        s0m, s1m = _residuals(a_sc, m0 + d_m)
        s0a, s1a = _residuals(a_sc + d_a_step, m0)
        j00, j01 = (s0m - s0) / d_m, (s0a - s0) / d_a_step
        j10, j11 = (s1m - s1) / d_m, (s1a - s1) / d_a_step
        det = j00 * j11 - j01 * j10
        if det == 0.0:
            break
        m0 -= (j11 * s0 - j01 * s1) / det
        a_sc -= (-j10 * s0 + j00 * s1) / det
    manom_sc = m0
    e_sc = (a_sc - r_perigee) / a_sc

    elements = MeanElements(a_sc, e_sc, i_sc, raan_sc, argp_sc, manom_sc,
                            epoch=t_start)
    offsets = InspectionOffsets(
        d_a=d_a, d_e=e_sc, d_i=d_i, d_raan0=d_raan0, d_argp0=d_argp0,
        d_u0=wrap_angle(argp_sc + manom_sc),
        d_a_correction=a_sc - (a0 + d_a),
    )
    return InspectionOrbit(
        elements=elements, plane=plane, start_sat=start_sat,
        t_start=t_start, dt_stay=dt_stay, k_i=k_i, k_omega=k_omega,
        offsets=offsets, delta_r0=delta_r0,
    )

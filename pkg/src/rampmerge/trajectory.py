"""Closed-form leader trajectories through the control and merging zones.

A plan is a contiguous list of polynomial segments. Each segment stores its
position polynomial in local time ``tau = t - t_start`` (ascending powers);
speed and control are its derivatives, so the kinematic identities hold by
construction.

Two planners cover the control zone:

* time-optimal: full acceleration to ``v_max`` then cruise;
* energy-optimal: linear control ``u = a*t + b`` that meets position and
  speed targets at a prescribed merge time, minimising ``1/2 * int u^2``.

The energy-optimal closed form is only valid while the speed and control
bounds stay inactive; violations raise :class:`ConstraintViolation`.
"""

from __future__ import annotations

import bisect
import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from .core import Platoon, RoadGeometry, VehicleState
from .scheduler import MergeSchedule, earliest_crossing, entry_time

BOUND_TOL = 1e-9
TIME_TOL = 1e-9
POSITION_TOL = 1e-6


class TrajectoryError(ValueError):
    pass


class ConstraintViolation(TrajectoryError):
    pass


class PlanKind(str, enum.Enum):
    TIME_OPTIMAL = "TimeOptimal"
    ENERGY_OPTIMAL = "EnergyOptimal"
    BASELINE = "Baseline"


def _horner(coeffs, x):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def _deriv(coeffs):
    if len(coeffs) <= 1:
        return (0.0,)
    return tuple(k * c for k, c in enumerate(coeffs[1:], 1))


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    position: tuple[float, ...]

    @property
    def speed(self) -> tuple[float, ...]:
        return _deriv(self.position)

    @property
    def control(self) -> tuple[float, ...]:
        return _deriv(self.speed)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def state(self, t: float) -> VehicleState:
        tau = t - self.t_start
        return VehicleState(_horner(self.position, tau), _horner(self.speed, tau),
                            _horner(self.control, tau))

    def effort(self, t_from: float | None = None, t_to: float | None = None) -> float:
        a = 0.0 if t_from is None else max(0.0, t_from - self.t_start)
        b = self.duration if t_to is None else min(self.duration, t_to - self.t_start)
        if b <= a:
            return 0.0
        sq = P.polyint(P.polymul(self.control, self.control))
        return 0.5 * (P.polyval(b, sq) - P.polyval(a, sq))


@dataclass(frozen=True)
class TrajectoryPlan:
    kind: PlanKind
    segments: tuple[Segment, ...]
    t0: float
    tm: float  # merging-zone entry
    variant: str = ""  # which fallback produced the plan; empty for the closed forms

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise TrajectoryError("plan needs at least one segment")
        if abs(segs[0].t_start - self.t0) > TIME_TOL:
            raise TrajectoryError("first segment must start at t0")
        for prev, nxt in zip(segs, segs[1:]):
            if prev.t_end != nxt.t_start:
                raise TrajectoryError(
                    f"segments not contiguous at t={prev.t_end!r} / {nxt.t_start!r}")
        object.__setattr__(self, "_starts", [s.t_start for s in segs])

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def v0(self) -> float:
        return self.segments[0].state(self.t0).speed

    @property
    def merge_speed(self) -> float:
        return self.eval(self.tm).speed

    def segment_at(self, t: float) -> Segment:
        if t < self.t0 - TIME_TOL or t > self.t_end + TIME_TOL:
            raise TrajectoryError(f"t={t} outside plan domain [{self.t0}, {self.t_end}]")
        i = bisect.bisect_right(self._starts, t) - 1
        return self.segments[min(max(i, 0), len(self.segments) - 1)]

    def eval(self, t: float) -> VehicleState:
        seg = self.segment_at(t)
        t = min(max(t, self.t0), self.t_end)
        return seg.state(t)

    def effort(self, t_from: float | None = None, t_to: float | None = None) -> float:
        """Closed-form 1/2 * int u^2 dt over [t_from, t_to] (whole plan by default)."""
        return math.fsum(s.effort(t_from, t_to) for s in self.segments)

    def time_at_position(self, x: float) -> float | None:
        """First time the (non-decreasing) position reaches ``x``."""
        for seg in self.segments:
            p_end = _horner(seg.position, seg.duration)
            if p_end < x:
                if seg is self.segments[-1] and p_end > x - POSITION_TOL:
                    return seg.t_end  # rounding in the final cruise
                continue
            p_start = seg.position[0]
            if p_start >= x:
                return seg.t_start
            f = lambda tau: _horner(seg.position, tau) - x  # noqa: E731
            return seg.t_start + brentq(f, 0.0, seg.duration, xtol=1e-13, rtol=4 * np.finfo(float).eps)
        return None

    def truncated(self, t_cut: float) -> tuple[Segment, ...]:
        out = []
        for seg in self.segments:
            if seg.t_start >= t_cut:
                break
            out.append(Segment(seg.t_start, min(seg.t_end, t_cut), seg.position))
        return tuple(out)


def eval(plan: TrajectoryPlan, t: float) -> VehicleState:  # noqa: A001
    return plan.eval(t)


# -- time-optimal --------------------------------------------------------------

def time_optimal_plan(v0: float, g: RoadGeometry, t0: float) -> TrajectoryPlan:
    duration = earliest_crossing(v0, g)  # raises for v0 outside [v_min, v_max]
    tm = t0 + duration
    if v0 == g.v_max:
        segs = (Segment(t0, tm, (0.0, g.v_max)),)
    else:
        t_a = (g.v_max - v0) / g.u_max
        d_a = (g.v_max ** 2 - v0 ** 2) / (2.0 * g.u_max)
        segs = (Segment(t0, t0 + t_a, (0.0, v0, 0.5 * g.u_max)),
                Segment(t0 + t_a, tm, (d_a, g.v_max)))
    return TrajectoryPlan(PlanKind.TIME_OPTIMAL, segs, t0, tm)


# -- energy-optimal ------------------------------------------------------------

def _energy_coeffs(v0: float, horizon: float, distance: float, v_end: float):
    """Local-time (slope, intercept) of the linear control hitting both targets."""
    T = horizon
    dv = v_end - v0
    dp = distance - v0 * T
    slope = (6.0 * dv * T - 12.0 * dp) / T ** 3
    intercept = (6.0 * dp - 2.0 * dv * T) / T ** 2
    return slope, intercept


def energy_cost(v0: float, horizon: float, distance: float, v_end: float) -> float:
    """1/2 * int u^2 of the unconstrained energy-optimal solution."""
    a, b = _energy_coeffs(v0, horizon, distance, v_end)
    T = horizon
    return 0.5 * (a * a * T ** 3 / 3.0 + a * b * T * T + b * b * T)


def _energy_violations(v0, g: RoadGeometry, horizon, v_end, slope=None, intercept=None):
    if slope is None:
        slope, intercept = _energy_coeffs(v0, horizon, g.control_zone_length, v_end)
    problems = []
    u_lo = min(intercept, slope * horizon + intercept)
    u_hi = max(intercept, slope * horizon + intercept)
    if u_lo < g.u_min - BOUND_TOL:
        problems.append(f"control {u_lo:.4f} below u_min={g.u_min}")
    if u_hi > g.u_max + BOUND_TOL:
        problems.append(f"control {u_hi:.4f} above u_max={g.u_max}")
    speeds = [v0, v0 + intercept * horizon + 0.5 * slope * horizon ** 2]
    if slope != 0.0:
        vertex = -intercept / slope
        if 0.0 < vertex < horizon:
            speeds.append(v0 + intercept * vertex + 0.5 * slope * vertex ** 2)
    if min(speeds) < g.v_min - BOUND_TOL:
        problems.append(f"speed {min(speeds):.4f} below v_min={g.v_min}")
    if max(speeds) > g.v_max + BOUND_TOL:
        problems.append(f"speed {max(speeds):.4f} above v_max={g.v_max}")
    return problems


def energy_optimal_plan(v0: float, g: RoadGeometry, t0: float, tm: float,
                        v_end: float | None = None) -> TrajectoryPlan:
    """Linear-control plan from (p=0, v0) at t0 to (p=L_CZ, v_end) at tm.

    ``v_end`` defaults to ``v_max`` so the merging-zone crossing matches the
    occupancy the scheduler assumed.
    """
    if v_end is None:
        v_end = g.v_max
    horizon = tm - t0
    if not horizon > 0:
        raise TrajectoryError(f"singular boundary-value system: tm={tm} <= t0={t0}")
    if not (g.v_min <= v0 <= g.v_max):
        raise TrajectoryError(f"initial speed {v0} outside [{g.v_min}, {g.v_max}]")
    slope, intercept = _energy_coeffs(v0, horizon, g.control_zone_length, v_end)
    problems = _energy_violations(v0, g, horizon, v_end, slope, intercept)
    if problems:
        raise ConstraintViolation(
            f"energy-optimal plan over {horizon:.4f} s from v0={v0:.4f} violates bounds: "
            + "; ".join(problems))
    seg = Segment(t0, tm, (0.0, v0, 0.5 * intercept, slope / 6.0))
    return TrajectoryPlan(PlanKind.ENERGY_OPTIMAL, (seg,), t0, tm)


def energy_optimal_constants(v0: float, g: RoadGeometry, t0: float, tm: float,
                             v_end: float | None = None) -> tuple[float, float, float, float]:
    """Absolute-time constants (a, b, c, d) of
    ``p(t) = a t^3/6 + b t^2/2 + c t + d``, ``u(t) = a t + b``."""
    if v_end is None:
        v_end = g.v_max
    if not tm > t0:
        raise TrajectoryError("singular boundary-value system: tm <= t0")
    alpha, beta = _energy_coeffs(v0, tm - t0, g.control_zone_length, v_end)
    a = alpha
    b = beta - alpha * t0
    c = v0 - 0.5 * a * t0 ** 2 - b * t0
    d = -(a * t0 ** 3 / 6.0 + 0.5 * b * t0 ** 2 + c * t0)
    return a, b, c, d


# -- merging zone and schedule-driven plans ----------------------------------

def _merge_zone_segments(t_m: float, v_m: float, g: RoadGeometry, until: float | None):
    """Leader motion from merging-zone entry: accelerate to v_max if needed,
    then cruise, at least until the leader has cleared the zone."""
    x0 = g.control_zone_length
    segs = []
    t, x = t_m, x0
    if v_m < g.v_max - BOUND_TOL:
        t_acc = (g.v_max - v_m) / g.u_max
        segs.append(Segment(t, t + t_acc, (x, v_m, 0.5 * g.u_max)))
        x = x + v_m * t_acc + 0.5 * g.u_max * t_acc ** 2
        t = t + t_acc
    exit_x = g.merge_exit
    if x >= exit_x:
        t_exit = t_m + _accel_time_to(exit_x - x0, v_m, g.u_max)
    else:
        t_exit = t + (exit_x - x) / g.v_max
    end = max(t_exit, until if until is not None else t_exit)
    if end <= t:
        # still accelerating at the exit: keep a cruise tail so every plan
        # ends at constant speed
        end = t + g.merging_zone_length / g.v_max
    segs.append(Segment(t, end, (x, g.v_max)))
    return segs


def _accel_time_to(distance: float, v: float, u: float) -> float:
    return (-v + math.sqrt(v * v + 2.0 * u * distance)) / u


def with_merge_zone(plan: TrajectoryPlan, g: RoadGeometry,
                    until: float | None = None) -> TrajectoryPlan:
    cz = plan.truncated(plan.tm)
    v_m = plan.eval(plan.tm).speed
    mz = _merge_zone_segments(plan.tm, v_m, g, until)
    return TrajectoryPlan(plan.kind, cz + tuple(mz), plan.t0, plan.tm, plan.variant)


def plan_for_schedule(p: Platoon, s: MergeSchedule, g: RoadGeometry) -> TrajectoryPlan:
    """Time-optimal plan for an unobstructed platoon, energy-optimal otherwise."""
    if p.id not in s:
        raise TrajectoryError(f"platoon {p.id} is not in the schedule")
    entry = s[p.id]
    earliest = p.arrival_time + entry_time(p, g)
    if abs(entry.t_m - earliest) <= TIME_TOL:
        base = time_optimal_plan(p.initial_speed, g, p.arrival_time)
    elif entry.t_m < earliest:
        raise TrajectoryError(
            f"platoon {p.id}: scheduled entry {entry.t_m} before earliest {earliest}")
    else:
        base = energy_optimal_plan(p.initial_speed, g, p.arrival_time, entry.t_m)
    return with_merge_zone(base, g, until=entry.t_l)


def _braking_point(v0: float, g: RoadGeometry, t0: float):
    free = time_optimal_plan(v0, g, t0)
    decel = -g.u_min

    def overshoot(t):
        st = free.eval(t)
        return st.position + st.speed ** 2 / (2.0 * decel) - g.control_zone_length

    if overshoot(t0) > 0:
        raise ConstraintViolation(f"cannot stop before the merging zone from v0={v0}")
    t_b = brentq(overshoot, t0, free.tm, xtol=1e-12)
    at_b = free.eval(t_b)
    return free, t_b, at_b, t_b + at_b.speed / decel


def earliest_stop_time(v0: float, g: RoadGeometry, t0: float) -> float:
    """When a platoon entering at ``t0`` can be halted at the merging-zone entry."""
    return _braking_point(v0, g, t0)[3]


def zone_crossing_time(v_m: float, g: RoadGeometry) -> float:
    """Leader time through the merging zone entering at ``v_m`` (then u_max)."""
    if v_m >= g.v_max:
        return g.merging_zone_length / g.v_max
    t_acc = (g.v_max - v_m) / g.u_max
    d_acc = (g.v_max ** 2 - v_m ** 2) / (2.0 * g.u_max)
    if d_acc >= g.merging_zone_length:
        return _accel_time_to(g.merging_zone_length, v_m, g.u_max)
    return t_acc + (g.merging_zone_length - d_acc) / g.v_max


def stop_and_go_plan(v0: float, g: RoadGeometry, t0: float, t_go: float,
                     until: float | None = None) -> TrajectoryPlan:
    """Drive the time-optimal profile, brake at ``u_min`` to halt at the
    merging-zone entry, wait, and leave from rest at ``t_go``."""
    free, t_b, at_b, t_s = _braking_point(v0, g, t0)
    if t_go < t_s - TIME_TOL:
        raise ConstraintViolation(
            f"release at {t_go:.3f} s precedes the earliest stop at {t_s:.3f} s")
    t_go = max(t_go, t_s)
    segs = list(free.truncated(t_b))
    segs.append(Segment(t_b, t_s, (at_b.position, at_b.speed, 0.5 * g.u_min)))
    if t_go > t_s:
        segs.append(Segment(t_s, t_go, (g.control_zone_length,)))
    segs += _merge_zone_segments(t_go, 0.0, g, until)
    return TrajectoryPlan(PlanKind.BASELINE, tuple(segs), t0, t_go, "stop_and_go")


def held_speed_plan(v0: float, g: RoadGeometry, t0: float, tm: float) -> TrajectoryPlan:
    """Reach the merging zone at ``v_max`` exactly at ``tm`` using constant
    acceleration phases only.

    Covers short delays from below the speed limit, where the linear-control
    form would need more than ``u_max`` at the start. A gentler constant
    acceleration is used when it fits; otherwise the platoon holds ``v0`` and
    accelerates at ``u_max`` as late as possible.
    """
    L, V = g.control_zone_length, g.v_max
    horizon = tm - t0
    t_in = earliest_crossing(v0, g)
    if horizon < t_in - TIME_TOL:
        raise ConstraintViolation(f"horizon {horizon:.3f} s shorter than earliest {t_in:.3f} s")
    if horizon <= t_in + TIME_TOL:
        return time_optimal_plan(v0, g, t0)
    if v0 >= V:
        raise ConstraintViolation("already at v_max; holding speed cannot absorb delay")
    # gentle: accelerate at a <= u_max all the way to v_max, then cruise
    a = (V - v0) ** 2 / (2.0 * V * (horizon - L / V))
    d_a = (V * V - v0 * v0) / (2.0 * a)
    if a <= g.u_max and d_a <= L + BOUND_TOL:
        t_a = (V - v0) / a
        segs = [Segment(t0, t0 + t_a, (0.0, v0, 0.5 * a))]
        if t0 + t_a < tm:
            segs.append(Segment(t0 + t_a, tm, (d_a, V)))
        return TrajectoryPlan(PlanKind.ENERGY_OPTIMAL, tuple(segs), t0, tm, "gentle_accelerate")
    # hold v0, then accelerate at u_max
    t_a = (V - v0) / g.u_max
    d_a = (V * V - v0 * v0) / (2.0 * g.u_max)
    hold = (horizon - t_in) / (1.0 - v0 / V)
    x_hold = v0 * hold
    if x_hold + d_a > L + BOUND_TOL:
        raise ConstraintViolation(
            f"cannot absorb {horizon - t_in:.3f} s by holding {v0:.3f} m/s")
    segs = [Segment(t0, t0 + hold, (0.0, v0)),
            Segment(t0 + hold, t0 + hold + t_a, (x_hold, v0, 0.5 * g.u_max))]
    if t0 + hold + t_a < tm:
        segs.append(Segment(t0 + hold + t_a, tm, (x_hold + d_a, V)))
    return TrajectoryPlan(PlanKind.ENERGY_OPTIMAL, tuple(segs), t0, tm, "hold_then_accelerate")


def _slow_profile(v0: float, g: RoadGeometry, v_low: float, hold: float, distance: float):
    """Brake at u_min from ``v0`` to ``v_low``, hold for ``hold`` seconds,
    then accelerate at u_max until ``distance`` is covered or ``v_max`` is
    reached, whichever comes first. Returns (phases, duration, end speed)
    where phases are (duration, speed at start, acceleration)."""
    V, U, B = g.v_max, g.u_max, -g.u_min
    d_brake = (v0 * v0 - v_low * v_low) / (2.0 * B)
    left = distance - d_brake - v_low * hold
    phases = [((v0 - v_low) / B, v0, -B), (hold, v_low, 0.0)]
    d_acc = (V * V - v_low * v_low) / (2.0 * U)
    if d_acc <= left:
        phases += [((V - v_low) / U, v_low, U), ((left - d_acc) / V, V, 0.0)]
        v_m = V
    else:
        v_m = math.sqrt(v_low * v_low + 2.0 * U * left)
        phases.append(((v_m - v_low) / U, v_low, U))
    return phases, math.fsum(ph[0] for ph in phases), v_m


def _phases_plan(phases, t0: float, tm: float, variant: str) -> TrajectoryPlan:
    phases = [ph for ph in phases if ph[0] > 0.0]
    segs, t, x = [], t0, 0.0
    for k, (dur, v, a) in enumerate(phases):
        t_next = tm if k == len(phases) - 1 else t + dur
        segs.append(Segment(t, t_next, (x, v, 0.5 * a) if a else (x, v)))
        x += v * dur + 0.5 * a * dur * dur
        t = t_next
    return TrajectoryPlan(PlanKind.ENERGY_OPTIMAL, tuple(segs), t0, tm, variant)


def slow_then_merge_plan(v0: float, g: RoadGeometry, t0: float, tm: float,
                         cruise: float = 0.0) -> TrajectoryPlan:
    """Absorb a long delay while keeping the merge speed as high as possible.

    After holding ``v0`` for ``cruise`` seconds the platoon brakes at once,
    which leaves the longest run-up to the merging zone. In order of growing
    delay: cruise at a reduced speed and still merge at ``v_max``; brake and
    turn straight round, merging below ``v_max``; stop and wait before the
    run-up. A later braking point trades merge speed for staying behind a
    slower platoon ahead.
    """
    V, U, B = g.v_max, g.u_max, -g.u_min
    distance = g.control_zone_length - v0 * cruise
    horizon = tm - t0 - cruise
    if cruise < 0 or v0 * v0 / (2.0 * B) > distance:
        raise ConstraintViolation(f"cannot slow down inside the control zone from {v0} m/s")
    head = [(cruise, v0, 0.0)]
    # lowest cruise speed that still leaves room to brake and reach v_max
    k = 1.0 / (2.0 * B) + 1.0 / (2.0 * U)
    v_floor = math.sqrt(max(0.0, (v0 * v0 / (2.0 * B) + V * V / (2.0 * U) - distance) / k))
    v_floor = min(v_floor, v0)

    def cruise_hold(v):
        left = distance - (v0 * v0 - v * v) / (2.0 * B) - (V * V - v * v) / (2.0 * U)
        return max(left, 0.0) / v

    def horizon_a(v):
        return _slow_profile(v0, g, v, cruise_hold(v), distance)[1] - horizon

    def horizon_b(v):
        return _slow_profile(v0, g, v, 0.0, distance)[1] - horizon

    if v_floor > 0 and horizon_a(v0) <= 0 <= horizon_a(v_floor):
        v = brentq(horizon_a, v_floor, v0, xtol=1e-13) if horizon_a(v0) < 0 else v0
        phases = _slow_profile(v0, g, v, cruise_hold(v), distance)[0]
        return _phases_plan(head + phases, t0, tm, "slow_then_accelerate")
    lo_b = horizon_b(0.0)
    if horizon_b(v_floor) <= 0 <= lo_b:
        v = brentq(horizon_b, 0.0, v_floor, xtol=1e-13) if lo_b > 0 else 0.0
        phases = _slow_profile(v0, g, v, 0.0, distance)[0]
        return _phases_plan(head + phases, t0, tm, "slow_merge")
    if lo_b < 0:
        phases = _slow_profile(v0, g, 0.0, -lo_b, distance)[0]
        return _phases_plan(head + phases, t0, tm, "early_stop")
    raise ConstraintViolation(f"horizon {horizon:.3f} s too short to slow down from {v0} m/s")


def candidate_plans(p: Platoon, s: MergeSchedule, g: RoadGeometry,
                    cruise_step: float = 0.1):
    """Bound-respecting plans for the scheduled merge, most preferred first.

    The closed form comes first. Then come constant-acceleration phases that
    merge at ``v_max`` without slowing down. Last come slow-downs with a
    braking point moved later in ``cruise_step`` increments. Every plan
    yielded includes the merging-zone leg up to the scheduled release.
    """
    entry = s[p.id]
    v0, t0 = p.initial_speed, p.arrival_time
    try:
        yield plan_for_schedule(p, s, g)
        return  # nothing to absorb beyond what the closed form handles
    except ConstraintViolation:
        pass
    try:
        yield with_merge_zone(held_speed_plan(v0, g, t0, entry.t_m), g, until=entry.t_l)
    except ConstraintViolation:
        pass
    n = int(math.floor(g.control_zone_length / max(v0, 1e-9) / cruise_step)) + 1
    for k in range(n):
        try:
            base = slow_then_merge_plan(v0, g, t0, entry.t_m, cruise=k * cruise_step)
        except ConstraintViolation:
            continue
        yield with_merge_zone(base, g, until=entry.t_l)


def feasible_plan_for_schedule(p: Platoon, s: MergeSchedule,
                               g: RoadGeometry) -> TrajectoryPlan:
    """Plan the scheduled merge, degrading gracefully when the closed form
    breaks a bound: the first of :func:`candidate_plans`."""
    for plan in candidate_plans(p, s, g):
        return plan
    raise ConstraintViolation(f"platoon {p.id}: no feasible plan for t_m={s[p.id].t_m:.3f}")


# -- export --------------------------------------------------------------------

PLAN_COLUMNS = ("t", "position", "speed", "accel")


def sample_plan(plan: TrajectoryPlan, dt: float) -> list[tuple[float, float, float, float]]:
    n = int(math.floor((plan.t_end - plan.t0) / dt + 1e-9))
    rows = []
    for k in range(n + 1):
        t = plan.t0 + k * dt
        st = plan.eval(t)
        rows.append((t, st.position, st.speed, st.accel))
    return rows


def write_plan_csv(plan: TrajectoryPlan, dt: float, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(PLAN_COLUMNS)
    for row in sample_plan(plan, dt):
        writer.writerow([repr(float(x)) for x in row])

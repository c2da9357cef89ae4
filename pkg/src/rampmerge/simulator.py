"""Discrete-time microsimulation of platoons through the on-ramp merge.

Plans are analytic, so "stepping" a vehicle means evaluating its leader's
plan at the current clock, shifted by the follower's cumulative headway.
The step loop still owns everything that happens over time: arrivals,
(re)scheduling, event detection and the invariant checks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import scheduler as sched
from .core import Origin, Platoon, ScenarioConfig, VehicleState, validate_scenario
from .scheduler import MergeSchedule, ScheduleEntry, earliest_crossing
from .trajectory import (
    TrajectoryError,
    TrajectoryPlan,
    candidate_plans,
    stop_and_go_plan,
    earliest_stop_time,
    time_optimal_plan,
    with_merge_zone,
    zone_crossing_time,
)

ZONE_EPS = 1e-6
STATE_EPS = 1e-9
DRAIN_LIMIT = 3600.0

TRAJECTORY_COLUMNS = ("time", "platoon_id", "vehicle_index", "position", "speed", "accel")
EVENT_COLUMNS = ("time", "kind", "platoon_id")


class SimulationError(RuntimeError):
    pass


class EventKind(str, enum.Enum):
    PLATOON_ARRIVAL = "PlatoonArrival"
    RESCHEDULE = "Reschedule"
    MERGE_ENTRY = "MergeEntry"
    MERGE_EXIT = "MergeExit"


_KIND_ORDER = {k: i for i, k in enumerate(EventKind)}


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: EventKind
    platoon_id: int


@dataclass
class ActivePlatoon:
    platoon: Platoon
    plan: TrajectoryPlan
    last: list = field(default_factory=list)  # previous (t, position, speed) per vehicle
    exited: list = field(default_factory=list)
    entered_zone: bool = False

    def __post_init__(self):
        n = self.platoon.size
        self.last = [None] * n
        self.exited = [False] * n

    @property
    def done(self) -> bool:
        return all(self.exited)


@dataclass
class SimState:
    clock: float
    active: list[ActivePlatoon]
    schedule: MergeSchedule | None
    t_last_leave: float
    rng: np.random.Generator | None = None


@dataclass
class SimResult:
    policy: str
    cfg: ScenarioConfig
    platoons: list[Platoon]
    plans: dict[int, TrajectoryPlan]
    events: list[SimEvent]
    trajectory: pd.DataFrame
    schedule: list[dict]
    merge_windows: dict[int, tuple[float, float]]
    exclusivity_violations: int = 0
    max_entry_error: float = 0.0
    same_road_overtakes: int = 0  # platoons planned through the one ahead (no car following)

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(e.time, e.kind.value, e.platoon_id) for e in self.events], columns=EVENT_COLUMNS)


# -- arrivals ------------------------------------------------------------------

def platoon_rate(volume_vph: float, size_range: tuple[int, int]) -> float:
    """Platoons per second delivering ``volume_vph`` vehicles per hour."""
    lo, hi = size_range
    return volume_vph / 3600.0 / ((lo + hi) / 2.0)


def min_platoon_spacing(cfg: ScenarioConfig, size: int) -> float:
    """Entry spacing after a platoon of ``size`` so that the same-road stream
    alone never double-books the merging zone, whatever the two speeds."""
    g = cfg.geometry
    v_lo, v_hi = cfg.initial_speed_bounds()
    catch_up = earliest_crossing(v_lo, g) - earliest_crossing(v_hi, g)
    occupancy = g.merging_zone_length / g.v_max + (size - 1) * cfg.headway + cfg.safe_time_gap
    return occupancy + catch_up


def _road_arrivals(cfg: ScenarioConfig, origin: Origin, rng: np.random.Generator):
    volume = cfg.volume_for(origin)
    size_range = cfg.size_range_for(origin)
    if volume <= 0:
        return []
    rate = platoon_rate(volume, size_range)
    raw = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > cfg.sim_duration:
            break
        raw.append(t)
    sizes = rng.integers(size_range[0], size_range[1] + 1, size=len(raw))
    v_lo, v_hi = cfg.initial_speed_bounds()
    speeds = rng.uniform(v_lo, v_hi, size=len(raw))
    dt = cfg.time_step
    out = []
    earliest_step = 0
    for t_raw, size, v0 in zip(raw, sizes, speeds):
        step = max(math.ceil(t_raw / dt - 1e-9), earliest_step)
        t_arr = step * dt
        if t_arr > cfg.sim_duration:
            break
        out.append((t_arr, origin, int(size), float(v0)))
        earliest_step = math.ceil((t_arr + min_platoon_spacing(cfg, int(size))) / dt - 1e-9)
    return out


def generate_arrivals(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> list[Platoon]:
    """Poisson platoon arrivals on both roads, ids in arrival order.

    Raw arrival instants are pushed later when needed to keep each road's
    minimum spacing, then snapped up to the simulation grid.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    hw_rng, ramp_rng = rng.spawn(2)
    rows = _road_arrivals(cfg, Origin.HIGHWAY, hw_rng) + _road_arrivals(cfg, Origin.RAMP, ramp_rng)
    rows.sort(key=lambda r: (r[0], 0 if r[1] is Origin.HIGHWAY else 1))
    return [
        Platoon(id=i, origin=origin, weight=cfg.weight_for(origin), size=size,
                headway=cfg.headway, arrival_time=t, initial_speed=v0)
        for i, (t, origin, size, v0) in enumerate(rows, 1)
    ]


# -- policies ------------------------------------------------------------------

def _zone_clear_time(plan: TrajectoryPlan, p: Platoon, cfg: ScenarioConfig) -> float:
    t_exit = plan.time_at_position(cfg.geometry.merge_exit)
    if t_exit is None:
        raise SimulationError(f"platoon {p.id}: plan never leaves the merging zone")
    return t_exit + (p.size - 1) * p.headway


class ProposedPlanner:
    """Schedule each arriving batch behind everything already committed.

    Each platoon takes the first candidate plan that keeps its leader
    behind the tail of the previous platoon from the same road.
    """

    name = "proposed"

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.schedule_rows: list[dict] = []
        self.scheduled: dict[int, ScheduleEntry] = {}
        self.last_on_road: dict[Origin, ActivePlatoon] = {}
        self.overtakes = 0

    def _choose(self, p: Platoon, single: MergeSchedule) -> TrajectoryPlan:
        g = self.cfg.geometry
        ahead = self.last_on_road.get(p.origin)
        best, best_gap = None, -math.inf
        for plan in candidate_plans(p, single, g):
            if ahead is None:
                return plan
            gap = min_gap_behind(plan, ahead, self.cfg)
            if gap >= -ZONE_EPS:
                return plan
            if gap > best_gap:
                best, best_gap = plan, gap
        if best is None:
            raise TrajectoryError(f"no feasible plan for t_m={single[p.id].t_m:.3f}")
        # same-road car following is out of scope; keep the least overlap
        self.overtakes += 1
        return best

    def __call__(self, batch: list[Platoon], state: SimState, events: list[SimEvent]):
        cfg, g = self.cfg, self.cfg.geometry
        now = min(p.arrival_time for p in batch)
        order = sched.build_schedule(batch, g, cfg.safe_time_gap, now, state.t_last_leave)
        by_id = {p.id: p for p in batch}
        entries = {}
        plans = []
        for pid in order.sequence:
            p = by_id[pid]
            # re-chained one at a time: a predecessor may book a longer release
            single = sched.build_schedule([p], g, cfg.safe_time_gap, now, state.t_last_leave)
            entry = single[pid]
            try:
                plan = self._choose(p, single)
            except (TrajectoryError, ValueError) as exc:
                raise SimulationError(f"platoon {pid}: planning failed at t={now:.3f}: {exc}") from exc
            clear = _zone_clear_time(plan, p, cfg)
            state.t_last_leave = max(entry.t_l, clear + cfg.safe_time_gap)
            entries[pid] = entry
            self.scheduled[pid] = entry
            events.append(SimEvent(now, EventKind.RESCHEDULE, pid))
            ap = ActivePlatoon(p, plan)
            self.last_on_road[p.origin] = ap
            plans.append(ap)
        state.schedule = MergeSchedule(order.sequence, entries, order.timings, now)
        self.schedule_rows += sched.schedule_rows(state.schedule, batch)
        return plans


def min_gap_behind(plan: TrajectoryPlan, ahead: ActivePlatoon, cfg: ScenarioConfig) -> float:
    """Smallest distance from the tail of ``ahead`` back to this plan's
    leader, up to the leader's merging-zone exit, on the simulation grid.
    Negative means the leader would pass through the platoon ahead."""
    g = cfg.geometry
    dt = cfg.time_step
    t_exit = plan.time_at_position(g.merge_exit)
    tail_shift = (ahead.platoon.size - 1) * ahead.platoon.headway
    k0 = math.ceil(plan.t0 / dt - 1e-9)
    k1 = math.floor((t_exit if t_exit is not None else plan.t_end) / dt + 1e-9)
    gap = math.inf
    for k in range(k0, k1 + 1):
        t = k * dt
        t_tail = t - tail_shift
        if t_tail < ahead.plan.t0:
            continue  # the tail has not entered yet
        gap = min(gap, _state_at(ahead.plan, t_tail).position - _state_at(plan, t).position)
    return gap


class BaselinePlanner:
    """Highway platoons drive free; ramp platoons stop and yield.

    A ramp platoon keeps its speed only if its whole crossing, padded by the
    safe gap, fits between highway occupancies. Otherwise it halts at the
    merging-zone entry and leaves from rest at the first gap long enough.
    Highway occupancies are predicted from every highway platoon, including
    those still upstream of the control zone.
    """

    name = "baseline"

    def __init__(self, cfg: ScenarioConfig, platoons: list[Platoon]):
        self.cfg = cfg
        self.ramp_free_at = 0.0
        self.highway_plans: dict[int, TrajectoryPlan] = {}
        windows = []
        for p in platoons:
            if p.origin is Origin.HIGHWAY:
                plan = self._free_plan(p)
                self.highway_plans[p.id] = plan
                windows.append((plan.tm, _zone_clear_time(plan, p, cfg)))
        self.windows = sorted(windows)
        self._rest_crossing = zone_crossing_time(0.0, cfg.geometry)

    def _free_plan(self, p: Platoon) -> TrajectoryPlan:
        g = self.cfg.geometry
        return with_merge_zone(time_optimal_plan(p.initial_speed, g, p.arrival_time), g)

    def _conflicts(self, start: float, end: float):
        gap = self.cfg.safe_time_gap
        for s, e in self.windows:
            if s - gap >= end:
                break
            if start < e + gap and end + gap > s:
                return e + gap
        return None

    def _first_gap(self, start: float, duration: float) -> float:
        t = start
        while True:
            push = self._conflicts(t, t + duration)
            if push is None:
                return t
            t = push

    def __call__(self, batch: list[Platoon], state: SimState, events: list[SimEvent]):
        cfg, g = self.cfg, self.cfg.geometry
        out = []
        for p in sorted(batch, key=lambda q: (0 if q.origin is Origin.HIGHWAY else 1, q.id)):
            if p.origin is Origin.HIGHWAY:
                out.append(ActivePlatoon(p, self.highway_plans.get(p.id) or self._free_plan(p)))
                continue
            tail = (p.size - 1) * p.headway
            plan = self._free_plan(p)
            clear = _zone_clear_time(plan, p, cfg)
            if plan.tm < self.ramp_free_at or self._conflicts(plan.tm, clear) is not None:
                stop_at = earliest_stop_time(p.initial_speed, g, p.arrival_time)
                t_go = self._first_gap(max(stop_at, self.ramp_free_at),
                                       self._rest_crossing + tail)
                plan = stop_and_go_plan(p.initial_speed, g, p.arrival_time, t_go)
                clear = _zone_clear_time(plan, p, cfg)
            self.ramp_free_at = clear + cfg.safe_time_gap
            out.append(ActivePlatoon(p, plan))
        return out


# -- step loop -------------------------------------------------------------------

def _simulate(cfg: ScenarioConfig, platoons: list[Platoon], planner, check: bool = True) -> SimResult:
    problems = validate_scenario(cfg)
    if problems:
        raise SimulationError("invalid scenario: " + "; ".join(problems))
    g = cfg.geometry
    dt = cfg.time_step
    a_bound = max(g.u_max, -g.u_min)
    for p in platoons:
        p.check_speed(g)

    pending = sorted(platoons, key=lambda p: (p.arrival_time, p.id))
    state = SimState(clock=0.0, active=[], schedule=None, t_last_leave=0.0)
    events: list[SimEvent] = []
    rows: list[tuple] = []
    plans: dict[int, TrajectoryPlan] = {}
    windows: dict[int, list] = {}
    violations = 0
    max_entry_error = 0.0
    scheduled = getattr(planner, "scheduled", None)
    horizon = cfg.sim_duration + DRAIN_LIMIT

    k = 0
    nxt = 0
    while nxt < len(pending) or state.active:
        t = k * dt
        state.clock = t
        if t > horizon:
            raise SimulationError(f"simulation did not drain by t={horizon}")
        batch = []
        while nxt < len(pending) and pending[nxt].arrival_time <= t + 1e-9:
            batch.append(pending[nxt])
            nxt += 1
        if batch:
            for p in batch:
                events.append(SimEvent(p.arrival_time, EventKind.PLATOON_ARRIVAL, p.id))
            for ap in planner(batch, state, events):
                plans[ap.platoon.id] = ap.plan
                windows[ap.platoon.id] = [None, None]
                state.active.append(ap)

        in_zone = set()
        for ap in state.active:
            p, plan = ap.platoon, ap.plan
            for i in range(p.size):
                if ap.exited[i]:
                    continue
                shift = i * p.headway
                if t < p.arrival_time + shift - 1e-9:
                    continue
                st = _state_at(plan, t - shift)
                rows.append((t, p.id, i, st.position, st.speed, st.accel))
                if check:
                    _check_state(p, i, t, st, g)
                    prev = ap.last[i]
                    if prev is not None:
                        step = t - prev[0]
                        if abs(st.position - prev[1] - prev[2] * step) > 0.5 * a_bound * step * step + STATE_EPS:
                            raise SimulationError(
                                f"t={t:.3f}: platoon {p.id} vehicle {i} kinematic step inconsistent")
                ap.last[i] = (t, st.position, st.speed)
                if g.merge_entry + ZONE_EPS < st.position < g.merge_exit:
                    in_zone.add(p.id)
                if i == 0 and not ap.entered_zone and _has_entered(st, g):
                    ap.entered_zone = True
                    windows[p.id][0] = t
                    events.append(SimEvent(t, EventKind.MERGE_ENTRY, p.id))
                    if scheduled is not None:
                        err = t - scheduled[p.id].t_m
                        max_entry_error = max(max_entry_error, abs(err))
                        if check and not (-STATE_EPS <= err <= dt + STATE_EPS):
                            raise SimulationError(
                                f"platoon {p.id}: entered merging zone at {t:.3f}, "
                                f"scheduled {scheduled[p.id].t_m:.3f}")
                if st.position >= g.merge_exit:
                    ap.exited[i] = True
            if ap.done:
                windows[p.id][1] = t
                events.append(SimEvent(t, EventKind.MERGE_EXIT, p.id))
        if len(in_zone) > 1:
            violations += 1
            if check:
                raise SimulationError(
                    f"t={t:.3f}: merging zone shared by platoons {sorted(in_zone)}")
        state.active = [ap for ap in state.active if not ap.done]
        k += 1

    events.sort(key=lambda e: (e.time, _KIND_ORDER[e.kind], e.platoon_id))
    traj = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    return SimResult(
        policy=planner.name, cfg=cfg, platoons=list(platoons), plans=plans, events=events,
        trajectory=traj, schedule=getattr(planner, "schedule_rows", []),
        merge_windows={pid: tuple(w) for pid, w in windows.items()},
        exclusivity_violations=violations, max_entry_error=max_entry_error,
        same_road_overtakes=getattr(planner, "overtakes", 0))


def _has_entered(st: VehicleState, g) -> bool:
    # a leader waiting on the line has speed exactly zero; once it moves off
    # it counts as entered even before it clears the occupancy epsilon
    return st.position > g.merge_entry + ZONE_EPS or (st.position >= g.merge_entry and st.speed > 0)


def _state_at(plan: TrajectoryPlan, t: float) -> VehicleState:
    """Plan state, continued at constant speed once the plan has ended."""
    if t <= plan.t_end:
        return plan.eval(t)
    end = plan.eval(plan.t_end)
    if end.accel != 0.0:
        raise SimulationError(f"plan ends while accelerating at t={plan.t_end:.3f}")
    return VehicleState(end.position + end.speed * (t - plan.t_end), end.speed, 0.0)


def _check_state(p: Platoon, i: int, t: float, st, g) -> None:
    if not (g.u_min - STATE_EPS <= st.accel <= g.u_max + STATE_EPS):
        raise SimulationError(
            f"t={t:.3f}: platoon {p.id} vehicle {i} control {st.accel} outside bounds")
    if not (g.v_min - STATE_EPS <= st.speed <= g.v_max + STATE_EPS):
        raise SimulationError(
            f"t={t:.3f}: platoon {p.id} vehicle {i} speed {st.speed} outside bounds")


def run_proposed(cfg: ScenarioConfig, platoons: list[Platoon] | None = None,
                 check: bool = True) -> SimResult:
    if platoons is None:
        platoons = generate_arrivals(cfg)
    return _simulate(cfg, platoons, ProposedPlanner(cfg), check)


def run_baseline(cfg: ScenarioConfig, platoons: list[Platoon] | None = None,
                 check: bool = True) -> SimResult:
    if platoons is None:
        platoons = generate_arrivals(cfg)
    return _simulate(cfg, platoons, BaselinePlanner(cfg, platoons), check)


def write_events_csv(result: SimResult, path) -> None:
    result.events_frame().to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def write_trajectory_csv(result: SimResult, path) -> None:
    result.trajectory.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")

"""Merging-zone scheduling as a single-machine weighted completion time problem.

Each platoon is a job. Its processing time on the machine (the merging zone)
is the occupancy ``t_out``; its earliest start is the control-zone crossing
time ``t_in`` after it enters the control zone. Platoons are sequenced by
non-decreasing ``(t_in + t_out) / weight`` and chained so that no two
platoons ever hold the merging zone at once.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Origin, Platoon, RoadGeometry

MAX_ORACLE_PLATOONS = 9


def earliest_crossing(v0: float, g: RoadGeometry) -> float:
    """Shortest time to cover the control zone from speed ``v0``.

    Accelerate at ``u_max`` to ``v_max`` and cruise; already at the speed
    limit, just cruise.
    """
    if v0 > g.v_max:
        raise ValueError(f"initial speed {v0} exceeds v_max={g.v_max}")
    if v0 < g.v_min:
        raise ValueError(f"initial speed {v0} below v_min={g.v_min}")
    if v0 == g.v_max:
        return g.control_zone_length / g.v_max
    t_a = (g.v_max - v0) / g.u_max
    d_a = (g.v_max ** 2 - v0 ** 2) / (2.0 * g.u_max)
    if d_a > g.control_zone_length:
        raise ValueError(
            f"cannot reach v_max inside the control zone from {v0} m/s "
            f"(needs {d_a:.3f} m, have {g.control_zone_length} m)")
    return t_a + (g.control_zone_length - d_a) / g.v_max


def entry_time(p: Platoon, g: RoadGeometry) -> float:
    """Earliest travel time from control-zone entry to merging-zone entry."""
    try:
        return earliest_crossing(p.initial_speed, g)
    except ValueError as exc:
        raise ValueError(f"platoon {p.id}: {exc}") from None


def exit_time(p: Platoon, g: RoadGeometry, t_g: float) -> float:
    """Merging-zone occupancy: leader crossing, follower tail, safe gap."""
    if t_g < 0:
        raise ValueError("safe time gap must be >= 0")
    return g.merging_zone_length / g.v_max + (p.size - 1) * p.headway + t_g


@dataclass(frozen=True)
class PlatoonTiming:
    platoon_id: int
    t_in: float
    t_out: float
    t_c: float
    ratio: float


def completion_ratio(t: PlatoonTiming, w: float) -> float:
    if not w > 0:
        raise ValueError(f"weight must be > 0, got {w}")
    return t.t_c / w


def platoon_timing(p: Platoon, g: RoadGeometry, t_g: float) -> PlatoonTiming:
    t_in = entry_time(p, g)
    t_out = exit_time(p, g, t_g)
    t_c = t_in + t_out
    partial = PlatoonTiming(p.id, t_in, t_out, t_c, math.nan)
    return PlatoonTiming(p.id, t_in, t_out, t_c, completion_ratio(partial, p.weight))


@dataclass(frozen=True)
class ScheduleEntry:
    t_m: float  # absolute merging-zone entry
    t_l: float  # absolute merging-zone release (occupancy + safe gap)


@dataclass(frozen=True)
class MergeSchedule:
    sequence: tuple[int, ...]
    entries: dict[int, ScheduleEntry]
    timings: dict[int, PlatoonTiming]
    now: float = 0.0

    def __getitem__(self, platoon_id: int) -> ScheduleEntry:
        return self.entries[platoon_id]

    def __contains__(self, platoon_id: int) -> bool:
        return platoon_id in self.entries

    @property
    def last_leave(self) -> float:
        return self.entries[self.sequence[-1]].t_l if self.sequence else self.now

    def position(self, platoon_id: int) -> int:
        return self.sequence.index(platoon_id) + 1


def _release(p: Platoon, timing: PlatoonTiming, now: float) -> float:
    return max(now, p.arrival_time) + timing.t_in


def chain_sequence(sequence: Sequence[int], by_id: dict[int, Platoon],
                   timings: dict[int, PlatoonTiming], now: float,
                   t_last_leave: float) -> dict[int, ScheduleEntry]:
    """Start each platoon at the later of its earliest arrival and the
    previous platoon's release."""
    entries = {}
    free_at = t_last_leave
    for pid in sequence:
        timing = timings[pid]
        t_m = max(_release(by_id[pid], timing, now), free_at)
        t_l = t_m + timing.t_out
        entries[pid] = ScheduleEntry(t_m, t_l)
        free_at = t_l
    return entries


def _sort_key(p: Platoon, timing: PlatoonTiming):
    return (timing.ratio, 0 if p.origin is Origin.HIGHWAY else 1, p.id)


def _prepare(platoons: Sequence[Platoon], g: RoadGeometry, t_g: float):
    if not platoons:
        raise ValueError("no platoons to schedule")
    by_id = {}
    for p in platoons:
        if p.id in by_id:
            raise ValueError(f"duplicate platoon id {p.id}")
        by_id[p.id] = p
    timings = {p.id: platoon_timing(p, g, t_g) for p in platoons}
    return by_id, timings


def build_schedule(platoons: Sequence[Platoon], g: RoadGeometry, t_g: float,
                   now: float = 0.0, t_last_leave: float = 0.0) -> MergeSchedule:
    """Sequence platoons by non-decreasing completion ratio and chain them.

    Ties go to highway platoons, then to the lower id. ``t_last_leave`` is
    the release time of the last platoon committed before this batch.
    """
    if now < 0 or t_last_leave < 0:
        raise ValueError("now and t_last_leave must be >= 0")
    by_id, timings = _prepare(platoons, g, t_g)
    sequence = tuple(sorted(by_id, key=lambda pid: _sort_key(by_id[pid], timings[pid])))
    entries = chain_sequence(sequence, by_id, timings, now, t_last_leave)
    return MergeSchedule(sequence, entries, timings, now)


def total_weighted_completion(s: MergeSchedule, platoons: Iterable[Platoon],
                              now: float | None = None) -> float:
    """Sum of weight * (release - now) over the schedule's realized releases.

    Terms are summed with ``math.fsum`` so the result does not depend on the
    order platoons are listed in.
    """
    if now is None:
        now = s.now
    by_id = {p.id: p for p in platoons}
    missing = set(by_id) - set(s.entries)
    if missing:
        raise ValueError(f"schedule does not cover platoons {sorted(missing)}")
    return math.fsum(by_id[pid].weight * (s.entries[pid].t_l - now) for pid in s.sequence)


def schedule_for_sequence(sequence: Sequence[int], platoons: Sequence[Platoon],
                          g: RoadGeometry, t_g: float, now: float = 0.0,
                          t_last_leave: float = 0.0) -> MergeSchedule:
    by_id, timings = _prepare(platoons, g, t_g)
    if sorted(sequence) != sorted(by_id):
        raise ValueError("sequence must be a permutation of the platoon ids")
    entries = chain_sequence(tuple(sequence), by_id, timings, now, t_last_leave)
    return MergeSchedule(tuple(sequence), entries, timings, now)


def brute_force_best_sequence(platoons: Sequence[Platoon], g: RoadGeometry, t_g: float,
                              now: float = 0.0, t_last_leave: float = 0.0
                              ) -> tuple[tuple[int, ...], float]:
    """Exhaustive search over all orders; first (lexicographic) minimum wins."""
    if len(platoons) > MAX_ORACLE_PLATOONS:
        raise ValueError(
            f"brute force limited to {MAX_ORACLE_PLATOONS} platoons, got {len(platoons)}")
    by_id, timings = _prepare(platoons, g, t_g)
    ids = sorted(by_id)
    release = {pid: _release(by_id[pid], timings[pid], now) for pid in ids}
    t_out = {pid: timings[pid].t_out for pid in ids}
    weight = {pid: by_id[pid].weight for pid in ids}

    best_seq, best_val = None, math.inf
    for perm in itertools.permutations(ids):
        free_at = t_last_leave
        terms = []
        for pid in perm:
            t_m = release[pid] if release[pid] > free_at else free_at
            free_at = t_m + t_out[pid]
            terms.append(weight[pid] * (free_at - now))
        val = math.fsum(terms)
        if val < best_val:
            best_seq, best_val = perm, val
    return tuple(best_seq), best_val


# -- CSV -------------------------------------------------------------------

SCHEDULE_COLUMNS = ("platoon_id", "origin", "weight", "t_in", "t_out", "t_c", "ratio",
                    "t_m", "t_l", "sequence_position")


def schedule_rows(s: MergeSchedule, platoons: Iterable[Platoon]) -> list[dict]:
    by_id = {p.id: p for p in platoons}
    rows = []
    for pos, pid in enumerate(s.sequence, 1):
        t, e, p = s.timings[pid], s.entries[pid], by_id[pid]
        rows.append({
            "platoon_id": pid, "origin": p.origin.value, "weight": p.weight,
            "t_in": t.t_in, "t_out": t.t_out, "t_c": t.t_c, "ratio": t.ratio,
            "t_m": e.t_m, "t_l": e.t_l, "sequence_position": pos,
        })
    return rows


def write_schedule_csv(rows: Iterable[dict], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=SCHEDULE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def schedule_to_csv(s: MergeSchedule, platoons: Iterable[Platoon]) -> str:
    buf = io.StringIO()
    write_schedule_csv(schedule_rows(s, platoons), buf)
    return buf.getvalue()


PLATOON_COLUMNS = ("id", "origin", "weight", "size", "headway", "arrival_time",
                   "initial_speed")


def read_platoons(fh) -> list[Platoon]:
    """Parse a platoon list CSV. Errors carry the offending line number."""
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise ValueError("line 1: empty platoon file")
    missing = [c for c in PLATOON_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ValueError(f"line 1: missing columns {missing}")
    out, seen = [], set()
    for row in reader:
        lineno = reader.line_num
        try:
            p = Platoon(
                id=int(row["id"]), origin=Origin.parse(row["origin"]),
                weight=float(row["weight"]), size=int(row["size"]),
                headway=float(row["headway"]), arrival_time=float(row["arrival_time"]),
                initial_speed=float(row["initial_speed"]))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if p.id in seen:
            raise ValueError(f"line {lineno}: duplicate platoon id {p.id}")
        seen.add(p.id)
        out.append(p)
    return out

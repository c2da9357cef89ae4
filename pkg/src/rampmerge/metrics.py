"""Per-vehicle performance measures from a trajectory log.

Travel time runs from control-zone entry (p = 0) to merging-zone exit. Both
crossings are interpolated between samples. Delay is travel time minus the
unobstructed time for the vehicle's entry speed. The fuel proxy is the
control effort 1/2 * integral of u^2; it is a stand-in, not a fuel model.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .core import ScenarioConfig
from .scheduler import earliest_crossing

STOP_SPEED = 0.1  # m/s; below this a sample counts as stopped
FIELDS = ("avg_delay", "avg_stopped_delay", "avg_stops", "avg_travel_time", "fuel_proxy")
_NEG_TOL = 1e-6


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleMetrics:
    platoon_id: int
    vehicle_index: int
    travel_time: float
    delay: float
    stopped_delay: float
    stops: int
    fuel_proxy: float


@dataclass(frozen=True)
class PlatoonMetrics:
    platoon_id: int
    vehicles: int
    avg_delay: float
    avg_stopped_delay: float
    avg_stops: float
    avg_travel_time: float
    fuel_proxy: float


@dataclass(frozen=True)
class RunMetrics:
    avg_delay: float
    avg_stopped_delay: float
    avg_stops: float
    avg_travel_time: float
    fuel_proxy: float
    vehicles: int = 0
    per_platoon: list[PlatoonMetrics] = field(default_factory=list)

    def aggregates(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in FIELDS}


def step_effort(u: np.ndarray, v: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Integral of u^2 over each sampling interval.

    Assumes at most one control switch per interval, located from the speed
    change: u_k * s + u_{k+1} * (dt - s) = dv. Exact for piecewise-constant
    control, which covers bang/cruise profiles.
    """
    u0, u1 = u[:-1], u[1:]
    dv = np.diff(v)
    du = u0 - u1
    same = np.abs(du) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(same, dt, (dv - u1 * dt) / np.where(same, 1.0, du))
    s = np.clip(s, 0.0, dt)
    return np.where(same, u0 * u0 * dt, u0 * u0 * s + u1 * u1 * (dt - s))


def _crossing(t: np.ndarray, p: np.ndarray, x: float) -> float | None:
    idx = np.flatnonzero(p >= x)
    if idx.size == 0:
        return None
    k = idx[0]
    if k == 0 or p[k] == x:
        return float(t[k])
    frac = (x - p[k - 1]) / (p[k] - p[k - 1])
    return float(t[k - 1] + frac * (t[k] - t[k - 1]))


def _runs(mask: np.ndarray) -> int:
    if mask.size == 0:
        return 0
    starts = mask & ~np.concatenate(([False], mask[:-1]))
    return int(starts.sum())


def _clip_tiny(x: float, what: str, key) -> float:
    if x < -_NEG_TOL:
        raise MetricsError(f"vehicle {key}: negative {what} {x:.6g}")
    return max(x, 0.0)


def vehicle_metrics(group: pd.DataFrame, cfg: ScenarioConfig, key=None) -> VehicleMetrics:
    g = cfg.geometry
    t = group["time"].to_numpy(float)
    p = group["position"].to_numpy(float)
    v = group["speed"].to_numpy(float)
    u = group["accel"].to_numpy(float)
    t_exit = _crossing(t, p, g.merge_exit)
    if t_exit is None:
        raise MetricsError(f"vehicle {key}: log ends before the merging-zone exit "
                           f"(last position {p[-1]:.3f} m)")
    # the log starts on control-zone entry; back off any overshoot at speed
    t_entry = t[0] - p[0] / v[0] if p[0] > 0 and v[0] > 0 else t[0]
    travel = t_exit - t_entry
    free = earliest_crossing(min(v[0], g.v_max), g) + g.merging_zone_length / g.v_max
    last = int(np.searchsorted(t, t_exit, side="left"))  # first sample at/after exit
    upto = slice(0, last + 1)
    dt = np.diff(t[upto])
    stopped = v[upto] < STOP_SPEED
    stopped_time = float(np.sum(np.where(stopped[:-1], dt, 0.0)))
    effort = 0.5 * float(np.sum(step_effort(u[upto], v[upto], dt)))
    return VehicleMetrics(
        platoon_id=int(group["platoon_id"].iloc[0]),
        vehicle_index=int(group["vehicle_index"].iloc[0]),
        travel_time=travel,
        delay=_clip_tiny(travel - free, "delay", key),
        stopped_delay=stopped_time,
        stops=_runs(stopped[:-1]) if stopped.size > 1 else 0,
        fuel_proxy=effort,
    )


def per_vehicle(trajectory: pd.DataFrame, cfg: ScenarioConfig) -> list[VehicleMetrics]:
    if trajectory.empty:
        return []
    df = trajectory.sort_values(["platoon_id", "vehicle_index", "time"], kind="mergesort")
    return [vehicle_metrics(grp, cfg, key) for key, grp in df.groupby(["platoon_id", "vehicle_index"], sort=True)]


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def compute_metrics(trajectory: pd.DataFrame, cfg: ScenarioConfig) -> RunMetrics:
    """Aggregate measures; every average is over vehicles, not platoons."""
    vehicles = per_vehicle(trajectory, cfg)
    by_platoon: dict[int, list[VehicleMetrics]] = {}
    for vm in vehicles:
        by_platoon.setdefault(vm.platoon_id, []).append(vm)
    platoons = [
        PlatoonMetrics(
            platoon_id=pid, vehicles=len(vs),
            avg_delay=_mean(x.delay for x in vs),
            avg_stopped_delay=_mean(x.stopped_delay for x in vs),
            avg_stops=_mean(x.stops for x in vs),
            avg_travel_time=_mean(x.travel_time for x in vs),
            fuel_proxy=_mean(x.fuel_proxy for x in vs))
        for pid, vs in sorted(by_platoon.items())
    ]
    return RunMetrics(
        avg_delay=_mean(x.delay for x in vehicles),
        avg_stopped_delay=_mean(x.stopped_delay for x in vehicles),
        avg_stops=_mean(x.stops for x in vehicles),
        avg_travel_time=_mean(x.travel_time for x in vehicles),
        fuel_proxy=_mean(x.fuel_proxy for x in vehicles),
        vehicles=len(vehicles),
        per_platoon=platoons,
    )


def average_runs(runs: list[RunMetrics]) -> RunMetrics:
    """Seed average: plain mean of each run's aggregates."""
    if not runs:
        raise ValueError("no runs to average")
    return RunMetrics(**{k: _mean(getattr(r, k) for r in runs) for k in FIELDS},
                      vehicles=sum(r.vehicles for r in runs))


# -- comparison --------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    metric: str
    proposed: float
    baseline: float
    reduction_pct: float | None  # None when the baseline value is zero


@dataclass(frozen=True)
class ComparisonReport:
    rows: list[ComparisonRow]

    def __getitem__(self, metric: str) -> ComparisonRow:
        for row in self.rows:
            if row.metric == metric:
                return row
        raise KeyError(metric)

    def reduction(self, metric: str) -> float | None:
        return self[metric].reduction_pct


def compare_runs(proposed: RunMetrics, baseline: RunMetrics) -> ComparisonReport:
    rows = []
    for k in FIELDS:
        p, b = getattr(proposed, k), getattr(baseline, k)
        pct = None if b == 0 else 100.0 * (b - p) / b
        rows.append(ComparisonRow(k, p, b, pct))
    return ComparisonReport(rows)


# -- export ------------------------------------------------------------------

RUN_COLUMNS = ("policy", "seed", "vehicles") + FIELDS
COMPARISON_COLUMNS = ("metric", "proposed", "baseline", "reduction_pct")


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def metrics_to_dict(m: RunMetrics) -> dict:
    out = {k: getattr(m, k) for k in FIELDS}
    out["vehicles"] = m.vehicles
    out["fuel_proxy_note"] = "control effort 1/2*int(u^2) dt, (m/s^2)^2*s per vehicle"
    out["per_platoon"] = [asdict(pm) for pm in m.per_platoon]
    return out


def write_metrics_json(m: RunMetrics, fh) -> None:
    json.dump(metrics_to_dict(m), fh, indent=2, sort_keys=True)
    fh.write("\n")


def write_metrics_csv(rows: list[tuple[str, int | str, RunMetrics]], fh) -> None:
    """One flat row per (policy, seed) run."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(RUN_COLUMNS)
    for policy, seed, m in rows:
        writer.writerow([policy, seed, m.vehicles] + [_fmt(getattr(m, k)) for k in FIELDS])


def write_comparison_csv(report: ComparisonReport, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(COMPARISON_COLUMNS)
    for r in report.rows:
        writer.writerow([r.metric, _fmt(r.proposed), _fmt(r.baseline), _fmt(r.reduction_pct)])

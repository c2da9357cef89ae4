"""Domain types shared by the scheduler, trajectory planner and simulator.

Units are SI throughout. Positions are measured from the control-zone entry
(p = 0); the merging zone spans [L_CZ, L_CZ + L_MZ). Times are absolute
simulation seconds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from pathlib import Path


class Origin(str, enum.Enum):
    HIGHWAY = "highway"
    RAMP = "ramp"

    @classmethod
    def parse(cls, text: str) -> "Origin":
        key = text.strip().lower()
        for member in cls:
            if member.value == key or member.name.lower() == key:
                return member
        raise ValueError(f"unknown origin {text!r}")


@dataclass(frozen=True)
class RoadGeometry:
    control_zone_length: float = 150.0
    merging_zone_length: float = 30.0
    v_min: float = 0.0
    v_max: float = 25.0
    u_min: float = -3.0
    u_max: float = 3.0

    def problems(self) -> list[str]:
        out = []
        if not self.control_zone_length > 0:
            out.append("control_zone_length must be > 0")
        if not self.merging_zone_length > 0:
            out.append("merging_zone_length must be > 0")
        if not (0 <= self.v_min < self.v_max):
            out.append(f"speed band empty or negative: need 0 <= v_min < v_max "
                       f"(v_min={self.v_min}, v_max={self.v_max})")
        if not (self.u_min < 0 < self.u_max):
            out.append(f"need u_min < 0 < u_max (u_min={self.u_min}, u_max={self.u_max})")
        if not out:
            need = self.min_control_zone_length()
            if self.control_zone_length < need:
                out.append(
                    f"control zone too short to reach v_max from v_min: "
                    f"L_CZ={self.control_zone_length:g} < {need:.6g} m")
        return out

    def min_control_zone_length(self) -> float:
        """Distance needed to accelerate from v_min to v_max at u_max."""
        return (self.v_max ** 2 - self.v_min ** 2) / (2.0 * self.u_max)

    @property
    def merge_entry(self) -> float:
        return self.control_zone_length

    @property
    def merge_exit(self) -> float:
        return self.control_zone_length + self.merging_zone_length


@dataclass(frozen=True)
class Platoon:
    """A leader plus ``size - 1`` followers at constant time headway."""

    id: int
    origin: Origin
    weight: float
    size: int
    headway: float
    arrival_time: float
    initial_speed: float

    def __post_init__(self):
        if isinstance(self.origin, str) and not isinstance(self.origin, Origin):
            object.__setattr__(self, "origin", Origin.parse(self.origin))
        if int(self.id) != self.id or self.id < 1:
            raise ValueError(f"platoon id must be a positive integer, got {self.id!r}")
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"platoon {self.id}: size must be >= 1, got {self.size!r}")
        if not self.weight > 0:
            raise ValueError(f"platoon {self.id}: weight must be > 0, got {self.weight!r}")
        if not self.headway > 0:
            raise ValueError(f"platoon {self.id}: headway must be > 0, got {self.headway!r}")
        if not (math.isfinite(self.arrival_time) and self.arrival_time >= 0):
            raise ValueError(f"platoon {self.id}: arrival_time must be >= 0")
        if not (math.isfinite(self.initial_speed) and self.initial_speed >= 0):
            raise ValueError(f"platoon {self.id}: initial_speed must be >= 0")

    def check_speed(self, g: RoadGeometry) -> None:
        if not (g.v_min <= self.initial_speed <= g.v_max):
            raise ValueError(
                f"platoon {self.id}: initial speed {self.initial_speed} outside "
                f"[{g.v_min}, {g.v_max}]")


@dataclass(frozen=True)
class VehicleState:
    position: float
    speed: float
    accel: float


def _parse_range(text) -> tuple[int, int]:
    if isinstance(text, (tuple, list)):
        lo, hi = text
    else:
        parts = [p for p in text.replace("..", ",").replace(" ", ",").split(",") if p]
        if len(parts) != 2:
            raise ValueError(f"expected 'min, max', got {text!r}")
        lo, hi = parts
    return int(lo), int(hi)


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    safe_time_gap: float = 1.0
    headway: float = 1.0
    highway_volume: float = 1060.0
    ramp_volume: float = 450.0
    highway_platoon_size_range: tuple[int, int] = (1, 5)
    ramp_platoon_size_range: tuple[int, int] = (1, 3)
    highway_weight: float = 2.0
    ramp_weight: float = 1.0
    initial_speed_fraction: float = 0.8
    sim_duration: float = 900.0
    time_step: float = 0.1
    rng_seed: int = 1

    def replace(self, **changes) -> "ScenarioConfig":
        geo = {k: changes.pop(k) for k in list(changes) if k in _GEOMETRY_KEYS}
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        if geo:
            data["geometry"] = RoadGeometry(**{**_geometry_dict(self.geometry), **geo})
        data.update(changes)
        return ScenarioConfig(**data)

    def initial_speed_bounds(self) -> tuple[float, float]:
        g = self.geometry
        return max(g.v_min, self.initial_speed_fraction * g.v_max), g.v_max

    def weight_for(self, origin: Origin) -> float:
        return self.highway_weight if origin is Origin.HIGHWAY else self.ramp_weight

    def size_range_for(self, origin: Origin) -> tuple[int, int]:
        if origin is Origin.HIGHWAY:
            return self.highway_platoon_size_range
        return self.ramp_platoon_size_range

    def volume_for(self, origin: Origin) -> float:
        return self.highway_volume if origin is Origin.HIGHWAY else self.ramp_volume


_GEOMETRY_KEYS = tuple(f.name for f in fields(RoadGeometry))


def _geometry_dict(g: RoadGeometry) -> dict:
    return {k: getattr(g, k) for k in _GEOMETRY_KEYS}


def validate_scenario(cfg: ScenarioConfig) -> list[str]:
    """Return the list of violated invariants; empty means runnable."""
    problems = list(cfg.geometry.problems())
    if not cfg.time_step > 0:
        problems.append("time_step must be > 0")
    if not cfg.sim_duration > 0:
        problems.append("sim_duration must be > 0")
    if cfg.safe_time_gap < 0:
        problems.append("safe_time_gap must be >= 0")
    if not cfg.headway > 0:
        problems.append("headway must be > 0")
    for name in ("highway_volume", "ramp_volume"):
        if getattr(cfg, name) < 0:
            problems.append(f"{name} must be >= 0")
    for name in ("highway_platoon_size_range", "ramp_platoon_size_range"):
        lo, hi = getattr(cfg, name)
        if lo < 1 or hi < lo:
            problems.append(f"{name} must satisfy 1 <= min <= max, got ({lo}, {hi})")
    for name in ("highway_weight", "ramp_weight"):
        if not getattr(cfg, name) > 0:
            problems.append(f"{name} must be > 0")
    if not (0 < cfg.initial_speed_fraction <= 1):
        problems.append("initial_speed_fraction must be in (0, 1]")
    return problems


# -- key = value scenario files ----------------------------------------------

_INT_KEYS = {"rng_seed"}
_RANGE_KEYS = {"highway_platoon_size_range", "ramp_platoon_size_range"}


def scenario_keys() -> list[str]:
    keys = list(_GEOMETRY_KEYS)
    keys += [f.name for f in fields(ScenarioConfig) if f.name != "geometry"]
    return keys


def parse_scenario(text: str) -> ScenarioConfig:
    known = set(scenario_keys())
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _RANGE_KEYS:
                values[key] = _parse_range(value)
            elif key in _INT_KEYS:
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ScenarioConfig().replace(**values)


def load_scenario(path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def format_scenario(cfg: ScenarioConfig) -> str:
    lines = []
    for key in scenario_keys():
        value = getattr(cfg.geometry, key) if key in _GEOMETRY_KEYS else getattr(cfg, key)
        if key in _RANGE_KEYS:
            value = f"{value[0]}, {value[1]}"
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def dump_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(format_scenario(cfg), encoding="utf-8")


def bundled_scenario(name: str) -> Path:
    here = Path(__file__).parent / "scenarios"
    path = here / name
    if not path.suffix:
        path = path.with_suffix(".cfg")
    return path

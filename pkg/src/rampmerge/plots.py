"""Figures for run reports. Rendered with the Agg backend straight to PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .core import Origin, Platoon, RoadGeometry  # noqa: E402
from .metrics import ComparisonReport  # noqa: E402

# no timestamps or version strings, so reruns are byte-identical
PNG_METADATA = {"Software": None}

LABELS = {
    "avg_delay": "delay (s/veh)",
    "avg_stopped_delay": "stopped delay (s/veh)",
    "avg_stops": "stops (1/veh)",
    "avg_travel_time": "travel time (s/veh)",
    "fuel_proxy": "fuel proxy, 1/2 int u^2 (m^2/s^3 per veh)",
}
COLORS = {"proposed": "#1f77b4", "baseline": "#d62728",
          Origin.HIGHWAY: "#333333", Origin.RAMP: "#ff7f0e"}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)


def comparison_figure(report: ComparisonReport, path, title: str = "") -> None:
    """One small bar pair per metric, annotated with the reduction."""
    rows = report.rows
    fig, axes = plt.subplots(1, len(rows), figsize=(3.0 * len(rows), 3.4))
    for ax, row in zip(np.atleast_1d(axes), rows):
        vals = [row.proposed, row.baseline]
        ax.bar([0, 1], vals, color=[COLORS["proposed"], COLORS["baseline"]], width=0.6)
        ax.set_xticks([0, 1], ["proposed", "baseline"])
        ax.set_title(LABELS.get(row.metric, row.metric), fontsize=9)
        pct = "n/a" if row.reduction_pct is None else f"{row.reduction_pct:+.1f}%"
        ax.text(0.5, 0.95, f"reduction {pct}", transform=ax.transAxes,
                ha="center", va="top", fontsize=8)
        ax.set_ylim(0, max(vals + [1e-9]) * 1.25)
        ax.grid(axis="y", linewidth=0.4, alpha=0.6)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def time_space_figure(trajectory: pd.DataFrame, platoons: list[Platoon], g: RoadGeometry,
                      path, t_window: tuple[float, float] | None = None, title: str = "") -> None:
    """Leader position against time, coloured by road, with the merging zone shaded."""
    origin = {p.id: p.origin for p in platoons}
    leaders = trajectory[trajectory["vehicle_index"] == 0]
    if t_window is not None:
        lo, hi = t_window
        leaders = leaders[(leaders["time"] >= lo) & (leaders["time"] <= hi)]
    fig, ax = plt.subplots(figsize=(8, 4))
    for pid, grp in leaders.groupby("platoon_id", sort=True):
        ax.plot(grp["time"], grp["position"], linewidth=0.8,
                color=COLORS[origin.get(pid, Origin.HIGHWAY)])
    ax.axhspan(g.merge_entry, g.merge_exit, color="#cccccc", alpha=0.5, linewidth=0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("position from control-zone entry (m)")
    ax.set_ylim(0, g.merge_exit + 5)
    handles = [plt.Line2D([], [], color=COLORS[o], label=o.value) for o in Origin]
    ax.legend(handles=handles, loc="lower right", fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)

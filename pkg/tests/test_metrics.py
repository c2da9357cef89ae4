import io
import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rampmerge import metrics as M
from rampmerge import simulator as sim
from rampmerge import trajectory as T
from rampmerge.core import ScenarioConfig

CFG = ScenarioConfig()
G = CFG.geometry
DT = CFG.time_step


def frame(samples, pid=1, idx=0):
    t, p, v, u = (np.asarray(x, float) for x in zip(*samples))
    return pd.DataFrame({"time": t, "platoon_id": pid, "vehicle_index": idx,
                         "position": p, "speed": v, "accel": u})


def cruise_log(t_end=8.0, v=25.0, t0=0.0, pid=1, idx=0):
    ts = np.arange(0.0, t_end - t0 + 1e-9, DT)
    return frame([(t0 + t, v * t, v, 0.0) for t in ts], pid, idx)


def held_log(hold=5.0):
    """Cruise to 100 m, stand still for ``hold`` seconds, cruise on."""
    rows = []
    for k in range(200):
        t = k * DT
        if t <= 4.0 + 1e-9:
            rows.append((t, 25.0 * t, 25.0, 0.0))
        elif t <= 4.0 + hold + 1e-9:
            rows.append((t, 100.0, 0.0, 0.0))
        else:
            rows.append((t, 100.0 + 25.0 * (t - 4.0 - hold), 25.0, 0.0))
    return frame(rows)


def sampled_plan(plan, until, pid=1):
    rows = []
    for k in range(int(round(plan.t0 / DT)), int(round(until / DT)) + 1):
        s = sim._state_at(plan, k * DT)
        rows.append((k * DT, s.position, s.speed, s.accel))
    return frame(rows, pid)


def test_free_cruise_is_all_zero():
    m = M.compute_metrics(cruise_log(), CFG)
    assert m.vehicles == 1
    assert m.avg_travel_time == pytest.approx(7.2, abs=1e-9)
    for k in ("avg_delay", "avg_stopped_delay", "avg_stops", "fuel_proxy"):
        assert getattr(m, k) == pytest.approx(0.0, abs=1e-9), k


def test_hold_counts_one_stop():
    vm = M.per_vehicle(held_log(5.0), CFG)[0]
    assert vm.stops == 1
    assert vm.stopped_delay == pytest.approx(5.0, abs=DT + 1e-9)
    assert vm.delay == pytest.approx(5.0, abs=1e-9)
    assert vm.travel_time == pytest.approx(12.2, abs=1e-9)


def test_two_holds_count_two_stops():
    log = held_log(2.0)
    # a second standstill after the first resume
    late = (log.time > 7.0) & (log.time <= 8.0)
    log.loc[late, "speed"] = 0.0
    log.loc[late, "position"] = log.position[log.time > 7.0].iloc[0]
    log.loc[log.time > 8.0, "position"] -= 25.0
    assert M.per_vehicle(log, CFG)[0].stops == 2


@pytest.mark.parametrize("v0", [20.0, 21.7, 23.35])
def test_time_optimal_fuel_matches_closed_form(v0):
    plan = T.with_merge_zone(T.time_optimal_plan(v0, G, 0.0), G)
    log = sampled_plan(plan, plan.time_at_position(G.merge_exit) + 1.0)
    t_a = (G.v_max - v0) / G.u_max
    expected = 0.5 * G.u_max ** 2 * t_a
    got = M.compute_metrics(log, CFG).fuel_proxy
    assert got == pytest.approx(expected, rel=0.01)


@given(st.lists(st.tuples(st.sampled_from([-3.0, 0.0, 3.0]), st.floats(0.0, 0.1)), min_size=1, max_size=30))
def test_step_effort_exact_for_single_switch(steps):
    """Piecewise-constant control with one switch inside each interval."""
    u_prev = 0.0
    us, vs, dts, truth = [0.0], [15.0], [], 0.0
    for u_next, s in steps:
        # u_prev for s seconds, then u_next for the rest of the step
        vs.append(vs[-1] + u_prev * s + u_next * (DT - s))
        us.append(u_next)
        dts.append(DT)
        truth += u_prev ** 2 * s + u_next ** 2 * (DT - s)
        u_prev = u_next
    got = M.step_effort(np.array(us), np.array(vs), np.array(dts)).sum()
    assert got == pytest.approx(truth, abs=1e-9)


def test_vehicle_order_does_not_matter():
    logs = pd.concat([cruise_log(pid=1), held_log(3.0).assign(platoon_id=2),
                      cruise_log(t_end=10.0, t0=2.0, pid=3, idx=1)], ignore_index=True)
    a = M.compute_metrics(logs, CFG)
    shuffled = logs.sample(frac=1.0, random_state=4).reset_index(drop=True)
    b = M.compute_metrics(shuffled, CFG)
    assert a.aggregates() == b.aggregates()
    assert a.per_platoon == b.per_platoon


def test_truncated_log_raises():
    with pytest.raises(M.MetricsError, match="before the merging-zone exit"):
        M.compute_metrics(cruise_log(t_end=5.0), CFG)


def test_faster_than_free_flow_is_an_error():
    log = cruise_log(t_end=8.0)
    log["time"] *= 0.5
    with pytest.raises(M.MetricsError, match="negative delay"):
        M.compute_metrics(log, CFG)


def test_empty_log_gives_zeros():
    m = M.compute_metrics(pd.DataFrame(columns=sim.TRAJECTORY_COLUMNS), CFG)
    assert m.vehicles == 0 and m.avg_delay == 0.0


# -- comparison ----------------------------------------------------------------

def run(**values):
    base = dict.fromkeys(M.FIELDS, 1.0)
    base.update(values)
    return M.RunMetrics(**base)


def test_reduction_by_hand():
    r = M.compare_runs(run(avg_delay=6.4), run(avg_delay=20.0))
    assert r.reduction("avg_delay") == pytest.approx(68.0)
    assert r.reduction("fuel_proxy") == 0.0
    assert M.compare_runs(run(avg_stops=0.0), run(avg_stops=0.0)).reduction("avg_stops") is None


def test_average_runs_is_plain_mean():
    avg = M.average_runs([run(avg_delay=2.0), run(avg_delay=4.0), run(avg_delay=9.0)])
    assert avg.avg_delay == pytest.approx(5.0)
    with pytest.raises(ValueError):
        M.average_runs([])


def test_simulated_run_invariants(reference_cfg):
    cfg = reference_cfg.replace(sim_duration=120.0, rng_seed=8)
    for runner in (sim.run_proposed, sim.run_baseline):
        res = runner(cfg)
        m = M.compute_metrics(res.trajectory, cfg)
        assert m.vehicles == sum(p.size for p in res.platoons)
        assert m.avg_delay >= 0 and m.avg_stopped_delay >= 0 and m.fuel_proxy >= 0
        assert m.avg_stopped_delay <= m.avg_delay + 2 * DT
        assert m.avg_travel_time >= 7.2 - 1e-9


def test_exports():
    m = M.compute_metrics(pd.concat([cruise_log(), held_log().assign(platoon_id=2)]), CFG)
    buf = io.StringIO()
    M.write_metrics_json(m, buf)
    data = json.loads(buf.getvalue())
    assert set(M.FIELDS) <= set(data)
    assert len(data["per_platoon"]) == 2
    buf = io.StringIO()
    M.write_metrics_csv([("proposed", 1, m)], buf)
    header, row = buf.getvalue().splitlines()
    assert header.split(",") == list(M.RUN_COLUMNS)
    assert row.startswith("proposed,1,2,")
    buf = io.StringIO()
    M.write_comparison_csv(M.compare_runs(m, run(avg_stops=0.0)), buf)
    assert "avg_stops,0.500000,0.000000,n/a" in buf.getvalue()

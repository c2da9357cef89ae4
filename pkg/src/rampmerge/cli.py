"""Command-line front end: run policies over seeds, schedule a platoon file,
compare the ratio rule with exhaustive search, validate a scenario.

Exit codes: 0 ok, 2 bad input (scenario, platoon file, arguments),
3 simulation aborted on an invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics as M
from . import scheduler as sched
from .core import ScenarioConfig, bundled_scenario, format_scenario, load_scenario, validate_scenario
from .simulator import (
    SimulationError,
    generate_arrivals,
    run_baseline,
    run_proposed,
    write_events_csv,
    write_trajectory_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_SIM = 0, 2, 3
POLICIES = {"proposed": run_proposed, "baseline": run_baseline}


class InputError(Exception):
    pass


def parse_seeds(text: str) -> list[int]:
    """``7``, ``1..20``, ``1,3,5`` or a mix such as ``1..5,9``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = (int(x) for x in part.split("..", 1))
                if hi < lo:
                    raise InputError(f"empty seed range {part!r}")
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise InputError(f"bad seed spec {part!r}") from None
    if not seeds:
        raise InputError("no seeds given")
    return list(dict.fromkeys(seeds))


def resolve_scenario(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenario(name)
    if bundled.exists():
        return bundled
    raise InputError(f"scenario not found: {name}")


def _load(name: str) -> ScenarioConfig:
    path = resolve_scenario(name)
    try:
        cfg = load_scenario(path)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    problems = validate_scenario(cfg)
    if problems:
        raise InputError("invalid scenario " + str(path) + ":\n" + "\n".join(f"  - {p}" for p in problems))
    return cfg


# -- run -----------------------------------------------------------------------

def _run_seed(cfg: ScenarioConfig, seed: int, policies: list[str], out: Path,
              trajectories: bool, figures: bool):
    """Simulate one seed under each policy.

    Returns {policy: (RunMetrics, exclusivity violations, same-road overtakes)}.
    """
    cfg = cfg.replace(rng_seed=seed)
    platoons = generate_arrivals(cfg)
    seed_dir = out / f"seed_{seed:03d}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for name in policies:
        res = POLICIES[name](cfg, platoons)
        m = M.compute_metrics(res.trajectory, cfg)
        with open(seed_dir / f"{name}_events.csv", "w", encoding="utf-8", newline="") as fh:
            write_events_csv(res, fh)
        with open(seed_dir / f"{name}_metrics.json", "w", encoding="utf-8") as fh:
            M.write_metrics_json(m, fh)
        if res.schedule:
            with open(seed_dir / f"{name}_schedule.csv", "w", encoding="utf-8", newline="") as fh:
                sched.write_schedule_csv(res.schedule, fh)
        if trajectories:
            with open(seed_dir / f"{name}_trajectory.csv", "w", encoding="utf-8", newline="") as fh:
                write_trajectory_csv(res, fh)
        if figures:
            from .plots import time_space_figure
            time_space_figure(res.trajectory, platoons, cfg.geometry,
                              seed_dir / f"{name}_time_space.png",
                              title=f"{name}, seed {seed}")
        results[name] = (m, res.exclusivity_violations, res.same_road_overtakes)
    return results


def cmd_run(args) -> int:
    cfg = _load(args.scenario)
    seeds = parse_seeds(args.seeds)
    policies = ["proposed", "baseline"] if args.policy == "both" else [args.policy]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.cfg").write_text(format_scenario(cfg), encoding="utf-8")

    opts = (policies, out, args.trajectories, not args.no_figures)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_seed, cfg, s, *opts) for s in seeds]
            per_seed = [f.result() for f in futures]
    else:
        per_seed = [_run_seed(cfg, s, *opts) for s in seeds]

    rows = []
    for seed, results in zip(seeds, per_seed):
        for name in policies:
            m, violations, overtakes = results[name]
            rows.append((name, seed, m))
            print(f"seed {seed:3d} {name:9s} vehicles={m.vehicles:4d} "
                  f"travel={m.avg_travel_time:7.2f}s delay={m.avg_delay:6.2f}s "
                  f"stops={m.avg_stops:.3f} fuel_proxy={m.fuel_proxy:7.2f} "
                  f"exclusivity_violations={violations} same_road_overtakes={overtakes}")
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        M.write_metrics_csv(rows, fh)

    if len(policies) == 2:
        avg = {name: M.average_runs([r[name][0] for r in per_seed]) for name in policies}
        report = M.compare_runs(avg["proposed"], avg["baseline"])
        with open(out / "comparison.csv", "w", encoding="utf-8", newline="") as fh:
            M.write_comparison_csv(report, fh)
        if not args.no_figures:
            from .plots import comparison_figure
            comparison_figure(report, out / "comparison.png",
                              title=f"seed average over {len(seeds)} seed(s)")
        print("\nseed-averaged comparison (reduction = 100*(baseline-proposed)/baseline)")
        for r in report.rows:
            pct = "n/a" if r.reduction_pct is None else f"{r.reduction_pct:+.1f}%"
            print(f"  {r.metric:18s} proposed={r.proposed:9.3f} baseline={r.baseline:9.3f} {pct}")
    return EXIT_OK


# -- schedule / oracle -----------------------------------------------------------

def _read_platoons(path: str):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            platoons = sched.read_platoons(fh)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not platoons:
        raise InputError(f"{path}: no platoons")
    return platoons


def _schedule_inputs(args):
    cfg = _load(args.scenario)
    platoons = _read_platoons(args.file)
    for p in platoons:
        try:
            p.check_speed(cfg.geometry)
            sched.entry_time(p, cfg.geometry)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    return cfg, platoons


def cmd_schedule(args) -> int:
    cfg, platoons = _schedule_inputs(args)
    s = sched.build_schedule(platoons, cfg.geometry, cfg.safe_time_gap, now=args.now)
    sys.stdout.write(sched.schedule_to_csv(s, platoons))
    print(f"# T_WC={sched.total_weighted_completion(s, platoons)!r}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg, platoons = _schedule_inputs(args)
    if len(platoons) > sched.MAX_ORACLE_PLATOONS:
        raise InputError(f"oracle handles at most {sched.MAX_ORACLE_PLATOONS} platoons, "
                         f"got {len(platoons)}")
    g, t_g = cfg.geometry, cfg.safe_time_gap
    s = sched.build_schedule(platoons, g, t_g, now=args.now)
    ratio = sched.total_weighted_completion(s, platoons)
    best_seq, best = sched.brute_force_best_sequence(platoons, g, t_g, now=args.now)
    print(f"ratio_rule_sequence={' '.join(map(str, s.sequence))}")
    print(f"ratio_rule_T_WC={ratio!r}")
    print(f"brute_force_sequence={' '.join(map(str, best_seq))}")
    print(f"brute_force_T_WC={best!r}")
    print(f"match={'yes' if ratio == best else 'no'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = resolve_scenario(args.scenario)
    try:
        cfg = load_scenario(path)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    problems = validate_scenario(cfg)
    if problems:
        for p in problems:
            print(f"invalid: {p}")
        return EXIT_INPUT
    print(f"ok: {path}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rampmerge",
        description="Platoon merging at a highway on-ramp: scheduled merging versus stop-and-yield.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one or both policies over seeds")
    run.add_argument("--scenario", default="paper_iv.cfg",
                     help="scenario file, or the name of a bundled one (default: %(default)s)")
    run.add_argument("--policy", choices=["proposed", "baseline", "both"], default="both")
    run.add_argument("--seeds", default="1", help="e.g. 7, 1..20, 1,3,5 (default: %(default)s)")
    run.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    run.add_argument("--trajectories", action="store_true", help="also write per-vehicle trajectory logs")
    run.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    run.add_argument("--jobs", type=int, default=1, help="seeds simulated in parallel")
    run.set_defaults(func=cmd_run)

    for name, func, text in (("schedule", cmd_schedule, "print the merge schedule for a platoon file"),
                             ("oracle", cmd_oracle, "compare the ratio rule with exhaustive search")):
        p = sub.add_parser(name, help=text)
        p.add_argument("file", help="platoon CSV: " + ",".join(sched.PLATOON_COLUMNS))
        p.add_argument("--scenario", default="paper_iv.cfg")
        p.add_argument("--now", type=float, default=0.0, help="scheduling instant (s)")
        p.set_defaults(func=func)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--scenario", default="paper_iv.cfg")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())

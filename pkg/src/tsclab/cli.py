"""Command line interface: validate, run, train, bench, band, compare.

Every command that writes artifacts also drops a manifest.json recording the
inputs, seeds and package version that produced them.  Exit codes: 0 on
success, 2 when a scenario fails validation, 1 on any other handled error.
"""
import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict
from typing import Dict, List, Optional

from . import __version__
from .agents import (
    FixedTimePlan,
    GreedyLongestQueue,
    QTable,
    discretize,
    evaluate_policy,
    fixed_time_rollout,
    greedy_policy,
    q_policy,
    q_train,
    run_fixed_time,
)
from .analysis import (
    detect_period,
    extract_band,
    ideal_offset,
    measure_offset,
    render_band_svg,
    write_band_csv,
)
from .bench import APIS, TRANSPORTS, WORKLOADS, reduction_pct, run_workload, write_csv
from .engine import SimState, metrics_snapshot, per_vehicle_report
from .errors import Error, ValidationError
from .rlenv import EnvConfig, TrafficEnv
from .scenario import (
    PRESET_NAMES,
    approach_lanes,
    intersection_position,
    load_scenario,
    resolve_scenario,
    validate_network,
)


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(outdir: str, command: str, params: dict) -> None:
    _write_json(
        os.path.join(outdir, "manifest.json"),
        {
            "command": command,
            "params": params,
            "version": __version__,
            "created_unix": int(time.time()),
        },
    )


def _write_ctrl_log(sim: SimState, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clock", "intersection", "stage", "signal_string"])
        for row in sim.ctrl_log:
            writer.writerow([f"{row[0]:.1f}", row[1], row[2], row[3]])


def _write_events(sim: SimState, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clock", "kind", "vehicle", "location", "signal"])
        for row in sim.events:
            writer.writerow([f"{row[0]:.1f}", row[1], row[2], row[3], row[4]])


# -- commands -----------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        cfg = resolve_scenario(args.scenario)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"INVALID {v.code} at {v.where}: {v.message}")
        return 2
    violations = validate_network(cfg)
    if violations:
        for v in violations:
            print(f"INVALID {v.code} at {v.where}: {v.message}")
        return 2
    print(
        f"OK {cfg.name}: {len(cfg.links)} links, {len(cfg.intersections)} intersections, "
        f"{len(cfg.demands)} demand entries"
    )
    return 0


METRICS_COLUMNS = (
    "clock", "total_travel_time", "total_travel_distance", "total_delay",
    "total_iwaiting_time", "total_bwaiting_time", "total_arrived",
    "mean_speed", "spawned", "active", "pending",
)


def _write_metrics_csv(rows: List[tuple], path: str) -> None:
    """Per-seed metric rows plus a mean row; floats written exactly via repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("seed",) + METRICS_COLUMNS)
        for seed, m in rows:
            writer.writerow([seed] + [repr(getattr(m, c)) for c in METRICS_COLUMNS])
        n = len(rows)
        means = [repr(sum(getattr(m, c) for _, m in rows) / n) for c in METRICS_COLUMNS]
        writer.writerow(["mean"] + means)


def cmd_run(args) -> int:
    cfg = resolve_scenario(args.scenario)
    horizon = args.horizon if args.horizon is not None else cfg.sim.sim_period

    def run_one(seed: int) -> SimState:
        if args.control == "default":
            sim = SimState(cfg, seed=seed, record_events=args.events)
            steps = min(round(horizon * sim.res), sim.period_steps)
            for _ in range(steps):
                sim.advance_step()
            return sim
        env = TrafficEnv(
            EnvConfig(
                scenario=args.scenario,
                scheme="switch" if args.control == "qtable" else "choose",
                warmup=args.warmup,
                horizon=horizon,
                record_events=args.events,
            )
        )
        if args.control == "greedy":
            agents = {iid: GreedyLongestQueue(env.scenario, iid) for iid in env.agents}

            def act(env_):
                if len(env_.agents) == 1:
                    return agents[env_.agents[0]].act(env_.sim)
                return {iid: agents[iid].act(env_.sim) for iid in env_.agents}

        else:  # qtable
            if not args.policy:
                raise Error("control qtable needs --policy")
            if len(env.agents) != 1:
                raise Error("control qtable works on one-intersection scenarios")
            qt = QTable.load(args.policy)
            iid = env.agents[0]
            keys = approach_lanes(env.scenario, iid)

            def act(env_):
                return qt.act(discretize(env_.sim, iid, keys))

        env.reset(seed=seed)
        truncated = False
        while not truncated:
            _, _, _, truncated, _ = env.step(act(env))
        return env.sim

    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        rows = []
        for seed in seeds:
            m = metrics_snapshot(run_one(seed))
            rows.append((seed, m))
            print(
                f"seed {seed}: arrived {m.total_arrived}  delay {m.total_delay:.1f}s  "
                f"mean speed {m.mean_speed * 3.6:.2f} km/h"
            )
        mean_delay = sum(m.total_delay for _, m in rows) / len(rows)
        print(f"mean delay over {len(rows)} seeds: {mean_delay:.1f}s")
        if args.out:
            _ensure_dir(args.out)
            _write_metrics_csv(rows, os.path.join(args.out, "metrics.csv"))
            _manifest(
                args.out,
                "run",
                {
                    "scenario": args.scenario,
                    "seeds": seeds,
                    "horizon": horizon,
                    "control": args.control,
                    "warmup": args.warmup,
                },
            )
            print(f"wrote {args.out}/metrics.csv")
        return 0

    sim = run_one(args.seed)
    m = metrics_snapshot(sim)
    print(f"clock {m.clock:.1f}s  spawned {m.spawned}  arrived {m.total_arrived}")
    print(
        f"delay {m.total_delay:.1f}s  iwait {m.total_iwaiting_time:.1f}s  "
        f"bwait {m.total_bwaiting_time:.1f}s  mean speed {m.mean_speed * 3.6:.2f} km/h"
    )
    if args.out:
        _ensure_dir(args.out)
        _write_json(os.path.join(args.out, "metrics.json"), asdict(m))
        _write_json(os.path.join(args.out, "report.json"), per_vehicle_report(sim))
        _write_ctrl_log(sim, os.path.join(args.out, "ctrl_log.csv"))
        if args.events:
            _write_events(sim, os.path.join(args.out, "events.csv"))
        _manifest(
            args.out,
            "run",
            {
                "scenario": args.scenario,
                "seed": args.seed,
                "horizon": horizon,
                "control": args.control,
                "warmup": args.warmup,
            },
        )
        print(f"wrote {args.out}/metrics.json")
    return 0


def cmd_train(args) -> int:
    def progress(entry: dict) -> None:
        print(
            f"episode {entry['episode']:3d}  eps {entry['epsilon']:.3f}  "
            f"return {entry['return']:9.3f}  delay {entry['delay']:10.1f}  "
            f"states {entry['states']}"
        )

    qt, log = q_train(
        scenario=args.scenario,
        episodes=args.episodes,
        base_seed=args.seed,
        alpha=args.alpha,
        gamma=args.gamma,
        warmup=args.warmup,
        horizon=args.horizon,
        progress=progress if not args.quiet else None,
    )
    if args.out:
        _ensure_dir(args.out)
        qt.save(os.path.join(args.out, "policy.json"))
        with open(os.path.join(args.out, "training_log.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "mean_delay", "mean_waiting", "return"])
            for e in log:
                writer.writerow(
                    [e["episode"], repr(e["mean_delay"]), repr(e["mean_waiting"]),
                     repr(e["return"])]
                )
        _manifest(
            args.out,
            "train",
            {
                "scenario": args.scenario,
                "episodes": args.episodes,
                "seed": args.seed,
                "alpha": args.alpha,
                "gamma": args.gamma,
                "warmup": args.warmup,
                "horizon": args.horizon,
            },
        )
        print(f"wrote {args.out}/policy.json ({len(qt.q)} states)")
    return 0


def cmd_bench(args) -> int:
    workloads = WORKLOADS if args.workload == "all" else (args.workload,)
    apis = APIS if args.api == "both" else (args.api,)
    transports = TRANSPORTS if args.transport == "both" else (args.transport,)
    results = []
    for transport in transports:
        for workload in workloads:
            cell: Dict[str, object] = {}
            for api in apis:
                r = run_workload(
                    workload, api, transport,
                    scenario=args.scenario, horizon=args.horizon, seed=args.seed,
                )
                results.append(r)
                cell[api] = r
                flag = "OK" if r.calls == r.expected_calls else "MISMATCH"
                print(
                    f"{workload}/{api}/{transport}: calls {r.calls} "
                    f"(expected {r.expected_calls}, {flag})  wall {r.wall_s:.2f}s"
                )
            if "raw" in cell and "facade" in cell:
                print(
                    f"{workload}/{transport}: facade removes "
                    f"{reduction_pct(cell['raw'], cell['facade']):.2f}% of calls"
                )
    if args.out:
        write_csv(results, args.out)
        print(f"wrote {args.out}")
    bad = [r for r in results if r.calls != r.expected_calls]
    return 1 if bad else 0


def cmd_band(args) -> int:
    cfg = resolve_scenario(args.scenario)
    iids = sorted(cfg.intersections)
    greens = [float(x) for x in args.greens.split(",")]
    programs = cfg.programs
    speed = cfg.links[args.spine_prefix + "1"].speed_limit
    if args.offsets == "auto":
        offsets = [0.0]
        for k in range(1, len(iids)):
            spacing = cfg.links[f"{args.spine_prefix}{k}"].length
            offsets.append(offsets[-1] + ideal_offset(spacing, speed))
    else:
        offsets = [float(x) for x in args.offsets.split(",")]
    if len(offsets) != len(iids):
        raise Error(f"need {len(iids)} offsets, got {len(offsets)}")

    sim = SimState(cfg, seed=args.seed)
    plans = {}
    for iid, off in zip(iids, offsets):
        items = tuple((i, greens[i % len(greens)]) for i in range(len(programs[iid])))
        cycle = sum(g for _, g in items) + (
            cfg.timing.yellow_time + cfg.timing.allred_time
        ) * len(items)
        plans[iid] = FixedTimePlan(items, off % cycle)
    run_fixed_time(sim, plans, args.t1)

    bands = {}
    for iid in iids:
        movement = f"{iid}_{args.movement}"
        idx = cfg.intersections[iid].movement_index(movement)
        bands[iid] = extract_band(sim.ctrl_log, iid, idx, args.t0, args.t1)
    ref = iids[0]
    print(f"window [{args.t0:.0f}, {args.t1:.0f})s, movement *_{args.movement}")
    try:
        period = detect_period(bands[ref])
        print(f"period {period}s")
    except Error as exc:
        print(f"period: {exc}")
    for iid in iids[1:]:
        lag = measure_offset(bands[ref], bands[iid])
        print(f"offset {ref} -> {iid}: {lag}s (planned {plans[iid].offset:.1f}s)")
    if args.out:
        _ensure_dir(args.out)
        spacing = cfg.links[args.spine_prefix + "1"].length
        svg = render_band_svg(bands, t0=args.t0, spacing_m=spacing, speed_kmh=speed)
        with open(os.path.join(args.out, "band.svg"), "w", encoding="utf-8") as fh:
            fh.write(svg)
        positions = {iid: intersection_position(cfg, iid)[0] for iid in iids}
        write_band_csv(bands, args.t0, os.path.join(args.out, "band.csv"), positions)
        _manifest(
            args.out,
            "band",
            {
                "scenario": args.scenario,
                "seed": args.seed,
                "greens": args.greens,
                "offsets": [p.offset for p in plans.values()],
                "window": [args.t0, args.t1],
            },
        )
        print(f"wrote {args.out}/band.svg")
    return 0


def cmd_compare(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(","))
    rows: List[List[object]] = []
    fixed = [fixed_time_rollout(args.scenario, s, args.horizon) for s in seeds]
    fixed_mean = sum(m.total_delay for m in fixed) / len(fixed)
    rows.append(["fixed", fixed_mean, 0.0])
    print(f"fixed-time mean delay over {len(seeds)} seeds: {fixed_mean:.1f}s")

    cfg = resolve_scenario(args.scenario)
    agents = args.agents.split(",")
    for name in agents:
        if name == "fixed":
            continue
        if name == "greedy":
            if len(cfg.intersections) != 1:
                raise Error("greedy comparison expects a one-intersection scenario")
            iid = sorted(cfg.intersections)[0]
            policy = greedy_policy(cfg, iid)
        elif name == "qtable":
            if not args.policy:
                raise Error("agent qtable needs --policy")
            qt = QTable.load(args.policy)
            iid = sorted(cfg.intersections)[0]
            policy = q_policy(qt, iid, approach_lanes(cfg, iid))
        else:
            raise Error(f"unknown agent {name!r}")
        metrics = evaluate_policy(
            policy, scenario=args.scenario, seeds=seeds,
            warmup=args.warmup, horizon=args.horizon,
            scheme="switch" if name == "qtable" else "choose",
        )
        mean = sum(m.total_delay for m in metrics) / len(metrics)
        pct = 100.0 * (fixed_mean - mean) / fixed_mean
        rows.append([name, mean, pct])
        print(f"{name}: mean delay {mean:.1f}s ({pct:+.1f}% vs fixed)")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["agent", "mean_delay_s", "improvement_pct"])
            for row in rows:
                writer.writerow([row[0], f"{row[1]:.3f}", f"{row[2]:.3f}"])
        print(f"wrote {args.out}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsclab",
        description="Traffic signal control laboratory",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file or preset")
    p.add_argument("scenario", help=f"path to a .scn file or one of {PRESET_NAMES}")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--seeds", help="comma list; writes per-seed metrics.csv plus a mean row")
    p.add_argument("--horizon", type=float, default=None, help="seconds, default scenario period")
    p.add_argument("--warmup", type=float, default=600.0, help="agent-controlled runs only")
    p.add_argument("--control", choices=("default", "greedy", "qtable"), default="default")
    p.add_argument("--policy", help="policy.json for --control qtable")
    p.add_argument("--events", action="store_true", help="record per-vehicle events")
    p.add_argument("--out", help="directory for metrics.json and logs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train the tabular controller")
    p.add_argument("--scenario", default="single")
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--warmup", type=float, default=600.0)
    p.add_argument("--horizon", type=float, default=3600.0)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", help="directory for policy.json and training_log.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="raw bus vs facade call counts and timing")
    p.add_argument("--workload", choices=WORKLOADS + ("all",), default="all")
    p.add_argument("--api", choices=APIS + ("both",), default="both")
    p.add_argument("--transport", choices=TRANSPORTS + ("both",), default="inproc")
    p.add_argument("--scenario", default="single")
    p.add_argument("--horizon", type=float, default=3600.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("band", help="run coordinated plans and draw green bands")
    p.add_argument("--scenario", default="arterial3")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--greens", default="19,11", help="green seconds per phase")
    p.add_argument("--offsets", default="auto", help="comma list of seconds, or auto")
    p.add_argument("--movement", default="EB", help="movement suffix to band")
    p.add_argument("--spine-prefix", default="EB", help="arterial link id prefix")
    p.add_argument("--t0", type=float, default=80.0)
    p.add_argument("--t1", type=float, default=200.0)
    p.add_argument("--out", help="directory for band.svg and band.csv")
    p.set_defaults(func=cmd_band)

    p = sub.add_parser("compare", help="agents vs the fixed-time baseline")
    p.add_argument("--scenario", default="single")
    p.add_argument("--agents", default="fixed,greedy", help="comma list: fixed,greedy,qtable")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--policy", help="policy.json for qtable")
    p.add_argument("--warmup", type=float, default=600.0)
    p.add_argument("--horizon", type=float, default=3600.0)
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        for v in exc.violations:
            print(f"INVALID {v.code} at {v.where}: {v.message}", file=sys.stderr)
        return 2
    except Error as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Call-count and wall-time benchmarks for raw bus access versus the facade.

Three workloads drive one intersection for a fixed horizon with a control
decision every few seconds:

  w0  stepping only
  w1  w0 plus, per decision, reading every signal group and writing the next
      phase group by group
  w2  w1 plus, per decision, the controller evaluation bundle, the network
      totals bundle, and two ad-hoc single reads

Each workload runs against the raw client (one bus call per path touched) or
the facade (one batch per helper), over the in-process or socket transport.
Raw and facade issue the same control sequence, so their final simulation
state must match bit for bit; only the number of bus calls differs.
"""
import csv
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

from .attrbus import BusClient, SocketServer, open_inproc, open_socket
from .engine import init_sim
from .errors import WorkloadMismatch
from .facade import EVAL_TOTAL_PATHS, EVAL_TS_FIELDS, TscFacade
from .scenario import resolve_scenario

WORKLOADS = ("w0", "w1", "w2")
APIS = ("raw", "facade")
TRANSPORTS = ("inproc", "socket")


@dataclass
class BenchResult:
    workload: str
    api: str
    transport: str
    steps: int
    decisions: int
    calls: int
    expected_calls: int
    wall_s: float
    net_delay: float
    arrived: int


def expected_calls(workload: str, api: str, steps: int, decisions: int, groups: int = 4) -> int:
    """Closed-form call totals; group reads/writes dominate the raw cost."""
    if workload == "w0":
        return steps
    per_raw = 2 * groups
    per_facade = 2
    if workload == "w2":
        per_raw += len(EVAL_TS_FIELDS) + len(EVAL_TOTAL_PATHS) + 2
        per_facade += 4
    if workload == "w1":
        pass
    elif workload != "w2":
        raise WorkloadMismatch(f"unknown workload {workload!r}")
    return steps + decisions * (per_raw if api == "raw" else per_facade)


def _decide_raw(client: BusClient, iid: str, info: dict, counter: int) -> None:
    groups = info["groups"]
    for k in range(groups):
        client.get(f"ts.{iid}.sg.{k}.state")
    phases = info["phases"]
    chars = info["group_chars"][phases[(counter + 1) % len(phases)]]
    for k in range(groups):
        client.set(f"ts.{iid}.sg.{k}.next", chars[k])


def _eval_raw(client: BusClient, iid: str) -> None:
    for field in EVAL_TS_FIELDS:
        client.get(f"ts.{iid}.{field}")
    for path in EVAL_TOTAL_PATHS:
        client.get(path)
    client.get("net.delay")
    client.get(f"ts.{iid}.crossings")


def _decide_facade(tsc: TscFacade, iid: str, counter: int) -> None:
    tsc.sc_get_ts_phase(iid)
    phases = tsc.programs[iid]["phases"]
    tsc.sc_set_ts_phase(iid, phases[(counter + 1) % len(phases)])


def _eval_facade(tsc: TscFacade, iid: str) -> None:
    tsc.eval_ts(iid)
    tsc.eval_totals()
    tsc.get("net.delay")
    tsc.get(f"ts.{iid}.crossings")


def run_workload(
    workload: str,
    api: str,
    transport: str,
    scenario: str = "single",
    horizon: float = 3600.0,
    interval: float = 5.0,
    seed: int = 42,
) -> BenchResult:
    """Run one benchmark cell and verify its call total against the formula."""
    if workload not in WORKLOADS:
        raise WorkloadMismatch(f"unknown workload {workload!r}")
    if api not in APIS:
        raise WorkloadMismatch(f"unknown api {api!r}")
    if transport not in TRANSPORTS:
        raise WorkloadMismatch(f"unknown transport {transport!r}")

    cfg = resolve_scenario(scenario)
    sim = init_sim(cfg, seed=seed)
    res = sim.res
    block = round(interval * res)
    decisions = round(horizon / interval)
    steps = decisions * block

    server: Optional[SocketServer] = None
    if transport == "inproc":
        client = open_inproc(sim)
        stats = client.bus.stats
    else:
        server = SocketServer(sim)
        client = open_socket(server.host, server.port)
        stats = server.bus.stats

    try:
        info = client.hello()
        iid = sorted(info["programs"])[0]
        tsc = TscFacade(client) if api == "facade" else None

        t0 = time.perf_counter()
        if api == "raw":
            for d in range(decisions):
                for _ in range(block):
                    client.step()
                if workload != "w0":
                    _decide_raw(client, iid, info["programs"][iid], d)
                    if workload == "w2":
                        _eval_raw(client, iid)
        else:
            for d in range(decisions):
                for _ in range(block):
                    tsc.step()
                if workload != "w0":
                    _decide_facade(tsc, iid, d)
                    if workload == "w2":
                        _eval_facade(tsc, iid)
        wall = time.perf_counter() - t0

        net_delay = client.get("net.delay")
        arrived = client.get("net.arrived")
        calls = stats["total"] - 2  # exclude the two trailing reads above
        client.bye()
    finally:
        if server is not None:
            server.stop()

    groups = info["programs"][iid]["groups"]
    return BenchResult(
        workload=workload,
        api=api,
        transport=transport,
        steps=steps,
        decisions=decisions,
        calls=calls,
        expected_calls=expected_calls(workload, api, steps, decisions, groups),
        wall_s=wall,
        net_delay=net_delay,
        arrived=arrived,
    )


def reduction_pct(raw: BenchResult, facade: BenchResult) -> float:
    """Share of bus calls the facade removes for the same workload."""
    return 100.0 * (raw.calls - facade.calls) / raw.calls


def compare(
    workload: str,
    transport: str,
    scenario: str = "single",
    horizon: float = 3600.0,
    interval: float = 5.0,
    seed: int = 42,
) -> Dict[str, object]:
    """Run raw and facade back to back; both must land in the same state."""
    raw = run_workload(workload, "raw", transport, scenario, horizon, interval, seed)
    fac = run_workload(workload, "facade", transport, scenario, horizon, interval, seed)
    if raw.net_delay != fac.net_delay or raw.arrived != fac.arrived:
        raise WorkloadMismatch(
            f"raw and facade diverged on {workload}/{transport}: "
            f"delay {raw.net_delay} vs {fac.net_delay}, "
            f"arrived {raw.arrived} vs {fac.arrived}"
        )
    return {
        "workload": workload,
        "transport": transport,
        "raw": raw,
        "facade": fac,
        "reduction_pct": reduction_pct(raw, fac),
        "speedup": raw.wall_s / fac.wall_s if fac.wall_s > 0 else float("inf"),
    }


def write_csv(results: List[BenchResult], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["workload", "api", "transport", "steps", "decisions",
             "calls", "expected_calls", "wall_s", "net_delay", "arrived"]
        )
        for r in results:
            writer.writerow(
                [r.workload, r.api, r.transport, r.steps, r.decisions,
                 r.calls, r.expected_calls, f"{r.wall_s:.3f}", repr(r.net_delay), r.arrived]
            )

"""Microscopic traffic engine: vehicles, arrivals, kinematics, metrics.

The engine advances in fixed steps of 1/sim_res seconds.  Vehicles follow a
kinematic safe-speed rule toward their leader or, for the front vehicle of an
approach lane, toward the stop line when the movement's signal is not green.
All randomness flows through per-entry-link splitmix64 streams, so runs are
bit-identical for a given scenario and seed on any platform.
"""
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .errors import BlockedEntry, HorizonExceeded, UnknownLane, ZeroRate
from .scenario import ScenarioConfig
from .signals import SignalController

VEHICLE_LENGTH = 5.0  # m
MIN_GAP = 2.0  # m, standstill spacing fed into the safe-speed rule
ACCEL_MAX = 2.5  # m/s^2
DECEL_MAX = 4.5  # m/s^2
STOP_MARGIN = 0.5  # m, hard clamp short of the stop line while facing non-green
ENTRY_CLEARANCE = VEHICLE_LENGTH + MIN_GAP  # m that must be free to enter a lane
QUEUE_SPEED = 5.0 / 3.6  # m/s, below this a vehicle counts as queued/waiting

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Deterministic 64-bit stream; identical output on every platform."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def fnv1a64(text: str) -> int:
    """FNV-1a hash; stable alternative to the salted built-in hash."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def interarrival_sample(rate_veh_per_h: float, u: float) -> float:
    """Inverse-CDF exponential gap in seconds for a Poisson arrival rate."""
    if rate_veh_per_h <= 0:
        raise ZeroRate(f"arrival rate must be positive, got {rate_veh_per_h}")
    if not (0.0 <= u < 1.0):
        raise ValueError(f"u must lie in [0, 1), got {u}")
    return -math.log1p(-u) * 3600.0 / rate_veh_per_h


@dataclass(frozen=True)
class KinematicParams:
    v_free: float
    a_max: float = ACCEL_MAX
    b_max: float = DECEL_MAX
    s_min: float = MIN_GAP
    dt: float = 0.1


def longitudinal_update(speed: float, gap: float, v_obstacle: float, p: KinematicParams) -> float:
    """Safe-speed update; reference form of the rule inlined in advance_step.

    The target is the largest speed from which the vehicle can still come to
    rest behind its obstacle if both brake at b_max, capped at the free-flow
    speed; acceleration and deceleration are bounded per step.
    """
    slack = gap - p.s_min
    if slack <= 0.0:
        v_target = 0.0
    else:
        v_target = math.sqrt(v_obstacle * v_obstacle + 2.0 * p.b_max * slack)
        if v_target > p.v_free:
            v_target = p.v_free
    lo = speed - p.b_max * p.dt
    if lo < 0.0:
        lo = 0.0
    hi = speed + p.a_max * p.dt
    if v_target < lo:
        return lo
    if v_target > hi:
        return hi
    return v_target


class Vehicle:
    __slots__ = (
        "vid", "hops", "hop_i", "move_idx", "offset", "speed",
        "spawn_time", "entered_time", "distance", "ff_time", "delay",
        "iwait", "entry", "probe", "min_speed",
    )

    def __init__(self, vid: int, hops, entry: str, spawn_time: float, probe: bool = False):
        self.vid = vid
        self.hops = hops  # tuple of (Lane, movement_index or -1)
        self.hop_i = 0
        self.move_idx = hops[0][1]
        self.offset = 0.0
        self.speed = 0.0
        self.spawn_time = spawn_time
        self.entered_time = -1.0
        self.distance = 0.0
        self.ff_time = 0.0
        self.delay = 0.0
        self.iwait = 0.0
        self.entry = entry
        self.probe = probe
        self.min_speed = math.inf


class Lane:
    __slots__ = (
        "link_id", "index", "length", "vfree", "vehicles", "ctrl",
        "inter_id", "wait_int", "speed_int", "veh_int", "key",
    )

    def __init__(self, link_id: str, index: int, length: float, vfree: float):
        self.link_id = link_id
        self.index = index
        self.length = length
        self.vfree = vfree
        self.vehicles: List[Vehicle] = []  # front first: descending offset
        self.ctrl: Optional[SignalController] = None
        self.inter_id: Optional[str] = None
        self.wait_int = 0.0  # vehicle-seconds below the queue speed
        self.speed_int = 0.0  # distance integral over all vehicles, m
        self.veh_int = 0.0  # vehicle-seconds of occupancy
        self.key = (link_id, index)


class Entry:
    __slots__ = ("link_id", "rate", "ratios", "rng", "next_time", "pending", "spawned", "bwait")

    def __init__(self, link_id: str, rate: float, ratios, rng: SplitMix64):
        self.link_id = link_id
        self.rate = rate
        self.ratios = ratios  # tuple of (turn, share)
        self.rng = rng
        self.next_time = math.inf
        self.pending: deque = deque()
        self.spawned = 0
        self.bwait = 0.0


@dataclass
class MetricsSnapshot:
    clock: float
    total_travel_time: float
    total_travel_distance: float
    total_delay: float
    total_iwaiting_time: float
    total_bwaiting_time: float
    total_arrived: int
    mean_speed: float
    spawned: int
    active: int
    pending: int


class SimState:
    """Complete mutable state of one simulation run."""

    def __init__(self, cfg: ScenarioConfig, seed: Optional[int] = None, record_events: bool = False):
        self.cfg = cfg
        self.seed = cfg.sim.seed if seed is None else int(seed)
        self.res = cfg.sim.sim_res
        self.dt = 1.0 / self.res
        self.step_count = 0
        self.period_steps = round(cfg.sim.sim_period * self.res)
        self.record_events = record_events

        self.lane_map: Dict[Tuple[str, int], Lane] = {}
        for ln in cfg.links.values():
            for k in range(ln.lanes):
                lane = Lane(ln.id, k, ln.length, ln.speed_limit / 3.6)
                self.lane_map[lane.key] = lane
        self.lanes: List[Lane] = [self.lane_map[k] for k in sorted(self.lane_map)]

        self.controllers: Dict[str, SignalController] = {}
        self.movement_ids: Dict[str, List[str]] = {}
        self.crossings: Dict[str, int] = {}
        # approach link -> {turn: [(movement_index, lane_index, exit_link)]}
        self.turn_table: Dict[str, Dict[str, List[Tuple[int, int, str]]]] = {}
        for iid, inter in cfg.intersections.items():
            ctrl = SignalController(cfg.programs[iid], cfg.timing, self.res)
            self.controllers[iid] = ctrl
            self.movement_ids[iid] = [m.id for m in inter.movements]
            self.crossings[iid] = 0
            for idx, m in enumerate(inter.movements):
                table = self.turn_table.setdefault(m.approach_link, {})
                table.setdefault(m.turn, []).append((idx, m.lane_index, m.exit_link))
            # every lane of an approach link faces that one controller
            for m in inter.movements:
                link = cfg.links[m.approach_link]
                for k in range(link.lanes):
                    lane = self.lane_map[(m.approach_link, k)]
                    lane.ctrl = ctrl
                    lane.inter_id = iid

        self.entries: List[Entry] = []
        self.entry_map: Dict[str, Entry] = {}
        for d in cfg.demands:
            rng = SplitMix64(self.seed ^ fnv1a64(d.entry_link))
            e = Entry(d.entry_link, d.rate, d.turn_ratios, rng)
            if d.rate > 0:
                e.next_time = interarrival_sample(d.rate, rng.uniform())
            self.entries.append(e)
            self.entry_map[d.entry_link] = e
        self.entries.sort(key=lambda e: e.link_id)

        self._next_vid = 1
        self.n_active = 0
        self.spawned = 0
        self.arrived = 0
        self.arr_tt_sum = 0.0
        self.tot_tt = 0.0
        self.tot_dist = 0.0
        self.tot_delay = 0.0
        self.tot_iwt = 0.0
        self.tot_bwt = 0.0
        # per entry link: [delay_sum, tt_sum, iwait_sum, arrived_n] over arrived vehicles
        self.arr_by_entry: Dict[str, list] = {d.entry_link: [0.0, 0.0, 0.0, 0] for d in cfg.demands}
        self.probe_results: Dict[int, dict] = {}

        self.ctrl_log: List[Tuple[float, str, str, str]] = []
        for iid, ctrl in self.controllers.items():
            self.ctrl_log.append((0.0, iid, ctrl.stage.value, ctrl.signal_string))
        self.events: List[tuple] = []

    @property
    def clock(self) -> float:
        return self.step_count / self.res

    # -- routing --------------------------------------------------------------

    def _route_hops(self, entry_link: str, rng: Optional[SplitMix64], ratios) -> tuple:
        """Walk the network from an entry link, sampling turns from ratios.

        With rng=None the walk is greedy (S, then R, then L); probes use this.
        """
        hops = []
        link_id = entry_link
        lane_idx = 0
        guard = 0
        while link_id in self.turn_table:
            guard += 1
            if guard > 1000:
                raise ValueError(f"route from {entry_link} does not terminate")
            table = self.turn_table[link_id]
            turns = [t for t in ("L", "S", "R") if t in table]
            if rng is None:
                turn = "S" if "S" in table else ("R" if "R" in table else "L")
            elif len(turns) == 1:
                turn = turns[0]
            else:
                shares = dict(ratios)
                weights = [shares.get(t, 0.0) for t in turns]
                total = sum(weights)
                if total <= 0.0:
                    turn = "S" if "S" in table else turns[0]
                else:
                    u = rng.uniform() * total
                    acc = 0.0
                    turn = turns[-1]
                    for t, w in zip(turns, weights):
                        acc += w
                        if u < acc:
                            turn = t
                            break
            cands = table[turn]
            if len(cands) == 1 or rng is None:
                move_idx, lane_idx, exit_link = cands[0]
            else:
                pick = int(rng.uniform() * len(cands))
                if pick >= len(cands):
                    pick = len(cands) - 1
                move_idx, lane_idx, exit_link = cands[pick]
            hops.append((self.lane_map[(link_id, lane_idx)], move_idx))
            link_id = exit_link
        sink = self.cfg.links[link_id]
        hops.append((self.lane_map[(link_id, min(lane_idx, sink.lanes - 1))], -1))
        return tuple(hops)

    # -- probes ---------------------------------------------------------------

    def inject_probe(self, entry_link: str, speed: Optional[float] = None) -> int:
        """Insert a tracked vehicle at an entry link on the straightest route.

        Unlike demand vehicles it bypasses the boundary queue and may start
        at speed (defaults to the link's free-flow speed).
        """
        if entry_link not in self.cfg.links:
            raise UnknownLane(f"no link {entry_link!r}")
        hops = self._route_hops(entry_link, None, ())
        lane = hops[0][0]
        if lane.vehicles and lane.vehicles[-1].offset < ENTRY_CLEARANCE:
            raise BlockedEntry(f"first {ENTRY_CLEARANCE} m of {lane.key} are occupied")
        veh = Vehicle(self._next_vid, hops, entry_link, self.clock, probe=True)
        self._next_vid += 1
        veh.speed = lane.vfree if speed is None else float(speed)
        veh.min_speed = veh.speed
        veh.entered_time = self.clock
        lane.vehicles.append(veh)
        self.spawned += 1
        self.n_active += 1
        if self.record_events:
            self.events.append((self.clock, "enter", veh.vid, entry_link, ""))
        return veh.vid

    # -- main step ------------------------------------------------------------

    def advance_step(self) -> float:
        """Advance one step; returns the new clock. Raises HorizonExceeded."""
        if self.step_count >= self.period_steps:
            raise HorizonExceeded(
                f"horizon {self.cfg.sim.sim_period} s reached at clock {self.clock}"
            )
        self.step_count += 1
        clock = self.step_count / self.res
        dt = self.dt
        record = self.record_events
        adt = ACCEL_MAX * dt
        bdt = DECEL_MAX * dt
        two_b = 2.0 * DECEL_MAX

        # 1) controllers
        for iid, ctrl in self.controllers.items():
            ctrl.tick()
            if ctrl.changed:
                ctrl.changed = False
                self.ctrl_log.append((clock, iid, ctrl.stage.value, ctrl.signal_string))

        # 2) arrivals into boundary queues
        for entry in self.entries:
            while entry.next_time <= clock:
                veh = Vehicle(
                    self._next_vid,
                    self._route_hops(entry.link_id, entry.rng, entry.ratios),
                    entry.link_id,
                    entry.next_time,
                )
                self._next_vid += 1
                entry.pending.append(veh)
                entry.spawned += 1
                self.spawned += 1
                if record:
                    self.events.append((clock, "spawn", veh.vid, entry.link_id, ""))
                entry.next_time += interarrival_sample(entry.rate, entry.rng.uniform())

        # 3) boundary insertion (FIFO per entry link)
        for entry in self.entries:
            pending = entry.pending
            while pending:
                veh = pending[0]
                lane = veh.hops[0][0]
                if lane.vehicles and lane.vehicles[-1].offset < ENTRY_CLEARANCE:
                    break
                pending.popleft()
                veh.entered_time = clock
                lane.vehicles.append(veh)
                self.n_active += 1
                if record:
                    self.events.append((clock, "enter", veh.vid, entry.link_id, ""))

        # 4-6) per-lane kinematics, stop lines, crossings, exits
        staged: Dict[Lane, Vehicle] = {}
        tot_dist = 0.0
        tot_delay = 0.0
        tot_iwt = 0.0
        n_proc = 0
        for lane in self.lanes:
            vehs = lane.vehicles
            if not vehs:
                continue
            n = len(vehs)
            n_proc += n
            ctrl = lane.ctrl
            length = lane.length
            vfree = lane.vfree
            inv_vfree = 1.0 / vfree
            sig = ctrl.signal_string if ctrl is not None else ""
            lead_off = -1.0  # < 0 marks "no leader"
            lead_v = 0.0
            lane_wait = 0.0
            lane_dist = 0.0
            removed = 0
            for k in range(n):
                veh = vehs[k]
                v = veh.speed
                off = veh.offset
                can_cross = False
                clamp_pos = -1.0
                if lead_off >= 0.0:
                    slack = lead_off - off - VEHICLE_LENGTH - MIN_GAP
                    if slack <= 0.0:
                        vt = 0.0
                    else:
                        vt = math.sqrt(lead_v * lead_v + two_b * slack)
                        if vt > vfree:
                            vt = vfree
                elif ctrl is None:
                    vt = vfree
                    can_cross = True  # sink lane: passing the end leaves the net
                else:
                    ch = sig[veh.move_idx]
                    if ch == "G" or (ch == "Y" and (length - off) < v * v / two_b):
                        vt = vfree
                        can_cross = True
                    else:
                        slack = length - off - MIN_GAP
                        if slack <= 0.0:
                            vt = 0.0
                        else:
                            vt = math.sqrt(two_b * slack)
                            if vt > vfree:
                                vt = vfree
                        clamp_pos = length - STOP_MARGIN
                lo = v - bdt
                if lo < 0.0:
                    lo = 0.0
                hi = v + adt
                if vt < lo:
                    vt = lo
                elif vt > hi:
                    vt = hi
                new_off = off + vt * dt
                if lead_off >= 0.0 and new_off > lead_off - VEHICLE_LENGTH:
                    new_off = lead_off - VEHICLE_LENGTH
                    if new_off < off:
                        new_off = off
                    vt = (new_off - off) / dt
                elif clamp_pos >= 0.0 and new_off > clamp_pos:
                    new_off = clamp_pos
                    if new_off < off:
                        new_off = off
                    vt = (new_off - off) / dt
                elif can_cross and new_off >= length:
                    if ctrl is None:
                        dx = length - off
                        veh.distance += dx
                        ff = dx * inv_vfree
                        veh.ff_time += ff
                        veh.delay += dt - ff
                        tot_dist += dx
                        tot_delay += dt - ff
                        lane_dist += dx
                        lane.veh_int += dt
                        tt = clock - veh.entered_time
                        self.arrived += 1
                        self.arr_tt_sum += tt
                        self.n_active -= 1
                        if veh.probe:
                            if vt < veh.min_speed:
                                veh.min_speed = vt
                            self.probe_results[veh.vid] = {
                                "min_speed": veh.min_speed,
                                "entered": veh.entered_time,
                                "arrived": clock,
                                "distance": veh.distance,
                                "delay": veh.delay,
                            }
                        else:
                            agg = self.arr_by_entry.get(veh.entry)
                            if agg is not None:
                                agg[0] += veh.delay
                                agg[1] += tt
                                agg[2] += veh.iwait
                                agg[3] += 1
                        if record:
                            self.events.append((clock, "arrive", veh.vid, lane.link_id, ""))
                        removed += 1
                        continue
                    target, t_move = veh.hops[veh.hop_i + 1]
                    blocked = target in staged or (
                        target.vehicles and target.vehicles[-1].offset < ENTRY_CLEARANCE
                    )
                    if not blocked:
                        mv = veh.move_idx
                        veh.hop_i += 1
                        veh.move_idx = t_move
                        dx = vt * dt
                        veh.offset = new_off - length  # remainder onto the exit link
                        veh.speed = vt
                        veh.distance += dx
                        ff = dx * inv_vfree
                        veh.ff_time += ff
                        veh.delay += dt - ff
                        if vt < QUEUE_SPEED:
                            veh.iwait += dt
                            lane_wait += dt
                        tot_dist += dx
                        tot_delay += dt - ff
                        lane_dist += dx
                        lane.veh_int += dt
                        self.crossings[lane.inter_id] += 1
                        if veh.probe and vt < veh.min_speed:
                            veh.min_speed = vt
                        if record:
                            mid = self.movement_ids[lane.inter_id][mv]
                            self.events.append(
                                (clock, "cross", veh.vid, f"{lane.inter_id}:{mid}", sig[mv])
                            )
                        staged[target] = veh
                        removed += 1
                        continue
                    # downstream full: hold at the stop line
                    new_off = length - STOP_MARGIN
                    if new_off < off:
                        new_off = off
                    vt = (new_off - off) / dt
                dx = new_off - off
                veh.offset = new_off
                veh.speed = vt
                veh.distance += dx
                ff = dx * inv_vfree
                veh.ff_time += ff
                veh.delay += dt - ff
                if vt < QUEUE_SPEED:
                    veh.iwait += dt
                    lane_wait += dt
                tot_dist += dx
                tot_delay += dt - ff
                lane_dist += dx
                if veh.probe and vt < veh.min_speed:
                    veh.min_speed = vt
                if removed:
                    vehs[k - removed] = veh
                lead_off = new_off
                lead_v = vt
            if removed:
                del vehs[n - removed:]
            lane.wait_int += lane_wait
            lane.speed_int += lane_dist
            lane.veh_int += dt * len(vehs)
            tot_iwt += lane_wait
        for target, veh in staged.items():
            target.vehicles.append(veh)

        # 7) totals; boundary wait accrues for spawned but not yet inserted
        self.tot_tt += dt * n_proc
        self.tot_dist += tot_dist
        self.tot_delay += tot_delay
        self.tot_iwt += tot_iwt
        for entry in self.entries:
            if entry.pending:
                w = len(entry.pending) * dt
                entry.bwait += w
                self.tot_bwt += w
        return clock

    def advance_steps(self, n: int) -> float:
        clock = self.clock
        for _ in range(n):
            clock = self.advance_step()
        return clock


def init_sim(cfg: ScenarioConfig, seed: Optional[int] = None, record_events: bool = False) -> SimState:
    """Build a fresh simulation from a validated scenario."""
    return SimState(cfg, seed=seed, record_events=record_events)


def lane_queue_length(sim: SimState, link_id: str, lane_index: int) -> int:
    """Vehicles on the lane moving slower than the queue threshold."""
    lane = sim.lane_map.get((link_id, lane_index))
    if lane is None:
        raise UnknownLane(f"no lane {lane_index} on link {link_id!r}")
    count = 0
    for veh in lane.vehicles:
        if veh.speed < QUEUE_SPEED:
            count += 1
    return count


def lane_vehicle_count(sim: SimState, link_id: str, lane_index: int) -> int:
    lane = sim.lane_map.get((link_id, lane_index))
    if lane is None:
        raise UnknownLane(f"no lane {lane_index} on link {link_id!r}")
    return len(lane.vehicles)


def metrics_snapshot(sim: SimState) -> MetricsSnapshot:
    """Network totals accumulated since the start of the run."""
    mean_speed = sim.tot_dist / sim.tot_tt if sim.tot_tt > 0.0 else 0.0
    return MetricsSnapshot(
        clock=sim.clock,
        total_travel_time=sim.tot_tt,
        total_travel_distance=sim.tot_dist,
        total_delay=sim.tot_delay,
        total_iwaiting_time=sim.tot_iwt,
        total_bwaiting_time=sim.tot_bwt,
        total_arrived=sim.arrived,
        mean_speed=mean_speed,
        spawned=sim.spawned,
        active=sim.n_active,
        pending=sum(len(e.pending) for e in sim.entries),
    )


def per_vehicle_report(sim: SimState, entry_links: Optional[List[str]] = None) -> Dict[str, dict]:
    """Mean delay, travel time and stopped time of arrived vehicles by entry."""
    keys = sorted(sim.arr_by_entry) if entry_links is None else list(entry_links)
    out: Dict[str, dict] = {}
    for key in keys:
        agg = sim.arr_by_entry.get(key)
        if agg is None:
            raise UnknownLane(f"no demand entry {key!r}")
        n = agg[3]
        out[key] = {
            "arrived": n,
            "mean_delay": agg[0] / n if n else 0.0,
            "mean_travel_time": agg[1] / n if n else 0.0,
            "mean_iwait": agg[2] / n if n else 0.0,
        }
    return out


def arrived_mean_delay(sim: SimState, entry_links: Optional[List[str]] = None) -> float:
    """Mean per-vehicle delay over arrived vehicles from the given entries."""
    report = per_vehicle_report(sim, entry_links)
    n = sum(r["arrived"] for r in report.values())
    if n == 0:
        return 0.0
    return sum(r["mean_delay"] * r["arrived"] for r in report.values()) / n

"""Scenario model: road network, demand, signal programs, and presets.

A scenario file (``.scn``) is a JSON document with five top-level keys:
``network``, ``demands``, ``signals``, ``timing`` and ``sim``.  See
docs/scenario_format.md for the full schema.
"""
import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .errors import ParseError, UnknownPreset, ValidationError, Violation

TURNS = ("L", "S", "R")
RATIO_TOL = 1e-9


@dataclass(frozen=True)
class SimParams:
    """Simulation horizon and resolution; times in seconds."""

    start_time: float = 600.0
    sim_period: float = 4200.0
    sim_res: int = 10
    seed: int = 42

    def to_dict(self) -> dict:
        return {
            "start_time": self.start_time,
            "sim_period": self.sim_period,
            "sim_res": self.sim_res,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Link:
    """Directed roadway segment; lane 0 is the curb lane, higher is inner."""

    id: str
    from_node: str
    to_node: str
    length: float
    lanes: int = 1
    speed_limit: float = 50.0  # km/h

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "from": self.from_node,
            "to": self.to_node,
            "length": self.length,
            "lanes": self.lanes,
            "speed_limit": self.speed_limit,
        }


@dataclass(frozen=True)
class Movement:
    """One signalized approach-lane/turn combination through an intersection."""

    id: str
    approach_link: str
    lane_index: int
    turn: str
    exit_link: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "approach": self.approach_link,
            "lane": self.lane_index,
            "turn": self.turn,
            "exit": self.exit_link,
        }


@dataclass(frozen=True)
class Intersection:
    """Signalized node; movement order fixes signal string indexing."""

    id: str
    node: str
    movements: Tuple[Movement, ...]
    conflicts: Tuple[Tuple[str, str], ...] = ()

    def movement_index(self, movement_id: str) -> int:
        for i, m in enumerate(self.movements):
            if m.id == movement_id:
                return i
        raise KeyError(movement_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "node": self.node,
            "movements": [m.to_dict() for m in self.movements],
            "conflicts": [list(c) for c in self.conflicts],
        }


@dataclass(frozen=True)
class PhaseDef:
    """A signal phase: one {G,R} character per movement."""

    phase_id: str
    signal_string: str
    default_green: float = 30.0

    def to_dict(self) -> dict:
        return {
            "id": self.phase_id,
            "state": self.signal_string,
            "green": self.default_green,
        }


@dataclass(frozen=True)
class DemandSpec:
    """Poisson arrival demand on one entry link, with turn ratios."""

    entry_link: str
    rate: float  # vehicles per hour
    turn_ratios: Tuple[Tuple[str, float], ...]

    def ratio_dict(self) -> Dict[str, float]:
        return dict(self.turn_ratios)

    def to_dict(self) -> dict:
        return {
            "entry": self.entry_link,
            "rate": self.rate,
            "turn_ratios": {k: v for k, v in self.turn_ratios},
        }


@dataclass(frozen=True)
class Timing:
    """Controller timing defaults, seconds."""

    yellow_time: float = 3.0
    allred_time: float = 2.0
    min_green: float = 8.0
    max_green: float = 120.0

    def to_dict(self) -> dict:
        return {
            "yellow_time": self.yellow_time,
            "allred_time": self.allred_time,
            "min_green": self.min_green,
            "max_green": self.max_green,
        }


@dataclass
class ScenarioConfig:
    name: str
    nodes: Dict[str, Tuple[float, float]]
    links: Dict[str, Link]
    intersections: Dict[str, Intersection]
    demands: List[DemandSpec]
    programs: Dict[str, List[PhaseDef]]
    timing: Timing = field(default_factory=Timing)
    sim: SimParams = field(default_factory=SimParams)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "network": {
                "nodes": {nid: list(xy) for nid, xy in self.nodes.items()},
                "links": [ln.to_dict() for ln in self.links.values()],
                "intersections": [it.to_dict() for it in self.intersections.values()],
            },
            "demands": [d.to_dict() for d in self.demands],
            "signals": {iid: [p.to_dict() for p in prog] for iid, prog in self.programs.items()},
            "timing": self.timing.to_dict(),
            "sim": self.sim.to_dict(),
        }


def _ratios_tuple(d: Dict[str, float]) -> Tuple[Tuple[str, float], ...]:
    return tuple((k, float(d[k])) for k in TURNS if k in d)


def _config_from_dict(doc: dict) -> ScenarioConfig:
    try:
        net = doc["network"]
        nodes = {str(k): (float(v[0]), float(v[1])) for k, v in net["nodes"].items()}
        links = {}
        for item in net["links"]:
            ln = Link(
                id=str(item["id"]),
                from_node=str(item["from"]),
                to_node=str(item["to"]),
                length=float(item["length"]),
                lanes=int(item["lanes"]),
                speed_limit=float(item["speed_limit"]),
            )
            links[ln.id] = ln
        intersections = {}
        for item in net["intersections"]:
            movements = tuple(
                Movement(
                    id=str(m["id"]),
                    approach_link=str(m["approach"]),
                    lane_index=int(m["lane"]),
                    turn=str(m["turn"]),
                    exit_link=str(m["exit"]),
                )
                for m in item["movements"]
            )
            conflicts = tuple(
                tuple(sorted((str(a), str(b)))) for a, b in item.get("conflicts", [])
            )
            it = Intersection(
                id=str(item["id"]),
                node=str(item["node"]),
                movements=movements,
                conflicts=tuple(sorted(set(conflicts))),
            )
            intersections[it.id] = it
        demands = [
            DemandSpec(
                entry_link=str(d["entry"]),
                rate=float(d["rate"]),
                turn_ratios=_ratios_tuple(d["turn_ratios"]),
            )
            for d in doc.get("demands", [])
        ]
        programs = {
            str(iid): [
                PhaseDef(
                    phase_id=str(p["id"]),
                    signal_string=str(p["state"]),
                    default_green=float(p["green"]),
                )
                for p in prog
            ]
            for iid, prog in doc.get("signals", {}).items()
        }
        t = doc.get("timing", {})
        timing = Timing(
            yellow_time=float(t.get("yellow_time", 3.0)),
            allred_time=float(t.get("allred_time", 2.0)),
            min_green=float(t.get("min_green", 8.0)),
            max_green=float(t.get("max_green", 120.0)),
        )
        s = doc.get("sim", {})
        sim = SimParams(
            start_time=float(s.get("start_time", 600.0)),
            sim_period=float(s.get("sim_period", 4200.0)),
            sim_res=int(s.get("sim_res", 10)),
            seed=int(s.get("seed", 42)),
        )
        name = str(doc.get("name", "scenario"))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"malformed scenario document: {exc!r}") from exc
    return ScenarioConfig(
        name=name,
        nodes=nodes,
        links=links,
        intersections=intersections,
        demands=demands,
        programs=programs,
        timing=timing,
        sim=sim,
    )


def loads_scenario(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document from a JSON string."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("scenario document must be a JSON object")
    cfg = _config_from_dict(doc)
    violations = validate_network(cfg)
    if violations:
        raise ValidationError(violations)
    return cfg


def load_scenario(path: str) -> ScenarioConfig:
    """Load a ``.scn`` file; raises ParseError or ValidationError."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return loads_scenario(text)


def serialize(cfg: ScenarioConfig) -> str:
    """Render a config back to scenario-file JSON (round-trip stable)."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=False) + "\n"


def save_scenario(cfg: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))


# --- validation ---------------------------------------------------------------

def validate_network(cfg: ScenarioConfig) -> List[Violation]:
    """Structural checks; returns an empty list for a well-formed scenario."""
    out: List[Violation] = []

    def bad(code: str, msg: str, where: str = "") -> None:
        out.append(Violation(code, msg, where))

    sim = cfg.sim
    if sim.sim_res < 1:
        bad("BadSimParams", f"sim_res must be >= 1, got {sim.sim_res}", "sim")
    if not (0 <= sim.start_time < sim.sim_period):
        bad("BadSimParams", "need 0 <= start_time < sim_period", "sim")

    t = cfg.timing
    if t.yellow_time < 0 or t.allred_time < 0:
        bad("BadTiming", "yellow_time and allred_time must be >= 0", "timing")
    if t.min_green <= 0:
        bad("BadTiming", "min_green must be > 0", "timing")
    if t.max_green < t.min_green:
        bad("BadTiming", "max_green must be >= min_green", "timing")

    for ln in cfg.links.values():
        where = f"link {ln.id}"
        if ln.length <= 0:
            bad("BadLink", f"length must be > 0, got {ln.length}", where)
        if ln.lanes < 1:
            bad("BadLink", f"lanes must be >= 1, got {ln.lanes}", where)
        if ln.speed_limit <= 0:
            bad("BadLink", f"speed_limit must be > 0, got {ln.speed_limit}", where)
        if ln.from_node not in cfg.nodes or ln.to_node not in cfg.nodes:
            bad("DanglingLink", "link endpoint references an unknown node", where)

    exit_links = set()
    for it in cfg.intersections.values():
        where = f"intersection {it.id}"
        if it.node not in cfg.nodes:
            bad("DanglingIntersection", "intersection node is unknown", where)
        seen_keys = set()
        seen_ids = set()
        for m in it.movements:
            mwhere = f"{where}, movement {m.id}"
            if m.id in seen_ids:
                bad("DuplicateMovement", "movement id repeated", mwhere)
            seen_ids.add(m.id)
            key = (m.approach_link, m.lane_index, m.turn)
            if key in seen_keys:
                bad("DuplicateMovement", f"(approach, lane, turn) repeated: {key}", mwhere)
            seen_keys.add(key)
            if m.turn not in TURNS:
                bad("BadTurn", f"turn must be one of {TURNS}, got {m.turn!r}", mwhere)
            for ref, role in ((m.approach_link, "approach"), (m.exit_link, "exit")):
                if ref not in cfg.links:
                    bad("UnknownLink", f"{role} link {ref!r} does not exist", mwhere)
            link = cfg.links.get(m.approach_link)
            if link is not None and not (0 <= m.lane_index < link.lanes):
                bad("BadLaneIndex", f"lane {m.lane_index} outside 0..{link.lanes - 1}", mwhere)
            if m.exit_link in cfg.links:
                exit_links.add(m.exit_link)
        known = {m.id for m in it.movements}
        for a, b in it.conflicts:
            if a not in known or b not in known:
                bad("UnknownMovement", f"conflict pair ({a}, {b}) names unknown movement", where)

    for iid, it in cfg.intersections.items():
        prog = cfg.programs.get(iid)
        where = f"signals {iid}"
        if not prog:
            bad("MissingProgram", "intersection has no signal program", where)
            continue
        conflicts = {frozenset(p) for p in it.conflicts}
        for ph in prog:
            pwhere = f"{where}, phase {ph.phase_id}"
            if len(ph.signal_string) != len(it.movements):
                bad(
                    "PhaseLengthMismatch",
                    f"signal string length {len(ph.signal_string)} != movement count {len(it.movements)}",
                    pwhere,
                )
                continue
            if any(c not in "GR" for c in ph.signal_string):
                bad("BadSignalChar", "signal string may contain only G and R", pwhere)
                continue
            greens = [m.id for m, c in zip(it.movements, ph.signal_string) if c == "G"]
            if not greens:
                bad("NoGreen", "phase grants no green movement", pwhere)
            for i, a in enumerate(greens):
                for b in greens[i + 1:]:
                    if frozenset((a, b)) in conflicts:
                        bad("ConflictingGreens", f"{a} and {b} are declared conflicting", pwhere)
            if not (t.min_green <= ph.default_green <= t.max_green):
                bad("BadDefaultGreen", f"default green {ph.default_green} outside [min_green, max_green]", pwhere)
    for iid in cfg.programs:
        if iid not in cfg.intersections:
            bad("UnknownIntersection", f"program for unknown intersection {iid}", "signals")

    seen_entries = set()
    for d in cfg.demands:
        where = f"demand {d.entry_link}"
        if d.entry_link not in cfg.links:
            bad("UnknownEntryLink", "demand entry is not a link", where)
        elif d.entry_link in exit_links:
            bad("NotAnEntryLink", "demand entry is some movement's exit link", where)
        if d.entry_link in seen_entries:
            bad("DuplicateDemand", "multiple demands on one entry link", where)
        seen_entries.add(d.entry_link)
        if d.rate < 0:
            bad("BadRate", f"arrival rate must be >= 0, got {d.rate}", where)
        ratios = d.ratio_dict()
        if any(k not in TURNS for k in ratios):
            bad("BadTurnRatios", "turn ratio keys must be L, S or R", where)
        if any(v < 0 for v in ratios.values()):
            bad("BadTurnRatios", "turn ratios must be >= 0", where)
        if abs(sum(ratios.values()) - 1.0) > RATIO_TOL:
            bad("BadTurnRatios", f"turn ratios sum to {sum(ratios.values())!r}, expected 1.0", where)
    return out


# --- derived structure helpers -------------------------------------------------

def signal_groups(cfg: ScenarioConfig, iid: str) -> List[List[int]]:
    """Movement indices grouped by identical per-phase columns.

    Movements that show the same character in every phase of the program form
    one signal group; groups are ordered by their first movement index.
    """
    it = cfg.intersections[iid]
    prog = cfg.programs[iid]
    by_col: Dict[Tuple[str, ...], List[int]] = {}
    order: List[Tuple[str, ...]] = []
    for idx in range(len(it.movements)):
        col = tuple(ph.signal_string[idx] for ph in prog)
        if col not in by_col:
            by_col[col] = []
            order.append(col)
        by_col[col].append(idx)
    return [by_col[col] for col in order]


def approach_lanes(cfg: ScenarioConfig, iid: str) -> List[Tuple[str, int]]:
    """Approach (link, lane) pairs of an intersection, ordered lexicographically."""
    it = cfg.intersections[iid]
    lanes = {(m.approach_link, m.lane_index) for m in it.movements}
    return sorted(lanes)


def approach_links(cfg: ScenarioConfig, iid: str) -> List[str]:
    it = cfg.intersections[iid]
    return sorted({m.approach_link for m in it.movements})


def link_intersection(cfg: ScenarioConfig) -> Dict[str, str]:
    """Map each approach link to the intersection it feeds."""
    out: Dict[str, str] = {}
    for it in cfg.intersections.values():
        for m in it.movements:
            out[m.approach_link] = it.id
    return out


def entry_links(cfg: ScenarioConfig) -> List[str]:
    return [d.entry_link for d in cfg.demands]


def intersection_position(cfg: ScenarioConfig, iid: str) -> Tuple[float, float]:
    return cfg.nodes[cfg.intersections[iid].node]


# --- presets -------------------------------------------------------------------

# Exit link of a turn, by approach compass direction (right-hand traffic).
_SINGLE_EXITS = {
    "E": {"L": "S_out", "S": "W_out", "R": "N_out"},
    "W": {"L": "N_out", "S": "E_out", "R": "S_out"},
    "N": {"L": "E_out", "S": "S_out", "R": "W_out"},
    "S": {"L": "W_out", "S": "N_out", "R": "E_out"},
}

_OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}


def _four_leg_conflicts(movements: Tuple[Movement, ...], approach_of: Dict[str, str]) -> Tuple[Tuple[str, str], ...]:
    """Declared conflict pairs for a standard four-leg layout.

    Movements from perpendicular approaches always conflict; movements from
    opposite approaches conflict exactly when one of them is a left turn.
    """
    pairs = set()
    for i, a in enumerate(movements):
        for b in movements[i + 1:]:
            da, db = approach_of[a.id], approach_of[b.id]
            if da == db:
                continue
            if _OPPOSITE[da] == db:
                if (a.turn == "L") != (b.turn == "L"):
                    pairs.add(tuple(sorted((a.id, b.id))))
            else:
                pairs.add(tuple(sorted((a.id, b.id))))
    return tuple(sorted(pairs))


def _phase_string(movements: Tuple[Movement, ...], greens: set) -> str:
    return "".join("G" if m.id in greens else "R" for m in movements)


def _preset_single() -> ScenarioConfig:
    nodes = {
        "C": (0.0, 0.0),
        "E": (150.0, 0.0),
        "W": (-150.0, 0.0),
        "N": (0.0, 150.0),
        "S": (0.0, -150.0),
    }
    links: Dict[str, Link] = {}
    for d in ("E", "W", "N", "S"):
        links[f"{d}_in"] = Link(f"{d}_in", d, "C", 150.0, lanes=2, speed_limit=50.0)
        links[f"{d}_out"] = Link(f"{d}_out", "C", d, 150.0, lanes=2, speed_limit=50.0)

    movements = []
    approach_of = {}
    for d in ("E", "W", "N", "S"):
        for turn in ("L", "S", "R"):
            lane = 1 if turn == "L" else 0  # inner lane for lefts, curb lane otherwise
            m = Movement(f"{d}_{turn}", f"{d}_in", lane, turn, _SINGLE_EXITS[d][turn])
            movements.append(m)
            approach_of[m.id] = d
    movements = tuple(movements)
    inter = Intersection(
        id="I1",
        node="C",
        movements=movements,
        conflicts=_four_leg_conflicts(movements, approach_of),
    )

    def greens(*ids: str) -> str:
        return _phase_string(movements, set(ids))

    program = [
        PhaseDef("EW", greens("E_S", "E_R", "W_S", "W_R"), 27.0),
        PhaseDef("EW_L", greens("E_L", "W_L"), 8.0),
        PhaseDef("NS", greens("N_S", "N_R", "S_S", "S_R"), 17.0),
        PhaseDef("NS_L", greens("N_L", "S_L"), 8.0),
    ]

    ratios = _ratios_tuple({"L": 0.1, "S": 0.8, "R": 0.1})
    demands = [
        DemandSpec("E_in", 1200.0, ratios),
        DemandSpec("W_in", 1200.0, ratios),
        DemandSpec("N_in", 800.0, ratios),
        DemandSpec("S_in", 800.0, ratios),
    ]
    return ScenarioConfig(
        name="single",
        nodes=nodes,
        links=links,
        intersections={"I1": inter},
        demands=demands,
        programs={"I1": program},
        timing=Timing(min_green=5.0),
        sim=SimParams(),
    )


def _preset_arterial3() -> ScenarioConfig:
    xs = [0.0, 300.0, 600.0]
    nodes = {"W": (-150.0, 0.0), "E": (750.0, 0.0)}
    for i, x in enumerate(xs, start=1):
        nodes[f"C{i}"] = (x, 0.0)
        nodes[f"N{i}"] = (x, 150.0)
        nodes[f"S{i}"] = (x, -150.0)

    links: Dict[str, Link] = {}

    def add(lid: str, a: str, b: str, length: float) -> None:
        links[lid] = Link(lid, a, b, length, lanes=1, speed_limit=50.0)

    add("EB0", "W", "C1", 150.0)
    add("EB1", "C1", "C2", 300.0)
    add("EB2", "C2", "C3", 300.0)
    add("EB3", "C3", "E", 150.0)
    add("WB0", "E", "C3", 150.0)
    add("WB1", "C3", "C2", 300.0)
    add("WB2", "C2", "C1", 300.0)
    add("WB3", "C1", "W", 150.0)
    for i in range(1, 4):
        add(f"N{i}_in", f"N{i}", f"C{i}", 150.0)
        add(f"N{i}_out", f"C{i}", f"N{i}", 150.0)
        add(f"S{i}_in", f"S{i}", f"C{i}", 150.0)
        add(f"S{i}_out", f"C{i}", f"S{i}", 150.0)

    intersections = {}
    programs = {}
    for i in range(1, 4):
        movements = (
            Movement(f"I{i}_EB", f"EB{i - 1}", 0, "S", f"EB{i}"),
            Movement(f"I{i}_WB", f"WB{3 - i}", 0, "S", f"WB{4 - i}"),
            Movement(f"I{i}_SB", f"N{i}_in", 0, "S", f"S{i}_out"),
            Movement(f"I{i}_NB", f"S{i}_in", 0, "S", f"N{i}_out"),
        )
        conflicts = tuple(
            sorted(
                tuple(sorted((a, b)))
                for a, b in [
                    (f"I{i}_EB", f"I{i}_SB"), (f"I{i}_EB", f"I{i}_NB"),
                    (f"I{i}_WB", f"I{i}_SB"), (f"I{i}_WB", f"I{i}_NB"),
                ]
            )
        )
        iid = f"I{i}"
        intersections[iid] = Intersection(iid, f"C{i}", movements, conflicts)
        programs[iid] = [
            PhaseDef("EW", "GGRR", 19.0),
            PhaseDef("NS", "RRGG", 11.0),
        ]

    through = _ratios_tuple({"S": 1.0})
    demands = [DemandSpec("EB0", 1200.0, through), DemandSpec("WB0", 1200.0, through)]
    for i in range(1, 4):
        demands.append(DemandSpec(f"N{i}_in", 800.0, through))
        demands.append(DemandSpec(f"S{i}_in", 800.0, through))

    return ScenarioConfig(
        name="arterial3",
        nodes=nodes,
        links=links,
        intersections=intersections,
        demands=demands,
        programs=programs,
        timing=Timing(min_green=5.0),
        sim=SimParams(),
    )


# Corridor synthesized from the five-intersection arterial survey: per-entry
# arrival rates and phase counts (2, 2, 2, 3, 4) are kept; geometry is a
# straight 300 m corridor with 150 m boundary stubs.
_DAYUAN_PHASES = {1: 2, 2: 2, 3: 2, 4: 3, 5: 4}
_DAYUAN_SIDE = {1: (434.5, 434.5), 2: (23.0, 23.0), 3: (249.0, 249.0), 4: (198.0, 198.0), 5: (412.0, 199.0)}
_DAYUAN_EB_ENTRY = 1623.0
_DAYUAN_WB_ENTRY = 1950.0


def _preset_dayuan5() -> ScenarioConfig:
    n = 5
    nodes = {"W": (-150.0, 0.0), "E": (300.0 * (n - 1) + 150.0, 0.0)}
    for i in range(1, n + 1):
        x = 300.0 * (i - 1)
        nodes[f"C{i}"] = (x, 0.0)
        nodes[f"N{i}"] = (x, 150.0)
        nodes[f"S{i}"] = (x, -150.0)

    links: Dict[str, Link] = {}

    def add(lid: str, a: str, b: str, length: float, lanes: int) -> None:
        links[lid] = Link(lid, a, b, length, lanes=lanes, speed_limit=50.0)

    add("EB0", "W", "C1", 150.0, 2)
    for i in range(1, n):
        add(f"EB{i}", f"C{i}", f"C{i + 1}", 300.0, 2)
    add(f"EB{n}", f"C{n}", "E", 150.0, 2)
    add("WB0", "E", f"C{n}", 150.0, 2)
    for i in range(1, n):
        add(f"WB{i}", f"C{n + 1 - i}", f"C{n - i}", 300.0, 2)
    add(f"WB{n}", "C1", "W", 150.0, 2)
    for i in range(1, n + 1):
        add(f"N{i}_in", f"N{i}", f"C{i}", 150.0, 1)
        add(f"N{i}_out", f"C{i}", f"N{i}", 150.0, 1)
        add(f"S{i}_in", f"S{i}", f"C{i}", 150.0, 1)
        add(f"S{i}_out", f"C{i}", f"S{i}", 150.0, 1)

    intersections = {}
    programs = {}
    for i in range(1, n + 1):
        phases = _DAYUAN_PHASES[i]
        eb_in, eb_out = f"EB{i - 1}", f"EB{i}"
        wb_in, wb_out = f"WB{n - i}", f"WB{n + 1 - i}"
        movements = []
        approach_of = {}

        def mov(mid: str, approach: str, lane: int, turn: str, exit_link: str, compass: str) -> None:
            movements.append(Movement(mid, approach, lane, turn, exit_link))
            approach_of[mid] = compass

        # Arterial approaches: curb lane carries S+R; inner lane carries the
        # protected left where one exists, otherwise a second through lane.
        has_art_left = phases >= 3
        has_side_left = phases >= 4
        mov(f"I{i}_EB_S", eb_in, 0, "S", eb_out, "W")
        mov(f"I{i}_EB_R", eb_in, 0, "R", f"S{i}_out", "W")
        if has_art_left:
            mov(f"I{i}_EB_L", eb_in, 1, "L", f"N{i}_out", "W")
        else:
            mov(f"I{i}_EB_S2", eb_in, 1, "S", eb_out, "W")
        mov(f"I{i}_WB_S", wb_in, 0, "S", wb_out, "E")
        mov(f"I{i}_WB_R", wb_in, 0, "R", f"N{i}_out", "E")
        if has_art_left:
            mov(f"I{i}_WB_L", wb_in, 1, "L", f"S{i}_out", "E")
        else:
            mov(f"I{i}_WB_S2", wb_in, 1, "S", wb_out, "E")
        mov(f"I{i}_SB_S", f"N{i}_in", 0, "S", f"S{i}_out", "N")
        mov(f"I{i}_SB_R", f"N{i}_in", 0, "R", wb_out, "N")
        if has_side_left:
            mov(f"I{i}_SB_L", f"N{i}_in", 0, "L", eb_out, "N")
        mov(f"I{i}_NB_S", f"S{i}_in", 0, "S", f"N{i}_out", "S")
        mov(f"I{i}_NB_R", f"S{i}_in", 0, "R", eb_out, "S")
        if has_side_left:
            mov(f"I{i}_NB_L", f"S{i}_in", 0, "L", wb_out, "S")
        movements = tuple(movements)

        def greens(pred) -> str:
            return _phase_string(movements, {m.id for m in movements if pred(m)})

        prog = [
            PhaseDef(
                "EW",
                greens(lambda m: approach_of[m.id] in ("E", "W") and m.turn != "L"),
                40.0 if phases == 2 else (35.0 if phases == 3 else 30.0),
            )
        ]
        if has_art_left:
            prog.append(PhaseDef("EW_L", greens(lambda m: approach_of[m.id] in ("E", "W") and m.turn == "L"), 10.0 if phases == 3 else 12.0))
        prog.append(
            PhaseDef("NS", greens(lambda m: approach_of[m.id] in ("N", "S") and m.turn != "L"), 20.0)
        )
        if has_side_left:
            prog.append(PhaseDef("NS_L", greens(lambda m: approach_of[m.id] in ("N", "S") and m.turn == "L"), 12.0))

        iid = f"I{i}"
        intersections[iid] = Intersection(iid, f"C{i}", movements, _four_leg_conflicts(movements, approach_of))
        programs[iid] = prog

    ratios = _ratios_tuple({"L": 0.1, "S": 0.8, "R": 0.1})
    demands = [DemandSpec("EB0", _DAYUAN_EB_ENTRY, ratios), DemandSpec("WB0", _DAYUAN_WB_ENTRY, ratios)]
    for i in range(1, n + 1):
        north, south = _DAYUAN_SIDE[i]
        demands.append(DemandSpec(f"N{i}_in", north, ratios))
        demands.append(DemandSpec(f"S{i}_in", south, ratios))

    return ScenarioConfig(
        name="dayuan5",
        nodes=nodes,
        links=links,
        intersections=intersections,
        demands=demands,
        programs=programs,
        timing=Timing(min_green=5.0),
        sim=SimParams(),
    )


_PRESETS = {
    "single": _preset_single,
    "arterial3": _preset_arterial3,
    "dayuan5": _preset_dayuan5,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def build_preset(name: str) -> ScenarioConfig:
    """Construct one of the built-in scenarios: single, arterial3, dayuan5."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"no preset named {name!r}; known: {', '.join(PRESET_NAMES)}") from None
    return factory()


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    """Accept a preset name or a scenario file path."""
    if name_or_path in _PRESETS:
        return build_preset(name_or_path)
    return load_scenario(name_or_path)

"""Attribute bus: path-addressed access to a running simulation.

Requests are dicts with an "op" key: HELLO opens a session and describes the
catalog, GET/SET touch one path, BATCH runs a list of GET/SET items in order,
STEP advances the clock, BYE closes.  GET, SET, STEP and BATCH each add one
to the call total; a BATCH counts once no matter how many items it carries;
HELLO and BYE are tracked separately and excluded from the total.

Two transports expose the same dispatcher: in-process (direct call) and a
loopback TCP socket framed as a 4-byte big-endian length plus UTF-8 JSON.
"""
import json
import socket
import struct
import threading
from typing import Callable, Dict, List, Optional, Tuple

from . import __version__
from .engine import SimState, fnv1a64, lane_queue_length
from .errors import (
    AlreadyStarted,
    BadValue,
    Error,
    NotStarted,
    ReadOnlyPath,
    TransportError,
    UnknownPath,
    remote_error,
)
from .scenario import signal_groups
from .signals import Stage


class AttributeBus:
    """Server-side dispatcher bound to one simulation."""

    def __init__(self, sim: SimState):
        self.sim = sim
        self.started = False
        self.stats: Dict[str, int] = {
            "GET": 0, "SET": 0, "STEP": 0, "BATCH": 0, "HELLO": 0, "BYE": 0, "total": 0,
        }
        # (iid, group) -> staged char for a partially written phase request
        self._staged: Dict[Tuple[str, int], str] = {}
        self._getters: Dict[str, Callable[[], object]] = {}
        self._setters: Dict[str, Callable[[object], dict]] = {}
        self._groups: Dict[str, List[List[int]]] = {}
        self._build_catalog()
        names = sorted(self._getters)
        self.catalog_hash = format(fnv1a64("\n".join(names)), "016x")

    # -- catalog ----------------------------------------------------------------

    def _build_catalog(self) -> None:
        sim = self.sim
        g = self._getters
        g["sim.clock"] = lambda: sim.clock
        g["sim.serial"] = lambda: sim.step_count
        g["sim.seed"] = lambda: sim.seed
        g["net.delay"] = lambda: sim.tot_delay
        g["net.tt"] = lambda: sim.tot_tt
        g["net.dist"] = lambda: sim.tot_dist
        g["net.iwt"] = lambda: sim.tot_iwt
        g["net.bwt"] = lambda: sim.tot_bwt
        g["net.arrived"] = lambda: sim.arrived
        g["net.mean_speed"] = lambda: (sim.tot_dist / sim.tot_tt if sim.tot_tt > 0 else 0.0)
        g["net.spawned"] = lambda: sim.spawned
        g["net.active"] = lambda: sim.n_active
        g["net.pending"] = lambda: sum(len(e.pending) for e in sim.entries)
        for key in sorted(sim.lane_map):
            link_id, lane_idx = key
            g[f"q.{link_id}.{lane_idx}"] = (
                lambda l=link_id, k=lane_idx: lane_queue_length(sim, l, k)
            )
        for iid in sim.controllers:
            ctrl = sim.controllers[iid]
            program = sim.cfg.programs[iid]
            phase_ids = [p.phase_id for p in program]
            g[f"ts.{iid}.phase"] = lambda c=ctrl, ids=phase_ids: ids[c.current_phase]
            g[f"ts.{iid}.phase_index"] = lambda c=ctrl: c.current_phase
            g[f"ts.{iid}.stage"] = lambda c=ctrl: c.stage.value
            g[f"ts.{iid}.signal_string"] = lambda c=ctrl: c.signal_string
            g[f"ts.{iid}.green_elapsed"] = lambda c=ctrl: c.green_elapsed
            g[f"ts.{iid}.since_green_onset"] = lambda c=ctrl: c.since_green_onset
            g[f"ts.{iid}.committed"] = lambda c=ctrl: c.committed_duration
            g[f"ts.{iid}.min_green_met"] = (
                lambda c=ctrl: bool(c.stage is Stage.GREEN and c.ge >= c.min_steps)
            )
            g[f"ts.{iid}.crossings"] = lambda i=iid: sim.crossings[i]
            g[f"ts.{iid}.phase_count"] = lambda n=len(program): n
            groups = signal_groups(sim.cfg, iid)
            self._groups[iid] = groups
            for k, members in enumerate(groups):
                first = members[0]
                g[f"ts.{iid}.sg.{k}.state"] = lambda c=ctrl, m=first: c.signal_string[m]
                g[f"ts.{iid}.sg.{k}.next"] = (
                    lambda i=iid, kk=k: self._staged.get((i, kk), "")
                )
                self._setters[f"ts.{iid}.sg.{k}.next"] = (
                    lambda value, i=iid, kk=k: self._set_group(i, kk, value)
                )

    def _set_group(self, iid: str, k: int, value: object) -> dict:
        if value not in ("G", "R"):
            raise BadValue(f"group request must be 'G' or 'R', got {value!r}")
        self._staged[(iid, k)] = value
        groups = self._groups[iid]
        if any((iid, j) not in self._staged for j in range(len(groups))):
            return {"ok": True, "complete": False}
        # all groups written: expand to a movement string and match a phase
        n_moves = len(self.sim.cfg.intersections[iid].movements)
        chars = [""] * n_moves
        for j, members in enumerate(groups):
            ch = self._staged[(iid, j)]
            for m in members:
                chars[m] = ch
        pattern = "".join(chars)
        for j in range(len(groups)):
            del self._staged[(iid, j)]
        program = self.sim.cfg.programs[iid]
        for idx, phase in enumerate(program):
            if phase.signal_string == pattern:
                status = self.sim.controllers[iid].set_next_phase(idx)
                return {"ok": True, "complete": True, "phase": phase.phase_id, "status": status}
        raise BadValue(f"pattern {pattern!r} matches no phase of {iid}")

    # -- session description ------------------------------------------------------

    def _describe(self) -> dict:
        programs = {}
        for iid, groups in self._groups.items():
            program = self.sim.cfg.programs[iid]
            group_chars = {
                p.phase_id: "".join(p.signal_string[m[0]] for m in groups) for p in program
            }
            programs[iid] = {
                "phases": [p.phase_id for p in program],
                "phase_strings": {p.phase_id: p.signal_string for p in program},
                "group_chars": group_chars,
                "groups": len(groups),
                "movements": len(self.sim.cfg.intersections[iid].movements),
            }
        return {
            "version": __version__,
            "catalog_hash": self.catalog_hash,
            "clock": self.sim.clock,
            "serial": self.sim.step_count,
            "sim_res": self.sim.res,
            "horizon": self.sim.cfg.sim.sim_period,
            "paths": len(self._getters),
            "programs": programs,
        }

    # -- dispatch -----------------------------------------------------------------

    def handle(self, request: dict) -> dict:
        op = request.get("op")
        try:
            if op == "HELLO":
                if self.started:
                    raise AlreadyStarted("session already open")
                self.started = True
                self.stats["HELLO"] += 1
                return self._describe()
            if not self.started:
                raise NotStarted("HELLO must precede any other operation")
            if op == "BYE":
                self.started = False
                self.stats["BYE"] += 1
                return {"ok": True, "calls": self.stats["total"]}
            if op == "GET":
                self.stats["GET"] += 1
                self.stats["total"] += 1
                return {"value": self._get(request.get("path"))}
            if op == "SET":
                self.stats["SET"] += 1
                self.stats["total"] += 1
                return self._set(request.get("path"), request.get("value"))
            if op == "BATCH":
                self.stats["BATCH"] += 1
                self.stats["total"] += 1
                results = []
                for item in request.get("items", ()):
                    kind = item.get("op")
                    if kind == "GET":
                        results.append({"value": self._get(item.get("path"))})
                    elif kind == "SET":
                        results.append(self._set(item.get("path"), item.get("value")))
                    else:
                        raise BadValue(f"batch item op must be GET or SET, got {kind!r}")
                return {"results": results}
            if op == "STEP":
                self.stats["STEP"] += 1
                self.stats["total"] += 1
                n = int(request.get("n", 1))
                if n < 1:
                    raise BadValue(f"step count must be >= 1, got {n}")
                for _ in range(n):
                    self.sim.advance_step()
                return {"clock": self.sim.clock, "serial": self.sim.step_count}
            raise BadValue(f"unknown op {op!r}")
        except Error as exc:
            return {"error": {"code": exc.code, "message": str(exc)}}

    def _get(self, path):
        getter = self._getters.get(path)
        if getter is None:
            raise UnknownPath(f"no path {path!r}")
        return getter()

    def _set(self, path, value) -> dict:
        setter = self._setters.get(path)
        if setter is None:
            if path in self._getters:
                raise ReadOnlyPath(f"{path!r} is read-only")
            raise UnknownPath(f"no path {path!r}")
        return setter(value)


# -- client ----------------------------------------------------------------------


class BusClient:
    """Typed wrapper over a transport; raises reconstructed bus errors."""

    def __init__(self, transport):
        self._transport = transport
        self.session: Optional[dict] = None

    def _call(self, request: dict) -> dict:
        reply = self._transport.request(request)
        err = reply.get("error")
        if err is not None:
            raise remote_error(err.get("code", "Error"), err.get("message", ""))
        return reply

    def hello(self) -> dict:
        self.session = self._call({"op": "HELLO"})
        return self.session

    def get(self, path: str):
        return self._call({"op": "GET", "path": path})["value"]

    def set(self, path: str, value) -> dict:
        return self._call({"op": "SET", "path": path, "value": value})

    def batch(self, items: List[tuple]) -> List[dict]:
        encoded = []
        for item in items:
            if item[0] == "GET":
                encoded.append({"op": "GET", "path": item[1]})
            elif item[0] == "SET":
                encoded.append({"op": "SET", "path": item[1], "value": item[2]})
            else:
                raise BadValue(f"batch item op must be GET or SET, got {item[0]!r}")
        return self._call({"op": "BATCH", "items": encoded})["results"]

    def step(self, n: int = 1) -> dict:
        return self._call({"op": "STEP", "n": n})

    def bye(self) -> dict:
        reply = self._call({"op": "BYE"})
        self.session = None
        close = getattr(self._transport, "close", None)
        if close is not None:
            close()
        return reply


class InprocTransport:
    """Direct dispatch; request dicts must stay JSON-representable."""

    def __init__(self, bus: AttributeBus):
        self._bus = bus

    def request(self, request: dict) -> dict:
        return self._bus.handle(request)


def open_inproc(sim_or_bus) -> BusClient:
    bus = sim_or_bus if isinstance(sim_or_bus, AttributeBus) else AttributeBus(sim_or_bus)
    client = BusClient(InprocTransport(bus))
    client.bus = bus
    return client


# -- socket transport --------------------------------------------------------------

_HEADER = struct.Struct(">I")


def _send_frame(conn: socket.socket, payload: dict) -> None:
    raw = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    conn.sendall(_HEADER.pack(len(raw)) + raw)


def _recv_exact(conn: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf += chunk
    return buf


def _recv_frame(conn: socket.socket) -> dict:
    (length,) = _HEADER.unpack(_recv_exact(conn, 4))
    return json.loads(_recv_exact(conn, length).decode("utf-8"))


class SocketServer:
    """Serves one bus over loopback TCP, one connection at a time."""

    def __init__(self, sim: SimState, host: str = "127.0.0.1", port: int = 0):
        self.bus = AttributeBus(sim)
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(0.2)
        self.host, self.port = self._sock.getsockname()[:2]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                conn.settimeout(30.0)
                try:
                    while not self._stop.is_set():
                        request = _recv_frame(conn)
                        reply = self.bus.handle(request)
                        _send_frame(conn, reply)
                        if request.get("op") == "BYE" and "error" not in reply:
                            break
                except (TransportError, OSError, json.JSONDecodeError):
                    continue
        self._sock.close()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5.0)
        try:
            self._sock.close()
        except OSError:
            pass


class SocketTransport:
    def __init__(self, host: str, port: int):
        try:
            self._conn = socket.create_connection((host, port), timeout=30.0)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def request(self, request: dict) -> dict:
        try:
            _send_frame(self._conn, request)
            return _recv_frame(self._conn)
        except (OSError, json.JSONDecodeError) as exc:
            raise TransportError(f"socket request failed: {exc}") from exc

    def close(self) -> None:
        try:
            self._conn.close()
        except OSError:
            pass


def open_socket(host: str, port: int) -> BusClient:
    return BusClient(SocketTransport(host, port))

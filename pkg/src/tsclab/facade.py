"""Facade over the attribute bus: batched reads, phase writes, step-tagged cache.

Every read helper issues at most one bus call per simulation step; repeated
calls at the same step are served from a cache keyed by the step serial, so
the cache never needs explicit clearing.  Writes are never cached and never
deduplicated.  All state needed to build requests (group layout, phase
tables, resolution) comes from the HELLO reply, so construction costs no
countable calls.
"""
from typing import Dict, List, Optional, Tuple, Union

from .attrbus import BusClient
from .errors import BadValue, LengthMismatch

# read sets used by the two evaluation helpers; order is part of the contract
EVAL_TS_FIELDS = (
    "phase", "stage", "green_elapsed", "since_green_onset", "min_green_met", "crossings",
)
EVAL_TOTAL_PATHS = ("net.delay", "net.tt", "net.iwt", "net.bwt", "net.arrived")


class TscFacade:
    """High-level client for one simulation session."""

    def __init__(self, client: BusClient):
        info = client.session if client.session is not None else client.hello()
        self._client = client
        self._res: int = info["sim_res"]
        self._serial: int = info["serial"]
        self.horizon: float = info["horizon"]
        self.programs: Dict[str, dict] = info["programs"]
        self.version: str = info["version"]
        self.catalog_hash: str = info["catalog_hash"]
        self._cache: Dict[Tuple[str, str], Tuple[int, dict]] = {}

    # -- clock ------------------------------------------------------------------

    @property
    def clock(self) -> float:
        return self._serial / self._res

    @property
    def step_serial(self) -> int:
        return self._serial

    def step(self, n: int = 1) -> float:
        """Advance n simulation steps with a single bus call."""
        reply = self._client.step(n)
        self._serial = reply["serial"]
        return reply["clock"]

    def step_one_sec(self) -> float:
        return self.step(self._res)

    def run_until(self, clock: float) -> float:
        """Advance to the given clock; one bus call, none if already there."""
        n = round(clock * self._res) - self._serial
        if n < 0:
            raise BadValue(f"clock {clock} lies {-n} steps in the past")
        if n == 0:
            return self.clock
        return self.step(n)

    # -- cached reads -------------------------------------------------------------

    def _cached(self, key: Tuple[str, str], paths: List[str]) -> dict:
        hit = self._cache.get(key)
        if hit is not None and hit[0] == self._serial:
            return hit[1]
        results = self._client.batch([("GET", p) for p in paths])
        value = {p.rsplit(".", 1)[-1]: r["value"] for p, r in zip(paths, results)}
        self._cache[key] = (self._serial, value)
        return value

    def sc_get_ts_phase(self, iid: str) -> dict:
        """Current phase of one controller: one batch, cached per step."""
        paths = [
            f"ts.{iid}.phase",
            f"ts.{iid}.phase_index",
            f"ts.{iid}.min_green_met",
            f"ts.{iid}.green_elapsed",
        ]
        return self._cached(("phase", iid), paths)

    def eval_ts(self, iid: str) -> dict:
        """Controller evaluation bundle: one batch, cached per step."""
        paths = [f"ts.{iid}.{field}" for field in EVAL_TS_FIELDS]
        return self._cached(("eval_ts", iid), paths)

    def eval_totals(self) -> dict:
        """Network totals bundle: one batch, cached per step."""
        return self._cached(("totals", ""), list(EVAL_TOTAL_PATHS))

    def get(self, path: str):
        """Raw single-path read; intentionally uncached."""
        return self._client.get(path)

    # -- writes ---------------------------------------------------------------------

    def sc_set_ts_phase(
        self, iid: str, target: Union[int, str], duration: Optional[float] = None
    ) -> str:
        """Request a phase via per-group writes in one batch; returns status.

        The target may be a phase index, a phase id, or a full per-movement
        signal string.  Strings of the wrong length raise LengthMismatch;
        patterns matching no phase raise BadValue.  Requests are always sent,
        never cached or deduplicated.  Group writes carry no duration, so a
        duration here is refused; duration control lives on the engine API.
        """
        if duration is not None:
            raise BadValue("group writes carry no duration channel")
        info = self.programs.get(iid)
        if info is None:
            raise BadValue(f"no intersection {iid!r}")
        phases: List[str] = info["phases"]
        if isinstance(target, int):
            if not (0 <= target < len(phases)):
                raise BadValue(f"phase index {target} out of range for {iid}")
            pid = phases[target]
        elif target in phases:
            pid = target
        else:
            if len(target) != info["movements"]:
                raise LengthMismatch(
                    f"signal string for {iid} needs {info['movements']} movements, "
                    f"got {len(target)}"
                )
            pid = None
            for cand, full in info["phase_strings"].items():
                if full == target:
                    pid = cand
                    break
            if pid is None:
                raise BadValue(f"pattern {target!r} matches no phase of {iid}")
        chars = info["group_chars"][pid]
        items = [("SET", f"ts.{iid}.sg.{k}.next", chars[k]) for k in range(info["groups"])]
        results = self._client.batch(items)
        return results[-1].get("status", "accepted")

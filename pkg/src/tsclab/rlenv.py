"""Decision-step environment over the engine: observations, rewards, schemes.

Control happens at decision instants.  Two schemes decide on a fixed cadence
(choose-phase and keep-or-switch); the phase-duration scheme decides only at
green onsets, and only for the agents whose green just began.  Between
decisions the engine advances unobserved.  Episodes never terminate on their
own merits; they truncate at the horizon.
"""
import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .engine import QUEUE_SPEED, SimState, VEHICLE_LENGTH, MIN_GAP
from .errors import ConfigError, HorizonExceeded, MissingAgentAction, OutOfSpaceAction
from .scenario import ScenarioConfig, approach_lanes, resolve_scenario
from .signals import Stage

SCHEMES = ("choose", "switch", "duration")
OBSERVATIONS = ("default", "global")

_SLOT = VEHICLE_LENGTH + MIN_GAP  # storage length one queued vehicle occupies


@dataclass(frozen=True)
class RewardWeights:
    """Linear reward weights; terms are summed in field order."""

    itwt: float = -0.0001  # intersection waiting time delta, s
    btwt: float = -0.0001  # boundary waiting time delta, s
    throughput: float = 0.01  # stop-line crossings in the interval
    speed: float = 0.001  # time-weighted mean speed in the interval, m/s
    delay: float = 0.0  # network delay delta, s
    travel_time: float = 0.0  # network travel time delta, s


@dataclass(frozen=True)
class IntervalMetrics:
    """One agent's metric deltas over a single decision interval."""

    itwt: float = 0.0
    btwt: float = 0.0
    throughput: float = 0.0
    speed: float = 0.0
    delay: float = 0.0
    travel_time: float = 0.0


def default_reward(interval: IntervalMetrics, weights: RewardWeights) -> float:
    """Weighted sum of interval deltas; linear in the weights."""
    r = (
        weights.itwt * interval.itwt
        + weights.btwt * interval.btwt
        + weights.throughput * interval.throughput
        + weights.speed * interval.speed
    )
    if weights.delay != 0.0:
        r += weights.delay * interval.delay
    if weights.travel_time != 0.0:
        r += weights.travel_time * interval.travel_time
    return r


@dataclass
class EnvConfig:
    scenario: str = "single"
    scheme: str = "choose"
    observation: str = "default"
    agents: Optional[List[str]] = None  # default: every intersection
    decision_interval: float = 5.0
    warmup: float = 600.0
    horizon: float = 3600.0
    seed: int = 42
    weights: RewardWeights = field(default_factory=RewardWeights)
    record_events: bool = False


def loads_env_config(text: str) -> EnvConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    known = {f for f in EnvConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "weights" in data:
        w = data["weights"]
        if not isinstance(w, dict):
            raise ConfigError("weights must be an object")
        bad = set(w) - set(RewardWeights.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown weight fields: {sorted(bad)}")
        data = dict(data)
        data["weights"] = RewardWeights(**w)
    return EnvConfig(**data)


def load_env_config(path: str) -> EnvConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_env_config(fh.read())


def lane_capacity(length: float) -> int:
    """How many stopped vehicles fit on a lane, one per 7 m slot."""
    return int(math.floor(length / _SLOT))


class TrafficEnv:
    """Multi-agent signal control environment; single-agent calls stay flat.

    With one agent, observations are vectors and rewards floats; with more,
    both are dicts keyed by intersection id.  Under the duration scheme only
    the agents listed in info["active"] observe, act and get rewarded at a
    given decision.
    """

    def __init__(self, config: Optional[EnvConfig] = None, **overrides):
        if config is None:
            config = EnvConfig(**overrides)
        elif overrides:
            config = replace(config, **overrides)
        if config.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {config.scheme!r}")
        if config.observation not in OBSERVATIONS:
            raise ConfigError(
                f"observation must be one of {OBSERVATIONS}, got {config.observation!r}"
            )
        if config.decision_interval <= 0:
            raise ConfigError("decision_interval must be > 0")
        if config.warmup < 0 or config.horizon <= config.warmup:
            raise ConfigError("need 0 <= warmup < horizon")
        self.config = config
        self.scenario: ScenarioConfig = resolve_scenario(config.scenario)
        if config.horizon > self.scenario.sim.sim_period:
            self.scenario = replace(
                self.scenario, sim=replace(self.scenario.sim, sim_period=config.horizon)
            )
        all_agents = sorted(self.scenario.intersections)
        if config.agents is None:
            self.agents = all_agents
        else:
            unknown = [a for a in config.agents if a not in self.scenario.intersections]
            if unknown:
                raise ConfigError(f"unknown agents: {unknown}")
            self.agents = sorted(config.agents)
        self._lane_keys: Dict[str, List[Tuple[str, int]]] = {
            iid: approach_lanes(self.scenario, iid) for iid in self.agents
        }
        self._caps: Dict[str, List[int]] = {
            iid: [lane_capacity(self.scenario.links[l].length) for l, _ in keys]
            for iid, keys in self._lane_keys.items()
        }
        self.sim: Optional[SimState] = None
        self._prev: Dict[str, List[float]] = {}
        self._active: List[str] = []
        self._truncated = False

    # -- spaces -----------------------------------------------------------------

    def observation_size(self, iid: str) -> int:
        phases = len(self.scenario.programs[iid])
        lanes = len(self._lane_keys[iid])
        return phases + 1 + 2 * lanes + 1

    @property
    def observation_space(self):
        if self.config.observation == "global":
            size = sum(self.observation_size(a) for a in self.agents)
            return {"type": "box", "shape": (size,), "low": 0.0, "high": 1.0}
        spaces = {
            a: {"type": "box", "shape": (self.observation_size(a),), "low": 0.0, "high": 1.0}
            for a in self.agents
        }
        return spaces[self.agents[0]] if len(self.agents) == 1 else spaces

    def action_size(self, iid: str) -> int:
        if self.config.scheme == "choose":
            return len(self.scenario.programs[iid])
        if self.config.scheme == "switch":
            return 2
        return 1

    @property
    def action_space(self):
        if self.config.scheme == "duration":
            space = {"type": "box", "shape": (1,), "low": 0.0, "high": 1.0}
            return space if len(self.agents) == 1 else {a: dict(space) for a in self.agents}
        spaces = {a: {"type": "discrete", "n": self.action_size(a)} for a in self.agents}
        return spaces[self.agents[0]] if len(self.agents) == 1 else spaces

    # -- episode control -----------------------------------------------------------

    def reset(self, seed: Optional[int] = None):
        """Run the warm-up under default control, return the first observation."""
        sim_seed = self.config.seed if seed is None else int(seed)
        self.sim = SimState(self.scenario, seed=sim_seed, record_events=self.config.record_events)
        self._truncated = False
        self._lanes = {
            iid: [self.sim.lane_map[k] for k in keys] for iid, keys in self._lane_keys.items()
        }
        self._entries = {
            iid: [
                self.sim.entry_map[l]
                for l in sorted({k[0] for k in keys})
                if l in self.sim.entry_map
            ]
            for iid, keys in self._lane_keys.items()
        }
        warm_steps = round(self.config.warmup * self.sim.res)
        for _ in range(warm_steps):
            self.sim.advance_step()
        if self.config.scheme == "duration":
            self._active = self._advance_to_onset()
            if not self._active:
                self._active = list(self.agents)
        else:
            self._active = list(self.agents)
        for iid in self.agents:
            self._prev[iid] = self._integrals(iid)
        obs = self._observe()
        return obs, self._info()

    def step(self, actions):
        """Apply actions for the active agents and advance to the next decision."""
        if self.sim is None:
            raise ConfigError("reset() must be called before step()")
        if self._truncated:
            raise HorizonExceeded("episode already truncated")
        acts = self._normalize_actions(actions)
        scheme = self.config.scheme
        for iid in self._active:
            self._apply(iid, acts[iid])
        if scheme == "duration":
            self._active = self._advance_to_onset()
            if self._truncated and not self._active:
                self._active = list(self.agents)
        else:
            block = round(self.config.decision_interval * self.sim.res)
            remaining = round(self.config.horizon * self.sim.res) - self.sim.step_count
            for _ in range(min(block, remaining)):
                self.sim.advance_step()
            if self.sim.clock >= self.config.horizon - 1e-9:
                self._truncated = True
        rewards = self._rewards()
        obs = self._observe()
        return obs, rewards, False, self._truncated, self._info()

    # -- internals -------------------------------------------------------------------

    def _normalize_actions(self, actions) -> Dict[str, object]:
        if isinstance(actions, dict):
            acts = actions
        elif len(self._active) == 1:
            acts = {self._active[0]: actions}
        else:
            raise MissingAgentAction(
                f"need a dict of actions for agents {self._active}"
            )
        missing = [a for a in self._active if a not in acts]
        if missing:
            raise MissingAgentAction(f"no action for {missing}")
        return acts

    def _apply(self, iid: str, action) -> None:
        ctrl = self.sim.controllers[iid]
        scheme = self.config.scheme
        if scheme == "choose":
            a = self._as_int(iid, action, len(self.scenario.programs[iid]))
            ctrl.set_next_phase(a)
        elif scheme == "switch":
            a = self._as_int(iid, action, 2)
            if a == 0:
                ctrl.set_next_phase(ctrl.current_phase, duration=self.config.decision_interval)
            else:
                nxt = (ctrl.current_phase + 1) % len(self.scenario.programs[iid])
                ctrl.set_next_phase(nxt)
        else:
            a = self._as_unit_float(iid, action)
            t = self.scenario.timing
            dur = t.min_green + a * (t.max_green - t.min_green)
            # exact commit at the onset; the request channel would add a step
            ctrl.committed = min(max(round(dur * ctrl.res), ctrl.min_steps), ctrl.max_steps)

    def _as_int(self, iid: str, action, n: int) -> int:
        try:
            a = int(action)
        except (TypeError, ValueError):
            raise OutOfSpaceAction(f"{iid}: action {action!r} is not an integer")
        if isinstance(action, float) and action != a:
            raise OutOfSpaceAction(f"{iid}: action {action!r} is not an integer")
        if not (0 <= a < n):
            raise OutOfSpaceAction(f"{iid}: action {a} outside [0, {n})")
        return a

    def _as_unit_float(self, iid: str, action) -> float:
        if isinstance(action, (list, tuple, np.ndarray)):
            if len(action) != 1:
                raise OutOfSpaceAction(f"{iid}: duration action must be a single value")
            action = action[0]
        try:
            a = float(action)
        except (TypeError, ValueError):
            raise OutOfSpaceAction(f"{iid}: action {action!r} is not a number")
        if math.isnan(a) or not (0.0 <= a <= 1.0):
            raise OutOfSpaceAction(f"{iid}: action {a} outside [0, 1]")
        return a

    def _advance_to_onset(self) -> List[str]:
        """Step until an agent's green begins; empty list means truncation."""
        horizon_steps = round(self.config.horizon * self.sim.res)
        while self.sim.step_count < horizon_steps:
            self.sim.advance_step()
            active = [
                iid
                for iid in self.agents
                if self.sim.controllers[iid].stage is Stage.GREEN
                and self.sim.controllers[iid].ge == 0
            ]
            if active:
                if self.sim.step_count >= horizon_steps:
                    self._truncated = True
                return active
        self._truncated = True
        return []

    def _integrals(self, iid: str) -> List[float]:
        lanes = self._lanes[iid]
        entries = self._entries[iid]
        return [
            sum(l.wait_int for l in lanes),
            sum(e.bwait for e in entries),
            float(self.sim.crossings[iid]),
            sum(l.speed_int for l in lanes),
            sum(l.veh_int for l in lanes),
            self.sim.tot_delay,
            self.sim.tot_tt,
        ]

    def _rewards(self):
        w = self.config.weights
        out: Dict[str, float] = {}
        for iid in self._active:
            prev = self._prev[iid]
            cur = self._integrals(iid)
            d_vt = cur[4] - prev[4]
            interval = IntervalMetrics(
                itwt=cur[0] - prev[0],
                btwt=cur[1] - prev[1],
                throughput=cur[2] - prev[2],
                speed=(cur[3] - prev[3]) / d_vt if d_vt > 0.0 else 0.0,
                delay=cur[5] - prev[5],
                travel_time=cur[6] - prev[6],
            )
            out[iid] = default_reward(interval, w)
            self._prev[iid] = cur
        if len(self.agents) == 1:
            return out[self.agents[0]]
        return out

    def _agent_obs(self, iid: str) -> np.ndarray:
        ctrl = self.sim.controllers[iid]
        phases = len(self.scenario.programs[iid])
        lanes = self._lanes[iid]
        caps = self._caps[iid]
        n = len(lanes)
        vec = np.zeros(phases + 2 * n + 2)
        vec[ctrl.current_phase] = 1.0
        if ctrl.stage is Stage.GREEN and ctrl.ge >= ctrl.min_steps:
            vec[phases] = 1.0
        base = phases + 1
        for j, lane in enumerate(lanes):
            cap = caps[j]
            count = len(lane.vehicles)
            queued = 0
            for veh in lane.vehicles:
                if veh.speed < QUEUE_SPEED:
                    queued += 1
            vec[base + j] = min(count / cap, 1.0)
            vec[base + n + j] = min(queued / cap, 1.0)
        vec[base + 2 * n] = min(
            ctrl.since_green_onset / self.scenario.timing.max_green, 1.0
        )
        return vec

    def _observe(self):
        if self.config.observation == "global":
            return np.concatenate([self._agent_obs(a) for a in self.agents])
        if len(self.agents) == 1:
            return self._agent_obs(self.agents[0])
        return {a: self._agent_obs(a) for a in self._active}

    def _info(self) -> dict:
        return {
            "clock": self.sim.clock,
            "active": list(self._active),
            "agents": list(self.agents),
        }

    def metrics(self):
        from .engine import metrics_snapshot

        return metrics_snapshot(self.sim)

    def close(self) -> None:
        self.sim = None

"""Signal control agents: fixed-time plans, longest-queue heuristic, tabular Q.

The plan runner realizes a fixed-time plan exactly, to the simulation step:
each green's length is decided at its onset, and the next plan item is
requested one step before the running green's committed end, which makes the
transition land on the committed step itself.  Offsets shift a plan by
stretching the first green, so from the second cycle on every intersection
displays its pattern at (clock - offset) mod cycle.
"""
import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .engine import SimState, metrics_snapshot
from .errors import PlanMismatch
from .rlenv import EnvConfig, RewardWeights, TrafficEnv
from .scenario import ScenarioConfig, Timing, approach_lanes, resolve_scenario
from .signals import Stage


@dataclass(frozen=True)
class FixedTimePlan:
    """Cyclic list of (phase_index, green_seconds) plus a start offset."""

    items: Tuple[Tuple[int, float], ...]
    offset: float = 0.0

    def cycle(self, timing: Timing) -> float:
        transition = timing.yellow_time + timing.allred_time
        return sum(g for _, g in self.items) + transition * len(self.items)


def validate_plan(plan: FixedTimePlan, program: list, timing: Timing) -> None:
    if not plan.items:
        raise PlanMismatch("plan has no items")
    for phase, green in plan.items:
        if not (0 <= phase < len(program)):
            raise PlanMismatch(f"phase index {phase} outside the program")
        if green < timing.min_green or green > timing.max_green:
            raise PlanMismatch(
                f"green {green} outside [{timing.min_green}, {timing.max_green}]"
            )
    cycle = plan.cycle(timing)
    if plan.offset < 0 or plan.offset >= cycle:
        raise PlanMismatch(f"offset {plan.offset} outside [0, {cycle})")


def fixed_time_action(plan: FixedTimePlan, clock: float, timing: Timing) -> int:
    """Phase index the plan wants displayed at this clock (steady state).

    During a transition window the index of the phase being opened is
    returned.  The first cycle of a run realizes offsets by stretching the
    initial green, so this function and the runner agree from the second
    cycle on.
    """
    transition = timing.yellow_time + timing.allred_time
    cycle = plan.cycle(timing)
    pos = (clock - plan.offset) % cycle
    for i, (phase, green) in enumerate(plan.items):
        if pos < green:
            return phase
        pos -= green
        if pos < transition:
            return plan.items[(i + 1) % len(plan.items)][0]
        pos -= transition
    return plan.items[0][0]


class FixedTimeRunner:
    """Drives controllers along fixed-time plans; resumable between calls."""

    def __init__(self, sim: SimState, plans: Dict[str, FixedTimePlan]):
        timing = sim.cfg.timing
        self.sim = sim
        self._runners = {}
        for iid, plan in plans.items():
            if iid not in sim.controllers:
                raise PlanMismatch(f"no intersection {iid!r}")
            ctrl = sim.controllers[iid]
            validate_plan(plan, sim.cfg.programs[iid], timing)
            if sim.step_count != 0 or ctrl.stage is not Stage.GREEN or ctrl.ge != 0:
                raise PlanMismatch("plans must take over at the start of a run")
            first_phase, first_green = plan.items[0]
            # take over the initial state: phase of item 0, green stretched by offset
            ctrl.phase = first_phase
            ctrl.signal_string = ctrl.strings[first_phase]
            ctrl.committed = min(
                max(round((plan.offset + first_green) * ctrl.res), ctrl.min_steps),
                ctrl.max_steps,
            )
            if first_phase != 0:
                sim.ctrl_log.append((0.0, iid, ctrl.stage.value, ctrl.signal_string))
            self._runners[iid] = [ctrl, plan.items, 0]

    def run_until(self, clock: float) -> None:
        sim = self.sim
        target_steps = min(round(clock * sim.res), sim.period_steps)
        while sim.step_count < target_steps:
            sim.advance_step()
            for state in self._runners.values():
                ctrl, items, ptr = state
                if ctrl.stage is Stage.GREEN and ctrl.ge == ctrl.committed - 1:
                    nxt = items[(ptr + 1) % len(items)]
                    ctrl.set_next_phase(nxt[0], duration=nxt[1])
                    state[2] = ptr + 1


def run_fixed_time(
    sim: SimState, plans: Dict[str, FixedTimePlan], until: float
) -> None:
    """Drive controllers along fixed-time plans until the given clock."""
    FixedTimeRunner(sim, plans).run_until(until)


class GreedyLongestQueue:
    """Request the phase whose green movements face the most queued vehicles.

    Ties resolve to the lowest phase index, so the agent is deterministic.
    """

    def __init__(self, scenario: ScenarioConfig, iid: str):
        self.iid = iid
        program = scenario.programs[iid]
        movements = scenario.intersections[iid].movements
        self.phase_lanes: List[List[Tuple[str, int]]] = []
        for phase in program:
            keys = []
            for idx, m in enumerate(movements):
                if phase.signal_string[idx] == "G":
                    key = (m.approach_link, m.lane_index)
                    if key not in keys:
                        keys.append(key)
            self.phase_lanes.append(keys)

    def act(self, sim: SimState) -> int:
        from .engine import QUEUE_SPEED

        best = 0
        best_score = -1
        for i, keys in enumerate(self.phase_lanes):
            score = 0
            for key in keys:
                for veh in sim.lane_map[key].vehicles:
                    if veh.speed < QUEUE_SPEED:
                        score += 1
            if score > best_score:
                best = i
                best_score = score
        return best


# -- tabular Q-learning -------------------------------------------------------------


def _window_snapshot(sim: SimState) -> Tuple[float, float, int]:
    return (sim.tot_delay, sim.tot_iwt, sim.arrived)


def _window_means(sim: SimState, snap: Tuple[float, float, int]) -> Tuple[float, float]:
    """Network delay and internal wait accrued since the snapshot, per trip served.

    The numerator counts every vehicle in the network, finished or not, so
    unserved backlog is not hidden; the denominator is trips completed in the
    window.  Warm-up traffic before the snapshot is excluded.
    """
    n = sim.arrived - snap[2]
    if n == 0:
        return 0.0, 0.0
    return (sim.tot_delay - snap[0]) / n, (sim.tot_iwt - snap[1]) / n


def fixed_time_mean_delay(
    scenario: str, seed: int, warmup: float = 600.0, horizon: float = 3600.0
) -> float:
    """Default-program mean per-vehicle delay over [warmup, horizon)."""
    cfg = resolve_scenario(scenario)
    sim = SimState(cfg, seed=seed)
    for _ in range(round(warmup * sim.res)):
        sim.advance_step()
    snap = _window_snapshot(sim)
    target = min(round(horizon * sim.res), sim.period_steps)
    while sim.step_count < target:
        sim.advance_step()
    return _window_means(sim, snap)[0]


def queue_bin(q: int) -> int:
    """0, light, medium, heavy."""
    if q == 0:
        return 0
    if q <= 3:
        return 1
    if q <= 8:
        return 2
    return 3


def discretize(sim: SimState, iid: str, lane_keys: List[Tuple[str, int]]) -> tuple:
    """State key: current phase index plus one queue bin per approach lane."""
    from .engine import QUEUE_SPEED

    parts = [sim.controllers[iid].current_phase]
    for key in lane_keys:
        q = 0
        for veh in sim.lane_map[key].vehicles:
            if veh.speed < QUEUE_SPEED:
                q += 1
        parts.append(queue_bin(q))
    return tuple(parts)


class QTable:
    """Dict-backed action values; unseen states act like fixed-time cycling."""

    def __init__(self, n_actions: int, alpha: float = 0.1, gamma: float = 0.95):
        self.n_actions = n_actions
        self.alpha = alpha
        self.gamma = gamma
        self.q: Dict[tuple, np.ndarray] = {}

    def values(self, state: tuple) -> np.ndarray:
        v = self.q.get(state)
        if v is None:
            v = np.zeros(self.n_actions)
            self.q[state] = v
        return v

    def act(self, state: tuple) -> int:
        """Greedy action; an unseen state advances the phase cyclically."""
        v = self.q.get(state)
        if v is None:
            return (state[0] + 1) % self.n_actions
        return int(np.argmax(v))

    def act_eps(self, state: tuple, eps: float, rng: np.random.Generator) -> int:
        if rng.random() < eps:
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.values(state)))

    def update(self, s: tuple, a: int, r: float, s2: tuple) -> None:
        v = self.values(s)
        v[a] += self.alpha * (r + self.gamma * float(np.max(self.values(s2))) - v[a])

    def to_json(self) -> str:
        data = {
            "n_actions": self.n_actions,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "q": {",".join(map(str, k)): list(v) for k, v in self.q.items()},
        }
        return json.dumps(data)

    @classmethod
    def from_json(cls, text: str) -> "QTable":
        data = json.loads(text)
        qt = cls(data["n_actions"], data["alpha"], data["gamma"])
        for key, vals in data["q"].items():
            state = tuple(int(x) for x in key.split(","))
            qt.q[state] = np.array(vals)
        return qt

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "QTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def q_train(
    scenario: str = "single",
    episodes: int = 40,
    base_seed: int = 1000,
    alpha: float = 0.1,
    gamma: float = 0.95,
    eps_start: float = 1.0,
    eps_end: float = 0.05,
    decay_frac: float = 0.8,
    warmup: float = 600.0,
    horizon: float = 3600.0,
    weights: Optional[RewardWeights] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> Tuple[QTable, List[dict]]:
    """Train a keep-or-advance tabular controller on a one-intersection scenario."""
    cfg = EnvConfig(
        scenario=scenario,
        scheme="switch",
        warmup=warmup,
        horizon=horizon,
        weights=weights if weights is not None else RewardWeights(),
    )
    env = TrafficEnv(cfg)
    if len(env.agents) != 1:
        raise PlanMismatch("q_train controls exactly one intersection")
    iid = env.agents[0]
    lane_keys = approach_lanes(env.scenario, iid)
    qt = QTable(env.action_size(iid), alpha=alpha, gamma=gamma)
    rng = np.random.default_rng(base_seed)
    log: List[dict] = []
    decay_eps = max(1, int(episodes * decay_frac))
    for ep in range(episodes):
        frac = min(ep / decay_eps, 1.0)
        eps = eps_start + (eps_end - eps_start) * frac
        env.reset(seed=base_seed + ep)
        warm = _window_snapshot(env.sim)
        s = discretize(env.sim, iid, lane_keys)
        ret = 0.0
        truncated = False
        while not truncated:
            a = qt.act_eps(s, eps, rng)
            _, r, _, truncated, _ = env.step(a)
            s2 = discretize(env.sim, iid, lane_keys)
            qt.update(s, a, r, s2)
            ret += r
            s = s2
        m = env.metrics()
        mean_delay, mean_waiting = _window_means(env.sim, warm)
        entry = {
            "episode": ep,
            "epsilon": round(eps, 4),
            "return": ret,
            "delay": m.total_delay,
            "mean_delay": mean_delay,
            "mean_waiting": mean_waiting,
            "arrived": m.total_arrived,
            "states": len(qt.q),
        }
        log.append(entry)
        if progress is not None:
            progress(entry)
    return qt, log


def q_policy(qt: QTable, iid: str, lane_keys: List[Tuple[str, int]]):
    """Greedy policy callable for evaluate_policy."""

    def policy(env: TrafficEnv, obs) -> int:
        return qt.act(discretize(env.sim, iid, lane_keys))

    return policy


def greedy_policy(scenario: ScenarioConfig, iid: str):
    agent = GreedyLongestQueue(scenario, iid)

    def policy(env: TrafficEnv, obs) -> int:
        return agent.act(env.sim)

    return policy


def evaluate_policy(
    policy: Callable,
    scenario: str = "single",
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5),
    warmup: float = 600.0,
    horizon: float = 3600.0,
    scheme: str = "choose",
):
    """Roll the policy over each seed; returns the final metrics snapshots."""
    cfg = EnvConfig(scenario=scenario, scheme=scheme, warmup=warmup, horizon=horizon)
    env = TrafficEnv(cfg)
    out = []
    for seed in seeds:
        obs, _ = env.reset(seed=seed)
        truncated = False
        while not truncated:
            obs, _, _, truncated, _ = env.step(policy(env, obs))
        out.append(env.metrics())
    return out


def fixed_time_rollout(scenario: str, seed: int, horizon: float = 3600.0):
    """Plain default-program run, the baseline every agent is held against."""
    cfg = resolve_scenario(scenario)
    sim = SimState(cfg, seed=seed)
    steps = min(round(horizon * sim.res), sim.period_steps)
    for _ in range(steps):
        sim.advance_step()
    return metrics_snapshot(sim)

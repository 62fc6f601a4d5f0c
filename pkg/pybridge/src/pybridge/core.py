"""Bridged environments over tsclab's decision-step env.

Everything is pass-through: observations, rewards and flags come straight
from the native environment, untouched except for container shape.  The
bridge adds handle hygiene only: a closed handle fails cleanly, and a
handle binds to the first thread that drives it.
"""
import json
import os
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from tsclab.rlenv import EnvConfig, TrafficEnv, loads_env_config


class BridgeError(Exception):
    """Base class for bridge-side failures."""


class ClosedHandle(BridgeError):
    """Operation on an environment after close()."""


class ForeignThread(BridgeError):
    """Handle driven from a second thread."""


class ConfigMismatch(BridgeError):
    """Config shape does not fit the requested protocol."""


@dataclass(frozen=True)
class Box:
    """Bounded float vector space descriptor."""

    low: float
    high: float
    shape: Tuple[int, ...]


@dataclass(frozen=True)
class Discrete:
    """Finite integer action space descriptor."""

    n: int


def _space(desc: dict):
    if desc["type"] == "discrete":
        return Discrete(n=desc["n"])
    return Box(low=desc["low"], high=desc["high"], shape=tuple(desc["shape"]))


def load_config(path: str) -> EnvConfig:
    """Build an EnvConfig from a path: env-config JSON, a .scn file, or a preset name.

    A JSON document with a top-level "network" key is a scenario file and
    gets default environment settings; any other JSON object is parsed as
    an env config.  A non-file argument is passed along as a scenario name.
    """
    if not os.path.isfile(path):
        return EnvConfig(scenario=path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise BridgeError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BridgeError(f"config {path} is not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "network" in doc:
        return EnvConfig(scenario=path)
    return loads_env_config(text)


class _Handle:
    """Shared close/thread discipline for both protocol shapes."""

    _env: Optional[TrafficEnv]

    def _guard(self) -> TrafficEnv:
        if self._env is None:
            raise ClosedHandle("environment is closed")
        me = threading.get_ident()
        if self._thread is None:
            self._thread = me
        elif self._thread != me:
            raise ForeignThread("handle already belongs to another thread")
        return self._env

    def close(self) -> None:
        """Idempotent; the handle is unusable afterwards."""
        if self._env is not None:
            self._env.close()
            self._env = None


class BridgedEnv(_Handle):
    """Single-agent protocol shape: flat observations, scalar rewards."""

    def __init__(self, config: EnvConfig):
        env = TrafficEnv(config)
        if len(env.agents) != 1:
            raise ConfigMismatch(
                f"config controls {len(env.agents)} agents; use parallel_make"
            )
        self._env = env
        self._thread: Optional[int] = None
        self.observation_space = _space(env.observation_space)
        self.action_space = _space(env.action_space)

    def reset(self, seed: Optional[int] = None):
        env = self._guard()
        obs, info = env.reset(seed=seed)
        return np.ascontiguousarray(obs), info

    def step(self, action):
        env = self._guard()
        obs, reward, terminated, truncated, info = env.step(action)
        return np.ascontiguousarray(obs), reward, terminated, truncated, info


class ParallelBridgedEnv(_Handle):
    """Parallel multi-agent protocol shape: dicts keyed by agent id.

    `agents` empties once the episode truncates, per the parallel
    convention; reset() restores it.
    """

    def __init__(self, config: EnvConfig):
        if config.observation == "global":
            raise ConfigMismatch("parallel protocol needs per-agent observations")
        env = TrafficEnv(config)
        self._env = env
        self._thread: Optional[int] = None
        self.possible_agents: List[str] = list(env.agents)
        self.agents: List[str] = list(env.agents)
        if len(env.agents) == 1:
            self._obs_spaces = {env.agents[0]: _space(env.observation_space)}
            self._act_spaces = {env.agents[0]: _space(env.action_space)}
        else:
            self._obs_spaces = {a: _space(d) for a, d in env.observation_space.items()}
            self._act_spaces = {a: _space(d) for a, d in env.action_space.items()}

    def observation_space(self, agent: str):
        return self._obs_spaces[agent]

    def action_space(self, agent: str):
        return self._act_spaces[agent]

    def _obs_map(self, obs) -> Dict[str, np.ndarray]:
        if isinstance(obs, dict):
            return {a: np.ascontiguousarray(v) for a, v in obs.items()}
        return {self.possible_agents[0]: np.ascontiguousarray(obs)}

    def reset(self, seed: Optional[int] = None):
        env = self._guard()
        obs, info = env.reset(seed=seed)
        self.agents = list(env.agents)
        return self._obs_map(obs), {a: dict(info) for a in self.agents}

    def step(self, actions: Dict[str, object]):
        env = self._guard()
        obs, rewards, _, truncated, info = env.step(actions)
        rmap = dict(rewards) if isinstance(rewards, dict) else {self.agents[0]: rewards}
        observations = self._obs_map(obs)
        terminations = {a: False for a in self.agents}
        truncations = {a: bool(truncated) for a in self.agents}
        infos = {a: dict(info) for a in self.agents}
        if truncated:
            self.agents = []
        return observations, rmap, terminations, truncations, infos


def make(config_path: str) -> BridgedEnv:
    """Single-agent environment from a config path; one agent required."""
    return BridgedEnv(load_config(config_path))


def parallel_make(config_path: str) -> ParallelBridgedEnv:
    """Parallel multi-agent environment from the same config formats."""
    return ParallelBridgedEnv(load_config(config_path))

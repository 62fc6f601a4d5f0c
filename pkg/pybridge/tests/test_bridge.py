"""Bridge tests: space descriptors, pass-through exactness, handle hygiene."""
import json
import threading
from pathlib import Path

import numpy as np
import pytest

from pybridge import (
    Box,
    ClosedHandle,
    ConfigMismatch,
    Discrete,
    ForeignThread,
    load_config,
    make,
    parallel_make,
)
from tsclab.errors import ConfigError, MissingAgentAction, OutOfSpaceAction
from tsclab.rlenv import EnvConfig, TrafficEnv


def _verdict(ok: bool, name: str, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {name} ({detail})")


def _write(tmp_path, name: str, doc: dict) -> str:
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# -- config loading -----------------------------------------------------------------


def test_load_config_accepts_all_three_forms(tmp_path):
    cfg = load_config("single")  # preset name, not a file
    assert cfg.scenario == "single"

    env_path = _write(tmp_path, "env.json", {"scenario": "single", "warmup": 60.0, "horizon": 300.0})
    cfg = load_config(env_path)
    assert (cfg.warmup, cfg.horizon) == (60.0, 300.0)

    scn_path = Path(__file__).resolve().parents[2] / "presets" / "single.scn"
    scn = load_config(str(scn_path))  # scenario document, env defaults
    assert scn.scenario.endswith("single.scn")
    assert scn.warmup == 600.0


def test_load_config_rejects_bad_input(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(Exception) as exc:
        load_config(str(bad))
    assert "not valid JSON" in str(exc.value)
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "unknown.json", {"scenario": "single", "bogus": 1}))


# -- space descriptors ----------------------------------------------------------------


def test_space_descriptors_match_native_layouts():
    env = make("single")
    penv = parallel_make("arterial3")
    single_ok = env.observation_space == Box(0.0, 1.0, (22,)) and env.action_space == Discrete(4)
    arterial_ok = all(
        penv.observation_space(a) == Box(0.0, 1.0, (12,)) and penv.action_space(a) == Discrete(2)
        for a in penv.possible_agents
    ) and penv.possible_agents == ["I1", "I2", "I3"]
    _verdict(
        single_ok and arterial_ok,
        "bridge space descriptors",
        "single obs 22 / 4 actions, arterial3 obs 12 per agent / 2 actions",
    )
    assert single_ok
    assert arterial_ok
    env.close()
    penv.close()


def test_make_refuses_multi_agent_config():
    with pytest.raises(ConfigMismatch):
        make("arterial3")


def test_parallel_refuses_global_observation(tmp_path):
    path = _write(tmp_path, "env.json", {"scenario": "arterial3", "observation": "global"})
    with pytest.raises(ConfigMismatch):
        parallel_make(path)


# -- reset/step pass-through ------------------------------------------------------------


def test_reset_returns_contiguous_array_and_repeats(tmp_path):
    path = _write(tmp_path, "env.json", {"scenario": "single", "warmup": 60.0, "horizon": 300.0})
    env = make(path)
    obs1, info = env.reset(seed=5)
    obs2, _ = env.reset(seed=5)
    assert isinstance(obs1, np.ndarray) and obs1.flags["C_CONTIGUOUS"]
    assert obs1.shape == (22,)
    assert np.array_equal(obs1, obs2)
    assert info["agents"] == ["I1"]
    env.close()


def test_differential_scripted_episode_matches_native(tmp_path):
    # 50 decisions at 5 s each fit inside the horizon with warmup to spare
    doc = {"scenario": "single", "scheme": "choose", "warmup": 30.0, "horizon": 300.0}
    path = _write(tmp_path, "env.json", doc)
    actions = [int(a) for a in np.random.default_rng(2024).integers(0, 4, size=50)]

    env = make(path)
    b_obs, _ = env.reset(seed=9)
    bridge_obs = [b_obs]
    bridge_rewards = []
    for a in actions:
        b_obs, r, terminated, truncated, _ = env.step(a)
        bridge_obs.append(b_obs)
        bridge_rewards.append(r)
        assert terminated is False
    env.close()

    native = TrafficEnv(EnvConfig(scenario="single", scheme="choose", warmup=30.0, horizon=300.0))
    n_obs, _ = native.reset(seed=9)
    obs_equal = np.array_equal(bridge_obs[0], n_obs)
    rewards_equal = True
    for i, a in enumerate(actions):
        n_obs, r, _, _, _ = native.step(a)
        obs_equal = obs_equal and np.array_equal(bridge_obs[i + 1], n_obs)
        rewards_equal = rewards_equal and bridge_rewards[i] == r
    _verdict(
        obs_equal and rewards_equal,
        "bridge differential equivalence",
        "50 scripted decisions, observations and rewards exact",
    )
    assert obs_equal
    assert rewards_equal


def test_parallel_differential_matches_native(tmp_path):
    doc = {"scenario": "arterial3", "scheme": "switch", "warmup": 30.0, "horizon": 300.0}
    path = _write(tmp_path, "env.json", doc)
    rng = np.random.default_rng(7)
    script = [{f"I{k}": int(a) for k, a in enumerate(rng.integers(0, 2, size=3), start=1)}
              for _ in range(50)]

    penv = parallel_make(path)
    obs, infos = penv.reset(seed=3)
    assert sorted(obs) == ["I1", "I2", "I3"] and sorted(infos) == ["I1", "I2", "I3"]
    b_obs, b_rew = [obs], []
    for acts in script:
        obs, rewards, terminations, truncations, _ = penv.step(acts)
        b_obs.append(obs)
        b_rew.append(rewards)
        assert set(terminations.values()) == {False}
    penv.close()

    native = TrafficEnv(EnvConfig(scenario="arterial3", scheme="switch", warmup=30.0, horizon=300.0))
    n_obs, _ = native.reset(seed=3)
    assert all(np.array_equal(b_obs[0][a], n_obs[a]) for a in n_obs)
    for i, acts in enumerate(script):
        n_obs, n_rew, _, _, _ = native.step(acts)
        assert all(np.array_equal(b_obs[i + 1][a], n_obs[a]) for a in n_obs)
        assert b_rew[i] == n_rew


def test_truncation_empties_agents(tmp_path):
    path = _write(tmp_path, "env.json", {"scenario": "arterial3", "warmup": 0.0, "horizon": 10.0})
    penv = parallel_make(path)
    penv.reset(seed=1)
    _, _, _, truncations, _ = penv.step({a: 0 for a in penv.agents})
    assert set(truncations.values()) == {False}
    _, _, _, truncations, _ = penv.step({a: 0 for a in penv.agents})
    assert set(truncations.values()) == {True}
    assert penv.agents == []
    penv.reset(seed=1)
    assert penv.agents == ["I1", "I2", "I3"]
    penv.close()


def test_single_agent_truncation_flag(tmp_path):
    path = _write(tmp_path, "env.json", {"scenario": "single", "warmup": 0.0, "horizon": 10.0})
    env = make(path)
    env.reset(seed=1)
    _, _, _, truncated, _ = env.step(0)
    assert truncated is False
    _, _, _, truncated, _ = env.step(0)
    assert truncated is True
    env.close()


# -- error pass-through and handle hygiene --------------------------------------------


def test_native_errors_pass_through(tmp_path):
    path = _write(tmp_path, "env.json", {"scenario": "single", "warmup": 0.0, "horizon": 60.0})
    env = make(path)
    env.reset(seed=1)
    with pytest.raises(OutOfSpaceAction):
        env.step(99)
    env.close()

    penv = parallel_make("arterial3")
    penv.reset(seed=1)
    with pytest.raises(MissingAgentAction):
        penv.step({"I1": 0})
    with pytest.raises(OutOfSpaceAction):
        penv.step({"I1": 0, "I2": 5, "I3": 0})
    penv.close()


def test_closed_handle_fails_cleanly():
    env = make("single")
    env.close()
    env.close()  # idempotent
    with pytest.raises(ClosedHandle):
        env.reset(seed=1)
    with pytest.raises(ClosedHandle):
        env.step(0)
    penv = parallel_make("arterial3")
    penv.close()
    with pytest.raises(ClosedHandle):
        penv.reset(seed=1)


def test_handle_binds_to_first_driving_thread(tmp_path):
    path = _write(tmp_path, "env.json", {"scenario": "single", "warmup": 0.0, "horizon": 60.0})
    env = make(path)
    env.reset(seed=1)
    caught = []

    def drive():
        try:
            env.step(0)
        except ForeignThread as exc:
            caught.append(exc)

    t = threading.Thread(target=drive)
    t.start()
    t.join()
    assert len(caught) == 1
    env.step(0)  # still fine on the owning thread
    env.close()


def test_multiple_handles_are_independent():
    a = make("single")
    b = make("single")
    oa, _ = a.reset(seed=4)
    ob, _ = b.reset(seed=4)
    assert np.array_equal(oa, ob)
    a.close()
    ob2, _, _, _, _ = b.step(1)
    assert ob2.shape == (22,)
    b.close()

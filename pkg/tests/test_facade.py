"""Facade call accounting: batched reads, per-step cache, write statuses."""

import pytest

from tsclab.attrbus import open_inproc
from tsclab.engine import init_sim
from tsclab.errors import BadValue, LengthMismatch
from tsclab.facade import EVAL_TOTAL_PATHS, EVAL_TS_FIELDS, TscFacade
from tsclab.scenario import build_preset


def make_facade(name="single", seed=11):
    sim = init_sim(build_preset(name), seed=seed)
    client = open_inproc(sim)
    return TscFacade(client), client.bus.stats, sim


def test_construction_costs_no_calls():
    facade, stats, _ = make_facade()
    assert stats["total"] == 0
    assert facade.clock == 0.0
    assert facade.step_serial == 0
    assert facade.horizon == 4200.0
    assert facade.programs["I1"]["phases"] == ["EW", "EW_L", "NS", "NS_L"]


def test_step_is_one_call():
    facade, stats, sim = make_facade()
    assert facade.step(10) == 1.0
    assert facade.step_serial == 10
    assert facade.step_one_sec() == 2.0
    assert stats["total"] == 2
    assert sim.clock == 2.0


def test_run_until():
    facade, stats, _ = make_facade()
    assert facade.run_until(3.0) == 3.0
    assert stats["total"] == 1
    assert facade.run_until(3.0) == 3.0  # already there, free
    assert stats["total"] == 1
    with pytest.raises(BadValue):
        facade.run_until(1.0)


def test_phase_read_is_one_cached_batch():
    facade, stats, _ = make_facade()
    first = facade.sc_get_ts_phase("I1")
    assert set(first) == {"phase", "phase_index", "min_green_met", "green_elapsed"}
    assert first["phase"] == "EW"
    assert first["phase_index"] == 0
    assert first["min_green_met"] is False
    assert first["green_elapsed"] == 0.0
    for _ in range(5):
        assert facade.sc_get_ts_phase("I1") == first
    assert stats["total"] == 1  # five repeats served from the step cache
    facade.step(60)
    second = facade.sc_get_ts_phase("I1")
    assert stats["total"] == 3  # step + fresh batch
    assert second["green_elapsed"] == 6.0
    assert second["min_green_met"] is True


def test_eval_ts_fields_frozen():
    facade, stats, _ = make_facade()
    bundle = facade.eval_ts("I1")
    assert tuple(bundle) == EVAL_TS_FIELDS
    assert set(bundle) == {
        "phase", "stage", "green_elapsed", "since_green_onset", "min_green_met", "crossings",
    }
    facade.eval_ts("I1")
    assert stats["total"] == 1


def test_eval_totals_fields_frozen():
    facade, stats, _ = make_facade()
    totals = facade.eval_totals()
    assert EVAL_TOTAL_PATHS == ("net.delay", "net.tt", "net.iwt", "net.bwt", "net.arrived")
    assert set(totals) == {"delay", "tt", "iwt", "bwt", "arrived"}
    facade.eval_totals()
    assert stats["total"] == 1


def test_read_helpers_cache_independently():
    facade, stats, _ = make_facade()
    facade.sc_get_ts_phase("I1")
    facade.eval_ts("I1")
    facade.eval_totals()
    assert stats["total"] == 3
    facade.sc_get_ts_phase("I1")
    facade.eval_ts("I1")
    facade.eval_totals()
    assert stats["total"] == 3


def test_cached_values_track_simulation():
    facade, _, sim = make_facade()
    facade.step(1234)
    bundle = facade.eval_ts("I1")
    ctrl = sim.controllers["I1"]
    assert bundle["green_elapsed"] == ctrl.green_elapsed
    assert bundle["stage"] == ctrl.stage.value
    assert bundle["crossings"] == sim.crossings["I1"]
    totals = facade.eval_totals()
    assert totals["delay"] == sim.tot_delay
    assert totals["arrived"] == sim.arrived


def test_raw_get_is_uncached():
    facade, stats, _ = make_facade()
    facade.get("sim.clock")
    facade.get("sim.clock")
    assert stats["total"] == 2


def test_set_phase_by_index_id_and_string():
    for target in (1, "EW_L", "GRRGRRRRRRRR"):
        facade, stats, sim = make_facade()
        facade.step(60)
        assert facade.sc_set_ts_phase("I1", target) == "accepted"
        assert stats["total"] == 2  # one step call, one write batch
        facade.step(1)
        assert sim.controllers["I1"].current_phase == 1


def test_set_phase_statuses():
    facade, _, _ = make_facade()
    assert facade.sc_set_ts_phase("I1", 2) == "deferred"  # min green unserved
    facade.step(60)
    assert facade.sc_set_ts_phase("I1", 2) == "accepted"
    facade.step(1)  # transition begins
    assert facade.sc_set_ts_phase("I1", 1) == "rejected"
    assert facade.sc_set_ts_phase("I1", 2) == "accepted"  # in-flight target


def test_writes_never_cached():
    facade, stats, _ = make_facade()
    facade.sc_set_ts_phase("I1", 0)
    facade.sc_set_ts_phase("I1", 0)
    assert stats["total"] == 2


def test_set_phase_validation_is_local():
    facade, stats, _ = make_facade()
    with pytest.raises(BadValue):
        facade.sc_set_ts_phase("I1", 9)
    with pytest.raises(BadValue):
        facade.sc_set_ts_phase("nowhere", 0)
    with pytest.raises(LengthMismatch):
        facade.sc_set_ts_phase("I1", "GRR")
    with pytest.raises(BadValue):
        facade.sc_set_ts_phase("I1", "G" * 12)  # matches no phase
    with pytest.raises(BadValue):
        facade.sc_set_ts_phase("I1", 1, duration=20.0)
    assert stats["total"] == 0  # all rejected before any bus traffic

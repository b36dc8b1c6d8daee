from dataclasses import replace

import pytest

from dynrtm.compare import format_report, simulate
from dynrtm.errors import ConfigurationError, FloorInfeasibleError
from dynrtm.governor import ControllerState, GovernorDecision, make_governor
from dynrtm.pareto import LibraryEntry, SubnetLibrary
from dynrtm.scenario import AppSpec, Event, Scenario
from dynrtm.sim import energy_check, run
from dynrtm.soc import CoreModel, SocModel, core_power_pw, exec_time_us
from dynrtm.space import ArchConfig

MS = 1000
S = 1_000_000


class FixedGovernor:
    """Maps every app to ``core`` at subnet 0; op index from ``ops(tick)``."""

    name = "fixed"
    tick_us = 100 * MS
    window = 20
    monitor_period_us = 200 * MS

    def __init__(self, core="c0", ops=lambda tick: 0):
        self.core = core
        self.ops = ops

    def initial_state(self):
        return ControllerState()

    def decide(self, monitors, targets, libraries, soc, state, tick=None):
        mapping = {a.app_id: (self.core, 0) for a in targets.active()}
        return GovernorDecision(mapping, {c.core_id: self.ops(tick) for c in soc.cores}), state


def toy(exec_us=10 * MS, dvfs=((1000, 1000),)):
    core = CoreModel("c0", "gpu", dvfs, 100, 1000, 0)
    entry = LibraryEntry(ArchConfig(((2, 3, 3),), 128), exec_us, 500_000, 1000)
    lib = SubnetLibrary("c0", "gpu", "bb", 10**6, (entry,))
    return SocModel((core,)), {"c0": lib}


def app(app_id="a", period=100 * MS, target=20 * MS, **kw):
    return AppSpec(app_id, period, ((0, target),), initial_core="c0", **kw)


def test_hand_trace_periodic():
    soc, libs = toy()
    sc = Scenario("t", 1 * S, (app(),))
    r = run(sc, soc, libs, FixedGovernor())
    a = r.app("a")
    assert (a.released, a.completed, a.missed) == (10, 10, 0)
    assert a.p50_us == a.p95_us == a.max_us == 10 * MS
    # 100 mW static for 1 s plus 1000 mW dynamic for 10 x 10 ms
    assert r.energy_uj == 100_000 + 100_000
    assert r.energy_pw_us == (100 * 10**9) * S + (1000 * 1000 * 1000**2) * 100 * MS


def test_fifo_wait():
    soc, libs = toy()
    sc = Scenario("t", 1 * S, (app("a", period=500 * MS), app("b", period=500 * MS)))
    r = run(sc, soc, libs, FixedGovernor())
    assert r.app("a").max_us == 10 * MS
    assert r.app("b").max_us == 2 * 10 * MS


def test_deadline_miss():
    soc, libs = toy()
    sc = Scenario("t", 1 * S, (app(target=5 * MS),))
    r = run(sc, soc, libs, FixedGovernor())
    assert r.miss_fraction == 1


def test_empty_scenario_energy(soc, libs):
    sc = Scenario("empty", 3 * S, ())
    for name in ("maxperf", "schedutil", "hierarchical"):
        r = run(sc, soc, libs, make_governor(name))
        assert r.energy_pw_us == sum(c.p_static_mw for c in soc.cores) * 10**9 * 3 * S
        assert r.energy_uj == 600 * 3 * 1000


def test_op_change_waits_for_running_request():
    # op 0 at bootstrap, op 1 from the first tick (t=100 ms) on; the request
    # dispatched at 80 ms keeps op 0 for its whole execution
    soc, libs = toy(exec_us=40 * MS, dvfs=((500, 800), (1000, 1000)))
    sc = Scenario("t", 1 * S, (app(period=80 * MS, target=200 * MS),))
    r = run(sc, soc, libs, FixedGovernor(ops=lambda tick: 0 if tick is None else 1))
    core = soc.core("c0")
    slow = exec_time_us(40 * MS, core, 0)
    assert slow == 80 * MS
    iv = [i for i in r.timeline.intervals if i.busy]
    assert (iv[0].start_us, iv[0].end_us, iv[0].op_index) == (0, 80 * MS, 0)
    assert (iv[1].start_us, iv[1].end_us, iv[1].op_index) == (80 * MS, 160 * MS, 0)
    assert (iv[2].start_us, iv[2].end_us, iv[2].op_index) == (160 * MS, 200 * MS, 1)
    assert energy_check(r, soc, r.timeline)


def test_intervals_tile_the_horizon(dual, soc, libs):
    r = run(dual, soc, libs, make_governor("hierarchical"))
    for core in soc.cores:
        iv = [i for i in r.timeline.intervals if i.core_id == core.core_id]
        assert iv[0].start_us == 0 and iv[-1].end_us == dual.horizon_us
        assert all(a.end_us == b.start_us for a, b in zip(iv, iv[1:]))
        assert sum(i.end_us - i.start_us for i in iv if i.busy) == r.core_busy_us[core.core_id]
    # nothing runs on big0 once it is lost at 6 s
    lost = next(e.at_us for e in dual.events if e.kind == "core-availability")
    assert not any(i.busy and i.core_id == "big0" and i.end_us > lost for i in r.timeline.intervals)


def test_energy_audit_all_governors(single, dual, soc, libs):
    for sc in (single, dual):
        for name in ("maxperf", "schedutil", "hierarchical"):
            r = run(sc, soc, libs, make_governor(name))
            assert energy_check(r, soc, r.timeline)
            exact = sum(core_power_pw(soc.core(i.core_id), i.op_index, i.busy) * (i.end_us - i.start_us)
                        for i in r.timeline.intervals)
            assert exact == r.energy_pw_us


def test_maxperf_single_p95_is_exec_time(single, soc, libs):
    r = run(single, soc, libs, make_governor("maxperf"))
    gpu = soc.core("gpu0")
    assert r.app("vision").p95_us == exec_time_us(libs["gpu0"][2].latency_us, gpu, gpu.top) == 28312
    assert r.switches == 0


def test_determinism(dual, soc, libs):
    a = simulate(dual, soc, libs, make_governor("hierarchical"), seed=3)
    b = simulate(dual, soc, libs, make_governor("hierarchical"), seed=3)
    assert format_report([a]) == format_report([b])
    assert a.timeline == b.timeline


def test_release_jitter_is_seeded():
    soc, libs = toy()
    sc = Scenario("t", 2 * S, (app(),), release_jitter_us=5 * MS)
    r0 = run(sc, soc, libs, FixedGovernor(), seed=0)
    r0b = run(sc, soc, libs, FixedGovernor(), seed=0)
    r1 = run(sc, soc, libs, FixedGovernor(), seed=1)
    starts = lambda r: [i.start_us for i in r.timeline.intervals if i.busy]
    assert starts(r0) == starts(r0b) != starts(r1)


def test_app_start_and_stop():
    soc, libs = toy()
    sc = Scenario("t", 1 * S, (app(active=False),),
                  (Event(500 * MS, "app-start", {"app_id": "a"}),
                   Event(800 * MS, "app-stop", {"app_id": "a"})))
    r = run(sc, soc, libs, FixedGovernor())
    assert r.app("a").released == 3


def test_configuration_errors(soc, libs, single):
    bad = replace(single, apps=(replace(single.apps[0], initial_core="npu0"),))
    with pytest.raises(ConfigurationError):
        run(bad, soc, libs, make_governor("maxperf"))
    lost = replace(single, events=(Event(S, "core-availability",
                                         {"core_id": "gpu0", "available": False}),))
    with pytest.raises(ConfigurationError):
        run(lost, soc, libs, FixedGovernor(core="gpu0"))


def test_floor_infeasible_everywhere_is_configuration_error(soc, libs, single):
    sc = replace(single, apps=(replace(single.apps[0], accuracy_floor_ppm=900_000),))
    for name in ("maxperf", "hierarchical"):
        with pytest.raises(FloorInfeasibleError):
            run(sc, soc, libs, make_governor(name))


def test_unreachable_target_runs_with_misses(soc, libs, single):
    sc = replace(single, apps=(replace(single.apps[0], target_schedule=((0, 1000),)),))
    r = run(sc, soc, libs, make_governor("hierarchical"))
    assert r.miss_fraction == 1


def test_multi_static_charges_reloads(dual, soc, libs):
    shared = run(dual, soc, libs, make_governor("hierarchical"))
    static = run(replace(dual, deployment="multi-static"), soc, libs, make_governor("hierarchical"))
    per_switch_shared = shared.switch_overhead_us / (shared.switches + shared.maps)
    per_switch_static = static.switch_overhead_us / (static.switches + static.maps)
    assert per_switch_shared == 1000
    assert per_switch_static >= 10 * per_switch_shared

from dataclasses import replace

import pytest

from dynrtm.errors import ConfigurationError, FloorInfeasibleError, TargetInfeasibleError
from dynrtm.governor import (
    AppTarget,
    ControllerState,
    ControlParams,
    GovernorDecision,
    HierarchicalGovernor,
    MaxPerfGovernor,
    SchedutilGovernor,
    Targets,
    hierarchical_decide,
    make_governor,
    maxperf_decide,
    schedutil_decide,
    schedutil_op_index,
    select_deploy_subnet,
)
from dynrtm.pareto import LibraryEntry, SubnetLibrary
from dynrtm.sim import run
from dynrtm.soc import AppMonitor, CoreModel, MonitorSnapshot, SocModel
from dynrtm.space import ArchConfig


def lib_of(latencies_ms, core_id="c0", kind="gpu"):
    entries = [LibraryEntry(ArchConfig(((2, 3, 3 + 2 * i),), 128), int(ms * 1000),
                            500_000 + 10_000 * i, 1000) for i, ms in enumerate(latencies_ms)]
    return SubnetLibrary(core_id, kind, "bb", 10**6, entries)


def snapshot(p95=None, app_id="a", util=None):
    apps = {} if p95 is None else {app_id: AppMonitor((p95,), p95, p95)}
    return MonitorSnapshot(0, apps, util or {}, 0.0, 200_000)


def one_core(alpha_ppm=0):
    core = CoreModel("c0", "gpu", ((500, 800), (1000, 900), (1500, 1000), (2000, 1100)), 100,
                     1000, alpha_ppm)
    return SocModel((core,))


def targets_for(*apps, budget=None):
    return Targets({a.app_id: a for a in apps}, budget)


# --- baselines ---------------------------------------------------------------


def test_schedutil_examples(soc):
    big = soc.core("big0")
    assert 1.25 * big.f_max * 0.5 == 1187.5
    assert big.dvfs[schedutil_op_index(big, 0.5)].freq_mhz == 1400
    assert schedutil_op_index(big, 0.0) == 0
    assert schedutil_op_index(big, 1.0) == big.top
    snap = snapshot(util={"big0": 0.5, "little0": 0.0, "gpu0": 1.0})
    d = schedutil_decide(snap, soc, {"a": ("gpu0", 2)})
    assert d.op == {"big0": 2, "little0": 0, "gpu0": 3}
    assert d.mapping == {"a": ("gpu0", 2)}


def test_maxperf_is_constant(soc):
    a = maxperf_decide(soc, {"a": ("gpu0", 1)})
    assert a.op == {c.core_id: c.top for c in soc.cores}
    g = MaxPerfGovernor()
    t = targets_for(AppTarget("a", 33_000, 33_333, initial_core="gpu0", eligible_kinds=("gpu",)))
    libs = {"gpu0": lib_of([5, 9, 14, 30], "gpu0")}
    d1, s1 = g.decide(snapshot(), t, libs, soc, g.initial_state(), None)
    d2, _ = g.decide(snapshot(99_999, util={"gpu0": 0.1}), t, libs, soc, s1, 1)
    assert (d1.mapping, d1.op) == (d2.mapping, d2.op)


def test_maxperf_not_cheaper_than_schedutil(single, soc, libs):
    e_max = run(single, soc, libs, MaxPerfGovernor()).energy_uj
    e_sched = run(single, soc, libs, SchedutilGovernor()).energy_uj
    assert (e_max, e_sched) == (57_323_233, 57_229_616)
    assert e_max >= e_sched


def test_select_deploy_subnet():
    lib = lib_of([5, 9, 14, 30])
    assert select_deploy_subnet(lib, 33_000, margin=0.1) == 2
    with pytest.raises(FloorInfeasibleError):
        select_deploy_subnet(lib, 33_000, accuracy_floor=0.9)
    with pytest.raises(TargetInfeasibleError):
        select_deploy_subnet(lib, 4_000)
    assert issubclass(TargetInfeasibleError, ConfigurationError)


def test_make_governor():
    assert isinstance(make_governor("hierarchical", hysteresis=4), HierarchicalGovernor)
    assert make_governor("schedutil").get_params()["headroom"] == 1.25
    with pytest.raises(ConfigurationError):
        make_governor("ondemand")


# --- hierarchical control law ---------------------------------------------------


def _state(mapping, op, **kw):
    return ControllerState(last=GovernorDecision(mapping, op), **kw)


def test_violation_below_top_raises_op_only():
    soc = one_core()
    lib = {"c0": lib_of([10, 20, 35])}
    app = AppTarget("a", 33_000, 100_000, initial_core="c0")
    # at 1000 MHz the 20 ms entry takes 40 ms
    state = _state({"a": ("c0", 1)}, {"c0": 1})
    d, _ = hierarchical_decide(snapshot(40_000), targets_for(app), lib, soc, state, tick=1)
    assert d.op["c0"] == 2
    assert d.mapping["a"] == ("c0", 1)
    assert d.changes == ()


def test_violation_at_top_with_counter_m_steps_down_one():
    soc = one_core()
    lib = {"c0": lib_of([10, 20, 35])}
    app = AppTarget("a", 33_000, 100_000, initial_core="c0")
    state = _state({"a": ("c0", 2)}, {"c0": 3}, violations={"a": 2})
    d, s = hierarchical_decide(snapshot(36_000), targets_for(app), lib, soc, state, tick=5)
    assert d.op["c0"] == 3
    assert d.mapping["a"] == ("c0", 1)
    (ch,) = d.changes
    assert (ch.reason, ch.op_index, ch.top_index) == ("latency", 3, 3)
    assert s.violations["a"] == 0 and s.slack["a"] == 0
    # one tick short of M: nothing happens
    state = _state({"a": ("c0", 2)}, {"c0": 3}, violations={"a": 1})
    d, s = hierarchical_decide(snapshot(36_000), targets_for(app), lib, soc, state, tick=5)
    assert d.mapping["a"] == ("c0", 2) and s.violations["a"] == 2


def test_downgrade_respects_floor_then_remaps(soc, libs):
    # only index 0 of big0 meets neither target; the app moves to the GPU
    app = AppTarget("a", 12_000, 100_000, eligible_kinds=("gpu", "big-cpu"), initial_core="big0")
    t = targets_for(app)
    state = _state({"a": ("big0", 0)}, {"big0": 3, "little0": 0, "gpu0": 0}, violations={"a": 2})
    d, _ = hierarchical_decide(snapshot(17_239), t, libs, soc, state, tick=5)
    (ch,) = d.changes
    assert ch.reason == "remap" and ch.op_index == ch.top_index
    assert d.mapping["a"] == ("gpu0", 0)

    floored = replace(app, accuracy_floor_ppm=libs["big0"][1].accuracy_ppm)
    state = _state({"a": ("big0", 1)}, {"big0": 3, "little0": 0, "gpu0": 0}, violations={"a": 2})
    d, _ = hierarchical_decide(snapshot(64_474), targets_for(floored), libs, soc, state, tick=5)
    core_id, idx = d.mapping["a"]
    assert libs[core_id][idx].accuracy_ppm >= floored.accuracy_floor_ppm


def test_slack_steps_up_only_at_bottom_op():
    soc = one_core()
    lib = {"c0": lib_of([1, 2, 35])}
    app = AppTarget("a", 33_000, 100_000, initial_core="c0")
    state = _state({"a": ("c0", 0)}, {"c0": 0}, slack={"a": 2})
    d, _ = hierarchical_decide(snapshot(4_000), targets_for(app), lib, soc, state, tick=5)
    assert d.mapping["a"] == ("c0", 1)
    assert d.changes[0].reason == "slack"
    # the 35 ms entry cannot meet the margin anywhere: no step up
    state = _state({"a": ("c0", 1)}, {"c0": 0}, slack={"a": 5})
    d, _ = hierarchical_decide(snapshot(4_000), targets_for(app), lib, soc, state, tick=5)
    assert d.mapping["a"] == ("c0", 1)


def test_power_guard_lowers_highest_power_core_first(soc, libs):
    camera = AppTarget("camera", 33_000, 33_333, priority=2, initial_core="gpu0")
    assistant = AppTarget("assistant", 150_000, 200_000, priority=1, initial_core="big0")
    mapping = {"camera": ("gpu0", 2), "assistant": ("big0", 2)}
    state = _state(mapping, {"big0": 3, "little0": 0, "gpu0": 3})
    free, _ = hierarchical_decide(snapshot(), targets_for(camera, assistant), libs, soc, state)
    assert free.op == {"big0": 3, "little0": 0, "gpu0": 3}
    assert free.predicted_power_mw is None

    d, _ = hierarchical_decide(snapshot(), targets_for(camera, assistant, budget=3_800), libs, soc,
                               state)
    assert d.op == {"big0": 3, "little0": 0, "gpu0": 2}
    assert d.predicted_power_mw <= 3_800
    assert d.mapping == mapping

    d, _ = hierarchical_decide(snapshot(), targets_for(camera, assistant, budget=3_000), libs, soc,
                               state)
    assert d.op["gpu0"] < 3 and d.predicted_power_mw <= 3_000


def test_power_guard_steps_subnets_at_bottom_then_flags(soc, libs):
    camera = AppTarget("camera", 33_000, 33_333, priority=2, initial_core="gpu0")
    assistant = AppTarget("assistant", 150_000, 200_000, priority=1, initial_core="big0")
    mapping = {"camera": ("gpu0", 2), "assistant": ("big0", 2)}
    state = _state(mapping, {"big0": 3, "little0": 0, "gpu0": 3})
    d, _ = hierarchical_decide(snapshot(), targets_for(camera, assistant, budget=1_300), libs, soc,
                               state)
    assert all(v == 0 for v in d.op.values())
    power_changes = [c for c in d.changes if c.reason == "power"]
    assert power_changes and power_changes[0].app_id == "assistant"
    if not d.budget_infeasible:
        assert d.predicted_power_mw <= 1_300
    d, _ = hierarchical_decide(snapshot(), targets_for(camera, assistant, budget=500), libs, soc,
                               state)
    assert d.budget_infeasible
    assert d.mapping == {"camera": ("gpu0", 0), "assistant": ("big0", 0)}


def test_hysteresis_under_stationary_violation():
    soc = one_core()
    lib = {"c0": lib_of([10, 15, 20, 25, 30, 35, 40, 45])}
    app = AppTarget("a", 33_000, 100_000, initial_core="c0")
    t = targets_for(app)
    params = ControlParams()
    state = _state({"a": ("c0", 7)}, {"c0": 3})
    change_ticks = []
    for tick in range(1, 61):
        d, state = hierarchical_decide(snapshot(50_000), t, lib, soc, state, params, tick)
        if d.changes:
            change_ticks.append(tick)
    assert change_ticks == [5, 20, 35, 50]
    assert all(b - a >= params.hysteresis * params.outer_every
               for a, b in zip(change_ticks, change_ticks[1:]))


def test_decide_is_pure(dual, soc, libs):
    t = targets_for(AppTarget("camera", 33_000, 33_333, 2, None, ("gpu",), "gpu0"))
    s0 = ControllerState()
    a = hierarchical_decide(snapshot(30_000, "camera"), t, libs, soc, s0, tick=5)
    b = hierarchical_decide(snapshot(30_000, "camera"), t, libs, soc, s0, tick=5)
    assert a == b
    assert s0 == ControllerState()


def test_kappa_scaling_leaves_schedutil_unchanged(single, dual, soc, libs):
    scaled = replace(soc, cores=tuple(replace(c, kappa=c.kappa * 7) for c in soc.cores))
    for sc in (single, dual):
        a = run(sc, soc, libs, SchedutilGovernor())
        b = run(sc, scaled, libs, SchedutilGovernor())
        assert [(t, d.mapping, d.op) for t, d in a.decisions] == \
               [(t, d.mapping, d.op) for t, d in b.decisions]
        assert b.energy_uj > a.energy_uj


def test_baselines_keep_subnets(dual, soc, libs):
    for g in (SchedutilGovernor(), MaxPerfGovernor()):
        r = run(dual, soc, libs, g)
        assert r.switches == 0
        # the only mapping change is the forced move off the lost core
        assert r.maps == 1

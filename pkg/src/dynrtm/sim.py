"""Deterministic discrete-event simulation of apps, cores, and a governor.

Time is an integer microsecond clock. Events at the same timestamp are
ordered by class (scenario events, governor ticks, request releases,
completions) and then by insertion sequence. Each core is a FIFO single
server; a request's execution time is frozen when it is dispatched, and an
op-point change on a busy core takes effect when the running request (or
switch overhead) finishes, so duration and power always agree. Energy
is integrated exactly in picowatt-microseconds over piecewise-constant
(op point, busy/idle) intervals.
"""

import heapq
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError
from .governor import AppTarget, Targets
from .pareto import switch_time_us
from .scenario import (
    APP_START,
    APP_STOP,
    CORE_AVAILABILITY,
    POWER_BUDGET_CHANGE,
    TARGET_CHANGE,
)
from .soc import MonitorWindow, core_power, core_power_pw, exec_time_us, nearest_rank
from .space import round_half_up

EVENT, TICK, RELEASE, COMPLETE = 0, 1, 2, 3
PW_US_PER_UJ = 10**12


@dataclass
class Request:
    app_id: str
    seq: int
    release_us: int
    deadline_us: int
    start_us: int = None
    finish_us: int = None
    served_core: str = None
    served_subnet: int = None
    accuracy_ppm: int = None


@dataclass(frozen=True)
class Interval:
    core_id: str
    start_us: int
    end_us: int
    op_index: int
    busy: bool


@dataclass(frozen=True)
class TimelineSample:
    t_us: int
    power_mw: int  # mean SoC power over the monitor window
    ops: tuple  # ((core_id, op_index), ...)
    mapping: tuple  # ((app_id, core_id, subnet_index), ...)


@dataclass
class Timeline:
    intervals: list = field(default_factory=list)
    samples: list = field(default_factory=list)


@dataclass(frozen=True)
class AppStats:
    app_id: str
    released: int
    completed: int
    missed: int
    evaluated: int  # completed + unfinished past their deadline
    p50_us: int
    p95_us: int
    max_us: int
    mean_us: int
    mean_accuracy_ppm: int
    switches: int
    maps: int

    @property
    def miss_fraction(self):
        return Fraction(self.missed, self.evaluated) if self.evaluated else Fraction(0)


@dataclass
class SimReport:
    governor: str
    scenario: str
    horizon_us: int
    seed: int
    energy_uj: int
    energy_pw_us: int
    apps: tuple
    core_busy_us: dict
    core_energy_uj: dict
    switches: int
    maps: int
    switch_overhead_us: int
    budget_infeasible_ticks: int
    config: dict = field(default_factory=dict)
    timeline: Timeline = None
    decisions: list = field(default_factory=list)

    def app(self, app_id):
        for a in self.apps:
            if a.app_id == app_id:
                return a
        raise KeyError(app_id)

    @property
    def miss_fraction(self):
        evaluated = sum(a.evaluated for a in self.apps)
        return Fraction(sum(a.missed for a in self.apps), evaluated) if evaluated else Fraction(0)


class _Core:
    def __init__(self, model):
        self.model = model
        self.op = model.top
        self.available = model.available
        self.state = None  # None (idle), "request", "overhead"
        self.current = None
        self.queue = []
        self.pending_overhead = 0
        self.pending_op = None  # applied when the in-flight work finishes
        self.since = 0
        self.busy_us = 0
        self.energy = 0


class _App:
    def __init__(self, spec):
        self.spec = spec
        self.active = spec.active
        self.target_us = spec.target_schedule[0][1]
        self.floor_ppm = spec.accuracy_floor_ppm
        self.core = None
        self.subnet = None
        self.generation = 0
        self.released = 0
        self.latencies = []
        self.acc_sum = 0
        self.late = 0
        self.switches = 0
        self.maps = 0


class Simulation:
    def __init__(self, scenario, soc, libraries, governor, seed=0, record_timeline=True):
        self.scenario = scenario
        self.soc = soc
        self.libraries = libraries
        self.governor = governor
        self.seed = seed
        self.record_timeline = record_timeline
        self._validate()

    def _validate(self):
        ids = set(self.soc.core_ids)
        for lib_core, lib in self.libraries.items():
            if lib_core in ids and self.soc.core(lib_core).kind != lib.core_kind:
                raise ConfigurationError(f"library for {lib_core} is for kind {lib.core_kind!r}, "
                                         f"core is {self.soc.core(lib_core).kind!r}")
        for app in self.scenario.apps:
            if app.initial_core is not None and app.initial_core not in ids:
                raise ConfigurationError(f"app {app.app_id!r} references unknown core "
                                         f"{app.initial_core!r}")
            if not any(c.core_id in self.libraries
                       and (not app.eligible_kinds or c.kind in app.eligible_kinds)
                       for c in self.soc.cores):
                raise ConfigurationError(f"app {app.app_id!r} has no eligible core with a library")
        for i, ev in enumerate(self.scenario.events):
            if ev.kind == CORE_AVAILABILITY and ev.payload["core_id"] not in ids:
                raise ConfigurationError(f"event {i} references unknown core "
                                         f"{ev.payload['core_id']!r}")

    # --- bookkeeping -----------------------------------------------------------

    def _close(self, core, now):
        if now <= core.since:
            return
        busy = core.state is not None
        pw = core_power_pw(core.model, core.op, busy)
        core.energy += pw * (now - core.since)
        if busy:
            core.busy_us += now - core.since
        self.monitors.record_interval(core.model.core_id, core.since, now, busy, pw)
        if self.timeline is not None:
            self.timeline.intervals.append(
                Interval(core.model.core_id, core.since, now, core.op, busy))
        core.since = now

    def _set(self, core, now, state=None, op=None):
        self._close(core, now)
        core.state = state
        if state is None and core.pending_op is not None:
            op, core.pending_op = core.pending_op, None
        if op is not None:
            core.op = op

    def _push(self, t, cls, kind, data=None):
        self._seq += 1
        heapq.heappush(self._heap, (t, cls, self._seq, kind, data))

    def _dispatch(self, core, now):
        if core.state is not None or not core.available:
            return
        if core.pending_overhead:
            duration, core.pending_overhead = core.pending_overhead, 0
            self._set(core, now, "overhead")
            self.switch_overhead_us += duration
            self._push(now + duration, COMPLETE, "overhead-end", core)
            return
        if not core.queue:
            return
        req = core.queue.pop(0)
        app = self.apps[req.app_id]
        entry = self.libraries[core.model.core_id][app.subnet]
        req.start_us = now
        req.served_core = core.model.core_id
        req.served_subnet = app.subnet
        req.accuracy_ppm = entry.accuracy_ppm
        self._set(core, now, "request")
        core.current = req
        self._push(now + exec_time_us(entry.latency_us, core.model, core.op), COMPLETE,
                   "complete", core)

    # --- governor interface ------------------------------------------------------

    def _targets(self):
        apps = {}
        for app_id, app in self.apps.items():
            s = app.spec
            apps[app_id] = AppTarget(app_id, app.target_us, s.period_us, s.priority, app.floor_ppm,
                                     s.eligible_kinds, s.initial_core, app.active)
        return Targets(apps, self.power_budget)

    def _soc_view(self):
        return self.soc.with_availability({c: core.available for c, core in self.cores.items()})

    def _invoke(self, now, tick):
        open_ = [(cid, c.since, c.state is not None, core_power_pw(c.model, c.op, c.state is not None))
                 for cid, c in self.cores.items()]
        snapshot = self.monitors.snapshot(now, open_)
        decision, self.state = self.governor.decide(
            snapshot, self._targets(), self.libraries, self._soc_view(), self.state, tick)
        self._apply(decision, now)
        if decision.budget_infeasible:
            self.budget_infeasible_ticks += 1
        self.decisions.append((now, decision))
        if self.timeline is not None and tick is not None:
            self.timeline.samples.append(TimelineSample(
                now, round(snapshot.soc_power_mw),
                tuple((cid, c.op) for cid, c in self.cores.items()),
                tuple((a, app.core, app.subnet) for a, app in self.apps.items() if app.active)))

    def _apply(self, decision, now):
        mode = self.scenario.deployment
        bandwidth = self.soc.reload_bandwidth_bytes_per_ms
        for app_id, (core_id, idx) in sorted(decision.mapping.items()):
            app = self.apps[app_id]
            if not app.active:
                continue
            core = self.cores.get(core_id)
            if core is None or not core.available:
                raise ConfigurationError(f"governor mapped {app_id!r} to unavailable core "
                                         f"{core_id!r}")
            lib = self.libraries[core_id]
            if not 0 <= idx < len(lib):
                raise ConfigurationError(f"subnet index {idx} out of range for {core_id}")
            if app.core is None:
                app.core, app.subnet = core_id, idx
                continue
            if (app.core, app.subnet) == (core_id, idx):
                continue
            old_entry = self.libraries[app.core][app.subnet]
            cost = switch_time_us(old_entry, lib[idx], mode, bandwidth)
            if app.core != core_id:
                old = self.cores[app.core]
                moved = [r for r in old.queue if r.app_id == app_id]
                old.queue = [r for r in old.queue if r.app_id != app_id]
                core.queue = sorted(core.queue + moved, key=lambda r: (r.release_us, r.seq))
                app.maps += 1
            else:
                app.switches += 1
            core.pending_overhead += cost
            app.core, app.subnet = core_id, idx
            self.monitors.clear(app_id)
        for core_id, op in decision.op.items():
            core = self.cores[core_id]
            if core.state is not None:
                # work in flight keeps the op point it was dispatched at
                core.pending_op = op if op != core.op else None
            elif op != core.op:
                self._set(core, now, None, op)
        for core in self.cores.values():
            self._dispatch(core, now)

    # --- main loop ---------------------------------------------------------------

    def run(self):
        sc = self.scenario
        horizon = sc.horizon_us
        self._heap, self._seq = [], 0
        self.rng = np.random.default_rng(self.seed)
        self.cores = {c.core_id: _Core(c) for c in self.soc.cores}
        self.apps = {a.app_id: _App(a) for a in sc.apps}
        self.power_budget = self.soc.power_budget_mw
        self.monitors = MonitorWindow(window=self.governor.window,
                                      period_us=self.governor.monitor_period_us)
        for app_id in self.apps:
            self.monitors.add_app(app_id)
        self.timeline = Timeline() if self.record_timeline else None
        self.state = self.governor.initial_state()
        self.decisions = []
        self.switch_overhead_us = 0
        self.budget_infeasible_ticks = 0

        self._push(0, EVENT, "bootstrap")
        for app in sc.apps:
            for start, target in app.target_schedule[1:]:
                self._push(start, EVENT, "schedule", (app.app_id, target))
        for ev in sc.events:
            self._push(ev.at_us, EVENT, ev.kind, ev.payload)
        for app in self.apps.values():
            if app.active:
                self._push(0, RELEASE, "release", (app.spec.app_id, 0, app.generation))
        if self.governor.tick_us < horizon:
            self._push(self.governor.tick_us, TICK, "tick", 1)

        while self._heap and self._heap[0][0] < horizon:
            t, cls, _, kind, data = heapq.heappop(self._heap)
            if cls == EVENT:
                self._scenario_event(t, kind, data)
                nxt = self._heap[0] if self._heap else None
                if nxt is None or nxt[0] != t or nxt[1] != EVENT:
                    self._invoke(t, None)
            elif cls == TICK:
                self._invoke(t, data)
                if t + self.governor.tick_us < horizon:
                    self._push(t + self.governor.tick_us, TICK, "tick", data + 1)
            elif cls == RELEASE:
                self._release(t, *data)
            elif kind == "complete":
                self._complete(t, data)
            else:
                self._set(data, t, None)
                self._dispatch(data, t)
        for core in self.cores.values():
            self._close(core, horizon)
        return self._report()

    def _scenario_event(self, t, kind, data):
        if kind == "bootstrap":
            return
        if kind == "schedule":
            app_id, target = data
            self.apps[app_id].target_us = target
        elif kind == TARGET_CHANGE:
            app = self.apps[data["app_id"]]
            if "latency_target_us" in data:
                app.target_us = data["latency_target_us"]
            if "accuracy_floor_ppm" in data:
                app.floor_ppm = data["accuracy_floor_ppm"]
        elif kind == CORE_AVAILABILITY:
            core = self.cores[data["core_id"]]
            self._close(core, t)
            core.available = data["available"]
        elif kind == APP_START:
            app = self.apps[data["app_id"]]
            if not app.active:
                app.active = True
                app.generation += 1
                self._push(t, RELEASE, "release", (data["app_id"], t, app.generation))
        elif kind == APP_STOP:
            app = self.apps[data["app_id"]]
            app.active = False
            app.generation += 1
        elif kind == POWER_BUDGET_CHANGE:
            self.power_budget = data["power_budget_mw"]

    def _release(self, t, app_id, nominal, generation):
        app = self.apps[app_id]
        if not app.active or generation != app.generation:
            return
        app.released += 1
        req = Request(app_id, app.released, t, t + app.target_us)
        core = self.cores[app.core]
        core.queue.append(req)
        nxt = nominal + app.spec.period_us
        release = nxt
        if self.scenario.release_jitter_us:
            release += int(self.rng.integers(0, self.scenario.release_jitter_us + 1))
        if release < self.scenario.horizon_us:
            self._push(release, RELEASE, "release", (app_id, nxt, generation))
        self._dispatch(core, t)

    def _complete(self, t, core):
        req = core.current
        req.finish_us = t
        core.current = None
        self._set(core, t, None)
        app = self.apps[req.app_id]
        latency = t - req.release_us
        app.latencies.append(latency)
        app.acc_sum += req.accuracy_ppm
        if t > req.deadline_us:
            app.late += 1
        if (req.served_core, req.served_subnet) == (app.core, app.subnet):
            self.monitors.record_latency(req.app_id, latency)
        self._dispatch(core, t)

    def _report(self):
        horizon = self.scenario.horizon_us
        unfinished = {a: 0 for a in self.apps}
        for core in self.cores.values():
            pending = core.queue + ([core.current] if core.current is not None else [])
            for req in pending:
                if req.deadline_us <= horizon:
                    unfinished[req.app_id] += 1
        stats = []
        for app_id, app in self.apps.items():
            lat = app.latencies
            n = len(lat)
            stats.append(AppStats(
                app_id=app_id,
                released=app.released,
                completed=n,
                missed=app.late + unfinished[app_id],
                evaluated=n + unfinished[app_id],
                p50_us=nearest_rank(lat, 50) or 0,
                p95_us=nearest_rank(lat, 95) or 0,
                max_us=max(lat) if lat else 0,
                mean_us=round_half_up(Fraction(sum(lat), n)) if n else 0,
                mean_accuracy_ppm=round_half_up(Fraction(app.acc_sum, n)) if n else 0,
                switches=app.switches,
                maps=app.maps,
            ))
        total = sum(c.energy for c in self.cores.values())
        return SimReport(
            governor=self.governor.name,
            scenario=self.scenario.name,
            horizon_us=horizon,
            seed=self.seed,
            energy_uj=round_half_up(Fraction(total, PW_US_PER_UJ)),
            energy_pw_us=total,
            apps=tuple(stats),
            core_busy_us={cid: c.busy_us for cid, c in self.cores.items()},
            core_energy_uj={cid: round_half_up(Fraction(c.energy, PW_US_PER_UJ))
                            for cid, c in self.cores.items()},
            switches=sum(a.switches for a in self.apps.values()),
            maps=sum(a.maps for a in self.apps.values()),
            switch_overhead_us=self.switch_overhead_us,
            budget_infeasible_ticks=self.budget_infeasible_ticks,
            timeline=self.timeline,
            decisions=self.decisions,
        )


def run(scenario, soc, libraries, governor, seed=0, record_timeline=True):
    """Simulate ``scenario`` under ``governor`` and return a :class:`SimReport`."""
    return Simulation(scenario, soc, libraries, governor, seed, record_timeline).run()


def energy_check(report, soc, timeline):
    """Re-integrate the interval log with :func:`core_power` and compare to the report.

    Passes when the two agree within 1 uJ per simulated second (at least 1 uJ).
    """
    total = 0.0
    for iv in timeline.intervals:
        total += core_power(soc.core(iv.core_id), iv.op_index, iv.busy) * (iv.end_us - iv.start_us)
    total_uj = total / 1000.0
    tolerance = max(1.0, report.horizon_us / 1e6)
    return abs(total_uj - report.energy_uj) <= tolerance

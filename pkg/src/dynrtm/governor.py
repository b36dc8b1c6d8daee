"""Runtime management layer.

:func:`hierarchical_decide` is the controller: an inner DVFS loop every tick,
an outer sub-network/mapping loop every ``outer_every`` ticks with
hysteresis, and a power guard. The schedutil-like and max-performance
governors are baselines that keep their deploy-time sub-networks.

Governors are sklearn-style estimators so their tunables are exposed through
``get_params``/``set_params``; every decision function is pure and the
:class:`ControllerState` is owned by the caller.
"""

from dataclasses import dataclass, field, replace

from sklearn.base import BaseEstimator

from .errors import ConfigurationError, FloorInfeasibleError, TargetInfeasibleError
from .soc import core_power_pw, exec_time_us, PW_PER_MW


@dataclass(frozen=True)
class AppTarget:
    app_id: str
    target_us: int
    period_us: int
    priority: int = 0
    accuracy_floor_ppm: int = None
    eligible_kinds: tuple = ()
    initial_core: str = None
    active: bool = True

    def floor_ok(self, entry):
        return self.accuracy_floor_ppm is None or entry.accuracy_ppm >= self.accuracy_floor_ppm


@dataclass(frozen=True)
class Targets:
    apps: dict  # app_id -> AppTarget
    power_budget_mw: int = None

    def active(self):
        return [a for a in self.apps.values() if a.active]


@dataclass(frozen=True)
class SubnetChange:
    """One application-knob change and the context it was made in."""

    app_id: str
    old: tuple  # (core_id, subnet_index) or None
    new: tuple
    reason: str  # placement | remap | latency | interference | slack | power | floor
    op_index: int = None  # op point of the app's core when the change was decided
    top_index: int = None


@dataclass(frozen=True)
class GovernorDecision:
    mapping: dict  # app_id -> (core_id, subnet_index)
    op: dict  # core_id -> op point index
    budget_infeasible: bool = False
    changes: tuple = ()
    predicted_power_mw: float = None


@dataclass(frozen=True)
class ControllerState:
    violations: dict = field(default_factory=dict)
    slack: dict = field(default_factory=dict)
    cooldown: dict = field(default_factory=dict)
    last: GovernorDecision = None
    tick: int = 0


@dataclass(frozen=True)
class ControlParams:
    margin: float = 0.1
    hysteresis: int = 3
    outer_every: int = 5
    rho_cap: float = 0.9


# --- deploy-time selection and placement ------------------------------------


def select_deploy_subnet(library, target_us, accuracy_floor=None, margin=0.1):
    """Index of the most accurate entry meeting ``target*(1-margin)`` at the top op point.

    ``accuracy_floor`` is a fraction. Raises :class:`TargetInfeasibleError`
    when no entry is fast enough and :class:`FloorInfeasibleError` when the
    fast-enough entries are all below the floor.
    """
    if not len(library):
        raise ConfigurationError("empty library")
    bound = target_us * (1 - margin)
    fast = [i for i, e in enumerate(library.entries) if e.latency_us <= bound]
    if not fast:
        raise TargetInfeasibleError(
            f"no entry of {library.core_id} meets {target_us} us (bound {bound:.0f} us)")
    ok = [i for i in fast if accuracy_floor is None or library[i].accuracy >= accuracy_floor]
    if not ok:
        raise FloorInfeasibleError(
            f"no entry of {library.core_id} meeting the target has accuracy >= {accuracy_floor}")
    return ok[-1]


def _floor(app):
    return None if app.accuracy_floor_ppm is None else app.accuracy_floor_ppm / 1_000_000


def _load(mapping, targets, libraries, soc, core_id, op, skip=None):
    """Utilization of ``core_id`` at op index ``op`` from the model, excluding ``skip``."""
    core = soc.core(core_id)
    rho = 0.0
    for app_id, (cid, idx) in mapping.items():
        if cid != core_id or app_id == skip:
            continue
        rho += exec_time_us(libraries[cid][idx].latency_us, core, op) / targets.apps[app_id].period_us
    return rho


def _candidate_cores(app, libraries, soc):
    return [c for c in soc.cores
            if c.available and c.core_id in libraries
            and (not app.eligible_kinds or c.kind in app.eligible_kinds)]


def place_app(app, mapping, targets, libraries, soc, margin=0.1, exclude=(), prefer_initial=True,
              predictor=None):
    """Choose ``(core_id, subnet_index)`` for an app being deployed or migrated.

    Cores are ranked by predicted utilization at their top op point after
    adding the app with its deploy sub-network. Cores that would be
    overloaded rank last; a core whose library only offers a floor-feasible
    fallback (fastest entry meeting the floor) ranks after every core with a
    target-feasible entry.

    With a ``predictor`` (hierarchical governor), the deploy entry on each
    core is lowered to the most accurate one predicted to keep every resident
    inside its latency margin at the top op point, when such an entry exists.
    """
    cores = [c for c in _candidate_cores(app, libraries, soc) if c.core_id not in exclude]
    if not cores:
        raise ConfigurationError(f"app {app.app_id!r} has no available eligible core with a library")
    options = []
    floor_failures = 0
    for order, core in enumerate(cores):
        lib = libraries[core.core_id]
        fallback = False
        try:
            idx = select_deploy_subnet(lib, app.target_us, _floor(app), margin)
        except FloorInfeasibleError:
            floor_failures += 1
            fallback = True
            idx = next((i for i, e in enumerate(lib.entries) if app.floor_ok(e)), None)
        except TargetInfeasibleError:
            fallback = True
            idx = next((i for i, e in enumerate(lib.entries) if app.floor_ok(e)), None)
            if idx is None:
                floor_failures += 1
        if idx is None:
            continue
        if predictor is not None:
            for i in range(idx, -1, -1):
                trial = dict(mapping)
                trial[app.app_id] = (core.core_id, i)
                if app.floor_ok(lib[i]) and predictor.feasible(trial, core.core_id, core.top, {}):
                    idx, fallback = i, False
                    break
        rho = _load(mapping, targets, libraries, soc, core.core_id, core.top, skip=app.app_id)
        rho += exec_time_us(lib[idx].latency_us, core, core.top) / app.period_us
        preferred = prefer_initial and core.core_id == app.initial_core and not fallback
        options.append(((rho >= 1.0, not preferred, fallback, rho, order), (core.core_id, idx)))
    if not options:
        raise FloorInfeasibleError(
            f"app {app.app_id!r}: no available core has an entry meeting the accuracy floor")
    return min(options)[1]


def _place_missing(targets, libraries, soc, mapping, margin, changes, predictor=None):
    """Drop inactive apps; (re)place apps that are new or sit on an unavailable core."""
    mapping = {a: m for a, m in mapping.items() if a in targets.apps and targets.apps[a].active}
    for app in sorted(targets.active(), key=lambda a: (-a.priority, a.app_id)):
        cur = mapping.get(app.app_id)
        if cur is not None and soc.core(cur[0]).available:
            continue
        placed = {a: m for a, m in mapping.items() if a != app.app_id}
        new = place_app(app, placed, targets, libraries, soc, margin,
                        prefer_initial=cur is None, predictor=predictor if cur else None)
        mapping[app.app_id] = new
        changes.append(SubnetChange(app.app_id, cur, new, "placement" if cur is None else "remap"))
    return mapping


# --- baselines ---------------------------------------------------------------


class _BaseGovernor(BaseEstimator):
    name = None

    def initial_state(self):
        return ControllerState()

    def decide(self, monitors, targets, libraries, soc, state, tick=None):
        prev = state.last.mapping if state.last is not None else {}
        changes = []
        mapping = _place_missing(targets, libraries, soc, prev, self.margin, changes)
        ops = {c.core_id: self._op_index(c, monitors) for c in soc.cores}
        decision = GovernorDecision(mapping, ops, changes=tuple(changes))
        return decision, replace(state, last=decision, tick=state.tick + (tick is not None))


class SchedutilGovernor(_BaseGovernor):
    """Utilization-driven DVFS with fixed sub-networks and mapping.

    Per core, ``raw = headroom * f_top * utilization``; the lowest op point with
    frequency >= raw is selected.
    """

    name = "schedutil"

    def __init__(self, headroom=1.25, margin=0.1, tick_us=100_000, window=20,
                 monitor_period_us=200_000):
        self.headroom = headroom
        self.margin = margin
        self.tick_us = tick_us
        self.window = window
        self.monitor_period_us = monitor_period_us

    def _op_index(self, core, monitors):
        util = monitors.utilization.get(core.core_id, 0.0) if monitors is not None else 0.0
        return schedutil_op_index(core, util, self.headroom)


def schedutil_op_index(core, utilization, headroom=1.25):
    raw = headroom * core.f_max * utilization
    for i, op in enumerate(core.dvfs):
        if op.freq_mhz >= raw:
            return i
    return core.top


def schedutil_decide(monitors, soc, fixed_subnets, headroom=1.25):
    """Functional form of the baseline: fixed mapping, utilization-driven op points."""
    ops = {c.core_id: schedutil_op_index(c, monitors.utilization.get(c.core_id, 0.0), headroom)
           for c in soc.cores}
    return GovernorDecision(dict(fixed_subnets), ops)


class MaxPerfGovernor(_BaseGovernor):
    """Top op point everywhere, deploy-time sub-networks, no switching."""

    name = "maxperf"

    def __init__(self, margin=0.1, tick_us=100_000, window=20, monitor_period_us=200_000):
        self.margin = margin
        self.tick_us = tick_us
        self.window = window
        self.monitor_period_us = monitor_period_us

    def _op_index(self, core, monitors):
        return core.top


def maxperf_decide(soc, fixed_subnets):
    return GovernorDecision(dict(fixed_subnets), {c.core_id: c.top for c in soc.cores})


# --- hierarchical controller ------------------------------------------------


class _Predictor:
    """Latency/power predictions for one decision, given a mapping."""

    def __init__(self, targets, libraries, soc, params):
        self.targets = targets
        self.libraries = libraries
        self.soc = soc
        self.params = params

    def exec_us(self, app_id, core_id, idx, op):
        core = self.soc.core(core_id)
        return exec_time_us(self.libraries[core_id][idx].latency_us, core, op)

    def rho(self, mapping, core_id, op, skip=None):
        return _load(mapping, self.targets, self.libraries, self.soc, core_id, op, skip)

    def latency_us(self, mapping, app_id, op):
        """Exec time inflated by 1/(1-rho) for the other streams sharing the core."""
        core_id, idx = mapping[app_id]
        rho = min(self.params.rho_cap, self.rho(mapping, core_id, op, skip=app_id))
        return self.exec_us(app_id, core_id, idx, op) / (1.0 - rho)

    def feasible(self, mapping, core_id, op, calibration):
        if self.rho(mapping, core_id, op) >= 1.0:
            return False
        for app_id, (cid, _) in mapping.items():
            if cid != core_id:
                continue
            bound = self.targets.apps[app_id].target_us * (1 - self.params.margin)
            if self.latency_us(mapping, app_id, op) * calibration.get(app_id, 1.0) > bound:
                return False
        return True

    def core_power_mw(self, mapping, core_id, op):
        core = self.soc.core(core_id)
        busy = min(1.0, self.rho(mapping, core_id, op))
        static = core_power_pw(core, op, False)
        return (static + (core_power_pw(core, op, True) - static) * busy) / PW_PER_MW

    def soc_power_mw(self, mapping, ops):
        return sum(self.core_power_mw(mapping, c.core_id, ops[c.core_id]) for c in self.soc.cores)


def _inner_op(pred, mapping, core, calibration):
    if not any(cid == core.core_id for cid, _ in mapping.values()):
        return 0
    for op in range(len(core.dvfs)):
        if pred.feasible(mapping, core.core_id, op, calibration):
            return op
    return core.top


def hierarchical_decide(monitors, targets, libraries, soc, state, params=None, tick=None):
    """One controller step; pure in all arguments.

    ``tick`` is the 1-based periodic tick number, or ``None`` for an
    event-driven call (placement + inner loop + power guard only, counters
    untouched).
    """
    params = params or ControlParams()
    pred = _Predictor(targets, libraries, soc, params)
    prev = state.last
    prev_mapping = prev.mapping if prev is not None else {}
    prev_ops = prev.op if prev is not None else {c.core_id: c.top for c in soc.cores}
    violations, slack, cooldown = dict(state.violations), dict(state.slack), dict(state.cooldown)
    changes = []

    def reset(app_id, cool=0):
        violations[app_id] = 0
        slack[app_id] = 0
        cooldown[app_id] = cool

    mapping = _place_missing(targets, libraries, soc, prev_mapping, params.margin, changes, pred)
    for ch in changes:
        reset(ch.app_id)

    # floors may rise at runtime: move up to the first entry that meets the floor
    for app in targets.active():
        core_id, idx = mapping[app.app_id]
        lib = libraries[core_id]
        if not app.floor_ok(lib[idx]):
            up = next((i for i, e in enumerate(lib.entries) if app.floor_ok(e)), None)
            if up is None:
                new = place_app(app, mapping, targets, libraries, soc, params.margin,
                                prefer_initial=False)
            else:
                new = (core_id, up)
            changes.append(SubnetChange(app.app_id, (core_id, idx), new, "floor"))
            mapping[app.app_id] = new
            reset(app.app_id)

    # observed p95 over model prediction at the previous op point, for unchanged apps
    calibration = {}
    for app in targets.active():
        mon = monitors.apps.get(app.app_id) if monitors is not None else None
        if mon is None or mon.p95_us is None or prev_mapping.get(app.app_id) != mapping[app.app_id]:
            continue
        core_id = mapping[app.app_id][0]
        predicted = pred.latency_us(mapping, app.app_id, prev_ops.get(core_id, 0))
        calibration[app.app_id] = mon.p95_us / predicted

    # (1) inner loop: lowest op point that keeps every resident app inside its margin
    ops = {c.core_id: _inner_op(pred, mapping, c, calibration) for c in soc.cores}

    if tick is not None:
        for app in targets.active():
            mon = monitors.apps.get(app.app_id) if monitors is not None else None
            if mon is None or mon.p95_us is None:
                continue
            a = app.app_id
            if mon.p95_us > app.target_us:
                violations[a], slack[a] = violations.get(a, 0) + 1, 0
            elif mon.p95_us <= app.target_us * (1 - params.margin):
                violations[a], slack[a] = 0, slack.get(a, 0) + 1
            else:
                violations[a], slack[a] = 0, 0

    # (2) outer loop: sub-network steps and remapping, lowest priority first
    if tick is not None and tick % params.outer_every == 0:
        for app in sorted(targets.active(), key=lambda a: (a.priority, a.app_id)):
            a = app.app_id
            if cooldown.get(a, 0) > 0:
                cooldown[a] -= 1
                continue
            core_id, idx = mapping[a]
            core = soc.core(core_id)
            lib = libraries[core_id]
            op = ops[core_id]
            if violations.get(a, 0) >= params.hysteresis and op == core.top:
                target_app, new, reason = a, None, None
                if idx > 0 and app.floor_ok(lib[idx - 1]):
                    new, reason = (core_id, idx - 1), "latency"
                else:
                    new, reason = _remap(app, mapping, targets, libraries, soc, pred), "remap"
                if new is None:
                    # neither a smaller subnet nor another core helps: shrink a
                    # lower-priority neighbour that is adding queueing delay
                    victim = _interferer(app, mapping, targets, libraries, cooldown)
                    if victim is not None:
                        target_app, reason = victim, "interference"
                        new = (core_id, mapping[victim][1] - 1)
                if new is not None:
                    old_m = mapping[target_app]
                    mapping[target_app] = new
                    changes.append(SubnetChange(target_app, old_m, new, reason, op, core.top))
                    reset(target_app, params.hysteresis - 1)
                    if target_app != a:
                        violations[a] = 0
            elif slack.get(a, 0) >= params.hysteresis and op == 0 and idx + 1 < len(lib):
                trial = dict(mapping)
                trial[a] = (core_id, idx + 1)
                within_budget = (targets.power_budget_mw is None
                                 or pred.soc_power_mw(trial, ops) <= targets.power_budget_mw)
                if within_budget and pred.feasible(trial, core_id, op, calibration):
                    mapping[a] = trial[a]
                    changes.append(SubnetChange(a, (core_id, idx), trial[a], "slack", op,
                                                core.top))
                    reset(a, params.hysteresis - 1)

    # (3) power guard
    infeasible = False
    power = None
    if targets.power_budget_mw is not None:
        power = pred.soc_power_mw(mapping, ops)
        while power > targets.power_budget_mw:
            step = _power_step(pred, mapping, ops, targets, libraries, soc)
            if step is None:
                infeasible = True
                break
            if step[0] == "op":
                ops[step[1]] -= 1
            else:
                app_id = step[1]
                core_id, idx = mapping[app_id]
                mapping[app_id] = (core_id, idx - 1)
                changes.append(SubnetChange(app_id, (core_id, idx), (core_id, idx - 1), "power",
                                            ops[core_id], soc.core(core_id).top))
                reset(app_id)
            power = pred.soc_power_mw(mapping, ops)

    decision = GovernorDecision(mapping, ops, infeasible, tuple(changes), power)
    new_state = ControllerState(violations, slack, cooldown, decision,
                                state.tick + (tick is not None))
    return decision, new_state


def _power_step(pred, mapping, ops, targets, libraries, soc):
    """Next knob to turn while predicted power exceeds the budget: the op point
    of the highest-power loaded core, then (all at bottom) the lowest-priority
    app that can still step down. ``None`` when every knob is exhausted."""
    loaded = {cid for cid, _ in mapping.values()}
    lowerable = [c for c in soc.cores if c.core_id in loaded and ops[c.core_id] > 0]
    if lowerable:
        core = min(lowerable, key=lambda c: (
            -pred.core_power_mw(mapping, c.core_id, ops[c.core_id]), c.core_id))
        return "op", core.core_id
    for app in sorted(targets.active(), key=lambda x: (x.priority, x.app_id)):
        core_id, idx = mapping[app.app_id]
        if idx > 0 and app.floor_ok(libraries[core_id][idx - 1]):
            return "subnet", app.app_id
    return None


def _interferer(app, mapping, targets, libraries, cooldown):
    """Lowest-priority co-resident below ``app``'s priority that can still step down."""
    core_id = mapping[app.app_id][0]
    candidates = []
    for other, (cid, idx) in mapping.items():
        spec = targets.apps[other]
        if (other == app.app_id or cid != core_id or spec.priority >= app.priority
                or idx == 0 or not spec.floor_ok(libraries[cid][idx - 1])
                or cooldown.get(other, 0) > 0):
            continue
        candidates.append((spec.priority, other))
    return min(candidates)[1] if candidates else None


def _remap(app, mapping, targets, libraries, soc, pred):
    """Move a violating app to the least-loaded other core, re-selecting from its library."""
    cur_core = mapping[app.app_id][0]
    try:
        others = {a: m for a, m in mapping.items() if a != app.app_id}
        core_id, idx = place_app(app, others, targets, libraries, soc, pred.params.margin,
                                 exclude=(cur_core,), prefer_initial=False, predictor=pred)
    except ConfigurationError:
        return None
    trial = dict(mapping)
    trial[app.app_id] = (core_id, idx)
    core = soc.core(core_id)
    bound = app.target_us * (1 - pred.params.margin)
    if pred.rho(trial, core_id, core.top) >= 1.0 or pred.latency_us(trial, app.app_id, core.top) > bound:
        return None
    return core_id, idx


class HierarchicalGovernor(BaseEstimator):
    """Sklearn-style wrapper around :func:`hierarchical_decide`."""

    name = "hierarchical"

    def __init__(self, margin=0.1, hysteresis=3, outer_every=5, rho_cap=0.9, tick_us=100_000,
                 window=20, monitor_period_us=200_000):
        self.margin = margin
        self.hysteresis = hysteresis
        self.outer_every = outer_every
        self.rho_cap = rho_cap
        self.tick_us = tick_us
        self.window = window
        self.monitor_period_us = monitor_period_us

    def control_params(self):
        return ControlParams(self.margin, self.hysteresis, self.outer_every, self.rho_cap)

    def initial_state(self):
        return ControllerState()

    def decide(self, monitors, targets, libraries, soc, state, tick=None):
        return hierarchical_decide(monitors, targets, libraries, soc, state,
                                   self.control_params(), tick)


GOVERNORS = {g.name: g for g in (HierarchicalGovernor, SchedutilGovernor, MaxPerfGovernor)}


def make_governor(name, **params):
    try:
        cls = GOVERNORS[name]
    except KeyError:
        raise ConfigurationError(f"unknown governor {name!r}; choose from {sorted(GOVERNORS)}") from None
    return cls(**params)

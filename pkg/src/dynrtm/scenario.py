"""Scenario files: applications, their target schedules, and timed events."""

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import _validation as v
from .errors import SchemaError
from .pareto import MULTI_STATIC, SHARED_WEIGHTS
from .space import PPM, default_config_dir, read_json

TARGET_CHANGE = "target-change"
CORE_AVAILABILITY = "core-availability"
APP_START = "app-start"
APP_STOP = "app-stop"
POWER_BUDGET_CHANGE = "power-budget-change"

EVENT_FIELDS = {
    TARGET_CHANGE: (("app_id",), ("latency_target_us", "accuracy_floor_ppm")),
    CORE_AVAILABILITY: (("core_id", "available"), ()),
    APP_START: (("app_id",), ()),
    APP_STOP: (("app_id",), ()),
    POWER_BUDGET_CHANGE: (("power_budget_mw",), ()),
}


class UnknownEventKindError(SchemaError):
    pass


class DuplicateAppError(SchemaError):
    pass


class UnsortedEventsError(SchemaError):
    pass


class HorizonError(SchemaError):
    pass


@dataclass(frozen=True)
class AppSpec:
    app_id: str
    period_us: int
    target_schedule: tuple  # ((start_us, latency_target_us), ...), first piece at 0
    priority: int = 0
    accuracy_floor_ppm: int = None
    eligible_kinds: tuple = ()
    initial_core: str = None
    active: bool = True

    def target_at(self, t_us):
        current = self.target_schedule[0][1]
        for start, target in self.target_schedule:
            if start <= t_us:
                current = target
        return current

    def to_dict(self):
        return {"app_id": self.app_id, "period_us": self.period_us,
                "target_schedule": [list(p) for p in self.target_schedule],
                "priority": self.priority, "accuracy_floor_ppm": self.accuracy_floor_ppm,
                "eligible_kinds": list(self.eligible_kinds), "initial_core": self.initial_core,
                "active": self.active}


@dataclass(frozen=True)
class Event:
    at_us: int
    kind: str
    payload: dict = field(default_factory=dict)

    def to_dict(self):
        return {"at_us": self.at_us, "kind": self.kind, **self.payload}


@dataclass(frozen=True)
class Scenario:
    name: str
    horizon_us: int
    apps: tuple
    events: tuple = ()
    deployment: str = SHARED_WEIGHTS
    release_jitter_us: int = 0

    def app(self, app_id):
        for a in self.apps:
            if a.app_id == app_id:
                return a
        raise KeyError(app_id)

    def to_dict(self):
        return {"schema_version": 1, "kind": "scenario", "name": self.name,
                "horizon_us": self.horizon_us, "deployment": self.deployment,
                "release_jitter_us": self.release_jitter_us,
                "apps": [a.to_dict() for a in self.apps],
                "events": [e.to_dict() for e in self.events]}


def scenario_from_dict(doc):
    """Validate a decoded scenario document; errors name the offending field."""
    v.check_schema_version(doc, "", "scenario")
    v.check_keys(doc, "", ("schema_version", "kind", "name", "horizon_us", "apps"),
                 optional=("events", "deployment", "release_jitter_us"))
    horizon = v.check_int(doc["horizon_us"], "horizon_us", minimum=1)
    deployment = v.check_str(doc.get("deployment", SHARED_WEIGHTS), "deployment",
                             choices=(SHARED_WEIGHTS, MULTI_STATIC))
    apps = []
    seen = set()
    for i, a in enumerate(v.check_list(doc["apps"], "apps")):
        f = f"apps[{i}]"
        v.check_keys(a, f, ("app_id", "period_us", "target_schedule"),
                     optional=("priority", "accuracy_floor_ppm", "eligible_kinds", "initial_core",
                               "active"))
        app_id = v.check_str(a["app_id"], f"{f}.app_id")
        if app_id in seen:
            raise DuplicateAppError(f"duplicate app id {app_id!r}", f"{f}.app_id")
        seen.add(app_id)
        schedule = []
        for j, piece in enumerate(v.check_list(a["target_schedule"], f"{f}.target_schedule",
                                               min_len=1)):
            pf = f"{f}.target_schedule[{j}]"
            if not isinstance(piece, list) or len(piece) != 2:
                raise SchemaError("expected [start_us, latency_target_us]", pf)
            start = v.check_int(piece[0], pf, minimum=0)
            if start >= horizon:
                raise HorizonError(f"piece starts at {start} >= horizon {horizon}", pf)
            if schedule and start <= schedule[-1][0]:
                raise SchemaError("schedule pieces must be strictly ascending in time", pf)
            schedule.append((start, v.check_int(piece[1], pf, minimum=1)))
        if schedule[0][0] != 0:
            raise SchemaError("first schedule piece must start at 0", f"{f}.target_schedule[0]")
        floor = a.get("accuracy_floor_ppm")
        if floor is not None:
            floor = v.check_int(floor, f"{f}.accuracy_floor_ppm", minimum=0, maximum=PPM - 1)
        kinds = v.check_list(a.get("eligible_kinds", []), f"{f}.eligible_kinds")
        active = a.get("active", True)
        if not isinstance(active, bool):
            raise SchemaError("expected boolean", f"{f}.active")
        initial = a.get("initial_core")
        apps.append(AppSpec(
            app_id=app_id,
            period_us=v.check_int(a["period_us"], f"{f}.period_us", minimum=1),
            target_schedule=tuple(schedule),
            priority=v.check_int(a.get("priority", 0), f"{f}.priority"),
            accuracy_floor_ppm=floor,
            eligible_kinds=tuple(v.check_str(k, f"{f}.eligible_kinds") for k in kinds),
            initial_core=None if initial is None else v.check_str(initial, f"{f}.initial_core"),
            active=active,
        ))
    events = []
    for i, e in enumerate(v.check_list(doc.get("events", []), "events")):
        f = f"events[{i}]"
        if not isinstance(e, dict):
            raise SchemaError("expected object", f)
        kind = e.get("kind")
        if kind not in EVENT_FIELDS:
            raise UnknownEventKindError(f"unknown event kind {kind!r}", f"{f}.kind")
        required, optional = EVENT_FIELDS[kind]
        v.check_keys(e, f, ("at_us", "kind") + required, optional)
        at = v.check_int(e["at_us"], f"{f}.at_us", minimum=0)
        if at >= horizon:
            raise HorizonError(f"event {i} at {at} us is not before horizon {horizon} us",
                               f"{f}.at_us")
        if events and at < events[-1].at_us:
            raise UnsortedEventsError(f"event {i} at {at} us precedes event {i - 1}", f"{f}.at_us")
        payload = {k: e[k] for k in required + optional if k in e}
        _check_payload(kind, payload, seen, f)
        events.append(Event(at, kind, payload))
    return Scenario(
        name=v.check_str(doc["name"], "name"),
        horizon_us=horizon,
        apps=tuple(apps),
        events=tuple(events),
        deployment=deployment,
        release_jitter_us=v.check_int(doc.get("release_jitter_us", 0), "release_jitter_us",
                                      minimum=0),
    )


def _check_payload(kind, payload, app_ids, f):
    if "app_id" in payload:
        v.check_str(payload["app_id"], f"{f}.app_id")
        if payload["app_id"] not in app_ids:
            raise SchemaError(f"unknown app {payload['app_id']!r}", f"{f}.app_id")
    if kind == TARGET_CHANGE:
        if not ({"latency_target_us", "accuracy_floor_ppm"} & payload.keys()):
            raise SchemaError("target-change needs latency_target_us or accuracy_floor_ppm", f)
        if "latency_target_us" in payload:
            v.check_int(payload["latency_target_us"], f"{f}.latency_target_us", minimum=1)
        if payload.get("accuracy_floor_ppm") is not None:
            v.check_int(payload["accuracy_floor_ppm"], f"{f}.accuracy_floor_ppm", minimum=0,
                        maximum=PPM - 1)
    elif kind == CORE_AVAILABILITY:
        v.check_str(payload["core_id"], f"{f}.core_id")
        if not isinstance(payload["available"], bool):
            raise SchemaError("expected boolean", f"{f}.available")
    elif kind == POWER_BUDGET_CHANGE and payload["power_budget_mw"] is not None:
        v.check_int(payload["power_budget_mw"], f"{f}.power_budget_mw", minimum=1)


def parse_scenario(path):
    return scenario_from_dict(read_json(path))


def emit_scenario(scenario, path=None):
    text = json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def bundled_scenario(name):
    """Load ``scenario-single`` or ``scenario-dual`` from the default config directory."""
    return parse_scenario(default_config_dir() / f"{name.replace('-', '_')}.json")

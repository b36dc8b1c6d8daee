"""Device layer: heterogeneous cores with DVFS tables, the power and
frequency-scaling models, and the windowed monitors the governors read."""

import json
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from . import _validation as v
from .errors import SchemaError, ValidationError
from .space import BIG_CPU, GPU, LITTLE_CPU, PPM, default_config_dir, read_json, round_half_up

CORE_KINDS = (BIG_CPU, LITTLE_CPU, GPU)
PW_PER_MW = 10**9


class UnknownOpPointError(ValidationError):
    """An operating point is not in the core's DVFS table."""


@dataclass(frozen=True)
class OpPoint:
    freq_mhz: int
    voltage_mv: int

    def __post_init__(self):
        v.check_int(self.freq_mhz, "freq_mhz", minimum=1)
        v.check_int(self.voltage_mv, "voltage_mv", minimum=1)


@dataclass(frozen=True)
class CoreModel:
    core_id: str
    kind: str
    dvfs: tuple
    p_static_mw: int
    kappa: int  # mW per (GHz * V^2)
    alpha_ppm: int  # memory-bound fraction, ppm
    available: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dvfs", tuple(
            op if isinstance(op, OpPoint) else OpPoint(*op) for op in self.dvfs))
        if not self.dvfs:
            raise SchemaError("at least one op point required", f"{self.core_id}.dvfs")
        for a, b in zip(self.dvfs, self.dvfs[1:]):
            if b.freq_mhz <= a.freq_mhz:
                raise SchemaError("frequencies must be strictly ascending", f"{self.core_id}.dvfs")
            if b.voltage_mv < a.voltage_mv:
                raise SchemaError("voltage must not decrease with frequency",
                                  f"{self.core_id}.dvfs")
        v.check_int(self.p_static_mw, f"{self.core_id}.p_static_mw", minimum=0)
        v.check_int(self.kappa, f"{self.core_id}.kappa", minimum=0)
        v.check_int(self.alpha_ppm, f"{self.core_id}.alpha_ppm", minimum=0, maximum=PPM - 1)

    @property
    def alpha(self):
        return self.alpha_ppm / PPM

    @property
    def top(self):
        return len(self.dvfs) - 1

    @property
    def f_max(self):
        return self.dvfs[-1].freq_mhz

    def op_index(self, op_point):
        try:
            return self.dvfs.index(op_point)
        except ValueError:
            raise UnknownOpPointError(
                f"{op_point} is not in the DVFS table of {self.core_id}") from None

    def to_dict(self):
        return {"core_id": self.core_id, "kind": self.kind,
                "dvfs": [[op.freq_mhz, op.voltage_mv] for op in self.dvfs],
                "p_static_mw": self.p_static_mw, "kappa": self.kappa,
                "alpha_ppm": self.alpha_ppm, "available": self.available}

    @classmethod
    def from_dict(cls, d, field):
        v.check_keys(d, field, ("core_id", "kind", "dvfs", "p_static_mw", "kappa", "alpha_ppm"),
                     optional=("available",))
        dvfs = v.check_list(d["dvfs"], f"{field}.dvfs", min_len=1)
        ops = []
        for i, op in enumerate(dvfs):
            if not isinstance(op, list) or len(op) != 2:
                raise SchemaError("expected [freq_mhz, voltage_mv]", f"{field}.dvfs[{i}]")
            ops.append(OpPoint(v.check_int(op[0], f"{field}.dvfs[{i}][0]", minimum=1),
                               v.check_int(op[1], f"{field}.dvfs[{i}][1]", minimum=1)))
        available = d.get("available", True)
        if not isinstance(available, bool):
            raise SchemaError("expected boolean", f"{field}.available")
        try:
            return cls(v.check_str(d["core_id"], f"{field}.core_id"),
                       v.check_str(d["kind"], f"{field}.kind"), tuple(ops),
                       v.check_int(d["p_static_mw"], f"{field}.p_static_mw", minimum=0),
                       v.check_int(d["kappa"], f"{field}.kappa", minimum=0),
                       v.check_int(d["alpha_ppm"], f"{field}.alpha_ppm", minimum=0,
                                   maximum=PPM - 1),
                       available)
        except SchemaError as exc:
            raise SchemaError(str(exc).split(": ", 1)[-1], f"{field}") from None


@dataclass(frozen=True)
class SocModel:
    cores: tuple
    power_budget_mw: int = None
    memory_budget_bytes: int = None
    reload_bandwidth_bytes_per_ms: int = 200_000

    def __post_init__(self):
        object.__setattr__(self, "cores", tuple(self.cores))
        ids = [c.core_id for c in self.cores]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate core ids in {ids}", "cores")
        if self.power_budget_mw is not None:
            v.check_int(self.power_budget_mw, "power_budget_mw", minimum=1)
        if self.memory_budget_bytes is not None:
            v.check_int(self.memory_budget_bytes, "memory_budget_bytes", minimum=1)
        v.check_int(self.reload_bandwidth_bytes_per_ms, "reload_bandwidth_bytes_per_ms", minimum=1)

    def core(self, core_id):
        for c in self.cores:
            if c.core_id == core_id:
                return c
        raise ValidationError(f"unknown core {core_id!r}", "core_id")

    @property
    def core_ids(self):
        return [c.core_id for c in self.cores]

    def with_availability(self, available):
        """Copy with each core's ``available`` flag taken from a core_id -> bool map."""
        return replace(self, cores=tuple(
            replace(c, available=available.get(c.core_id, c.available)) for c in self.cores))

    def to_dict(self):
        return {"schema_version": 1, "kind": "soc",
                "cores": [c.to_dict() for c in self.cores],
                "power_budget_mw": self.power_budget_mw,
                "memory_budget_bytes": self.memory_budget_bytes,
                "reload_bandwidth_bytes_per_ms": self.reload_bandwidth_bytes_per_ms}

    @classmethod
    def from_dict(cls, doc):
        v.check_schema_version(doc, "", "soc")
        v.check_keys(doc, "", ("schema_version", "kind", "cores", "reload_bandwidth_bytes_per_ms"),
                     optional=("power_budget_mw", "memory_budget_bytes"))
        cores = [CoreModel.from_dict(c, f"cores[{i}]")
                 for i, c in enumerate(v.check_list(doc["cores"], "cores", min_len=1))]
        return cls(cores, doc.get("power_budget_mw"), doc.get("memory_budget_bytes"),
                   doc["reload_bandwidth_bytes_per_ms"])


def load_soc(path=None):
    path = Path(path) if path is not None else default_config_dir() / "soc.json"
    return SocModel.from_dict(read_json(path))


def emit_soc(soc, path):
    Path(path).write_text(json.dumps(soc.to_dict(), indent=2, sort_keys=True) + "\n")


# --- power and timing --------------------------------------------------------


def _op(core, op_point):
    if isinstance(op_point, int):
        if not 0 <= op_point < len(core.dvfs):
            raise UnknownOpPointError(f"op index {op_point} out of range for {core.core_id}")
        return core.dvfs[op_point]
    core.op_index(op_point)
    return op_point


def core_power_pw(core, op_point, busy):
    """Exact power in picowatts; kappa * MHz * mV^2 is already in pW."""
    op = _op(core, op_point)
    static = core.p_static_mw * PW_PER_MW
    if not busy:
        return static
    return static + core.kappa * op.freq_mhz * op.voltage_mv**2


def core_power(core, op_point, busy):
    """Power in mW: p_static, plus kappa * f[GHz] * V[V]^2 when busy."""
    return core_power_pw(core, op_point, busy) / PW_PER_MW


def exec_time(base_latency_ms, core, op_point):
    """Latency at ``op_point`` given the latency at the core's top frequency."""
    op = _op(core, op_point)
    if not base_latency_ms > 0:
        raise ValidationError("base latency must be positive", "base_latency_ms")
    return base_latency_ms * (core.alpha + (1 - core.alpha) * core.f_max / op.freq_mhz)


def exec_time_us(base_latency_us, core, op_point):
    """Integer-microsecond :func:`exec_time`, rounded half up."""
    op = _op(core, op_point)
    scale = Fraction(core.alpha_ppm * op.freq_mhz + (PPM - core.alpha_ppm) * core.f_max,
                     PPM * op.freq_mhz)
    return round_half_up(base_latency_us * scale)


# --- monitors ----------------------------------------------------------------


def nearest_rank(values, percent):
    """Nearest-rank percentile: the value at rank ceil(percent/100 * n) of the sorted data."""
    if not values:
        return None
    ordered = sorted(values)
    rank = -(-percent * len(ordered) // 100)
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class AppMonitor:
    latencies_us: tuple
    p50_us: int = None
    p95_us: int = None

    @property
    def has_data(self):
        return bool(self.latencies_us)


@dataclass(frozen=True)
class MonitorSnapshot:
    """Immutable view handed to governors. Apps without samples report ``None`` percentiles."""

    now_us: int
    apps: dict
    utilization: dict  # core_id -> busy fraction over the window
    soc_power_mw: float
    window_us: int


@dataclass
class MonitorWindow:
    """Rolling monitor state owned by the simulation loop."""

    window: int = 20
    period_us: int = 200_000
    rings: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)  # core_id -> deque[(start, end, busy, pw)]

    def add_app(self, app_id):
        self.rings.setdefault(app_id, deque(maxlen=self.window))

    def record_latency(self, app_id, latency_us):
        self.rings[app_id].append(latency_us)

    def clear(self, app_id):
        self.rings[app_id].clear()

    def record_interval(self, core_id, start_us, end_us, busy, power_pw):
        if end_us <= start_us:
            return
        log = self.intervals.setdefault(core_id, deque())
        log.append((start_us, end_us, busy, power_pw))
        horizon = end_us - self.period_us
        while log and log[0][1] <= horizon:
            log.popleft()

    def snapshot(self, now_us, open_intervals=()):
        return read_monitors(self, now_us, open_intervals)


def read_monitors(state, now, open_intervals=()):
    """Snapshot percentiles, utilization and mean power over the trailing window.

    ``open_intervals`` holds ``(core_id, start, busy, power_pw)`` for intervals
    still in progress at ``now``.
    """
    lo = max(0, now - state.period_us)
    span = now - lo
    busy = {}
    energy = 0
    pending = {c: [] for c in state.intervals}
    for core_id, start, is_busy, pw in open_intervals:
        pending.setdefault(core_id, []).append((start, now, is_busy, pw))
    for core_id in pending:
        total = 0
        for start, end, is_busy, pw in list(state.intervals.get(core_id, ())) + pending[core_id]:
            overlap = min(end, now) - max(start, lo)
            if overlap <= 0:
                continue
            energy += pw * overlap
            if is_busy:
                total += overlap
        busy[core_id] = min(1.0, total / span) if span > 0 else 0.0
    apps = {}
    for app_id, ring in state.rings.items():
        samples = tuple(ring)
        apps[app_id] = AppMonitor(samples, nearest_rank(samples, 50), nearest_rank(samples, 95))
    power = energy / span / PW_PER_MW if span > 0 else 0.0
    return MonitorSnapshot(now, apps, busy, power, state.period_us)

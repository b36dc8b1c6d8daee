"""Super-network search space and the closed-form cost models that stand in
for on-device profiling.

Every cost function here is pure. Latencies are computed in exact rational
arithmetic and rounded half-up to integer microseconds so that profiles are
bit-identical across platforms; only the accuracy model touches ``exp``.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from . import _validation as v
from .errors import MissingFileError, SchemaError, ValidationError

BIG_CPU = "big-cpu"
LITTLE_CPU = "little-cpu"
GPU = "gpu"

LATENCY_SCALE = 100  # ms per unit of normalized FLOPs before the per-kind coefficient
PPHK = 100_000  # accuracy resolution in profile files
PPM = 1_000_000

CONFIG_DIR_ENV = "DYNRTM_CONFIG_DIR"


class UnknownCoreKindError(ValidationError):
    """A core kind has no latency coefficients (malformed SoC description)."""


def round_half_up(x):
    """Round a non-negative Fraction/int/float to the nearest int, ties up."""
    if isinstance(x, float):
        x = Fraction(x)
    return math.floor(x + Fraction(1, 2))


def default_config_dir():
    """Directory holding the bundled defaults; overridable via ``DYNRTM_CONFIG_DIR``."""
    override = os.environ.get(CONFIG_DIR_ENV)
    if override:
        return Path(override)
    return Path(str(resources.files("dynrtm") / "data"))


@dataclass(frozen=True)
class SearchSpace:
    stage_count: int = 5
    depth_choices: tuple = (2, 3, 4)
    width_choices: tuple = (3, 4, 6)
    kernel_choices: tuple = (3, 5, 7)
    resolution_choices: tuple = (128, 144, 160, 176, 192, 208, 224)
    seed: int = 0

    def __post_init__(self):
        for name in ("depth_choices", "width_choices", "kernel_choices", "resolution_choices"):
            values = getattr(self, name)
            if isinstance(values, (int, np.integer)):
                raise SchemaError("expected a collection of integers", name)
            values = tuple(sorted({v.check_int(x, name, minimum=1) for x in values}))
            if not values:
                raise SchemaError("choice set is empty", name)
            object.__setattr__(self, name, values)
        v.check_int(self.stage_count, "stage_count", minimum=1)
        v.check_int(self.seed, "seed", minimum=0, maximum=2**64 - 1)
        if any(k % 2 == 0 for k in self.kernel_choices):
            raise SchemaError("kernel sizes must be odd", "kernel_choices")
        if any(r % 16 for r in self.resolution_choices):
            raise SchemaError("resolutions must be multiples of 16", "resolution_choices")

    @property
    def dimensions(self):
        """Choice sets in sampling order: stage-major (depth, width, kernel), then resolution."""
        per_stage = (self.depth_choices, self.width_choices, self.kernel_choices)
        return [c for _ in range(self.stage_count) for c in per_stage] + [self.resolution_choices]

    def maximal_config(self):
        stage = (self.depth_choices[-1], self.width_choices[-1], self.kernel_choices[-1])
        return ArchConfig((stage,) * self.stage_count, self.resolution_choices[-1])

    def minimal_config(self):
        stage = (self.depth_choices[0], self.width_choices[0], self.kernel_choices[0])
        return ArchConfig((stage,) * self.stage_count, self.resolution_choices[0])

    def contains(self, config):
        if len(config.stages) != self.stage_count:
            return False
        if config.resolution not in self.resolution_choices:
            return False
        return all(
            d in self.depth_choices and w in self.width_choices and k in self.kernel_choices
            for d, w, k in config.stages
        )

    def check_config(self, config):
        if not self.contains(config):
            raise ValidationError(f"config {config.to_dict()} is not in the search space")
        return config

    def config_from_indices(self, indices):
        dims = self.dimensions
        values = [dims[i][j] for i, j in enumerate(indices)]
        stages = tuple(tuple(values[3 * s : 3 * s + 3]) for s in range(self.stage_count))
        return ArchConfig(stages, values[-1])

    def config_to_indices(self, config):
        flat = [x for stage in config.stages for x in stage] + [config.resolution]
        return [dim.index(x) for dim, x in zip(self.dimensions, flat)]

    @cached_property
    def backbone_id(self):
        """Identity of the shared weight set: the choice sets, not the sampling seed."""
        text = json.dumps(
            [self.stage_count, self.depth_choices, self.width_choices,
             self.kernel_choices, self.resolution_choices]
        )
        return "supernet-" + hashlib.sha256(text.encode()).hexdigest()[:12]

    @cached_property
    def reference_flops(self):
        return flops_proxy(self.maximal_config())

    def to_dict(self):
        return {
            "stage_count": self.stage_count,
            "depth_choices": list(self.depth_choices),
            "width_choices": list(self.width_choices),
            "kernel_choices": list(self.kernel_choices),
            "resolution_choices": list(self.resolution_choices),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d, field="search_space"):
        v.check_keys(d, field, ("stage_count", "depth_choices", "width_choices",
                                "kernel_choices", "resolution_choices", "seed"))
        for key in ("depth_choices", "width_choices", "kernel_choices", "resolution_choices"):
            v.check_list(d[key], f"{field}.{key}", min_len=1)
        try:
            return cls(**d)
        except SchemaError as exc:
            raise SchemaError(str(exc), None) from None


@dataclass(frozen=True)
class ArchConfig:
    stages: tuple
    resolution: int

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(tuple(int(x) for x in s) for s in self.stages))
        if any(len(s) != 3 for s in self.stages):
            raise ValidationError("each stage is a (depth, width, kernel) triple")

    @cached_property
    def config_hash(self):
        text = ";".join(f"{d},{w},{k}" for d, w, k in self.stages) + f"|{self.resolution}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def layer_count(self):
        return sum(d for d, _, _ in self.stages)

    def to_dict(self):
        return {"stages": [list(s) for s in self.stages], "resolution": self.resolution}

    @classmethod
    def from_dict(cls, d, field="config"):
        v.check_keys(d, field, ("stages", "resolution"))
        stages = v.check_list(d["stages"], f"{field}.stages", min_len=1)
        for i, s in enumerate(stages):
            if not isinstance(s, list) or len(s) != 3:
                raise SchemaError("expected [depth, width, kernel]", f"{field}.stages[{i}]")
            for x in s:
                v.check_int(x, f"{field}.stages[{i}]", minimum=1)
        return cls(tuple(tuple(s) for s in stages),
                   v.check_int(d["resolution"], f"{field}.resolution", minimum=16))


@dataclass(frozen=True)
class CostModelParams:
    """Constants of the analytic accuracy/latency/memory models.

    ``latency`` maps a core kind to ``(a, b)``: milliseconds per unit of
    normalized FLOPs and milliseconds per layer. ``alpha`` maps a core kind to
    its memory-bound fraction, used as the default when building a core.
    """

    acc_max: float = 0.82
    acc_beta: float = 0.25
    acc_gamma: float = 3.0
    jitter_amp: float = 0.005
    latency: dict = field(default_factory=lambda: {
        BIG_CPU: (8.0, 0.10), LITTLE_CPU: (20.0, 0.08), GPU: (1.5, 0.45)})
    alpha: dict = field(default_factory=lambda: {BIG_CPU: 0.2, LITTLE_CPU: 0.2, GPU: 0.35})
    bytes_per_unit_weight: int = 4096

    def __post_init__(self):
        for name in ("acc_max", "acc_beta", "acc_gamma", "jitter_amp"):
            v.check_number(getattr(self, name), name, minimum=0)
        if self.acc_max - self.acc_beta < 0:
            raise SchemaError("acc_max - acc_beta must be >= 0", "acc_beta")
        if self.acc_max + self.jitter_amp >= 1 or self.acc_max - self.acc_beta - self.jitter_amp <= 0:
            raise SchemaError("accuracy range must stay inside (0, 1)", "acc_max")
        for kind, (a, b) in self.latency.items():
            v.check_number(a, f"latency.{kind}.a", minimum=0)
            v.check_number(b, f"latency.{kind}.b", minimum=0)
            if a == 0 and b == 0:
                raise SchemaError("latency coefficients cannot both be zero", f"latency.{kind}")
        for kind, alpha in self.alpha.items():
            v.check_number(alpha, f"alpha.{kind}", minimum=0)
            if alpha >= 1:
                raise SchemaError("memory-bound fraction must be < 1", f"alpha.{kind}")
        v.check_int(self.bytes_per_unit_weight, "bytes_per_unit_weight", minimum=1)

    def coefficients(self, core_kind):
        try:
            return self.latency[core_kind]
        except KeyError:
            raise UnknownCoreKindError(
                f"no latency coefficients for core kind {core_kind!r}", "kind") from None

    # File encoding is integer: ppm for fractions, microseconds for times.
    def to_dict(self):
        return {
            "acc_max_ppm": round(self.acc_max * PPM),
            "acc_beta_ppm": round(self.acc_beta * PPM),
            "acc_gamma_milli": round(self.acc_gamma * 1000),
            "jitter_amp_ppm": round(self.jitter_amp * PPM),
            "latency_us": {k: {"a": round(a * 1000), "b": round(b * 1000)}
                           for k, (a, b) in sorted(self.latency.items())},
            "alpha_ppm": {k: round(x * PPM) for k, x in sorted(self.alpha.items())},
            "bytes_per_unit_weight": self.bytes_per_unit_weight,
        }

    @classmethod
    def from_dict(cls, d, field="cost_model"):
        keys = ("acc_max_ppm", "acc_beta_ppm", "acc_gamma_milli", "jitter_amp_ppm",
                "latency_us", "alpha_ppm", "bytes_per_unit_weight")
        v.check_keys(d, field, keys)
        ints = {k: v.check_int(d[k], f"{field}.{k}", minimum=0) for k in keys
                if k not in ("latency_us", "alpha_ppm")}
        latency = {}
        if not isinstance(d["latency_us"], dict) or not d["latency_us"]:
            raise SchemaError("expected non-empty object", f"{field}.latency_us")
        for kind, ab in d["latency_us"].items():
            v.check_keys(ab, f"{field}.latency_us.{kind}", ("a", "b"))
            latency[kind] = (v.check_int(ab["a"], f"{field}.latency_us.{kind}.a", minimum=0) / 1000,
                             v.check_int(ab["b"], f"{field}.latency_us.{kind}.b", minimum=0) / 1000)
        if not isinstance(d["alpha_ppm"], dict):
            raise SchemaError("expected object", f"{field}.alpha_ppm")
        alpha = {k: v.check_int(x, f"{field}.alpha_ppm.{k}", minimum=0, maximum=PPM - 1) / PPM
                 for k, x in d["alpha_ppm"].items()}
        return cls(
            acc_max=ints["acc_max_ppm"] / PPM,
            acc_beta=ints["acc_beta_ppm"] / PPM,
            acc_gamma=ints["acc_gamma_milli"] / 1000,
            jitter_amp=ints["jitter_amp_ppm"] / PPM,
            latency=latency,
            alpha=alpha,
            bytes_per_unit_weight=ints["bytes_per_unit_weight"],
        )


# --- cost models -----------------------------------------------------------


def flops_proxy(config):
    """Sum over stages of depth * width * kernel**2 * (resolution // 2**s)**2, s from 1."""
    total = 0
    for s, (d, w, k) in enumerate(config.stages, start=1):
        r = config.resolution // 2**s
        total += d * w * k * k * r * r
    return total


def hash_jitter(config_hash):
    """Map a canonical config hash to a deterministic value in [-1, 1]."""
    return int(config_hash, 16) / (16 ** len(config_hash) - 1) * 2.0 - 1.0


def accuracy_model(config, params, space):
    f = flops_proxy(config) / space.reference_flops
    acc = params.acc_max - params.acc_beta * math.exp(-params.acc_gamma * f)
    return acc + params.jitter_amp * hash_jitter(config.config_hash)


def latency_at_fmax_us(config, core_kind, params, space):
    """Exact integer-microsecond form of :func:`latency_at_fmax`."""
    a, b = params.coefficients(core_kind)
    a_us, b_us = Fraction(a).limit_denominator(10**6) * 1000, Fraction(b).limit_denominator(10**6) * 1000
    value = a_us * Fraction(flops_proxy(config) * LATENCY_SCALE, space.reference_flops)
    return round_half_up(value + b_us * config.layer_count)


def latency_at_fmax(config, core_kind, params, space):
    """Latency in ms at the core's top frequency: a*(F/F_ref)*100 + b*layers."""
    a, b = params.coefficients(core_kind)
    return a * flops_proxy(config) / space.reference_flops * LATENCY_SCALE + b * config.layer_count


def weight_bytes(config, params):
    return params.bytes_per_unit_weight * sum(d * w * k * k for d, w, k in config.stages)


def sample_configs(space, n, seed):
    """Draw ``n`` configs uniformly per dimension.

    Uses numpy's PCG64 generator seeded with ``SeedSequence([space.seed, seed])``;
    each config consumes one row of per-dimension indices in
    :attr:`SearchSpace.dimensions` order.
    """
    n = v.check_int(n, "n", minimum=1)
    rng = np.random.default_rng([space.seed, v.check_int(seed, "seed", minimum=0)])
    return sample_with(rng, space, n)


def sample_with(rng, space, n):
    sizes = np.array([len(dim) for dim in space.dimensions])
    rows = rng.integers(0, sizes, size=(n, len(sizes)))
    return [space.config_from_indices(row) for row in rows.tolist()]


# --- profiles --------------------------------------------------------------


@dataclass(frozen=True)
class ProfileEntry:
    """One profiled sub-network. Values are stored integer-encoded."""

    config: ArchConfig
    accuracy_pphk: int
    latency_us: dict  # core_id -> base latency at f_max
    flops_units: int
    weight_bytes: int

    def __post_init__(self):
        if not 0 < self.accuracy_pphk < PPHK:
            raise SchemaError(f"accuracy must be in (0, 1), got {self.accuracy_pphk / PPHK}",
                              "accuracy_pphk")
        for core, lat in self.latency_us.items():
            if lat <= 0:
                raise SchemaError("latency must be positive", f"latency_us.{core}")
        if self.flops_units <= 0:
            raise SchemaError("flops_units must be positive", "flops_units")
        if self.weight_bytes <= 0:
            raise SchemaError("weight_bytes must be positive", "weight_bytes")

    @property
    def config_hash(self):
        return self.config.config_hash

    @property
    def accuracy(self):
        return self.accuracy_pphk / PPHK

    def latency_ms(self, core_id):
        return self.latency_us[core_id] / 1000

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "config": self.config.to_dict(),
            "accuracy_pphk": self.accuracy_pphk,
            "latency_us": dict(sorted(self.latency_us.items())),
            "flops_units": self.flops_units,
            "weight_bytes": self.weight_bytes,
        }

    @classmethod
    def from_dict(cls, d, field="entry"):
        v.check_keys(d, field, ("config_hash", "config", "accuracy_pphk", "latency_us",
                                "flops_units", "weight_bytes"))
        for key in ("accuracy_pphk", "flops_units", "weight_bytes"):
            _reject_non_finite(d[key], f"{field}.{key}")
        config = ArchConfig.from_dict(d["config"], f"{field}.config")
        if d["config_hash"] != config.config_hash:
            raise SchemaError("config_hash does not match config", f"{field}.config_hash")
        if not isinstance(d["latency_us"], dict):
            raise SchemaError("expected object", f"{field}.latency_us")
        latency = {}
        for core, lat in d["latency_us"].items():
            _reject_non_finite(lat, f"{field}.latency_us.{core}")
            latency[core] = v.check_int(lat, f"{field}.latency_us.{core}", minimum=1)
        try:
            return cls(
                config=config,
                accuracy_pphk=v.check_int(d["accuracy_pphk"], f"{field}.accuracy_pphk"),
                latency_us=latency,
                flops_units=v.check_int(d["flops_units"], f"{field}.flops_units"),
                weight_bytes=v.check_int(d["weight_bytes"], f"{field}.weight_bytes"),
            )
        except SchemaError as exc:
            raise SchemaError(str(exc).split(": ", 1)[-1], f"{field}.{exc.field}") from None


def _reject_non_finite(x, field):
    if isinstance(x, float) and not math.isfinite(x):
        raise v.NonFiniteError(f"non-finite value {x!r}", field)


def profile_config(config, cores, params, space):
    """Evaluate every cost model for one config.

    ``cores`` maps core_id to core kind.
    """
    return ProfileEntry(
        config=config,
        accuracy_pphk=round_half_up(accuracy_model(config, params, space) * PPHK),
        latency_us={cid: latency_at_fmax_us(config, kind, params, space)
                    for cid, kind in cores.items()},
        flops_units=flops_proxy(config),
        weight_bytes=weight_bytes(config, params),
    )


def emit_profiles(entries, path):
    """Write profiles as JSON lines: a versioned header, then one entry per line."""
    cores = sorted({c for e in entries for c in e.latency_us})
    lines = [json.dumps({"schema_version": 1, "kind": "profiles", "cores": cores,
                         "count": len(entries)}, sort_keys=True)]
    lines += [json.dumps(e.to_dict(), sort_keys=True) for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_profiles(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"profile file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise SchemaError("empty file: missing header", "line 1")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", "line 1") from None
    v.check_schema_version(header, "line 1", "profiles")
    if header.get("count") != len(lines) - 1:
        raise SchemaError(f"header count {header.get('count')} != {len(lines) - 1} entries",
                          "line 1")
    entries = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", f"line {i}") from None
        entries.append(ProfileEntry.from_dict(d, f"line {i}"))
    return entries


# --- space files -------------------------------------------------------------


def emit_space(space, params, path):
    doc = {"schema_version": 1, "kind": "space", "search_space": space.to_dict(),
           "cost_model": params.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_space(path=None):
    """Read a space file, returning ``(SearchSpace, CostModelParams)``."""
    path = Path(path) if path is not None else default_config_dir() / "space.json"
    doc = read_json(path)
    v.check_schema_version(doc, "", "space")
    v.check_keys(doc, "", ("schema_version", "kind", "search_space", "cost_model"))
    return SearchSpace.from_dict(doc["search_space"]), CostModelParams.from_dict(doc["cost_model"])


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from None

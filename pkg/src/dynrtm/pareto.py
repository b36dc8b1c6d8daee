"""Per-core sub-network libraries on the accuracy/latency Pareto front, and
the switching/memory model of weight sharing versus static model reloads."""

import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _validation as v
from .errors import ConfigurationError, SchemaError, ValidationError
from .space import (
    PPM,
    ArchConfig,
    CostModelParams,
    accuracy_model,
    latency_at_fmax_us,
    read_json,
    round_half_up,
    sample_with,
    weight_bytes,
)

SHARED_WEIGHTS = "shared-weights"
FULL_RELOAD = "full-reload"
MULTI_STATIC = "multi-static"
MASK_TIME_MS = 1.0


@dataclass(frozen=True)
class TradeoffPoint:
    config_hash: str
    latency_ms: float
    accuracy: float


def dominates(a, b):
    """True iff ``a`` is no worse than ``b`` on both axes and strictly better on one."""
    return (
        a.latency_ms <= b.latency_ms
        and a.accuracy >= b.accuracy
        and (a.latency_ms < b.latency_ms or a.accuracy > b.accuracy)
    )


def pareto_front(points):
    """Non-dominated subset, latency-ascending, in O(n log n).

    Points sharing (latency, accuracy) collapse to the one with the smallest
    config hash, so the result does not depend on input order.
    """
    ordered = sorted(points, key=lambda p: (p.latency_ms, -p.accuracy, p.config_hash))
    front = []
    best = -np.inf
    for p in ordered:
        # every earlier point has latency <= p's, so p survives only by beating all of them
        if p.accuracy > best:
            front.append(p)
            best = p.accuracy
    return front


def thin_front(front, k):
    """Reduce a sorted front to ``k`` points spread by greedy max-min distance.

    Distances are Euclidean in min-max normalized (latency, accuracy) space;
    both endpoints are always kept.
    """
    k = v.check_int(k, "k")
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}", "k")
    front = list(front)
    if len(front) <= k:
        return front
    xy = np.array([[p.latency_ms, p.accuracy] for p in front], dtype=float)
    span = xy.max(axis=0) - xy.min(axis=0)
    span[span == 0] = 1.0
    xy = (xy - xy.min(axis=0)) / span

    kept = [0, len(front) - 1]
    dist = np.minimum(np.linalg.norm(xy - xy[0], axis=1), np.linalg.norm(xy - xy[-1], axis=1))
    dist[kept] = -np.inf
    while len(kept) < k:
        best = max(
            (i for i in range(len(front)) if dist[i] > -np.inf),
            key=lambda i: (dist[i], -front[i].latency_ms, _neg_hash(front[i].config_hash)),
        )
        kept.append(best)
        dist = np.minimum(dist, np.linalg.norm(xy - xy[best], axis=1))
        dist[kept] = -np.inf
    return [front[i] for i in sorted(kept)]


def _neg_hash(h):
    # larger key for the lexicographically smaller hash
    return tuple(-ord(c) for c in h)


class ParetoFrontFilter(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`pareto_front` over ``(latency, accuracy)`` rows.

    ``fit`` records the front of ``X``; ``transform`` keeps the rows of a new
    array that no fitted front point dominates.
    """

    def __init__(self, k=None):
        self.k = k

    def fit(self, X, y=None):
        X = v.check_points(X)
        points = [TradeoffPoint(f"{i:016x}", lat, acc) for i, (lat, acc) in enumerate(X.tolist())]
        front = pareto_front(points)
        if self.k is not None:
            front = thin_front(front, self.k)
        self.support_ = np.array([int(p.config_hash, 16) for p in front], dtype=int)
        self.front_ = X[self.support_] if len(front) else X[:0]
        return self

    def transform(self, X):
        v.check_is_fitted(self, "front_")
        X = v.check_points(X)
        keep = np.ones(len(X), dtype=bool)
        for lat, acc in self.front_:
            keep &= ~((lat <= X[:, 0]) & (acc >= X[:, 1]) & ((lat < X[:, 0]) | (acc > X[:, 1])))
        return X[keep]

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).front_


# --- libraries -------------------------------------------------------------


@dataclass(frozen=True)
class LibraryEntry:
    config: ArchConfig
    latency_us: int  # at the core's top op point
    accuracy_ppm: int
    weight_bytes: int

    @property
    def config_hash(self):
        return self.config.config_hash

    @property
    def latency_ms(self):
        return self.latency_us / 1000

    @property
    def accuracy(self):
        return self.accuracy_ppm / PPM

    def point(self):
        return TradeoffPoint(self.config_hash, self.latency_ms, self.accuracy)

    def to_dict(self):
        return {"config": self.config.to_dict(), "config_hash": self.config_hash,
                "latency_us": self.latency_us, "accuracy_ppm": self.accuracy_ppm,
                "weight_bytes": self.weight_bytes}

    @classmethod
    def from_dict(cls, d, field):
        v.check_keys(d, field, ("config", "config_hash", "latency_us", "accuracy_ppm",
                                "weight_bytes"))
        config = ArchConfig.from_dict(d["config"], f"{field}.config")
        if d["config_hash"] != config.config_hash:
            raise SchemaError("config_hash does not match config", f"{field}.config_hash")
        return cls(
            config,
            v.check_int(d["latency_us"], f"{field}.latency_us", minimum=1),
            v.check_int(d["accuracy_ppm"], f"{field}.accuracy_ppm", minimum=1, maximum=PPM - 1),
            v.check_int(d["weight_bytes"], f"{field}.weight_bytes", minimum=1),
        )


@dataclass(frozen=True)
class SubnetLibrary:
    core_id: str
    core_kind: str
    backbone_id: str
    supernet_weight_bytes: int
    entries: tuple
    build: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for i in range(1, len(self.entries)):
            a, b = self.entries[i - 1], self.entries[i]
            if not (a.latency_us < b.latency_us and a.accuracy_ppm < b.accuracy_ppm):
                raise SchemaError("entries must be strictly increasing in latency and accuracy",
                                  f"entries[{i}]")
        for i, e in enumerate(self.entries):
            if e.weight_bytes > self.supernet_weight_bytes:
                raise SchemaError("sub-network larger than its super-network",
                                  f"entries[{i}].weight_bytes")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def to_dict(self):
        return {
            "schema_version": 1,
            "kind": "library",
            "core_id": self.core_id,
            "core_kind": self.core_kind,
            "backbone_id": self.backbone_id,
            "supernet_weight_bytes": self.supernet_weight_bytes,
            "entries": [e.to_dict() for e in self.entries],
            "build": dict(self.build),
        }

    @classmethod
    def from_dict(cls, doc):
        v.check_schema_version(doc, "", "library")
        v.check_keys(doc, "", ("schema_version", "kind", "core_id", "core_kind", "backbone_id",
                               "supernet_weight_bytes", "entries", "build"))
        entries = [LibraryEntry.from_dict(e, f"entries[{i}]")
                   for i, e in enumerate(v.check_list(doc["entries"], "entries", min_len=1))]
        build = doc["build"]
        if not isinstance(build, dict):
            raise SchemaError("expected object", "build")
        for key, val in build.items():
            v.check_int(val, f"build.{key}", minimum=0)
        return cls(
            core_id=v.check_str(doc["core_id"], "core_id"),
            core_kind=v.check_str(doc["core_kind"], "core_kind"),
            backbone_id=v.check_str(doc["backbone_id"], "backbone_id"),
            supernet_weight_bytes=v.check_int(doc["supernet_weight_bytes"],
                                              "supernet_weight_bytes", minimum=1),
            entries=entries,
            build=build,
        )


def emit_library(library, path):
    Path(path).write_text(json.dumps(library.to_dict(), indent=1, sort_keys=True) + "\n")


def load_library(path):
    return SubnetLibrary.from_dict(read_json(path))


def load_libraries(directory):
    """Load every ``*.lib.json`` in a directory, keyed by core id."""
    libs = {}
    for path in sorted(Path(directory).glob("*.lib.json")):
        lib = load_library(path)
        if lib.core_id in libs:
            raise SchemaError(f"duplicate library for core {lib.core_id!r}", str(path))
        libs[lib.core_id] = lib
    if not libs:
        raise ConfigurationError(f"no *.lib.json files in {directory}")
    return libs


def evaluate_entry(config, core_kind, params, space):
    return LibraryEntry(
        config=config,
        latency_us=latency_at_fmax_us(config, core_kind, params, space),
        accuracy_ppm=round_half_up(accuracy_model(config, params, space) * PPM),
        weight_bytes=weight_bytes(config, params),
    )


def build_library(space, core_id, core_kind, params=None, n_random=1000, n_evolve=200, k=8,
                  seed=0):
    """Sample, evolve, and thin one core's library. See :class:`SubnetLibraryBuilder`."""
    builder = SubnetLibraryBuilder(core_id=core_id, core_kind=core_kind, n_random=n_random,
                                   n_evolve=n_evolve, k=k, seed=seed, cost_params=params)
    return builder.fit(space).library_


class SubnetLibraryBuilder(BaseEstimator):
    """Build a per-core :class:`SubnetLibrary` from a search space.

    ``fit`` evaluates ``n_random`` uniformly sampled configs, then runs
    ``n_evolve`` mutation rounds: a uniformly chosen member of the current
    front has one uniformly chosen dimension re-drawn. The merged front is
    thinned to ``k`` entries. All randomness comes from one PCG64 stream seeded
    with ``(space.seed, seed)``, so two cores built with the same seed see the
    same random sample.

    Attributes set by ``fit``: ``library_``, ``candidates_`` (every evaluated
    entry, sorted by config hash) and ``front_`` (the unthinned front).
    """

    def __init__(self, core_id="gpu0", core_kind="gpu", n_random=1000, n_evolve=200, k=8,
                 seed=0, cost_params=None):
        self.core_id = core_id
        self.core_kind = core_kind
        self.n_random = n_random
        self.n_evolve = n_evolve
        self.k = k
        self.seed = seed
        self.cost_params = cost_params

    def fit(self, space, y=None):
        n_random = v.check_int(self.n_random, "n_random", minimum=1)
        n_evolve = v.check_int(self.n_evolve, "n_evolve", minimum=0)
        if v.check_int(self.k, "k") < 2:
            raise ValidationError(f"k must be >= 2, got {self.k}", "k")
        params = self.cost_params if self.cost_params is not None else CostModelParams()
        params.coefficients(self.core_kind)
        rng = np.random.default_rng([space.seed, v.check_int(self.seed, "seed", minimum=0)])

        evaluated = {}

        def evaluate(config):
            if config.config_hash not in evaluated:
                evaluated[config.config_hash] = evaluate_entry(config, self.core_kind, params,
                                                               space)

        for config in sample_with(rng, space, n_random):
            evaluate(config)
        front = self._front(evaluated)
        dims = space.dimensions
        for _ in range(n_evolve):
            parent = front[int(rng.integers(len(front)))]
            indices = space.config_to_indices(evaluated[parent.config_hash].config)
            dim = int(rng.integers(len(dims)))
            indices[dim] = int(rng.integers(len(dims[dim])))
            child = space.config_from_indices(indices)
            if child.config_hash not in evaluated:
                evaluate(child)
                front = self._front(evaluated)

        thinned = thin_front(front, self.k)
        self.candidates_ = [evaluated[h] for h in sorted(evaluated)]
        self.front_ = [evaluated[p.config_hash] for p in front]
        self.library_ = SubnetLibrary(
            core_id=self.core_id,
            core_kind=self.core_kind,
            backbone_id=space.backbone_id,
            supernet_weight_bytes=weight_bytes(space.maximal_config(), params),
            entries=[evaluated[p.config_hash] for p in thinned],
            build={"seed": self.seed, "space_seed": space.seed, "n_random": n_random,
                   "n_evolve": n_evolve, "k": self.k, "n_evaluated": len(evaluated)},
        )
        return self

    @staticmethod
    def _front(evaluated):
        # merge in config-hash order so the reduction is order-independent
        return pareto_front([evaluated[h].point() for h in sorted(evaluated)])

    def fit_profiles(self, profiles, space, params=None):
        """Build from measured/emitted profiles instead of the cost models (no evolution)."""
        params = params if params is not None else (self.cost_params or CostModelParams())
        entries = {}
        for p in profiles:
            if self.core_id not in p.latency_us:
                raise ConfigurationError(f"profile {p.config_hash} has no latency for core "
                                         f"{self.core_id!r}")
            entries[p.config_hash] = LibraryEntry(
                p.config, p.latency_us[self.core_id], p.accuracy_pphk * (PPM // 100_000),
                p.weight_bytes)
        if not entries:
            raise ConfigurationError("no profiles to build a library from")
        front = self._front(entries)
        thinned = thin_front(front, self.k)
        self.candidates_ = [entries[h] for h in sorted(entries)]
        self.front_ = [entries[p.config_hash] for p in front]
        self.library_ = SubnetLibrary(
            core_id=self.core_id, core_kind=self.core_kind, backbone_id=space.backbone_id,
            supernet_weight_bytes=weight_bytes(space.maximal_config(), params),
            entries=[entries[p.config_hash] for p in thinned],
            build={"n_profiles": len(entries), "k": self.k},
        )
        return self


# --- switching and memory ----------------------------------------------------


@dataclass(frozen=True)
class SwitchCost:
    time_ms: float
    resident_delta_bytes: int


def switch_cost(from_entry, to_entry, mode, bandwidth_bytes_per_ms, mask_time_ms=MASK_TIME_MS):
    """Cost of moving to ``to_entry``.

    Shared weights only apply a mask (constant time, nothing loaded); a full
    reload streams the target's weights at ``bandwidth_bytes_per_ms``.
    """
    if not bandwidth_bytes_per_ms > 0:
        raise ValidationError(f"bandwidth must be positive, got {bandwidth_bytes_per_ms}",
                              "bandwidth_bytes_per_ms")
    if mode == SHARED_WEIGHTS:
        return SwitchCost(mask_time_ms, 0)
    if mode in (FULL_RELOAD, MULTI_STATIC):
        before = from_entry.weight_bytes if from_entry is not None else 0
        return SwitchCost(to_entry.weight_bytes / bandwidth_bytes_per_ms,
                          to_entry.weight_bytes - before)
    raise ValidationError(f"unknown switch mode {mode!r}", "mode")


def switch_time_us(from_entry, to_entry, mode, bandwidth_bytes_per_ms,
                   mask_time_ms=MASK_TIME_MS):
    """Integer-microsecond switch time used by the simulator."""
    if mode == SHARED_WEIGHTS:
        return round_half_up(mask_time_ms * 1000)
    switch_cost(from_entry, to_entry, mode, bandwidth_bytes_per_ms)
    return round_half_up(Fraction(to_entry.weight_bytes * 1000) / Fraction(bandwidth_bytes_per_ms))


def resident_memory(deployment, mode):
    """Bytes resident for a deployment of libraries (or bare entries).

    Shared weights count each backbone's super-network once; multi-static
    counts every distinct deployed sub-network as its own model.
    """
    deployment = list(deployment)
    if mode == SHARED_WEIGHTS:
        backbones = {}
        for item in deployment:
            if not isinstance(item, SubnetLibrary):
                raise ValidationError("shared-weights accounting needs libraries", "deployment")
            backbones[item.backbone_id] = item.supernet_weight_bytes
        return sum(backbones.values())
    if mode in (MULTI_STATIC, FULL_RELOAD):
        models = {}
        for item in deployment:
            for entry in (item.entries if isinstance(item, SubnetLibrary) else [item]):
                models[entry.config_hash] = entry.weight_bytes
        return sum(models.values())
    raise ValidationError(f"unknown deployment mode {mode!r}", "mode")

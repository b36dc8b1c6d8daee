import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynrtm.errors import NotFittedError, SchemaError, ValidationError
from dynrtm.pareto import (
    FULL_RELOAD,
    MULTI_STATIC,
    SHARED_WEIGHTS,
    LibraryEntry,
    ParetoFrontFilter,
    SubnetLibrary,
    SubnetLibraryBuilder,
    TradeoffPoint,
    build_library,
    dominates,
    emit_library,
    load_library,
    load_libraries,
    pareto_front,
    resident_memory,
    switch_cost,
    switch_time_us,
    thin_front,
)
from dynrtm.space import ArchConfig, load_profiles, profile_config, sample_configs

# seed-0 libraries of the bundled SoC (latency us at f_max, accuracy ppm)
PINNED = {
    "big0": ([17239, 64474, 120537, 185856, 264073, 363772, 474688, 717530],
             [588669, 626766, 663431, 698715, 731393, 759194, 780558, 806774]),
    "little0": ([40548, 157103, 297126, 462089, 657973, 906880, 1183829, 1790934],
                [588669, 626371, 663295, 698715, 731393, 759194, 780558, 806774]),
    "gpu0": ([9163, 16535, 28312, 40468, 55120, 74676, 95762, 141868],
             [586073, 627982, 661796, 700481, 731393, 759194, 782665, 806774]),
}


def P(lat, acc, h="0"):
    return TradeoffPoint(h, lat, acc)


def brute_front(points):
    """O(n^2) reference with the same dedup rule."""
    keep = [p for p in points if not any(dominates(q, p) for q in points)]
    best = {}
    for p in keep:
        key = (p.latency_ms, p.accuracy)
        if key not in best or p.config_hash < best[key].config_hash:
            best[key] = p
    return sorted(best.values(), key=lambda p: p.latency_ms)


def random_points(rng, n):
    # coarse grid so ties and duplicates actually occur
    return [P(rng.randint(1, 60) / 2, rng.randint(1, 60) / 64, f"{rng.getrandbits(32):08x}")
            for _ in range(n)]


def test_dominates_examples():
    assert dominates(P(10, 0.70), P(12, 0.65))
    assert not dominates(P(10, 0.70), P(10, 0.70))
    assert not dominates(P(10, 0.70), P(8, 0.60))
    assert not dominates(P(8, 0.60), P(10, 0.70))


def test_front_example():
    pts = [P(10, 0.70, "a"), P(12, 0.65, "b"), P(8, 0.60, "c")]
    expected = [P(8, 0.60, "c"), P(10, 0.70, "a")]
    assert brute_front(pts) == expected
    assert pareto_front(pts) == expected


def test_front_degenerate():
    assert pareto_front([]) == []
    assert pareto_front([P(3, 0.5, "x")]) == [P(3, 0.5, "x")]
    dups = [P(3, 0.5, h) for h in ("c", "a", "b")]
    assert pareto_front(dups) == [P(3, 0.5, "a")]


@pytest.mark.parametrize("seed", range(20))
def test_front_matches_brute_force(seed):
    rng = random.Random(seed)
    pts = random_points(rng, rng.randint(1, 1000))
    assert pareto_front(pts) == brute_front(pts)


points = st.lists(st.builds(P, st.integers(1, 30).map(float), st.integers(1, 30).map(lambda x: x / 32),
                            st.text("abcdef", min_size=1, max_size=4)), max_size=60)


@settings(max_examples=300, deadline=None)
@given(points, st.randoms())
def test_front_properties(pts, rnd):
    front = pareto_front(pts)
    assert front == brute_front(pts)
    assert pareto_front(front) == front
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert pareto_front(shuffled) == front


def test_thin_identity_and_endpoints():
    front = [P(1, 0.1, "a"), P(2, 0.2, "b"), P(3, 0.3, "c")]
    assert thin_front(front, 3) == front
    assert thin_front(front, 2) == [front[0], front[2]]
    with pytest.raises(ValidationError):
        thin_front(front, 1)


def test_thin_example():
    pos = [0, 0.1, 0.5, 0.9, 1]
    front = [P(x, x, f"{i}") for i, x in enumerate(pos)]

    # oracle: enumerate 3-subsets containing both endpoints, maximize min pairwise distance
    def min_dist(sub):
        return min(np.hypot(a.latency_ms - b.latency_ms, a.accuracy - b.accuracy)
                   for a, b in itertools.combinations(sub, 2))

    best = max(([front[0], m, front[-1]] for m in front[1:-1]), key=min_dist)
    assert [p.latency_ms for p in best] == [0, 0.5, 1]
    assert thin_front(front, 3) == best


def test_thin_tie_prefers_smaller_latency():
    front = [P(0, 0, "a"), P(0.25, 0.25, "b"), P(0.75, 0.75, "c"), P(1, 1, "d")]
    assert [p.config_hash for p in thin_front(front, 3)] == ["a", "b", "d"]


def test_front_filter_estimator():
    X = np.array([[10, 0.70], [12, 0.65], [8, 0.60]])
    f = ParetoFrontFilter().fit(X)
    assert f.front_.tolist() == [[8, 0.60], [10, 0.70]]
    assert f.support_.tolist() == [2, 0]
    assert f.transform(np.array([[9, 0.5], [7, 0.9]])).tolist() == [[7, 0.9]]
    assert ParetoFrontFilter(k=2).get_params() == {"k": 2}
    with pytest.raises(NotFittedError):
        ParetoFrontFilter().transform(X)
    with pytest.raises(ValidationError):
        ParetoFrontFilter().fit(np.array([[1.0, np.nan]]))


def test_pinned_libraries(libs):
    for core_id, (lat, acc) in PINNED.items():
        lib = libs[core_id]
        assert [e.latency_us for e in lib.entries] == lat
        assert [e.accuracy_ppm for e in lib.entries] == acc


def test_library_invariants(libs, space, params):
    for lib in libs.values():
        assert len(lib) == 8
        assert len({e.config.config_hash for e in lib.entries}) == 8
        assert lib.backbone_id == space.backbone_id
        pts = [e.point() for e in lib.entries]
        for a, b in itertools.permutations(pts, 2):
            assert not dominates(a, b)


def test_library_not_dominated_by_candidates(soc, space, params):
    core = soc.core("gpu0")
    b = SubnetLibraryBuilder(core_id="gpu0", core_kind=core.kind, seed=3, cost_params=params)
    b.fit(space)
    cands = [c.point() for c in b.candidates_]
    for e in b.library_.entries:
        assert not any(dominates(c, e.point()) for c in cands)
    assert [e.point() for e in b.front_] == brute_front(cands)


def test_no_evolution_is_front_of_random_sample(space, params):
    b = SubnetLibraryBuilder(core_id="big0", core_kind="big-cpu", n_random=300, n_evolve=0,
                             k=100, seed=5, cost_params=params).fit(space)
    sample = {c.config_hash for c in sample_configs(space, 300, 5)}
    assert {c.config_hash for c in b.candidates_} == sample
    assert [e.point() for e in b.library_.entries] == pareto_front([c.point() for c in b.candidates_])


def test_build_deterministic(space, params):
    a = build_library(space, "gpu0", "gpu", params, n_random=200, n_evolve=50, seed=11)
    b = build_library(space, "gpu0", "gpu", params, n_random=200, n_evolve=50, seed=11)
    assert a == b


def test_jaccard_big_vs_gpu(libs):
    a = {e.config_hash for e in libs["big0"].entries}
    b = {e.config_hash for e in libs["gpu0"].entries}
    assert round(len(a & b) / len(a | b), 4) == 0.2308


def test_library_round_trip(tmp_path, libs):
    for core_id, lib in libs.items():
        emit_library(lib, tmp_path / f"{core_id}.lib.json")
    text = (tmp_path / "gpu0.lib.json").read_text()
    assert load_library(tmp_path / "gpu0.lib.json") == libs["gpu0"]
    emit_library(load_library(tmp_path / "gpu0.lib.json"), tmp_path / "again.json")
    assert (tmp_path / "again.json").read_text() == text
    assert load_libraries(tmp_path) == libs


def test_library_rejects_unsorted(libs):
    lib = libs["gpu0"]
    with pytest.raises(SchemaError):
        SubnetLibrary(lib.core_id, lib.core_kind, lib.backbone_id, lib.supernet_weight_bytes,
                      lib.entries[::-1])


def test_library_from_profiles(tmp_path, soc, space, params):
    cores = {c.core_id: c.kind for c in soc.cores}
    profiles = [profile_config(c, cores, params, space) for c in sample_configs(space, 300, 2)]
    b = SubnetLibraryBuilder(core_id="gpu0", core_kind="gpu", k=6).fit_profiles(profiles, space)
    lib = b.library_
    assert len(lib) == 6
    # profile accuracy has 1e-5 resolution, so the ppm values end in 0
    assert all(e.accuracy_ppm % 10 == 0 for e in lib.entries)


def _entry(nbytes, lat=1000):
    return LibraryEntry(ArchConfig(((2, 3, 3),), 128), lat, 500_000, nbytes)


def test_switch_cost_examples():
    a, b = _entry(10_000_000), _entry(50_000_000)
    shared = switch_cost(a, b, SHARED_WEIGHTS, 1_000_000)
    assert (shared.time_ms, shared.resident_delta_bytes) == (1.0, 0)
    reload = switch_cost(a, b, FULL_RELOAD, 1_000_000)
    assert reload.time_ms == 50.0
    assert reload.resident_delta_bytes == 40_000_000
    assert switch_cost(None, b, FULL_RELOAD, 1_000_000).resident_delta_bytes == 50_000_000
    assert switch_time_us(a, b, FULL_RELOAD, 1_000_000) == 50_000
    with pytest.raises(ValidationError):
        switch_cost(a, b, FULL_RELOAD, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**8), st.integers(1, 10**8))
def test_switch_cost_scaling(x, y):
    assert switch_cost(None, _entry(x), SHARED_WEIGHTS, 200_000).time_ms == \
        switch_cost(None, _entry(y), SHARED_WEIGHTS, 200_000).time_ms
    assert switch_cost(None, _entry(2 * x), FULL_RELOAD, 200_000).time_ms == pytest.approx(
        2 * switch_cost(None, _entry(x), FULL_RELOAD, 200_000).time_ms)


def test_resident_memory_examples(libs):
    lib = libs["gpu0"]
    assert resident_memory([lib], SHARED_WEIGHTS) == lib.supernet_weight_bytes == 24_084_480
    assert resident_memory([libs["gpu0"], libs["big0"]], SHARED_WEIGHTS) == 24_084_480
    a = LibraryEntry(ArchConfig(((2, 3, 3),), 128), 1, 500_000, 30_000_000)
    b = LibraryEntry(ArchConfig(((2, 3, 5),), 128), 1, 500_000, 40_000_000)
    assert resident_memory([a, b], MULTI_STATIC) == 70_000_000
    assert resident_memory([a, a, b], MULTI_STATIC) == 70_000_000


def test_resident_memory_dual(libs, dual, soc):
    kinds = {k for a in dual.apps for k in a.eligible_kinds}
    used = [libs[c.core_id] for c in soc.cores if c.kind in kinds]
    assert resident_memory(used, SHARED_WEIGHTS) == 24_084_480
    assert resident_memory(used, MULTI_STATIC) == 96_423_936


def test_profiles_file_builds_same_as_direct(tmp_path, soc, space, params):
    from dynrtm.space import emit_profiles
    cores = {c.core_id: c.kind for c in soc.cores}
    profiles = [profile_config(c, cores, params, space) for c in sample_configs(space, 100, 4)]
    emit_profiles(profiles, tmp_path / "p.jsonl")
    b1 = SubnetLibraryBuilder(core_id="big0", core_kind="big-cpu").fit_profiles(profiles, space)
    b2 = SubnetLibraryBuilder(core_id="big0", core_kind="big-cpu").fit_profiles(
        load_profiles(tmp_path / "p.jsonl"), space)
    assert b1.library_ == b2.library_

import json
import random
from datetime import datetime, timedelta

import pytest
from scipy import stats

from timer_bench.errors import PatientOverlapError, SamplingError
from timer_bench.genpipe import InstructionPair
from timer_bench.sampler import (
    SampledSet,
    SampleSpec,
    assemble_benchmark,
    export_benchmark_set,
    export_tuning_set,
    sample,
    sidecar_path,
)
from timer_bench.temporal import TimeEvidence, representative_histogram

BASE = datetime(2020, 1, 1)


def make_pair(i: int, rep: float, patient: str = None, mode: str = "benchmark") -> InstructionPair:
    stamps = (BASE, BASE + timedelta(days=1 + i % 30))
    evidence = TimeEvidence(stamps, (rep, rep), rep)
    pid = patient or f"P{i % 97:05d}"
    return InstructionPair(f"{pid}#0-q{i:05d}", pid, f"{pid}#0", f"question {i}?", f"answer {i}.", evidence, mode)


def pool_of(reps, **kwargs):
    return [make_pair(i, r, **kwargs) for i, r in enumerate(reps)]


@pytest.fixture(scope="module")
def edge_heavy_pool():
    """5000 pairs with arcsine-distributed representatives."""
    rng = random.Random(2024)
    return pool_of([rng.betavariate(0.5, 0.5) for _ in range(5000)])


def reps_of(sampled):
    return [p.representative for p in sampled.pairs]


# --- Strategy examples ---

def test_recency_draws_only_recent_pairs():
    sampled = sample(pool_of([0.1, 0.5, 0.8, 0.9]), SampleSpec("recency", 2))
    assert sorted(reps_of(sampled)) == [0.8, 0.9]


def test_uniform_forces_one_pair_per_bin():
    sampled = sample(pool_of([0.1, 0.2, 0.8]), SampleSpec("uniform", 2, bins=2))
    reps = sorted(reps_of(sampled))

    assert reps[0] in (0.1, 0.2)
    assert reps[1] == 0.8


def test_edge_is_seeded():
    pool = pool_of([i / 50 for i in range(50)])
    spec = SampleSpec("edge", 2, seed=5)
    assert sample(pool, spec).pairs == sample(pool, spec).pairs


def test_load_order_does_not_matter():
    pool = pool_of([i / 40 for i in range(40)])
    shuffled = list(pool)
    random.Random(1).shuffle(shuffled)
    for strategy in ("recency", "edge", "uniform"):
        spec = SampleSpec(strategy, 7, seed=3)
        assert sample(pool, spec).pairs == sample(shuffled, spec).pairs


def test_empty_pool_rejected():
    with pytest.raises(SamplingError):
        sample([], SampleSpec("edge", 1))


def test_recency_without_recent_pairs_rejected():
    with pytest.raises(SamplingError):
        sample(pool_of([0.1, 0.75]), SampleSpec("recency", 1))


def test_small_pool_reports_shortfall():
    sampled = sample(pool_of([0.1, 0.9, 0.95]), SampleSpec("recency", 5))

    assert len(sampled.pairs) == 2
    assert sampled.shortfall == 3
    assert sampled.metadata()["shortfall"] == 3


def test_uniform_skips_exhausted_bins():
    sampled = sample(pool_of([0.05] * 10 + [0.95]), SampleSpec("uniform", 6, bins=2))
    assert sorted(reps_of(sampled)) == [0.05] * 5 + [0.95]


def test_sample_is_sorted_by_pair_id():
    sampled = sample(pool_of([i / 30 for i in range(30)]), SampleSpec("edge", 10, seed=8))
    ids = [p.pair_id for p in sampled.pairs]
    assert ids == sorted(ids)


@pytest.mark.parametrize("kwargs", [
    {"strategy": "latest", "target_size": 1},
    {"strategy": "edge", "target_size": 0},
    {"strategy": "recency", "target_size": 1, "recency_threshold": 1.0},
    {"strategy": "uniform", "target_size": 1, "bins": 1},
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SampleSpec(**kwargs)


# --- Distribution properties on an edge-heavy pool ---

def test_recency_set_is_all_recent(edge_heavy_pool):
    sampled = sample(edge_heavy_pool, SampleSpec("recency", 1000, seed=1))

    assert len(sampled.pairs) == 1000
    assert all(r > 0.75 for r in reps_of(sampled))


def test_uniform_set_passes_chi_square(edge_heavy_pool):
    sampled = sample(edge_heavy_pool, SampleSpec("uniform", 1000, bins=10, seed=1))
    counts = sampled.histogram.counts

    assert sum(counts) == 1000
    assert stats.chisquare(counts).pvalue > 0.01


def test_edge_set_keeps_pool_shape(edge_heavy_pool):
    sampled = sample(edge_heavy_pool, SampleSpec("edge", 2500, seed=1))
    pool_hist = representative_histogram([p.representative for p in edge_heavy_pool], 10)

    l1 = sum(abs(a - b) for a, b in zip(sampled.histogram.proportions(), pool_hist.proportions()))
    assert l1 < 0.1


def test_seeded_runs_reproduce(edge_heavy_pool):
    for strategy in ("recency", "edge", "uniform"):
        spec = SampleSpec(strategy, 500, seed=42)
        first, second = sample(edge_heavy_pool, spec), sample(edge_heavy_pool, spec)
        assert [p.pair_id for p in first.pairs] == [p.pair_id for p in second.pairs]


# --- Export ---

def test_tuning_export_writes_lines_and_sidecar(tmp_path):
    sampled = sample(pool_of([0.8, 0.9]), SampleSpec("recency", 2, seed=4))
    path = export_tuning_set(sampled, tmp_path / "tuning_recency.jsonl")

    lines = path.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line) for line in lines] == [
        {"instruction": "question 0?", "output": "answer 0."},
        {"instruction": "question 1?", "output": "answer 1."},
    ]
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    assert meta["spec"]["strategy"] == "recency"
    assert meta["seed"] == 4
    assert meta["size"] == 2
    assert sidecar_path(path).name == "tuning_recency.meta.json"


def test_re_export_is_byte_identical(tmp_path):
    sampled = sample(pool_of([0.2, 0.4, 0.9]), SampleSpec("edge", 3))
    a = export_tuning_set(sampled, tmp_path / "a" / "set.jsonl")
    b = export_tuning_set(sampled, tmp_path / "b" / "set.jsonl")

    assert a.read_bytes() == b.read_bytes()
    assert sidecar_path(a).read_bytes() == sidecar_path(b).read_bytes()


def test_empty_set_is_not_exported(tmp_path):
    empty = SampledSet(SampleSpec("edge", 1), [], representative_histogram([], 10), "0" * 16)
    with pytest.raises(SamplingError):
        export_tuning_set(empty, tmp_path / "x.jsonl")


def test_benchmark_export_keeps_evidence(tmp_path):
    sampled = sample(pool_of([0.3, 0.6]), SampleSpec("uniform", 2, bins=2))
    path = export_benchmark_set(sampled, tmp_path / "benchmark_uniform.jsonl")

    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert {r["variant"] for r in rows} == {"uniform"}
    assert all(len(r["time_evidence"]) == 2 for r in rows)


# --- Benchmark assembly ---

def test_full_size_variants_are_disjoint():
    rng = random.Random(7)
    pool = pool_of([rng.betavariate(0.5, 0.5) for _ in range(650)])

    sets = assemble_benchmark(pool, [SampleSpec("uniform", 248, seed=0), SampleSpec("edge", 402, seed=0)])

    assert len(sets["edge"].pairs) == 402
    assert len(sets["uniform"].pairs) == 248
    edge_ids = {p.pair_id for p in sets["edge"].pairs}
    assert edge_ids.isdisjoint(p.pair_id for p in sets["uniform"].pairs)


def test_uniform_variant_is_flatter_than_edge(edge_heavy_pool):
    sets = assemble_benchmark(edge_heavy_pool, [SampleSpec("uniform", 248), SampleSpec("edge", 402)])

    def spread(counts):
        return max(counts) / min(counts)

    assert spread(sets["uniform"].histogram.counts) < spread(sets["edge"].histogram.counts)


def test_tuning_overlap_is_reported():
    pool = pool_of([0.2, 0.8], patient="p1")
    tuning = pool_of([0.5], patient="p1", mode="tuning")

    with pytest.raises(PatientOverlapError, match="patient overlap: p1"):
        assemble_benchmark(pool, [SampleSpec("edge", 1)], tuning_pool=tuning)


def test_tuning_pairs_cannot_form_a_benchmark():
    with pytest.raises(SamplingError):
        assemble_benchmark(pool_of([0.2], mode="tuning"), [SampleSpec("edge", 1)])


def test_recency_is_not_a_benchmark_variant():
    with pytest.raises(SamplingError):
        assemble_benchmark(pool_of([0.9]), [SampleSpec("recency", 1)])

"""
Instruction sets with controlled temporal distributions.

Three strategies draw from one generated pool:

- recency: seeded uniform draw among pairs whose representative position
  is past the recency threshold
- edge: seeded uniform draw from the whole pool, which keeps the pool's
  own (edge-heavy) shape
- uniform: bins over [0, 1] visited round-robin, one random pair per
  non-exhausted bin per round; exhausted bins are skipped, not backfilled

The pool is ordered by pair_id before any draw, so a (pool, spec) pair
always yields the same set regardless of the order pairs were loaded in.
"""

import hashlib
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .artifacts import PathLike, atomic_write, dumps_line, write_json
from .errors import PatientOverlapError, SamplingError, TimerError
from .genpipe import InstructionPair
from .temporal import PositionHistogram, representative_histogram

logger = logging.getLogger(__name__)

STRATEGIES = ("recency", "edge", "uniform")
BENCHMARK_VARIANTS = ("edge", "uniform")


@dataclass(frozen=True)
class SampleSpec:
    strategy: str
    target_size: int
    recency_threshold: float = 0.75
    bins: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if not 0 < self.recency_threshold < 1:
            raise ValueError("recency_threshold must be in (0, 1)")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")

    def to_json(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "target_size": self.target_size,
            "recency_threshold": self.recency_threshold,
            "bins": self.bins,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SampledSet:
    spec: SampleSpec
    pairs: List[InstructionPair]
    histogram: PositionHistogram
    pool_id: str
    shortfall: int = 0

    def metadata(self) -> Dict[str, Any]:
        return {
            "spec": self.spec.to_json(),
            "seed": self.spec.seed,
            "pool_id": self.pool_id,
            "size": len(self.pairs),
            "shortfall": self.shortfall,
            "histogram": self.histogram.to_json(),
        }


def pool_id(pool: Sequence[InstructionPair]) -> str:
    """Content id of a pool: hash of its sorted pair ids."""
    digest = hashlib.sha256("\n".join(sorted(p.pair_id for p in pool)).encode("utf-8"))
    return digest.hexdigest()[:16]


def bin_index(value: float, edges: np.ndarray) -> int:
    """Histogram bin of a position, with 1.0 in the last bin."""
    return min(int(np.searchsorted(edges, value, side="right")) - 1, len(edges) - 2)


def _stratified(pool: List[InstructionPair], n: int, bins: int, rng: random.Random) -> List[InstructionPair]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    buckets: List[List[InstructionPair]] = [[] for _ in range(bins)]
    for pair in pool:
        buckets[bin_index(pair.representative, edges)].append(pair)
    for bucket in buckets:
        rng.shuffle(bucket)

    chosen: List[InstructionPair] = []
    while len(chosen) < n and any(buckets):
        for bucket in buckets:
            if not bucket:
                continue
            chosen.append(bucket.pop())
            if len(chosen) == n:
                break
    return chosen


def sample(pool: Sequence[InstructionPair], spec: SampleSpec) -> SampledSet:
    """
    Draw one instruction set from a pool.

    A pool too small for the target yields a partial set; the missing
    count is reported as `shortfall` and logged.

    Raises:
        SamplingError: empty pool, or no pair qualifies for recency
    """
    if not pool:
        raise SamplingError("cannot sample from an empty pool")
    ordered = sorted(pool, key=lambda p: p.pair_id)
    rng = random.Random(spec.seed)
    n = spec.target_size

    if spec.strategy == "uniform":
        chosen = _stratified(ordered, n, spec.bins, rng)
    else:
        candidates = ordered
        if spec.strategy == "recency":
            candidates = [p for p in ordered if p.representative > spec.recency_threshold]
            if not candidates:
                raise SamplingError(
                    f"no pair has a representative position above {spec.recency_threshold}"
                )
        chosen = rng.sample(candidates, min(n, len(candidates)))

    shortfall = n - len(chosen)
    if shortfall:
        logger.warning(f"Pool supports only {len(chosen)} of {n} {spec.strategy} pairs")

    chosen.sort(key=lambda p: p.pair_id)
    hist = representative_histogram([p.representative for p in chosen], spec.bins)
    logger.info(f"✓ Sampled {len(chosen)} {spec.strategy} pairs (seed {spec.seed})")
    return SampledSet(spec, chosen, hist, pool_id(ordered), shortfall)


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.meta.json")


def _export(lines: List[Dict[str, Any]], path: PathLike, metadata: Dict[str, Any]) -> Path:
    try:
        written = atomic_write(path, "".join(dumps_line(line) + "\n" for line in lines))
        write_json(sidecar_path(path), metadata)
    except OSError as e:
        raise TimerError(f"cannot write {path}: {e}") from e
    return written


def export_tuning_set(sampled: SampledSet, path: PathLike) -> Path:
    """Write {"instruction", "output"} JSONL plus a .meta.json sidecar."""
    if not sampled.pairs:
        raise SamplingError("refusing to export an empty instruction set")
    lines = [{"instruction": p.question, "output": p.answer} for p in sampled.pairs]
    written = _export(lines, path, sampled.metadata())
    logger.info(f"✓ Exported {len(lines)} tuning pairs to {written}")
    return written


def export_benchmark_set(sampled: SampledSet, path: PathLike, variant: Optional[str] = None) -> Path:
    """Write pair JSONL (time evidence kept) tagged with its variant."""
    if not sampled.pairs:
        raise SamplingError("refusing to export an empty benchmark")
    variant = variant or sampled.spec.strategy
    lines = [{**p.to_json(), "variant": variant} for p in sampled.pairs]
    written = _export(lines, path, {**sampled.metadata(), "variant": variant})
    logger.info(f"✓ Exported {len(lines)} {variant} benchmark pairs to {written}")
    return written


def check_disjoint(pool: Sequence[InstructionPair], tuning_pool: Sequence[InstructionPair]) -> None:
    shared = sorted({p.patient_id for p in pool} & {p.patient_id for p in tuning_pool})
    if shared:
        raise PatientOverlapError(shared)


def assemble_benchmark(
    pool: Sequence[InstructionPair],
    variants: Sequence[SampleSpec],
    tuning_pool: Optional[Sequence[InstructionPair]] = None,
    min_evidence: int = 2,
) -> Dict[str, SampledSet]:
    """
    Build benchmark variants from one multi-evidence pool.

    Variants are drawn in the given order, each from the pairs earlier
    variants left behind, so no pair appears in two variants.

    Raises:
        PatientOverlapError: the pool shares patients with tuning_pool
        SamplingError: pool is not benchmark-mode multi-evidence data,
            or a variant strategy is not a benchmark variant
    """
    if tuning_pool is not None:
        check_disjoint(pool, tuning_pool)
    not_benchmark = [p.pair_id for p in pool if p.mode != "benchmark"]
    if not_benchmark:
        raise SamplingError(f"pool holds {len(not_benchmark)} non-benchmark pairs, e.g. {not_benchmark[0]}")
    thin = [p.pair_id for p in pool if len(set(p.evidence.timestamps)) < min_evidence]
    if thin:
        raise SamplingError(f"pool holds {len(thin)} pairs with fewer than {min_evidence} evidence dates")

    remaining = list(pool)
    sets: Dict[str, SampledSet] = {}
    for spec in variants:
        if spec.strategy not in BENCHMARK_VARIANTS:
            raise SamplingError(f"'{spec.strategy}' is not a benchmark variant")
        if spec.strategy in sets:
            raise SamplingError(f"variant '{spec.strategy}' requested twice")
        sampled = sample(remaining, spec)
        sets[spec.strategy] = sampled
        taken = {p.pair_id for p in sampled.pairs}
        remaining = [p for p in remaining if p.pair_id not in taken]
    return sets

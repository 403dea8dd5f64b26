"""
Normalized temporal positions and evidence-distribution analysis.

Positions map an evidence timestamp into [0, 1] relative to the first
and last visit of its context chunk:

    P = (t - t_min) / (t_max - t_min)

Analyses (histograms, tail-region fractions, shape classification) work
on anything carrying `positions` and `representative`: TimeEvidence
objects built against a chunk, or PositionRecord rows loaded back from a
positions file.
"""

import csv
import io
import logging
from dataclasses import dataclass
from datetime import datetime
from statistics import fmean
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EvidenceRangeError, MetricInputError
from .timeline import ContextChunk, format_timestamp

logger = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1)
DEGENERATE_POSITION = 0.5
REGION_THRESHOLDS = (0.75, 0.85, 0.95)
HISTOGRAM_COLUMNS = ["bin_lo", "bin_hi", "count", "density"]

Instant = Union[datetime, float, int]


@dataclass(frozen=True)
class TimeEvidence:
    """Evidence timestamps of one pair and their positions in its chunk."""

    timestamps: Tuple[datetime, ...]
    positions: Tuple[float, ...]
    representative: float

    def __post_init__(self):
        if not self.timestamps or len(self.timestamps) != len(self.positions):
            raise ValueError("evidence needs one position per timestamp (at least one)")

    @property
    def dates(self) -> List[str]:
        return [format_timestamp(t) for t in self.timestamps]

    def to_record(self, pair_id: str) -> "PositionRecord":
        return PositionRecord(pair_id, self.positions, self.representative)


@dataclass(frozen=True)
class PositionRecord:
    """One line of the positions file."""

    pair_id: str
    positions: Tuple[float, ...]
    representative: float

    def to_json(self) -> Dict[str, object]:
        return {
            "pair_id": self.pair_id,
            "positions": list(self.positions),
            "representative": self.representative,
        }

    @classmethod
    def from_json(cls, payload: Dict[str, object]) -> "PositionRecord":
        positions = tuple(float(p) for p in payload["positions"])
        if not positions or any(not 0.0 <= p <= 1.0 for p in positions):
            raise ValueError(f"positions must be non-empty and inside [0, 1]: {payload['pair_id']}")
        representative = payload.get("representative")
        if representative is None:
            representative = fmean(positions)
        return cls(str(payload["pair_id"]), positions, float(representative))


Evidence = Union[TimeEvidence, PositionRecord]


@dataclass(frozen=True)
class PositionHistogram:
    bin_count: int
    edges: Tuple[float, ...]
    counts: Tuple[int, ...]
    total: int

    def densities(self) -> List[float]:
        width = 1.0 / self.bin_count
        if self.total == 0:
            return [0.0] * self.bin_count
        return [c / self.total / width for c in self.counts]

    def proportions(self) -> List[float]:
        if self.total == 0:
            return [0.0] * self.bin_count
        return [c / self.total for c in self.counts]

    def to_csv(self) -> str:
        """Plot-ready CSV: bin_lo,bin_hi,count,density."""
        buffer = io.StringIO(newline="")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(HISTOGRAM_COLUMNS)
        for i, density in enumerate(self.densities()):
            writer.writerow([
                f"{self.edges[i]:.6g}", f"{self.edges[i + 1]:.6g}",
                self.counts[i], f"{density:.6f}",
            ])
        return buffer.getvalue()

    def to_json(self) -> Dict[str, object]:
        return {"bins": self.bin_count, "counts": list(self.counts), "total": self.total}


@dataclass(frozen=True)
class RegionFractions:
    frac_last_quarter: float
    frac_last_15: float
    frac_last_5: float

    def to_json(self) -> Dict[str, float]:
        return {
            "frac_last_quarter": self.frac_last_quarter,
            "frac_last_15": self.frac_last_15,
            "frac_last_5": self.frac_last_5,
        }


@dataclass(frozen=True)
class ClassifierThresholds:
    recency_cut: float = 0.75
    recency_mass: float = 0.5
    edge_low: float = 0.1
    edge_high: float = 0.9
    edge_mass: float = 0.4


def _seconds(t: Instant) -> float:
    if isinstance(t, datetime):
        return (t - EPOCH).total_seconds()
    return float(t)


def relative_position(t: Instant, t_min: Instant, t_max: Instant) -> float:
    """Normalized position of t inside [t_min, t_max]; 0.5 for a zero-length span."""
    ts, lo, hi = _seconds(t), _seconds(t_min), _seconds(t_max)
    if ts < lo or ts > hi:
        raise EvidenceRangeError([str(t)], str(t_min), str(t_max))
    if hi == lo:
        return DEGENERATE_POSITION
    return (ts - lo) / (hi - lo)


def evidence_positions(timestamps: Sequence[datetime], chunk: ContextChunk) -> TimeEvidence:
    """Place every evidence timestamp of a pair inside its chunk."""
    if not timestamps:
        raise ValueError("at least one evidence timestamp is required")
    offenders = [format_timestamp(t) for t in timestamps if t < chunk.t_min or t > chunk.t_max]
    if offenders:
        raise EvidenceRangeError(offenders, format_timestamp(chunk.t_min), format_timestamp(chunk.t_max))
    positions = tuple(relative_position(t, chunk.t_min, chunk.t_max) for t in timestamps)
    return TimeEvidence(tuple(timestamps), positions, fmean(positions))


def _histogram_values(values: Sequence[float], bins: int) -> PositionHistogram:
    if bins < 2:
        raise ValueError("histogram needs at least 2 bins")
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(0.0, 1.0))
    return PositionHistogram(
        bin_count=bins,
        edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        total=int(counts.sum()),
    )


def histogram(evidences: Iterable[Evidence], bins: int = 10) -> PositionHistogram:
    """Histogram of every individual evidence position (1.0 lands in the last bin)."""
    values = [p for ev in evidences for p in ev.positions]
    return _histogram_values(values, bins)


def representative_histogram(representatives: Sequence[float], bins: int = 10) -> PositionHistogram:
    return _histogram_values(representatives, bins)


def region_fractions(evidences: Sequence[Evidence]) -> RegionFractions:
    """Share of pairs whose representative lies in the last 25% / 15% / 5%."""
    reps = [ev.representative for ev in evidences]
    if not reps:
        raise MetricInputError("region fractions need at least one pair")
    n = len(reps)
    q, f15, f5 = (sum(1 for r in reps if r > cut) / n for cut in REGION_THRESHOLDS)
    return RegionFractions(q, f15, f5)


def classify_distribution(
    hist: PositionHistogram,
    representatives: Sequence[float],
    thresholds: Optional[ClassifierThresholds] = None,
) -> str:
    """Label a distribution as 'recency', 'edge' or 'uniform-like'."""
    if hist.total <= 0 or not representatives:
        raise MetricInputError("cannot classify an empty distribution")
    th = thresholds or ClassifierThresholds()
    n = len(representatives)
    recent = sum(1 for r in representatives if r > th.recency_cut) / n
    if recent >= th.recency_mass:
        return "recency"
    edges = sum(1 for r in representatives if r < th.edge_low or r > th.edge_high) / n
    if edges >= th.edge_mass:
        return "edge"
    return "uniform-like"


def visit_positions(chunk: ContextChunk) -> List[float]:
    return [relative_position(v.start, chunk.t_min, chunk.t_max) for v in chunk.visits]


def time_span_days(chunks: Sequence[ContextChunk]) -> float:
    """Mean [t_min, t_max] span of the chunks, in days."""
    if not chunks:
        raise MetricInputError("time span needs at least one chunk")
    return fmean((c.t_max - c.t_min).total_seconds() / 86400.0 for c in chunks)


def analyze(
    evidences: Sequence[Evidence],
    bins: int = 10,
    thresholds: Optional[ClassifierThresholds] = None,
) -> Dict[str, object]:
    """Histogram, region fractions and shape label in one report dict."""
    hist = histogram(evidences, bins)
    reps = [ev.representative for ev in evidences]
    label = classify_distribution(hist, reps, thresholds)
    fractions = region_fractions(evidences)
    logger.info(
        f"✓ Analyzed {len(reps)} pairs: {label} "
        f"(last quarter {fractions.frac_last_quarter:.1%})"
    )
    return {
        "pairs": len(reps),
        "positions": hist.total,
        "label": label,
        "region_fractions": fractions.to_json(),
        "histogram": hist.to_json(),
    }

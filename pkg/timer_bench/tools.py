"""
JSON-string operations behind the MCP server.

Each function validates its arguments, runs one pipeline operation and
returns a pretty-printed JSON string. Errors come back as an
{"error", "details"} payload instead of raising, so a bad call never
takes the server down.
"""

import json
import logging
from typing import Any, Dict, List, Optional

from .genpipe import GenerationConfig, generate_pairs
from .judge import HeadToHeadResult, judge_pair, spearman, win_rates
from .metrics import bootstrap, describe_lengths, rouge_l, score_pair
from .providers import make_provider
from .temporal import PositionRecord, analyze, relative_position
from .timeline import chunk_timeline, group_by_patient, parse_events, parse_timestamp, parse_xml, serialize_xml

logger = logging.getLogger(__name__)


def _error(message: str, e: Exception, **context: Any) -> str:
    logger.error(f"❌ {message}: {e}")
    return json.dumps({"error": message, "details": str(e), **context}, indent=2)


def chunk_events(events: str, fmt: str = "csv", token_budget: int = 16000, on_oversize: str = "error") -> str:
    """Ingest an event file's text and cut every patient into XML chunks."""
    if not events.strip():
        return json.dumps({"error": "No events provided"}, indent=2)
    try:
        parsed = parse_events(events.encode("utf-8"), fmt)
        timelines = group_by_patient(parsed.events)
        chunks = []
        for pid in sorted(timelines):
            for chunk in chunk_timeline(timelines[pid], token_budget, on_oversize=on_oversize):
                chunks.append({
                    "chunk_ref": chunk.chunk_ref,
                    "token_estimate": chunk.token_estimate,
                    "truncated": chunk.truncated,
                    "xml": serialize_xml(chunk),
                })
        return json.dumps({
            "chunks": chunks,
            "row_errors": [{"line": e.line, "error": e.message} for e in parsed.errors],
        }, indent=2)
    except Exception as e:
        return _error("Failed to chunk events", e)


def relative_positions(timestamps: List[str], t_min: str, t_max: str) -> str:
    try:
        lo, hi = parse_timestamp(t_min), parse_timestamp(t_max)
        positions = [relative_position(parse_timestamp(t), lo, hi) for t in timestamps]
        return json.dumps({"positions": positions}, indent=2)
    except Exception as e:
        return _error("Failed to compute positions", e, t_min=t_min, t_max=t_max)


def position_report(positions: List[List[float]], bins: int = 10) -> str:
    """Histogram, region fractions and distribution label for per-pair positions."""
    if not positions:
        return json.dumps({"error": "No positions provided"}, indent=2)
    try:
        records = [
            PositionRecord.from_json({"pair_id": str(i), "positions": p})
            for i, p in enumerate(positions)
        ]
        return json.dumps(analyze(records, bins), indent=2)
    except Exception as e:
        return _error("Failed to analyze positions", e)


def score_response(candidate: str, reference: str) -> str:
    try:
        scores = score_pair(candidate, reference)
        triple = rouge_l(candidate, reference)
        scores["rouge_l_precision"] = triple.precision
        scores["rouge_l_recall"] = triple.recall
        return json.dumps(scores, indent=2, sort_keys=True)
    except Exception as e:
        return _error("Failed to score response", e)


def bootstrap_scores(scores: List[float], n_resamples: int = 10000, sample_size: int = 100, seed: int = 0) -> str:
    try:
        return json.dumps(bootstrap(scores, n_resamples, sample_size, seed).to_json(), indent=2)
    except Exception as e:
        return _error("Failed to bootstrap scores", e)


def spearman_correlation(xs: List[float], ys: List[float]) -> str:
    try:
        return json.dumps({"rho": spearman(xs, ys), "n": len(xs)}, indent=2)
    except Exception as e:
        return _error("Failed to compute Spearman correlation", e)


def win_rate_summary(outcomes: List[str]) -> str:
    """Win/tie rates for a list of 'A', 'B' or 'tie' outcomes."""
    try:
        results = [
            HeadToHeadResult(pair_id=str(i), outcome=o, shown_first="A")
            for i, o in enumerate(outcomes)
        ]
        return json.dumps(win_rates(results).to_json(), indent=2)
    except Exception as e:
        return _error("Failed to compute win rates", e)


def length_statistics(questions: List[str], answers: List[str]) -> str:
    try:
        return json.dumps(describe_lengths(questions, answers), indent=2)
    except Exception as e:
        return _error("Failed to compute length statistics", e)


async def generate_for_record(record_xml: str, count: int = 5, mode: str = "tuning", mock: bool = False) -> str:
    """Generate grounded instruction pairs for one XML record."""
    try:
        chunk = parse_xml(record_xml)
        provider = make_provider(mock=mock)
        result = await generate_pairs(chunk, provider, GenerationConfig(pairs_per_chunk=count, mode=mode))
        payload: Dict[str, Any] = {
            "pairs": [p.to_json() for p in result.pairs],
            "rejects": [r.to_json() for r in result.rejects],
            "warnings": result.warnings,
        }
        return json.dumps(payload, indent=2, ensure_ascii=False)
    except Exception as e:
        return _error("Failed to generate pairs", e)


async def judge_response(
    instruction: str,
    reference: str,
    response: str,
    mock: bool = False,
    pair_id: Optional[str] = None,
) -> str:
    try:
        provider = make_provider(mock=mock)
        verdict = await judge_pair(instruction, reference, response, provider, pair_id=pair_id or "")
        return json.dumps(verdict.to_json(), indent=2, ensure_ascii=False)
    except Exception as e:
        return _error("Failed to judge response", e)

"""
Instruction-pair generation from serialized context chunks.

The pipeline for one chunk: render the generation prompt around the XML
record, call the provider, pull the first JSON array out of the reply,
validate each element and ground its time evidence against the chunk's
visit dates. Chunks run concurrently under a semaphore and are merged
back in chunk order, so output does not depend on completion order.
"""

import asyncio
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from . import api
from .errors import GenerationParseError, ProviderError, TimerError
from .prompts import DEFAULT_VERSION, load_template, render
from .providers import Provider, ProviderRequest, ProviderResponse
from .temporal import TimeEvidence, evidence_positions
from .timeline import ContextChunk, TokenEstimator, estimate_tokens, fit_recent, serialize_xml

logger = logging.getLogger(__name__)

MODES = ("tuning", "benchmark")
_FENCE = re.compile(r"```(?:json|JSON)?")

REJECT_NOT_OBJECT = "not an object"
REJECT_MISSING = "missing or empty field: {field}"
REJECT_NO_EVIDENCE = "no time evidence"
REJECT_BAD_EVIDENCE = "evidence not in record"


@dataclass(frozen=True)
class GenerationConfig:
    """Settings for one generation run.

    Attributes:
        pairs_per_chunk: pairs requested per chunk (>= 1)
        mode: 'tuning' or 'benchmark'
        provider / model: provider name and model id
        decoding: opaque decoding options passed to the provider
        max_retries: extra attempts after an unparseable reply (>= 0)
        retry_backoff: base delay in seconds between attempts (doubles each time)
        min_evidence_for_benchmark: k of the multi-evidence filter
        parallelism: concurrent chunk tasks
        template_version: prompt template version
    """

    pairs_per_chunk: int = 5
    mode: str = "tuning"
    provider: str = "mock"
    model: str = "mock-1"
    decoding: Mapping[str, Any] = field(default_factory=dict)
    max_retries: int = 2
    retry_backoff: float = 0.0
    min_evidence_for_benchmark: int = 2
    parallelism: int = api.DEFAULT_PARALLELISM
    template_version: str = DEFAULT_VERSION

    def __post_init__(self):
        if self.pairs_per_chunk < 1:
            raise ValueError("pairs_per_chunk must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.min_evidence_for_benchmark < 1:
            raise ValueError("min_evidence_for_benchmark must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def evidence_k(self) -> int:
        return self.min_evidence_for_benchmark if self.mode == "benchmark" else 1


@dataclass(frozen=True)
class InstructionPair:
    pair_id: str
    patient_id: str
    chunk_ref: str
    question: str
    answer: str
    evidence: TimeEvidence
    mode: str

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ValueError(f"pair {self.pair_id} needs a question and an answer")

    @property
    def representative(self) -> float:
        return self.evidence.representative

    def to_json(self) -> Dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "patient_id": self.patient_id,
            "chunk_ref": self.chunk_ref,
            "mode": self.mode,
            "question": self.question,
            "answer": self.answer,
            "time_evidence": self.evidence.dates,
            "positions": list(self.evidence.positions),
            "representative": self.evidence.representative,
        }

    @classmethod
    def from_json(cls, payload: Mapping[str, Any]) -> "InstructionPair":
        evidence = TimeEvidence(
            timestamps=tuple(datetime.fromisoformat(d) for d in payload["time_evidence"]),
            positions=tuple(float(p) for p in payload["positions"]),
            representative=float(payload["representative"]),
        )
        return cls(
            pair_id=payload["pair_id"],
            patient_id=payload["patient_id"],
            chunk_ref=payload["chunk_ref"],
            question=payload["question"],
            answer=payload["answer"],
            evidence=evidence,
            mode=payload["mode"],
        )


@dataclass(frozen=True)
class Candidate:
    index: int
    question: str
    answer: str
    time_evidence: Tuple[str, ...]


@dataclass(frozen=True)
class Rejection:
    chunk_ref: str
    index: int
    reason: str
    payload: Any

    def to_json(self) -> Dict[str, Any]:
        return {"chunk_ref": self.chunk_ref, "index": self.index, "reason": self.reason, "payload": self.payload}


@dataclass
class ParsedResponse:
    candidates: List[Candidate] = field(default_factory=list)
    rejects: List[Rejection] = field(default_factory=list)

    @property
    def parsed(self) -> int:
        return len(self.candidates) + len(self.rejects)


@dataclass
class ChunkResult:
    chunk_ref: str
    pairs: List[InstructionPair] = field(default_factory=list)
    rejects: List[Rejection] = field(default_factory=list)
    audit: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class ChunkFailure:
    chunk_ref: str
    error: str
    kind: str

    def to_json(self) -> Dict[str, str]:
        return {"chunk_ref": self.chunk_ref, "kind": self.kind, "error": self.error}


@dataclass
class DatasetResult:
    pairs: List[InstructionPair] = field(default_factory=list)
    rejects: List[Rejection] = field(default_factory=list)
    failures: List[ChunkFailure] = field(default_factory=list)
    audit: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


# --- Prompting ---

def build_generation_prompt(chunk_xml: str, config: GenerationConfig) -> str:
    """Render the generation template around an XML record."""
    if not chunk_xml.strip():
        raise ValueError("chunk_xml is empty")
    mode_clause = ""
    if config.mode == "benchmark":
        mode_clause = load_template("benchmark_clause", config.template_version)
    template = load_template("generation", config.template_version)
    return render(template, record=chunk_xml.rstrip("\n"), count=config.pairs_per_chunk, mode_clause=mode_clause)


def _first_json_array(raw: str) -> List[Any]:
    text = _FENCE.sub("", raw)
    decoder = json.JSONDecoder()
    start = text.find("[")
    while start != -1:
        try:
            value, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, list):
            return value
        start = text.find("[", start + 1)
    raise GenerationParseError("no JSON array found in provider response")


def parse_generation_response(raw: str, chunk: ContextChunk) -> ParsedResponse:
    """
    Extract and validate candidate pairs from a provider reply.

    The first JSON array in the text is used (surrounding prose and code
    fences are tolerated). Elements need non-empty question and answer
    strings and at least one time_evidence date that matches a visit date
    of the chunk exactly; other elements become rejections.

    Raises:
        GenerationParseError: no JSON array in the reply
    """
    items = _first_json_array(raw)
    visit_dates = set(chunk.visit_dates)
    result = ParsedResponse()

    for index, item in enumerate(items):
        def reject(reason: str) -> None:
            result.rejects.append(Rejection(chunk.chunk_ref, index, reason, item))

        if not isinstance(item, dict):
            reject(REJECT_NOT_OBJECT)
            continue
        missing = [
            name for name in ("question", "answer")
            if not isinstance(item.get(name), str) or not item[name].strip()
        ]
        if missing:
            reject(REJECT_MISSING.format(field=missing[0]))
            continue
        evidence = item.get("time_evidence")
        if not isinstance(evidence, list) or not evidence:
            reject(REJECT_NO_EVIDENCE)
            continue
        dates = [str(d).strip() for d in evidence]
        if any(d not in visit_dates for d in dates):
            reject(REJECT_BAD_EVIDENCE)
            continue
        result.candidates.append(Candidate(index, item["question"].strip(), item["answer"].strip(), tuple(dates)))

    return result


# --- Generation ---

async def _call(provider: Provider, request: ProviderRequest, limiter: Optional[api.RateLimiter]) -> ProviderResponse:
    if limiter is not None:
        await limiter.wait()
    return await provider.complete(request)


async def generate_pairs(
    chunk: ContextChunk,
    provider: Provider,
    config: GenerationConfig,
    limiter: Optional[api.RateLimiter] = None,
) -> ChunkResult:
    """
    Generate grounded instruction pairs for one chunk.

    An unparseable reply is retried with the same prompt up to
    config.max_retries times. Zero valid pairs is a warning, not an error.

    Raises:
        GenerationParseError: every attempt failed to parse
        ProviderError: transport failure after the provider's own retries
    """
    prompt = build_generation_prompt(serialize_xml(chunk), config)
    request = ProviderRequest(
        prompt=prompt,
        task="generate",
        options=dict(config.decoding),
        metadata={"count": config.pairs_per_chunk, "mode": config.mode, "chunk_ref": chunk.chunk_ref},
    )
    result = ChunkResult(chunk.chunk_ref)
    parsed: Optional[ParsedResponse] = None

    for attempt in range(config.max_retries + 1):
        response = await _call(provider, request, limiter)
        result.audit.append({
            "chunk_ref": chunk.chunk_ref,
            "attempt": attempt,
            "template": config.template_version,
            **response.audit(),
        })
        try:
            parsed = parse_generation_response(response.text, chunk)
            break
        except GenerationParseError as e:
            logger.warning(f"Unparseable reply for {chunk.chunk_ref} (attempt {attempt + 1}): {e}")
            if config.retry_backoff and attempt < config.max_retries:
                await asyncio.sleep(config.retry_backoff * 2 ** attempt)

    if parsed is None:
        raise GenerationParseError(
            f"{chunk.chunk_ref}: no JSON array after {config.max_retries + 1} attempts"
        )

    for n, cand in enumerate(parsed.candidates):
        evidence = evidence_positions([datetime.fromisoformat(d) for d in cand.time_evidence], chunk)
        result.pairs.append(InstructionPair(
            pair_id=f"{chunk.chunk_ref}-q{n:03d}",
            patient_id=chunk.patient_id,
            chunk_ref=chunk.chunk_ref,
            question=cand.question,
            answer=cand.answer,
            evidence=evidence,
            mode=config.mode,
        ))
    result.rejects.extend(parsed.rejects)
    if not result.pairs:
        result.warnings.append(f"{chunk.chunk_ref}: no valid pairs")
        logger.warning(f"No valid pairs for {chunk.chunk_ref}")
    return result


async def generate_dataset(
    chunks: Sequence[ContextChunk],
    provider: Provider,
    config: GenerationConfig,
    limiter: Optional[api.RateLimiter] = None,
) -> DatasetResult:
    """Run generate_pairs over many chunks with bounded parallelism."""
    semaphore = asyncio.Semaphore(config.parallelism)

    async def run(chunk: ContextChunk):
        async with semaphore:
            try:
                return await generate_pairs(chunk, provider, config, limiter)
            except GenerationParseError as e:
                return ChunkFailure(chunk.chunk_ref, str(e), "parse")
            except ProviderError as e:
                return ChunkFailure(chunk.chunk_ref, str(e), "provider")

    outcomes = await asyncio.gather(*(run(c) for c in chunks))
    merged = DatasetResult()
    for outcome in outcomes:
        if isinstance(outcome, ChunkFailure):
            merged.failures.append(outcome)
            logger.error(f"❌ Chunk {outcome.chunk_ref} failed ({outcome.kind}): {outcome.error}")
            continue
        merged.pairs.extend(outcome.pairs)
        merged.rejects.extend(outcome.rejects)
        merged.audit.extend(outcome.audit)
        merged.warnings.extend(outcome.warnings)

    logger.info(
        f"✓ Generated {len(merged.pairs)} pairs from {len(chunks)} chunks "
        f"({len(merged.rejects)} rejected, {len(merged.failures)} chunk failures)"
    )
    return merged


def filter_multi_evidence(pairs: Sequence[InstructionPair], k: int) -> List[InstructionPair]:
    """Keep pairs citing at least k distinct evidence timestamps."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [p for p in pairs if len(set(p.evidence.timestamps)) >= k]


# --- Model-under-test answers ---

@dataclass(frozen=True)
class ModelAnswer:
    pair_id: str
    response: str
    truncated: bool

    def to_json(self) -> Dict[str, Any]:
        return {"pair_id": self.pair_id, "response": self.response, "truncated": self.truncated}


async def answer_question(
    chunk: ContextChunk,
    question: str,
    provider: Provider,
    context_budget: Optional[int] = None,
    estimator: TokenEstimator = estimate_tokens,
    options: Optional[Mapping[str, Any]] = None,
    template_version: str = DEFAULT_VERSION,
    limiter: Optional[api.RateLimiter] = None,
) -> Tuple[str, bool]:
    """Ask the model under test one instruction about a record.

    With a context_budget smaller than the chunk, only the most recent
    visits that fit are shown.
    """
    shown = chunk
    if context_budget is not None and chunk.token_estimate > context_budget:
        shown = fit_recent(chunk, context_budget, estimator)
    prompt = render(
        load_template("answer", template_version),
        record=serialize_xml(shown).rstrip("\n"),
        instruction=question,
    )
    request = ProviderRequest(prompt=prompt, task="answer", options=dict(options or {}))
    response = await _call(provider, request, limiter)
    return response.text.strip(), shown is not chunk


async def answer_benchmark(
    pairs: Sequence[InstructionPair],
    chunks: Mapping[str, ContextChunk],
    provider: Provider,
    parallelism: int = api.DEFAULT_PARALLELISM,
    context_budget: Optional[int] = None,
    limiter: Optional[api.RateLimiter] = None,
) -> Tuple[List[ModelAnswer], List[ChunkFailure]]:
    """Collect model-under-test responses for every benchmark pair."""
    semaphore = asyncio.Semaphore(parallelism)

    async def run(pair: InstructionPair):
        chunk = chunks.get(pair.chunk_ref)
        if chunk is None:
            return ChunkFailure(pair.chunk_ref, f"{pair.pair_id}: chunk not found", "input")
        async with semaphore:
            try:
                text, truncated = await answer_question(
                    chunk, pair.question, provider, context_budget, limiter=limiter
                )
            except TimerError as e:
                return ChunkFailure(pair.chunk_ref, f"{pair.pair_id}: {e}", "provider")
        return ModelAnswer(pair.pair_id, text, truncated)

    outcomes = await asyncio.gather(*(run(p) for p in pairs))
    answers = sorted((o for o in outcomes if isinstance(o, ModelAnswer)), key=lambda a: a.pair_id)
    failures = [o for o in outcomes if isinstance(o, ChunkFailure)]
    logger.info(f"✓ Collected {len(answers)} responses ({len(failures)} failures)")
    return answers, failures

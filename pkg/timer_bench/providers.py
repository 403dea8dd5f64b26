"""
Text-generation providers.

A provider has one operation: text in, text out, plus decoding options.
The HTTPS adapters talk to commercial completion APIs through
api._make_provider_post; MockProvider answers offline and
deterministically so the whole pipeline can run on a laptop.
"""

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Protocol, Sequence, Union

from . import api
from .errors import ProviderError, TimelineError
from .metrics import rouge_l
from .timeline import ContextChunk, parse_xml

logger = logging.getLogger(__name__)

TASKS = ("generate", "answer", "judge", "head2head")
HEAD2HEAD_POLICIES = ("first", "overlap")

_RECORD = re.compile(r"<patient\b.*?</patient>", re.DOTALL)
_DATE = re.compile(r"\b\d{4}-\d{2}-\d{2}\b")


@dataclass(frozen=True)
class ProviderRequest:
    prompt: str
    task: str = "generate"
    options: Mapping[str, Any] = field(default_factory=dict)
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    provider: str
    model: str
    status: str = "ok"
    usage: Mapping[str, Any] = field(default_factory=dict)

    def audit(self) -> Dict[str, Any]:
        return {
            "provider": self.provider,
            "model": self.model,
            "status": self.status,
            "usage": dict(self.usage),
            "raw": self.text,
        }


class Provider(Protocol):
    name: str
    model: str

    async def complete(self, request: ProviderRequest) -> ProviderResponse:
        ...


def prompt_key(prompt: str) -> str:
    """Stable key used to look up fixture responses."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def _section(prompt: str, tag: str) -> str:
    match = re.search(rf"<{tag}>\n?(.*?)\n?</{tag}>", prompt, re.DOTALL)
    return match.group(1).strip() if match else ""


def _event_summary(event) -> str:
    if event.event_type == "note" and event.text:
        return event.text
    parts = [event.event_type]
    if event.code:
        parts.append(event.code)
    if event.value is not None:
        parts.append(f"{event.value}{' ' + event.unit if event.unit else ''}")
    if event.text:
        parts.append(event.text)
    return " ".join(parts)


class MockProvider:
    """
    Deterministic offline provider.

    Resolution order for every request: the scripted sequence (if any),
    then fixtures keyed by prompt_key(prompt), then a rule-based responder
    per task seeded by the prompt hash.

    Args:
        fixtures: prompt_key -> response text, or a list consumed one call
            at a time (the last entry repeats)
        script: responses returned in order regardless of the prompt
        head2head_policy: 'first' always prefers the response shown first;
            'overlap' prefers the response closer to the reference
        answer_quality: share of record facts the mock model under test
            keeps in its answers
        invalid_evidence_rate: share of generated candidates that cite a
            date missing from the record
    """

    name = "mock"

    def __init__(
        self,
        model: str = "mock-1",
        fixtures: Optional[Mapping[str, Union[str, Sequence[str]]]] = None,
        script: Optional[Sequence[str]] = None,
        head2head_policy: str = "overlap",
        answer_quality: float = 0.8,
        invalid_evidence_rate: float = 0.0,
    ):
        if head2head_policy not in HEAD2HEAD_POLICIES:
            raise ValueError(f"head2head_policy must be one of {HEAD2HEAD_POLICIES}")
        self.model = model
        self.fixtures = dict(fixtures or {})
        self.script = list(script or [])
        self.head2head_policy = head2head_policy
        self.answer_quality = answer_quality
        self.invalid_evidence_rate = invalid_evidence_rate
        self.calls: List[ProviderRequest] = []
        self._fixture_calls: Dict[str, int] = {}

    async def complete(self, request: ProviderRequest) -> ProviderResponse:
        self.calls.append(request)
        text = self._respond(request)
        usage = {"prompt_words": len(request.prompt.split()), "completion_words": len(text.split())}
        return ProviderResponse(text=text, provider=self.name, model=self.model, usage=usage)

    def _respond(self, request: ProviderRequest) -> str:
        if self.script:
            return self.script.pop(0) if len(self.script) > 1 else self.script[0]
        key = prompt_key(request.prompt)
        if key in self.fixtures:
            entry = self.fixtures[key]
            if isinstance(entry, str):
                return entry
            n = self._fixture_calls.get(key, 0)
            self._fixture_calls[key] = n + 1
            return entry[min(n, len(entry) - 1)]
        rng = random.Random(key)
        if request.task == "generate":
            return self._generate(request, rng)
        if request.task == "answer":
            return self._answer(request, rng)
        if request.task == "judge":
            return self._judge(request)
        if request.task == "head2head":
            return self._head2head(request)
        raise ProviderError(f"mock provider has no responder for task '{request.task}'")

    def _record(self, prompt: str) -> Optional[ContextChunk]:
        match = _RECORD.search(prompt)
        if not match:
            return None
        try:
            return parse_xml(match.group(0))
        except (TimelineError, ValueError):
            return None

    def _generate(self, request: ProviderRequest, rng: random.Random) -> str:
        chunk = self._record(request.prompt)
        if chunk is None:
            return "I could not find a patient record in the request."
        count = int(request.metadata.get("count", 3))
        wanted = 2 if request.metadata.get("mode") == "benchmark" else 1
        n = len(chunk.visits)
        items = []
        for _ in range(count):
            k = min(n, rng.randint(wanted, wanted + 1))
            picks = set()
            while len(picks) < k:
                # arcsine-shaped draw: visits near either end are favored
                picks.add(min(n - 1, int(rng.betavariate(0.5, 0.5) * n)))
            visits = [chunk.visits[i] for i in sorted(picks)]
            dates = [v.visit_date.isoformat() for v in visits]
            facts = [f"On {d}: " + "; ".join(_event_summary(e) for e in v.events) + "."
                     for d, v in zip(dates, visits)]
            if len(dates) > 1:
                question = f"How did the patient's condition and treatment evolve between {dates[0]} and {dates[-1]}?"
            else:
                question = f"What was documented at the visit on {dates[0]}?"
            if rng.random() < self.invalid_evidence_rate:
                dates = dates + ["1900-01-01"]
            items.append({"question": question, "answer": " ".join(facts), "time_evidence": dates})
        return "```json\n" + json.dumps(items, ensure_ascii=False, indent=2) + "\n```"

    def _answer(self, request: ProviderRequest, rng: random.Random) -> str:
        chunk = self._record(request.prompt)
        instruction = _section(request.prompt, "instruction")
        if chunk is None:
            return "The record does not contain enough information."
        wanted = set(_DATE.findall(instruction))
        facts = []
        for visit in chunk.visits:
            day = visit.visit_date.isoformat()
            if wanted and day not in wanted:
                continue
            kept = [_event_summary(e) for e in visit.events if rng.random() < self.answer_quality]
            if kept:
                facts.append(f"On {day}: " + "; ".join(kept) + ".")
        if not facts:
            return "The record does not mention this."
        return " ".join(facts)

    def _judge(self, request: ProviderRequest) -> str:
        reference = _section(request.prompt, "reference")
        response = _section(request.prompt, "response")
        score = rouge_l(response, reference)
        correct = "yes" if score.f >= 0.5 else "no"
        complete = "yes" if score.recall >= 0.8 else "no"
        return f"CORRECT: {correct}\nCOMPLETE: {complete}"

    def _head2head(self, request: ProviderRequest) -> str:
        if self.head2head_policy == "first":
            return "WINNER: first"
        reference = _section(request.prompt, "reference")
        first = rouge_l(_section(request.prompt, "response_1"), reference).f
        second = rouge_l(_section(request.prompt, "response_2"), reference).f
        if abs(first - second) < 1e-12:
            return "WINNER: tie"
        return "WINNER: first" if first > second else "WINNER: second"


class OpenAIChatProvider:
    """Adapter for OpenAI-compatible /chat/completions endpoints."""

    def __init__(
        self,
        model: str,
        name: str = "openai",
        base_url: str = "https://api.openai.com/v1",
        limiter: Optional[api.RateLimiter] = None,
    ):
        self.name = name
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.limiter = limiter

    async def complete(self, request: ProviderRequest) -> ProviderResponse:
        headers = {"Authorization": f"Bearer {api.get_provider_key(self.name)}"}
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            **dict(request.options),
        }
        data = await api._make_provider_post(
            f"{self.base_url}/chat/completions", payload, headers=headers, limiter=self.limiter
        )
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderError(f"Unexpected response shape from {self.name}: {e}") from e
        return ProviderResponse(
            text=text,
            provider=self.name,
            model=self.model,
            status=choice.get("finish_reason") or "ok",
            usage=data.get("usage", {}),
        )


class GeminiProvider:
    """Adapter for the Generative Language generateContent endpoint."""

    def __init__(
        self,
        model: str,
        name: str = "gemini",
        base_url: str = "https://generativelanguage.googleapis.com/v1beta",
        limiter: Optional[api.RateLimiter] = None,
    ):
        self.name = name
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.limiter = limiter

    async def complete(self, request: ProviderRequest) -> ProviderResponse:
        params = {"key": api.get_provider_key(self.name)}
        payload = {
            "contents": [{"role": "user", "parts": [{"text": request.prompt}]}],
            "generationConfig": dict(request.options),
        }
        data = await api._make_provider_post(
            f"{self.base_url}/models/{self.model}:generateContent",
            payload, params=params, limiter=self.limiter,
        )
        try:
            candidate = data["candidates"][0]
            text = "".join(part.get("text", "") for part in candidate["content"]["parts"])
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderError(f"Unexpected response shape from {self.name}: {e}") from e
        return ProviderResponse(
            text=text,
            provider=self.name,
            model=self.model,
            status=candidate.get("finishReason", "ok"),
            usage=data.get("usageMetadata", {}),
        )


ADAPTERS = {"openai": OpenAIChatProvider, "gemini": GeminiProvider}


def make_provider(
    name: Optional[str] = None,
    model: Optional[str] = None,
    mock: bool = False,
    limiter: Optional[api.RateLimiter] = None,
    **mock_options: Any,
) -> Provider:
    """Build the configured provider; `mock` forces the offline provider."""
    name = name or api.get_provider_name()
    model = model or api.get_model()
    if mock or name == "mock":
        return MockProvider(model=model if name == "mock" else "mock-1", **mock_options)
    if name not in ADAPTERS:
        raise ProviderError(f"Unknown provider '{name}', expected one of {sorted(ADAPTERS)} or 'mock'")
    return ADAPTERS[name](model=model, limiter=limiter or api.RateLimiter())

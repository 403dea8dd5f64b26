"""
LLM-as-judge scoring and head-to-head comparison.

The judge answers in a fixed grammar (two `KEY: value` lines), so
verdicts parse deterministically and the raw reply is kept for audit.
Head-to-head comparisons randomize which response is shown first and map
the judge's first/second answer back to A/B.
"""

import asyncio
import logging
import math
import random
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from . import api
from .errors import JudgeParseError, MetricInputError
from .prompts import DEFAULT_VERSION, load_template, render
from .providers import Provider, ProviderRequest

logger = logging.getLogger(__name__)

_CORRECT = re.compile(r"^\W*correct\W*:\s*(yes|no)\b", re.IGNORECASE | re.MULTILINE)
_COMPLETE = re.compile(r"^\W*complete\W*:\s*(yes|no)\b", re.IGNORECASE | re.MULTILINE)
_WINNER = re.compile(r"^\W*winner\W*:\s*(first|second|tie)\b", re.IGNORECASE | re.MULTILINE)

OUTCOMES = ("A", "B", "tie")


@dataclass(frozen=True)
class JudgeItem:
    pair_id: str
    instruction: str
    reference: str
    response: str


@dataclass(frozen=True)
class HeadToHeadItem:
    pair_id: str
    instruction: str
    reference: str
    response_a: str
    response_b: str


@dataclass(frozen=True)
class JudgeVerdict:
    pair_id: str
    correct: bool
    complete: bool
    raw: str

    def to_json(self) -> Dict[str, Any]:
        return {"pair_id": self.pair_id, "correct": self.correct, "complete": self.complete, "raw": self.raw}


@dataclass(frozen=True)
class JudgeFailure:
    pair_id: str
    error: str
    raw: str = ""

    def to_json(self) -> Dict[str, Any]:
        return {"pair_id": self.pair_id, "error": self.error, "raw": self.raw}


@dataclass(frozen=True)
class HeadToHeadResult:
    pair_id: str
    outcome: str
    shown_first: str
    raw: str = ""

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"outcome must be one of {OUTCOMES}")
        if self.shown_first not in ("A", "B"):
            raise ValueError("shown_first must be 'A' or 'B'")

    def to_json(self) -> Dict[str, Any]:
        return {"pair_id": self.pair_id, "shown_first": self.shown_first, "outcome": self.outcome}


@dataclass(frozen=True)
class JudgeAggregate:
    judged: int
    correct: int
    complete: int
    failed: int = 0

    @property
    def correct_pct(self) -> float:
        return 100.0 * self.correct / self.judged

    @property
    def complete_pct(self) -> float:
        return 100.0 * self.complete / self.judged

    def to_json(self) -> Dict[str, Any]:
        return {
            "judged": self.judged,
            "failed": self.failed,
            "correct_pct": self.correct_pct,
            "complete_pct": self.complete_pct,
            "average_pct": (self.correct_pct + self.complete_pct) / 2,
        }


@dataclass(frozen=True)
class WinRates:
    """Win/tie percentages kept as exact fractions; display values are rounded
    to hundredths by largest remainder so they still add up to 100."""

    win_a: Fraction
    win_b: Fraction
    tie: Fraction
    total: int
    failed: int = 0

    @property
    def margin(self) -> Fraction:
        return self.win_a - self.win_b

    def rounded(self) -> Tuple[float, float, float]:
        exact = [self.win_a * 100, self.win_b * 100, self.tie * 100]
        cents = [math.floor(v) for v in exact]
        order = sorted(range(3), key=lambda i: (exact[i] - cents[i], -i), reverse=True)
        for i in order[:10000 - sum(cents)]:
            cents[i] += 1
        return tuple(c / 100 for c in cents)

    def to_json(self) -> Dict[str, Any]:
        win_a, win_b, tie = self.rounded()
        return {
            "win_a_pct": win_a,
            "win_b_pct": win_b,
            "tie_pct": tie,
            "margin_pct": round(float(self.margin), 2),
            "compared": self.total,
            "failed": self.failed,
        }


# --- Parsing ---

def parse_verdict(raw: str, pair_id: str = "") -> JudgeVerdict:
    correct = _CORRECT.search(raw)
    complete = _COMPLETE.search(raw)
    if not correct or not complete:
        raise JudgeParseError("judge reply has no CORRECT/COMPLETE verdict", raw)
    return JudgeVerdict(
        pair_id=pair_id,
        correct=correct.group(1).lower() == "yes",
        complete=complete.group(1).lower() == "yes",
        raw=raw,
    )


def parse_winner(raw: str) -> str:
    match = _WINNER.search(raw)
    if not match:
        raise JudgeParseError("judge reply has no WINNER line", raw)
    return match.group(1).lower()


def _require_text(**texts: str) -> None:
    empty = [name for name, text in texts.items() if not text or not text.strip()]
    if empty:
        raise ValueError(f"empty input: {', '.join(empty)}")


async def _ask(
    provider: Provider,
    prompt: str,
    task: str,
    limiter: Optional[api.RateLimiter],
    parse,
):
    """Send a judge prompt, retrying once when the reply does not parse."""
    last: Optional[JudgeParseError] = None
    for attempt in range(2):
        if limiter is not None:
            await limiter.wait()
        response = await provider.complete(ProviderRequest(prompt=prompt, task=task))
        try:
            return parse(response.text), response.text
        except JudgeParseError as e:
            logger.debug(f"Unparseable {task} reply (attempt {attempt + 1})")
            last = e
    raise last


# --- Operations ---

async def judge_pair(
    instruction: str,
    reference: str,
    response: str,
    provider: Provider,
    pair_id: str = "",
    template_version: str = DEFAULT_VERSION,
    limiter: Optional[api.RateLimiter] = None,
) -> JudgeVerdict:
    """
    Score one response for correctness and completeness.

    Raises:
        JudgeParseError: the reply had no verdict twice in a row
    """
    _require_text(instruction=instruction, reference=reference, response=response)
    prompt = render(
        load_template("judge", template_version),
        instruction=instruction, reference=reference, response=response,
    )
    verdict, _ = await _ask(provider, prompt, "judge", limiter, lambda raw: parse_verdict(raw, pair_id))
    return verdict


def presentation_order(seed: int, pair_id: str) -> bool:
    """True when response A is shown first for this pair."""
    return random.Random(f"{seed}:{pair_id}").random() < 0.5


def balanced_orders(pair_ids: Sequence[str], seed: int) -> Dict[str, bool]:
    """
    Counterbalanced presentation orders for a batch: half the pairs (by
    pair_id order) show A first, assigned by a seeded shuffle.
    """
    ordered = sorted(pair_ids)
    flags = [i % 2 == 0 for i in range(len(ordered))]
    random.Random(seed).shuffle(flags)
    return dict(zip(ordered, flags))


async def head_to_head(
    instruction: str,
    reference: str,
    resp_a: str,
    resp_b: str,
    provider: Provider,
    seed: int,
    pair_id: str = "",
    a_first: Optional[bool] = None,
    template_version: str = DEFAULT_VERSION,
    limiter: Optional[api.RateLimiter] = None,
) -> HeadToHeadResult:
    """
    Compare two responses with a seeded presentation order.

    Args:
        a_first: force the order; by default it is drawn from (seed, pair_id)

    Raises:
        JudgeParseError: the reply had no WINNER line twice in a row
    """
    _require_text(instruction=instruction, resp_a=resp_a, resp_b=resp_b)
    if a_first is None:
        a_first = presentation_order(seed, pair_id)
    first, second = (resp_a, resp_b) if a_first else (resp_b, resp_a)
    prompt = render(
        load_template("head2head", template_version),
        instruction=instruction, reference=reference, response_1=first, response_2=second,
    )
    winner, raw = await _ask(provider, prompt, "head2head", limiter, parse_winner)
    if winner == "tie":
        outcome = "tie"
    elif (winner == "first") == a_first:
        outcome = "A"
    else:
        outcome = "B"
    shown_first = "A" if a_first else "B"
    logger.debug(f"{pair_id}: shown first {shown_first}, judge said {winner} -> {outcome}")
    return HeadToHeadResult(pair_id, outcome, shown_first, raw)


def aggregate(verdicts: Sequence[Union[JudgeVerdict, JudgeFailure]]) -> JudgeAggregate:
    """Correct/complete percentages over valid verdicts; failures are only counted."""
    valid = [v for v in verdicts if isinstance(v, JudgeVerdict)]
    failed = len(verdicts) - len(valid)
    if not valid:
        raise MetricInputError("no valid verdicts to aggregate")
    return JudgeAggregate(
        judged=len(valid),
        correct=sum(v.correct for v in valid),
        complete=sum(v.complete for v in valid),
        failed=failed,
    )


def average_score(verdicts: Sequence[Union[JudgeVerdict, JudgeFailure]]) -> float:
    """Mean of the correctness and completeness rates, in [0, 1]."""
    agg = aggregate(verdicts)
    return (agg.correct + agg.complete) / (2 * agg.judged)


def win_rates(results: Sequence[Union[HeadToHeadResult, JudgeFailure]]) -> WinRates:
    valid = [r for r in results if isinstance(r, HeadToHeadResult)]
    if not valid:
        raise MetricInputError("no valid head-to-head results")
    n = len(valid)
    counts = {o: sum(1 for r in valid if r.outcome == o) for o in OUTCOMES}
    return WinRates(
        win_a=Fraction(counts["A"] * 100, n),
        win_b=Fraction(counts["B"] * 100, n),
        tie=Fraction(counts["tie"] * 100, n),
        total=n,
        failed=len(results) - n,
    )


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Spearman rank correlation with average ranks for ties.

    Computed as the Pearson correlation of the rank vectors, which stays
    correct when ties are present.

    Raises:
        MetricInputError: length mismatch, fewer than 2 points, or a
            constant input ("undefined correlation")
    """
    if len(xs) != len(ys):
        raise MetricInputError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise MetricInputError("spearman needs at least 2 points")
    rx = rankdata(np.asarray(xs, dtype=float), method="average")
    ry = rankdata(np.asarray(ys, dtype=float), method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise MetricInputError("undefined correlation")
    return float(np.dot(dx, dy)) / math.sqrt(sxx * syy)


# --- Batch drivers ---

async def judge_all(
    items: Sequence[JudgeItem],
    provider: Provider,
    parallelism: int = api.DEFAULT_PARALLELISM,
    limiter: Optional[api.RateLimiter] = None,
) -> List[Union[JudgeVerdict, JudgeFailure]]:
    """Judge every item; failures are recorded, results come back in pair_id order."""
    semaphore = asyncio.Semaphore(parallelism)

    async def run(item: JudgeItem):
        async with semaphore:
            try:
                return await judge_pair(
                    item.instruction, item.reference, item.response, provider,
                    pair_id=item.pair_id, limiter=limiter,
                )
            except JudgeParseError as e:
                return JudgeFailure(item.pair_id, str(e), e.raw)
            except ValueError as e:
                return JudgeFailure(item.pair_id, str(e))

    outcomes = await asyncio.gather(*(run(i) for i in items))
    outcomes.sort(key=lambda o: o.pair_id)
    failed = sum(isinstance(o, JudgeFailure) for o in outcomes)
    logger.info(f"✓ Judged {len(outcomes) - failed} responses ({failed} failures)")
    return outcomes


async def head_to_head_all(
    items: Sequence[HeadToHeadItem],
    provider: Provider,
    seed: int,
    parallelism: int = api.DEFAULT_PARALLELISM,
    limiter: Optional[api.RateLimiter] = None,
) -> List[Union[HeadToHeadResult, JudgeFailure]]:
    """Compare every item with counterbalanced presentation orders."""
    semaphore = asyncio.Semaphore(parallelism)
    orders = balanced_orders([i.pair_id for i in items], seed)

    async def run(item: HeadToHeadItem):
        async with semaphore:
            try:
                return await head_to_head(
                    item.instruction, item.reference, item.response_a, item.response_b,
                    provider, seed, pair_id=item.pair_id, a_first=orders[item.pair_id],
                    limiter=limiter,
                )
            except JudgeParseError as e:
                return JudgeFailure(item.pair_id, str(e), e.raw)
            except ValueError as e:
                return JudgeFailure(item.pair_id, str(e))

    outcomes = await asyncio.gather(*(run(i) for i in items))
    outcomes.sort(key=lambda o: o.pair_id)
    failed = sum(isinstance(o, JudgeFailure) for o in outcomes)
    logger.info(f"✓ Compared {len(outcomes) - failed} response pairs ({failed} failures)")
    return outcomes

"""
Automatic evaluation metrics and dataset statistics.

Conventions shared by the token-level metrics (ROUGE-L, METEOR-lite,
GLEU): text is lowercased and split on runs of non-alphanumeric
characters. chrF works on raw characters with whitespace removed.

METEOR-lite aligns exact matches only (no stemming or synonyms), so its
scores are not comparable with the reference METEOR tool.
BERTScore is not computed; reports mark that column as absent.
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import MetricInputError

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

METRIC_NAMES = ("rouge_l_f", "chrf", "meteor", "gleu")
ABSENT_METRICS = ("bertscore",)
SCORE_COLUMNS = ["pair_id", *METRIC_NAMES]

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
ALIGNMENT_NODE_LIMIT = 20_000
ALIGNMENT_MAX_TOKENS = 600


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f: float


@dataclass(frozen=True)
class BootstrapSummary:
    mean: float
    std: float
    n_resamples: int
    sample_size: int
    seed: int

    def to_json(self) -> Dict[str, float]:
        return {
            "mean": self.mean,
            "std": self.std,
            "n_resamples": self.n_resamples,
            "sample_size": self.sample_size,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class LengthQuartiles:
    q1: float
    median: float
    q3: float

    def to_json(self) -> Dict[str, float]:
        return {"q1": self.q1, "median": self.median, "q3": self.q3}


def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


# --- ROUGE-L ---

def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, two-row dynamic programming."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            curr[j] = prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> ScoreTriple:
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return ScoreTriple(0.0, 0.0, 0.0)
    lcs = lcs_length(cand, ref)
    p, r = lcs / len(cand), lcs / len(ref)
    return ScoreTriple(p, r, _f1(p, r))


# --- chrF ---

def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i:i + n] for i in range(len(text) - n + 1))


def chrf(candidate: str, reference: str, max_n: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-beta, averaged over orders up to the shorter length."""
    cand = "".join(candidate.split())
    ref = "".join(reference.split())
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    orders = range(1, min(max_n, len(cand), len(ref)) + 1)
    precisions, recalls = [], []
    for n in orders:
        c, r = _char_ngrams(cand, n), _char_ngrams(ref, n)
        matched = sum((c & r).values())
        precisions.append(matched / sum(c.values()))
        recalls.append(matched / sum(r.values()))
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p == 0 and r == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


# --- METEOR-lite ---

def _greedy_chunks(cand: Sequence[str], ref_positions: Dict[str, List[int]], need: Dict[str, int]) -> int:
    need = dict(need)
    used = set()
    prev_j: Optional[int] = None
    chunks = 0
    for tok in cand:
        if need.get(tok, 0) == 0:
            prev_j = None
            continue
        free = [j for j in ref_positions[tok] if j not in used]
        j = prev_j + 1 if prev_j is not None and prev_j + 1 in free else free[0]
        if prev_j is None or j != prev_j + 1:
            chunks += 1
        used.add(j)
        need[tok] -= 1
        prev_j = j
    return chunks


def _align(cand: Sequence[str], ref: Sequence[str]) -> Tuple[int, int]:
    """
    Exact-match unigram alignment: maximum matches, then fewest chunks.

    Depth-first branch and bound over candidate positions, trying the
    continuation of the current chunk first. The search stops after
    ALIGNMENT_NODE_LIMIT nodes and keeps the best alignment found so far.
    Candidates longer than ALIGNMENT_MAX_TOKENS use the greedy first path
    only.

    Returns:
        (matches, chunks)
    """
    ref_positions: Dict[str, List[int]] = {}
    for j, tok in enumerate(ref):
        ref_positions.setdefault(tok, []).append(j)
    cand_counts = Counter(cand)
    need = {tok: min(cnt, len(ref_positions.get(tok, ()))) for tok, cnt in cand_counts.items()}
    matches = sum(need.values())
    if matches == 0:
        return 0, 0
    if len(cand) > ALIGNMENT_MAX_TOKENS:
        return matches, _greedy_chunks(cand, ref_positions, need)

    # occurrences of each token in cand[i:]
    remaining_after: List[Counter] = [Counter() for _ in range(len(cand) + 1)]
    for i in range(len(cand) - 1, -1, -1):
        remaining_after[i] = remaining_after[i + 1].copy()
        remaining_after[i][cand[i]] += 1

    best = [matches + 1]
    nodes = [0]
    used = set()

    def search(i: int, prev_j: Optional[int], chunks: int) -> None:
        if chunks >= best[0] or nodes[0] >= ALIGNMENT_NODE_LIMIT:
            return
        nodes[0] += 1
        if i == len(cand):
            if all(v == 0 for v in need.values()):
                best[0] = chunks
            return
        tok = cand[i]
        if need.get(tok, 0) > 0:
            options = [j for j in ref_positions[tok] if j not in used]
            if prev_j is not None and prev_j + 1 in options:
                options.remove(prev_j + 1)
                options.insert(0, prev_j + 1)
            for j in options:
                extends = prev_j is not None and j == prev_j + 1
                used.add(j)
                need[tok] -= 1
                search(i + 1, j, chunks if extends else chunks + 1)
                need[tok] += 1
                used.discard(j)
        # skipping is allowed while later occurrences can still cover the need
        if need.get(tok, 0) <= remaining_after[i + 1][tok]:
            search(i + 1, None, chunks)

    search(0, None, 0)
    if nodes[0] >= ALIGNMENT_NODE_LIMIT:
        logger.debug(f"Alignment search hit node limit ({len(cand)}x{len(ref)} tokens)")
    return matches, best[0]


def meteor_lite(candidate: str, reference: str) -> float:
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    m, chunks = _align(cand, ref)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return f_mean * (1 - penalty)


# --- GLEU ---

def _token_ngrams(tokens: Sequence[str], max_n: int) -> Counter:
    grams: Counter = Counter()
    for n in range(1, max_n + 1):
        grams.update(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return grams


def gleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence-level Google BLEU: min of pooled n-gram precision and recall."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    c, r = _token_ngrams(cand, max_n), _token_ngrams(ref, max_n)
    matched = sum((c & r).values())
    return min(matched / sum(c.values()), matched / sum(r.values()))


# --- Per-pair scoring ---

def score_pair(candidate: str, reference: str) -> Dict[str, float]:
    return {
        "rouge_l_f": rouge_l(candidate, reference).f,
        "chrf": chrf(candidate, reference),
        "meteor": meteor_lite(candidate, reference),
        "gleu": gleu(candidate, reference),
    }


def score_all(rows: Iterable[Tuple[str, str, str]]) -> List[Dict[str, object]]:
    """Score (pair_id, candidate, reference) rows, sorted by pair_id."""
    scored = [{"pair_id": pid, **score_pair(cand, ref)} for pid, cand, ref in rows]
    scored.sort(key=lambda row: row["pair_id"])
    logger.info(f"✓ Scored {len(scored)} responses")
    return scored


# --- Statistics ---

def bootstrap(
    per_sample_scores: Sequence[float],
    n_resamples: int = 10_000,
    sample_size: int = 100,
    seed: int = 0,
) -> BootstrapSummary:
    """
    Bootstrap the mean score.

    Draws n_resamples samples of sample_size scores with replacement and
    summarizes the resample means by their mean and population std.
    """
    scores = np.asarray(per_sample_scores, dtype=float)
    if scores.size == 0:
        raise MetricInputError("bootstrap needs at least one score")
    if sample_size < 1 or n_resamples < 1:
        raise MetricInputError("sample_size and n_resamples must be at least 1")
    if np.all(scores == scores[0]):
        return BootstrapSummary(float(scores[0]), 0.0, n_resamples, sample_size, seed)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, scores.size, size=(n_resamples, sample_size))
    means = scores[idx].mean(axis=1)
    return BootstrapSummary(float(means.mean()), float(means.std()), n_resamples, sample_size, seed)


def bootstrap_columns(
    rows: Sequence[Mapping[str, float]],
    columns: Sequence[str] = METRIC_NAMES,
    n_resamples: int = 10_000,
    sample_size: int = 100,
    seed: int = 0,
) -> Dict[str, BootstrapSummary]:
    return {
        col: bootstrap([float(r[col]) for r in rows], n_resamples, sample_size, seed)
        for col in columns
    }


def length_quartiles(
    texts: Sequence[str],
    tokenizer: Callable[[str], Sequence[str]] = tokenize,
) -> LengthQuartiles:
    """Token-count quartiles with linear interpolation at rank (n-1)q."""
    if not texts:
        raise MetricInputError("length quartiles need at least one text")
    counts = np.array([len(tokenizer(t)) for t in texts], dtype=float)
    q1, median, q3 = np.quantile(counts, [0.25, 0.5, 0.75])
    return LengthQuartiles(float(q1), float(median), float(q3))


def describe_lengths(questions: Sequence[str], answers: Sequence[str]) -> Dict[str, object]:
    return {
        "count": len(questions),
        "instructions": length_quartiles(questions).to_json(),
        "responses": length_quartiles(answers).to_json(),
    }

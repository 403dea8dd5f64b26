"""
Command-line pipeline: synth, ingest, chunk, generate, filter, analyze,
sample, export, benchmark, respond, evaluate, judge, head2head, report.

Every subcommand reads and writes artifacts under one output directory
and records itself in the directory's manifest. Settings come from an
INI file (--config) with CLI flags taking precedence.

Exit codes: 0 success, 1 partial failure (an error log is written next to
the outputs), 2 usage, configuration or missing-input errors.
"""

import argparse
import asyncio
import configparser
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from . import api
from .artifacts import Manifest, atomic_write, read_json, read_jsonl, write_json, write_jsonl
from .errors import ConfigError, MissingInputError, TimerError
from .genpipe import GenerationConfig, InstructionPair, answer_benchmark, filter_multi_evidence, generate_dataset
from .judge import (
    HeadToHeadItem, HeadToHeadResult, JudgeItem, JudgeVerdict, aggregate, head_to_head_all, judge_all, win_rates,
)
from .metrics import ABSENT_METRICS, METRIC_NAMES, SCORE_COLUMNS, bootstrap_columns, describe_lengths, score_all
from .providers import ADAPTERS, HEAD2HEAD_POLICIES, make_provider
from .sampler import (
    STRATEGIES, SampledSet, SampleSpec, assemble_benchmark, export_benchmark_set,
    export_tuning_set, sidecar_path,
)
from .sampler import sample as draw_sample
from .synth import SPACINGS, SynthParams, generate_cohort
from .temporal import (
    PositionRecord, analyze, histogram, representative_histogram, time_span_days, visit_positions,
)
from .timeline import (
    FORMATS, OVERSIZE_POLICIES, ContextChunk, chunk_timeline, dump_events, group_by_patient,
    parse_events, parse_xml, serialize_xml, timeline_from_json, timeline_to_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
CREDENTIAL_KEYS = ("key", "api_key", "token", "secret", "password")

TIMELINES = "timelines.jsonl"
INGEST_ERRORS = "ingest_errors.jsonl"
CHUNKS = "chunks.jsonl"
CHUNK_ERRORS = "chunk_errors.jsonl"
PAIRS = "pairs.jsonl"
POSITIONS = "positions.jsonl"
REJECTS = "rejects.jsonl"
AUDIT = "audit.jsonl"
GENERATE_ERRORS = "generate_errors.jsonl"
MULTI_EVIDENCE = "pairs_multi.jsonl"
ANALYSIS = "analysis.json"
HISTOGRAM_CSV = "histogram.csv"
RESPONSES = "responses.jsonl"
RESPOND_ERRORS = "respond_errors.jsonl"
SCORES = "scores.csv"
EVALUATION = "evaluation.json"
VERDICTS = "verdicts.jsonl"
JUDGE_SUMMARY = "judge.json"
JUDGE_ERRORS = "judge_errors.jsonl"
HEAD2HEAD = "head2head.jsonl"
HEAD2HEAD_SUMMARY = "head2head.json"
HEAD2HEAD_ERRORS = "head2head_errors.jsonl"
REPORT = "report.json"
REPORT_TEXT = "report.txt"


# --- Run configuration ---

@dataclass(frozen=True)
class RunConfig:
    out_dir: str = "out"
    seed: int = 0
    provider: str = "mock"
    model: str = "mock-1"
    mock: bool = False
    parallelism: int = api.DEFAULT_PARALLELISM
    requests_per_minute: int = api.DEFAULT_REQUESTS_PER_MINUTE
    # synth
    n_patients: int = 50
    visits_per_patient: Tuple[int, int] = (3, 12)
    span_days: Tuple[int, int] = (365, 3650)
    events_per_visit: Tuple[int, int] = (2, 6)
    note_vocabulary: int = 20
    spacing: str = "uniform"
    event_format: str = "csv"
    # chunk
    budget: int = 16_000
    on_oversize: str = "error"
    # generation
    pairs_per_chunk: int = 5
    mode: str = "tuning"
    max_retries: int = 2
    min_evidence: int = 2
    # sample
    strategy: str = "uniform"
    n: int = 5000
    bins: int = 10
    recency_threshold: float = 0.75
    edge_n: int = 402
    uniform_n: int = 248
    # evaluate
    n_resamples: int = 10_000
    sample_size: int = 100
    context_budget: int = 0
    answer_quality: float = 0.8
    # judge
    judge_provider: str = ""
    judge_model: str = ""
    head2head_policy: str = "overlap"

    def settings(self) -> Dict[str, Any]:
        """Config values recorded in the manifest (no paths)."""
        values = asdict(self)
        values.pop("out_dir")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}


def _int_range(raw: str) -> Tuple[int, int]:
    parts = [p.strip() for p in raw.replace("-", ",").split(",") if p.strip()]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"expected 'low,high', got '{raw}'")
    return int(parts[0]), int(parts[1])


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{raw}'")


# (section, ini key) -> (RunConfig field, parser)
CONFIG_KEYS: Dict[Tuple[str, str], Tuple[str, Any]] = {
    ("run", "out"): ("out_dir", str),
    ("run", "seed"): ("seed", int),
    ("run", "provider"): ("provider", str),
    ("run", "model"): ("model", str),
    ("run", "mock"): ("mock", _bool),
    ("run", "parallelism"): ("parallelism", int),
    ("run", "requests_per_minute"): ("requests_per_minute", int),
    ("synth", "patients"): ("n_patients", int),
    ("synth", "visits"): ("visits_per_patient", _int_range),
    ("synth", "span_days"): ("span_days", _int_range),
    ("synth", "events"): ("events_per_visit", _int_range),
    ("synth", "note_vocabulary"): ("note_vocabulary", int),
    ("synth", "spacing"): ("spacing", str),
    ("synth", "format"): ("event_format", str),
    ("chunk", "budget"): ("budget", int),
    ("chunk", "on_oversize"): ("on_oversize", str),
    ("generation", "pairs_per_chunk"): ("pairs_per_chunk", int),
    ("generation", "mode"): ("mode", str),
    ("generation", "max_retries"): ("max_retries", int),
    ("generation", "min_evidence"): ("min_evidence", int),
    ("sample", "strategy"): ("strategy", str),
    ("sample", "n"): ("n", int),
    ("sample", "bins"): ("bins", int),
    ("sample", "recency_threshold"): ("recency_threshold", float),
    ("sample", "edge_n"): ("edge_n", int),
    ("sample", "uniform_n"): ("uniform_n", int),
    ("evaluate", "n_resamples"): ("n_resamples", int),
    ("evaluate", "sample_size"): ("sample_size", int),
    ("evaluate", "context_budget"): ("context_budget", int),
    ("evaluate", "answer_quality"): ("answer_quality", float),
    ("judge", "provider"): ("judge_provider", str),
    ("judge", "model"): ("judge_model", str),
    ("judge", "head2head_policy"): ("head2head_policy", str),
}


def _validate(cfg: RunConfig) -> Dict[str, str]:
    problems: Dict[str, str] = {}

    def check(ok: bool, name: str, message: str) -> None:
        if not ok:
            problems.setdefault(name, message)

    providers = ("mock", *ADAPTERS)
    check(cfg.provider in providers, "provider", f"must be one of {providers}")
    check(not cfg.judge_provider or cfg.judge_provider in providers, "judge.provider", f"must be one of {providers}")
    for name in ("parallelism", "requests_per_minute", "n_patients", "budget", "pairs_per_chunk",
                 "min_evidence", "n", "edge_n", "uniform_n", "n_resamples", "sample_size"):
        check(getattr(cfg, name) >= 1, name, "must be >= 1")
    check(cfg.seed >= 0, "seed", "must be a non-negative integer")
    check(cfg.bins >= 2, "bins", "must be >= 2")
    check(cfg.max_retries >= 0, "max_retries", "must be >= 0")
    check(cfg.context_budget >= 0, "context_budget", "must be >= 0 (0 disables truncation)")
    check(0 < cfg.recency_threshold < 1, "recency_threshold", "must be in (0, 1)")
    check(0 <= cfg.answer_quality <= 1, "answer_quality", "must be in [0, 1]")
    for name in ("visits_per_patient", "span_days", "events_per_visit"):
        low, high = getattr(cfg, name)
        check(1 <= low <= high, name, "must be a range 'low,high' with 1 <= low <= high")
    check(cfg.spacing in SPACINGS, "spacing", f"must be one of {SPACINGS}")
    check(cfg.event_format in FORMATS, "format", f"must be one of {FORMATS}")
    check(cfg.on_oversize in OVERSIZE_POLICIES, "on_oversize", f"must be one of {OVERSIZE_POLICIES}")
    check(cfg.mode in ("tuning", "benchmark"), "mode", "must be 'tuning' or 'benchmark'")
    check(cfg.strategy in STRATEGIES, "strategy", f"must be one of {STRATEGIES}")
    check(cfg.head2head_policy in HEAD2HEAD_POLICIES, "head2head_policy", f"must be one of {HEAD2HEAD_POLICIES}")
    return problems


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an INI file plus CLI overrides.

    Raises:
        ConfigError: unreadable file, unknown or credential keys, bad
            values; carries one message per offending field
    """
    values: Dict[str, Any] = {}
    problems: Dict[str, str] = {}

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            read = parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError({"config": f"cannot parse {path}: {e}"}) from e
        if not read:
            raise ConfigError({"config": f"file not found: {path}"})
        for section in parser.sections():
            for key, raw in parser.items(section):
                name = f"{section}.{key}"
                if key in CREDENTIAL_KEYS or key.endswith("_key"):
                    problems[name] = "credentials are read from TIMER_PROVIDER_<NAME>_KEY, not config files"
                    continue
                if (section, key) not in CONFIG_KEYS:
                    problems[name] = "unknown setting"
                    continue
                field_name, convert = CONFIG_KEYS[(section, key)]
                try:
                    values[field_name] = convert(raw)
                except ValueError as e:
                    problems[name] = f"invalid value: {e}"

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    if problems:
        raise ConfigError(problems)
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig(**{k: v for k, v in values.items() if k in known})
    problems = _validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


# --- Artifact helpers ---

class Workspace:
    """Output directory plus its manifest."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.root)

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, *paths: Path) -> None:
        missing = [p.name for p in paths if not p.exists()]
        if missing:
            raise MissingInputError(missing)

    def record(self, command: str, inputs: Sequence[Path], outputs: Sequence[Path]) -> None:
        self.manifest.record(command, list(inputs), list(outputs), {"seed": self.cfg.seed}, self.cfg.settings())


def _input(args: argparse.Namespace, default: Path) -> Path:
    return Path(args.input) if getattr(args, "input", None) else default


def load_pairs(path: Path) -> Tuple[List[InstructionPair], Dict[str, str]]:
    """Pairs of a pair JSONL file plus pair_id -> variant for benchmark files."""
    pairs, variants = [], {}
    for row in read_jsonl(path):
        pair = InstructionPair.from_json(row)
        pairs.append(pair)
        if "variant" in row:
            variants[pair.pair_id] = row["variant"]
    return pairs, variants


def chunk_row(chunk: ContextChunk) -> Dict[str, Any]:
    return {
        "chunk_ref": chunk.chunk_ref,
        "patient_id": chunk.patient_id,
        "index": chunk.index,
        "token_estimate": chunk.token_estimate,
        "truncated": chunk.truncated,
        "xml": serialize_xml(chunk),
    }


def load_chunks(path: Path) -> Dict[str, ContextChunk]:
    chunks = {}
    for row in read_jsonl(path):
        chunk = parse_xml(row["xml"], index=row["index"])
        chunk = replace(chunk, token_estimate=row["token_estimate"], truncated=row["truncated"])
        chunks[chunk.chunk_ref] = chunk
    return chunks


def _benchmark_files(ws: Workspace, args: argparse.Namespace) -> List[Path]:
    if getattr(args, "input", None):
        return [Path(args.input)]
    files = sorted(ws.root.glob("benchmark_*.jsonl"))
    if not files:
        raise MissingInputError(["benchmark_*.jsonl"])
    return files


def _load_benchmark(files: Sequence[Path]) -> Tuple[List[InstructionPair], Dict[str, str]]:
    pairs: Dict[str, InstructionPair] = {}
    variants: Dict[str, str] = {}
    for path in files:
        loaded, tags = load_pairs(path)
        for pair in loaded:
            pairs.setdefault(pair.pair_id, pair)
        variants.update(tags)
    return [pairs[k] for k in sorted(pairs)], variants


def _load_responses(path: Path) -> Dict[str, str]:
    return {row["pair_id"]: row["response"] for row in read_jsonl(path)}


def _mut_provider(cfg: RunConfig):
    """Provider for the model under test."""
    return make_provider(cfg.provider, cfg.model, mock=cfg.mock, answer_quality=cfg.answer_quality)


def _judge_provider(cfg: RunConfig):
    name = cfg.judge_provider or cfg.provider
    model = cfg.judge_model or cfg.model
    return make_provider(name, model, mock=cfg.mock, head2head_policy=cfg.head2head_policy)


# --- Subcommands ---

def cmd_synth(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    params = SynthParams(
        seed=cfg.seed,
        n_patients=cfg.n_patients,
        visits_per_patient=cfg.visits_per_patient,
        span_days=cfg.span_days,
        events_per_visit=cfg.events_per_visit,
        note_vocabulary=cfg.note_vocabulary,
        spacing=cfg.spacing,
    )
    cohort = generate_cohort(params)
    events = [e for timeline in cohort for e in timeline.events()]
    out = atomic_write(ws.path(f"events.{cfg.event_format}"), dump_events(events, cfg.event_format))
    ws.record("synth", [], [out])
    return EXIT_OK


def cmd_ingest(ws: Workspace, args: argparse.Namespace) -> int:
    default = next(
        (ws.path(f"events.{fmt}") for fmt in FORMATS if ws.path(f"events.{fmt}").exists()),
        ws.path("events.csv"),
    )
    source = _input(args, default)
    ws.require(source)
    fmt = "jsonl" if source.suffix == ".jsonl" else "csv"
    result = parse_events(source.read_bytes(), fmt)
    timelines = group_by_patient(result.events)
    out = write_jsonl(ws.path(TIMELINES), (timeline_to_json(timelines[p]) for p in sorted(timelines)))
    outputs = [out]
    status = EXIT_OK
    if result.errors:
        outputs.append(write_jsonl(ws.path(INGEST_ERRORS), ({"line": e.line, "error": e.message} for e in result.errors)))
        logger.error(f"❌ {len(result.errors)} rows rejected, see {INGEST_ERRORS}")
        status = EXIT_PARTIAL
    logger.info(f"✓ Ingested {len(timelines)} patients")
    ws.record("ingest", [source], outputs)
    return status


def cmd_chunk(ws: Workspace, args: argparse.Namespace) -> int:
    source = _input(args, ws.path(TIMELINES))
    ws.require(source)
    rows, errors = [], []
    for payload in read_jsonl(source):
        timeline = timeline_from_json(payload)
        try:
            chunks = chunk_timeline(timeline, ws.cfg.budget, on_oversize=ws.cfg.on_oversize)
        except TimerError as e:
            errors.append({"patient_id": timeline.patient_id, "error": str(e)})
            logger.error(f"❌ Cannot chunk {timeline.patient_id}: {e}")
            continue
        rows.extend(chunk_row(c) for c in chunks)
    outputs = [write_jsonl(ws.path(CHUNKS), rows)]
    if errors:
        outputs.append(write_jsonl(ws.path(CHUNK_ERRORS), errors))
    logger.info(f"✓ Wrote {len(rows)} chunks (budget {ws.cfg.budget})")
    ws.record("chunk", [source], outputs)
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_generate(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    source = _input(args, ws.path(CHUNKS))
    ws.require(source)
    chunks = list(load_chunks(source).values())
    gen_cfg = GenerationConfig(
        pairs_per_chunk=cfg.pairs_per_chunk,
        mode=cfg.mode,
        provider=cfg.provider,
        model=cfg.model,
        max_retries=cfg.max_retries,
        retry_backoff=0.0 if cfg.mock or cfg.provider == "mock" else 1.0,
        min_evidence_for_benchmark=cfg.min_evidence,
        parallelism=cfg.parallelism,
    )
    provider = make_provider(cfg.provider, cfg.model, mock=cfg.mock)
    result = asyncio.run(generate_dataset(chunks, provider, gen_cfg))

    outputs = [
        write_jsonl(ws.path(PAIRS), (p.to_json() for p in result.pairs)),
        write_jsonl(ws.path(POSITIONS), (p.evidence.to_record(p.pair_id).to_json() for p in result.pairs)),
        write_jsonl(ws.path(REJECTS), (r.to_json() for r in result.rejects)),
        write_jsonl(ws.path(AUDIT), result.audit),
    ]
    if result.failures:
        outputs.append(write_jsonl(ws.path(GENERATE_ERRORS), (f.to_json() for f in result.failures)))
    ws.record("generate", [source], outputs)
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_filter(ws: Workspace, args: argparse.Namespace) -> int:
    source = _input(args, ws.path(PAIRS))
    ws.require(source)
    pairs, _ = load_pairs(source)
    kept = filter_multi_evidence(pairs, ws.cfg.min_evidence)
    logger.info(f"✓ Kept {len(kept)} of {len(pairs)} pairs citing >= {ws.cfg.min_evidence} dates")
    out = write_jsonl(ws.path(MULTI_EVIDENCE), (p.to_json() for p in kept))
    ws.record("filter", [source], [out])
    return EXIT_OK


def cmd_analyze(ws: Workspace, args: argparse.Namespace) -> int:
    source = _input(args, ws.path(POSITIONS))
    ws.require(source)
    records = [PositionRecord.from_json(row) for row in read_jsonl(source)]
    report = analyze(records, ws.cfg.bins)
    report["representative_histogram"] = representative_histogram(
        [r.representative for r in records], ws.cfg.bins
    ).to_json()

    inputs = [source]
    chunks_path = ws.path(CHUNKS)
    if chunks_path.exists():
        chunks = list(load_chunks(chunks_path).values())
        if chunks:
            visits = [PositionRecord(c.chunk_ref, tuple(visit_positions(c)), 0.5) for c in chunks]
            report["visit_histogram"] = histogram(visits, ws.cfg.bins).to_json()
            report["time_span_days"] = time_span_days(chunks)
            inputs.append(chunks_path)

    hist = histogram(records, ws.cfg.bins)
    outputs = [write_json(ws.path(ANALYSIS), report), atomic_write(ws.path(HISTOGRAM_CSV), hist.to_csv())]
    print(f"label: {report['label']}")
    ws.record("analyze", inputs, outputs)
    return EXIT_OK


def _spec(cfg: RunConfig, strategy: str, n: int) -> SampleSpec:
    return SampleSpec(strategy, n, recency_threshold=cfg.recency_threshold, bins=cfg.bins, seed=cfg.seed)


def cmd_sample(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    source = _input(args, ws.path(PAIRS))
    ws.require(source)
    pairs, _ = load_pairs(source)
    sampled = draw_sample(pairs, _spec(cfg, cfg.strategy, cfg.n))
    out = write_jsonl(ws.path(f"sample_{cfg.strategy}.jsonl"), (p.to_json() for p in sampled.pairs))
    meta = write_json(sidecar_path(out), sampled.metadata())
    ws.record(f"sample:{cfg.strategy}", [source], [out, meta])
    return EXIT_OK


def cmd_export(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    source = _input(args, ws.path(f"sample_{cfg.strategy}.jsonl"))
    ws.require(source, sidecar_path(source))
    meta = read_json(sidecar_path(source))
    spec = SampleSpec(**meta["spec"])
    pairs, _ = load_pairs(source)
    sampled = SampledSet(
        spec=spec,
        pairs=pairs,
        histogram=representative_histogram([p.representative for p in pairs], spec.bins),
        pool_id=meta["pool_id"],
        shortfall=meta.get("shortfall", 0),
    )
    out = export_tuning_set(sampled, ws.path(f"tuning_{spec.strategy}.jsonl"))
    ws.record(f"export:{spec.strategy}", [source], [out, sidecar_path(out)])
    return EXIT_OK


def cmd_benchmark(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    source = _input(args, ws.path(MULTI_EVIDENCE))
    inputs = [source]
    ws.require(source)
    pool, _ = load_pairs(source)
    tuning_pool = None
    if args.tuning:
        tuning_path = Path(args.tuning)
        ws.require(tuning_path)
        tuning_pool, _ = load_pairs(tuning_path)
        inputs.append(tuning_path)
    # uniform first: the stratified draw needs the full pool to balance bins
    variants = [_spec(cfg, "uniform", cfg.uniform_n), _spec(cfg, "edge", cfg.edge_n)]
    sets = assemble_benchmark(pool, variants, tuning_pool=tuning_pool, min_evidence=cfg.min_evidence)
    outputs = []
    for variant, sampled in sets.items():
        out = export_benchmark_set(sampled, ws.path(f"benchmark_{variant}.jsonl"), variant)
        outputs.extend([out, sidecar_path(out)])
    ws.record("benchmark", inputs, outputs)
    return EXIT_OK


def _respond(ws: Workspace, files: Sequence[Path]) -> Tuple[Path, int]:
    cfg = ws.cfg
    chunks_path = ws.path(CHUNKS)
    ws.require(chunks_path)
    pairs, _ = _load_benchmark(files)
    chunks = load_chunks(chunks_path)
    answers, failures = asyncio.run(answer_benchmark(
        pairs, chunks, _mut_provider(cfg),
        parallelism=cfg.parallelism,
        context_budget=cfg.context_budget or None,
    ))
    out = write_jsonl(ws.path(RESPONSES), (a.to_json() for a in answers))
    outputs = [out]
    if failures:
        outputs.append(write_jsonl(ws.path(RESPOND_ERRORS), (f.to_json() for f in failures)))
    ws.record("respond", [*files, chunks_path], outputs)
    return out, len(failures)


def cmd_respond(ws: Workspace, args: argparse.Namespace) -> int:
    _, failed = _respond(ws, _benchmark_files(ws, args))
    return EXIT_PARTIAL if failed else EXIT_OK


def _group_scores(rows: List[Dict[str, Any]], variants: Mapping[str, str]) -> Dict[str, List[Dict[str, Any]]]:
    groups: Dict[str, List[Dict[str, Any]]] = {"all": rows}
    for row in rows:
        variant = variants.get(row["pair_id"])
        if variant:
            groups.setdefault(variant, []).append(row)
    return groups


def _scores_csv(rows: List[Dict[str, Any]]) -> str:
    lines = [",".join(SCORE_COLUMNS)]
    for row in rows:
        lines.append(",".join([row["pair_id"], *(f"{row[m]:.6f}" for m in METRIC_NAMES)]))
    return "\n".join(lines) + "\n"


def cmd_evaluate(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    files = _benchmark_files(ws, args)
    responses_path = ws.path(RESPONSES)
    failed = 0
    if not responses_path.exists():
        logger.info("No responses yet, collecting them from the model under test")
        responses_path, failed = _respond(ws, files)

    pairs, variants = _load_benchmark(files)
    responses = _load_responses(responses_path)
    answered = [p for p in pairs if p.pair_id in responses]
    if not answered:
        raise MissingInputError([f"{RESPONSES} (no response matches a benchmark pair)"])
    rows = score_all((p.pair_id, responses[p.pair_id], p.answer) for p in answered)

    metrics = {
        group: {
            name: summary.to_json()
            for name, summary in bootstrap_columns(
                group_rows, METRIC_NAMES, cfg.n_resamples, cfg.sample_size, cfg.seed
            ).items()
        }
        for group, group_rows in _group_scores(rows, variants).items()
    }
    evaluation = {
        "scored": len(rows),
        "unanswered": len(pairs) - len(answered),
        "metrics": metrics,
        "absent_metrics": list(ABSENT_METRICS),
        "lengths": describe_lengths([p.question for p in pairs], [p.answer for p in pairs]),
    }
    outputs = [
        atomic_write(ws.path(SCORES), _scores_csv(rows)),
        write_json(ws.path(EVALUATION), evaluation),
    ]
    ws.record("evaluate", [*files, responses_path], outputs)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_judge(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    files = _benchmark_files(ws, args)
    responses_path = ws.path(RESPONSES)
    ws.require(responses_path)
    pairs, variants = _load_benchmark(files)
    responses = _load_responses(responses_path)
    items = [
        JudgeItem(p.pair_id, p.question, p.answer, responses[p.pair_id])
        for p in pairs if responses.get(p.pair_id, "").strip()
    ]
    outcomes = asyncio.run(judge_all(items, _judge_provider(cfg), parallelism=cfg.parallelism))
    verdicts = [o for o in outcomes if isinstance(o, JudgeVerdict)]
    failures = [o for o in outcomes if not isinstance(o, JudgeVerdict)]

    summary: Dict[str, Any] = {"overall": aggregate(outcomes).to_json()}
    for variant in sorted(set(variants.values())):
        subset = [o for o in outcomes if variants.get(o.pair_id) == variant]
        if any(isinstance(o, JudgeVerdict) for o in subset):
            summary[variant] = aggregate(subset).to_json()

    outputs = [
        write_jsonl(ws.path(VERDICTS), (v.to_json() for v in verdicts)),
        write_json(ws.path(JUDGE_SUMMARY), summary),
    ]
    if failures:
        outputs.append(write_jsonl(ws.path(JUDGE_ERRORS), (f.to_json() for f in failures)))
    ws.record("judge", [*files, responses_path], outputs)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_head2head(ws: Workspace, args: argparse.Namespace) -> int:
    cfg = ws.cfg
    files = _benchmark_files(ws, args)
    path_a = Path(args.a) if args.a else ws.path(RESPONSES)
    if not args.b:
        raise MissingInputError(["--b (responses of the second model)"])
    path_b = Path(args.b)
    ws.require(path_a, path_b)
    pairs, _ = _load_benchmark(files)
    resp_a, resp_b = _load_responses(path_a), _load_responses(path_b)
    items = [
        HeadToHeadItem(p.pair_id, p.question, p.answer, resp_a[p.pair_id], resp_b[p.pair_id])
        for p in pairs
        if resp_a.get(p.pair_id, "").strip() and resp_b.get(p.pair_id, "").strip()
    ]
    outcomes = asyncio.run(head_to_head_all(items, _judge_provider(cfg), cfg.seed, parallelism=cfg.parallelism))
    results = [o for o in outcomes if isinstance(o, HeadToHeadResult)]
    failures = [o for o in outcomes if not isinstance(o, HeadToHeadResult)]
    outputs = [
        write_jsonl(ws.path(HEAD2HEAD), (r.to_json() for r in results)),
        write_json(ws.path(HEAD2HEAD_SUMMARY), win_rates(outcomes).to_json()),
    ]
    if failures:
        outputs.append(write_jsonl(ws.path(HEAD2HEAD_ERRORS), (f.to_json() for f in failures)))
    ws.record("head2head", [*files, path_a, path_b], outputs)
    return EXIT_PARTIAL if failures else EXIT_OK


def render_report(report: Mapping[str, Any]) -> str:
    """Plain-text table of the merged report."""
    lines = []
    metrics = report["evaluation"]["metrics"]
    groups = sorted(metrics)
    lines.append(f"{'metric':<12}" + "".join(f"{g:>22}" for g in groups))
    for name in METRIC_NAMES:
        cells = "".join(
            f"{metrics[g][name]['mean']:>13.4f} ± {metrics[g][name]['std']:<6.4f}" for g in groups
        )
        lines.append(f"{name:<12}{cells}")
    for name in report["evaluation"].get("absent_metrics", []):
        lines.append(f"{name:<12}" + "".join(f"{'absent':>22}" for _ in groups))
    judge = report.get("judge")
    if judge:
        lines.append("")
        for group, agg in sorted(judge.items()):
            lines.append(
                f"judge {group:<8} correct {agg['correct_pct']:6.2f}%  "
                f"complete {agg['complete_pct']:6.2f}%  (n={agg['judged']}, failed={agg['failed']})"
            )
    h2h = report.get("head2head")
    if h2h:
        lines.append("")
        lines.append(
            f"head-to-head  A {h2h['win_a_pct']:.2f}%  B {h2h['win_b_pct']:.2f}%  "
            f"tie {h2h['tie_pct']:.2f}%  margin {h2h['margin_pct']:+.2f}"
        )
    analysis = report.get("analysis")
    if analysis:
        fr = analysis["region_fractions"]
        lines.append("")
        lines.append(
            f"evidence distribution: {analysis['label']}  "
            f"(last 25% {fr['frac_last_quarter']:.1%}, last 15% {fr['frac_last_15']:.1%}, "
            f"last 5% {fr['frac_last_5']:.1%})"
        )
    return "\n".join(lines) + "\n"


def cmd_report(ws: Workspace, args: argparse.Namespace) -> int:
    evaluation_path = ws.path(EVALUATION)
    ws.require(evaluation_path)
    report: Dict[str, Any] = {"evaluation": read_json(evaluation_path)}
    inputs = [evaluation_path]
    for key, name in (("analysis", ANALYSIS), ("judge", JUDGE_SUMMARY), ("head2head", HEAD2HEAD_SUMMARY)):
        path = ws.path(name)
        if path.exists():
            report[key] = read_json(path)
            inputs.append(path)
    text = render_report(report)
    outputs = [write_json(ws.path(REPORT), report), atomic_write(ws.path(REPORT_TEXT), text)]
    sys.stdout.write(text)
    ws.record("report", inputs, outputs)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "chunk": cmd_chunk,
    "generate": cmd_generate,
    "filter": cmd_filter,
    "analyze": cmd_analyze,
    "sample": cmd_sample,
    "export": cmd_export,
    "benchmark": cmd_benchmark,
    "respond": cmd_respond,
    "evaluate": cmd_evaluate,
    "judge": cmd_judge,
    "head2head": cmd_head2head,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--provider", help=f"mock or one of {sorted(ADAPTERS)}")
    common.add_argument("--model")
    common.add_argument("--parallelism", type=int)
    common.add_argument("--budget", type=int, help="chunk token budget")
    common.add_argument("--strategy", choices=STRATEGIES)
    common.add_argument("--n", type=int, help="target set size")
    common.add_argument("--bins", type=int)
    common.add_argument("--mock", action="store_true", help="force the offline mock provider")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--input", help="override the subcommand's main input file")

    parser = argparse.ArgumentParser(prog="timer-bench", description="Temporal instruction generation and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common]) for name in COMMANDS}
    parsers["generate"].add_argument("--mode", choices=("tuning", "benchmark"))
    parsers["filter"].add_argument("--k", type=int, help="minimum distinct evidence dates")
    parsers["benchmark"].add_argument("--tuning", help="pair JSONL of the tuning pool (patient disjointness check)")
    parsers["head2head"].add_argument("--a", help="responses of model A (default: responses.jsonl)")
    parsers["head2head"].add_argument("--b", help="responses of model B")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "out_dir": args.out,
        "seed": args.seed,
        "provider": args.provider,
        "model": args.model,
        "parallelism": args.parallelism,
        "budget": args.budget,
        "strategy": args.strategy,
        "n": args.n,
        "bins": args.bins,
        "mock": True if args.mock else None,
        "mode": getattr(args, "mode", None),
        "min_evidence": getattr(args, "k", None),
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the timer-bench command."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)

    try:
        cfg = load_run_config(args.config, _overrides(args))
    except ConfigError as e:
        for name, message in e.fields.items():
            sys.stderr.write(f"config error: {name}: {message}\n")
        return EXIT_USAGE

    api.init_config(
        provider=cfg.provider,
        model=cfg.model,
        parallelism=cfg.parallelism,
        requests_per_minute=cfg.requests_per_minute,
    )
    try:
        return COMMANDS[args.command](Workspace(cfg), args)
    except MissingInputError as e:
        logger.error(f"❌ {e}")
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except TimerError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())

"""
Longitudinal record ingestion, timelines, XML records and chunking.

This module turns CSV/JSONL event streams into patient timelines,
serializes slices of a timeline into the XML record format fed to the
generator, and cuts timelines into token-budgeted context chunks.

XML record format (LF line endings, 2-space indentation, UTF-8):

    <patient id="p1">
      <visit date="2020-01-05">
        <event type="note">saw patient</event>
        <event type="measurement" code="4548-4" value="7.2" unit="%"/>
      </visit>
    </patient>
"""

import csv
import io
import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timezone
from decimal import Decimal, InvalidOperation
from itertools import groupby
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import EventStreamError, OversizedVisitError, TimelineError

logger = logging.getLogger(__name__)


# --- Constants ---
EVENT_TYPES = ("condition", "medication", "measurement", "procedure", "note")
EVENT_COLUMNS = ["patient_id", "timestamp", "event_type", "code", "value", "text"]
FORMATS = ("csv", "jsonl")
OVERSIZE_POLICIES = ("error", "truncate")
TRUNCATION_MARK = "…"
INDENT = "  "

_XML_ESCAPES = {'"': "&quot;", "'": "&apos;", "\r": "&#13;"}
# attribute-value normalization would turn these into spaces
_XML_ATTR_ESCAPES = {"\t": "&#9;", "\n": "&#10;"}
# characters XML 1.0 cannot carry, not even as character references
_XML_FORBIDDEN = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")

TokenEstimator = Callable[[str], int]


# --- Domain Types ---

@dataclass(frozen=True)
class ClinicalEvent:
    """One timestamped structured item or note in a patient record."""

    patient_id: str
    timestamp: datetime
    event_type: str
    code: Optional[str] = None
    value: Optional[Decimal] = None
    unit: Optional[str] = None
    text: Optional[str] = None

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise TimelineError(f"unknown event_type '{self.event_type}'")
        if self.text == "":
            object.__setattr__(self, "text", None)
        if self.code is None and self.value is None and not self.text:
            raise TimelineError("event needs at least one of code, value, text")
        if self.value is not None and not self.value.is_finite():
            raise TimelineError(f"value must be finite, got {self.value}")
        for name in ("patient_id", "code", "unit", "text"):
            raw = getattr(self, name)
            if raw is not None and _XML_FORBIDDEN.search(raw):
                raise TimelineError(f"{name} contains control characters not allowed in XML records")

    @property
    def date(self) -> date:
        return self.timestamp.date()

    def to_record(self) -> Dict[str, str]:
        """Flat row in the ingestion format (value carries its unit)."""
        value = ""
        if self.value is not None:
            value = str(self.value) if not self.unit else f"{self.value} {self.unit}"
        return {
            "patient_id": self.patient_id,
            "timestamp": format_timestamp(self.timestamp),
            "event_type": self.event_type,
            "code": self.code or "",
            "value": value,
            "text": self.text or "",
        }


@dataclass(frozen=True)
class Visit:
    visit_date: date
    events: Tuple[ClinicalEvent, ...]

    @property
    def start(self) -> datetime:
        return datetime.combine(self.visit_date, time())


@dataclass(frozen=True)
class PatientTimeline:
    """Visits of one patient, strictly ascending by date."""

    patient_id: str
    visits: Tuple[Visit, ...]

    def __post_init__(self):
        if not self.visits:
            raise TimelineError(f"timeline for {self.patient_id} is empty")
        dates = [v.visit_date for v in self.visits]
        if any(a >= b for a, b in zip(dates, dates[1:])):
            raise TimelineError(f"visits of {self.patient_id} are not strictly ascending")
        for visit in self.visits:
            for event in visit.events:
                if event.date != visit.visit_date or event.patient_id != self.patient_id:
                    raise TimelineError(
                        f"event {format_timestamp(event.timestamp)} does not belong to "
                        f"visit {visit.visit_date.isoformat()} of {self.patient_id}"
                    )

    @property
    def t_min(self) -> datetime:
        return self.visits[0].start

    @property
    def t_max(self) -> datetime:
        return self.visits[-1].start

    def events(self) -> List[ClinicalEvent]:
        return [e for v in self.visits for e in v.events]


@dataclass(frozen=True)
class ContextChunk:
    """Contiguous, token-budgeted window of a patient timeline."""

    patient_id: str
    visits: Tuple[Visit, ...]
    token_estimate: int
    index: int = 0
    truncated: bool = False

    def __post_init__(self):
        if not self.visits:
            raise TimelineError("chunk has no visits")
        if self.token_estimate < 0:
            raise TimelineError("token_estimate must be non-negative")

    @property
    def t_min(self) -> datetime:
        return self.visits[0].start

    @property
    def t_max(self) -> datetime:
        return self.visits[-1].start

    @property
    def chunk_ref(self) -> str:
        return f"{self.patient_id}#{self.index}"

    @property
    def visit_dates(self) -> List[str]:
        return [v.visit_date.isoformat() for v in self.visits]


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    events: List[ClinicalEvent] = field(default_factory=list)
    errors: List[RowError] = field(default_factory=list)


# --- Timestamps and values ---

def parse_timestamp(raw: str) -> datetime:
    """Parse ISO-8601 (date-only allowed) into a naive UTC datetime."""
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is not None:
        parsed = parsed.astimezone(timezone.utc).replace(tzinfo=None)
    return parsed.replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    if ts.time() == time():
        return ts.date().isoformat()
    return ts.isoformat(timespec="seconds")


def parse_value(raw: object) -> Tuple[Optional[Decimal], Optional[str]]:
    """Split "7.2 mg/dL" into (Decimal('7.2'), 'mg/dL').

    Raises:
        TypeError: raw is not None, a string or a non-bool number
        ValueError: the number is not finite
        InvalidOperation: the string does not start with a number
    """
    if raw is None:
        return None, None
    if isinstance(raw, bool) or not isinstance(raw, (str, int, float)):
        raise TypeError(f"expected a number or a string, got {type(raw).__name__}")
    unit = None
    if isinstance(raw, str):
        text = raw.strip()
        if not text:
            return None, None
        number, _, rest = text.partition(" ")
        value, unit = Decimal(number), (rest.strip() or None)
    else:
        value = Decimal(str(raw))
    if not value.is_finite():
        raise ValueError(f"value must be finite, got {raw}")
    return value, unit


def _optional(raw: Optional[str]) -> Optional[str]:
    if raw is None:
        return None
    raw = str(raw)
    return raw if raw.strip() else None


def _event_from_row(row: Dict[str, object], line: int) -> Union[ClinicalEvent, RowError]:
    try:
        timestamp = parse_timestamp(str(row.get("timestamp") or ""))
    except ValueError:
        return RowError(line, f"invalid timestamp, line {line}")
    event_type = str(row.get("event_type") or "").strip()
    if event_type not in EVENT_TYPES:
        return RowError(line, f"unknown event_type '{event_type}', line {line}")
    try:
        value, unit = parse_value(row.get("value"))
    except (InvalidOperation, TypeError, ValueError):
        return RowError(line, f"invalid value, line {line}")
    unit = _optional(row.get("unit")) or unit
    patient_id = _optional(row.get("patient_id"))
    if patient_id is None:
        return RowError(line, f"missing patient_id, line {line}")
    try:
        return ClinicalEvent(
            patient_id=patient_id.strip(),
            timestamp=timestamp,
            event_type=event_type,
            code=_optional(row.get("code")),
            value=value,
            unit=unit,
            text=_optional(row.get("text")),
        )
    except TimelineError as e:
        return RowError(line, f"{e}, line {line}")


# --- Operations ---

def parse_events(stream: Union[bytes, io.BufferedIOBase], fmt: str) -> ParseResult:
    """
    Parse an event stream in CSV or JSONL format.

    Every row yields one ClinicalEvent or one RowError; input order is kept.

    Args:
        stream: UTF-8 bytes or a binary file object
        fmt: 'csv' (header row required) or 'jsonl'

    Returns:
        ParseResult with events and row-level errors

    Raises:
        EventStreamError: undecodable stream, unknown format or bad CSV header
    """
    if fmt not in FORMATS:
        raise EventStreamError(f"unknown format '{fmt}', expected one of {FORMATS}")
    raw = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    try:
        text = bytes(raw).decode("utf-8")
    except UnicodeDecodeError as e:
        raise EventStreamError(f"stream is not valid UTF-8: {e}") from e
    if text.startswith("\ufeff"):
        text = text[1:]

    result = ParseResult()
    if not text.strip():
        return result

    def collect(item: Union[ClinicalEvent, RowError]) -> None:
        if isinstance(item, RowError):
            result.errors.append(item)
        else:
            result.events.append(item)

    if fmt == "csv":
        reader = csv.reader(io.StringIO(text, newline=""))
        header = [h.strip() for h in next(reader)]
        if header != EVENT_COLUMNS:
            raise EventStreamError(f"CSV header must be {','.join(EVENT_COLUMNS)}, got {','.join(header)}")
        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as e:
                result.errors.append(RowError(reader.line_num, f"unreadable row ({e}), line {reader.line_num}"))
                continue
            if not row:
                continue
            if len(row) != len(EVENT_COLUMNS):
                result.errors.append(RowError(reader.line_num, f"expected {len(EVENT_COLUMNS)} columns, line {reader.line_num}"))
                continue
            collect(_event_from_row(dict(zip(EVENT_COLUMNS, row)), reader.line_num))
    else:
        # JSON strings may hold U+2028 and friends, so only LF ends a line
        for line_no, line in enumerate(text.split("\n"), start=1):
            line = line.removesuffix("\r")
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                result.errors.append(RowError(line_no, f"invalid JSON, line {line_no}"))
                continue
            if not isinstance(obj, dict):
                result.errors.append(RowError(line_no, f"expected an object, line {line_no}"))
                continue
            collect(_event_from_row(obj, line_no))

    logger.info(f"✓ Parsed {len(result.events)} events ({len(result.errors)} row errors)")
    return result


def dump_events(events: Iterable[ClinicalEvent], fmt: str) -> bytes:
    """Write events in the ingestion format (CSV with header, or JSONL)."""
    if fmt not in FORMATS:
        raise EventStreamError(f"unknown format '{fmt}', expected one of {FORMATS}")
    buffer = io.StringIO(newline="")
    if fmt == "csv":
        writer = csv.DictWriter(buffer, fieldnames=EVENT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for event in events:
            writer.writerow(event.to_record())
    else:
        for event in events:
            buffer.write(json.dumps(event.to_record(), ensure_ascii=False) + "\n")
    return buffer.getvalue().encode("utf-8")


def build_timeline(events: Sequence[ClinicalEvent]) -> PatientTimeline:
    """Group one patient's events into visits by calendar date.

    Visits are sorted ascending; events keep their input order inside a visit.
    """
    if not events:
        raise TimelineError("cannot build a timeline from zero events")
    patients = sorted({e.patient_id for e in events})
    if len(patients) > 1:
        raise TimelineError(f"multiple patients: {', '.join(patients)}")
    ordered = sorted(events, key=lambda e: e.date)
    visits = tuple(
        Visit(visit_date=day, events=tuple(group))
        for day, group in groupby(ordered, key=lambda e: e.date)
    )
    return PatientTimeline(patient_id=patients[0], visits=visits)


def group_by_patient(events: Sequence[ClinicalEvent]) -> Dict[str, PatientTimeline]:
    """Build one timeline per patient, in first-appearance order."""
    by_patient: Dict[str, List[ClinicalEvent]] = {}
    for event in events:
        by_patient.setdefault(event.patient_id, []).append(event)
    return {pid: build_timeline(evts) for pid, evts in by_patient.items()}


def estimate_tokens(text: str) -> int:
    """Default estimator: ceil(1.3 x whitespace-token count)."""
    return -(-13 * len(text.split()) // 10)


# --- XML records ---

def _escape(text: str) -> str:
    out = text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    for char, entity in _XML_ESCAPES.items():
        out = out.replace(char, entity)
    return out


def _escape_attr(text: str) -> str:
    out = _escape(text)
    for char, entity in _XML_ATTR_ESCAPES.items():
        out = out.replace(char, entity)
    return out


def _event_xml(event: ClinicalEvent) -> str:
    attrs = [f'type="{event.event_type}"']
    if event.code is not None:
        attrs.append(f'code="{_escape_attr(event.code)}"')
    if event.value is not None:
        attrs.append(f'value="{str(event.value)}"')
    if event.unit is not None:
        attrs.append(f'unit="{_escape_attr(event.unit)}"')
    if event.timestamp.time() != time():
        attrs.append(f'time="{event.timestamp.time().isoformat(timespec="seconds")}"')
    opening = f"<event {' '.join(attrs)}"
    if event.text is None:
        return f"{opening}/>"
    return f"{opening}>{_escape(event.text)}</event>"


def _visit_lines(visit: Visit) -> List[str]:
    lines = [f'{INDENT}<visit date="{visit.visit_date.isoformat()}">']
    lines.extend(f"{INDENT * 2}{_event_xml(e)}" for e in visit.events)
    lines.append(f"{INDENT}</visit>")
    return lines


def _wrapper_lines(patient_id: str) -> Tuple[str, str]:
    return f'<patient id="{_escape_attr(patient_id)}">', "</patient>"


def serialize_xml(chunk: Union[ContextChunk, PatientTimeline]) -> str:
    """Serialize a chunk (or a whole timeline) to the XML record format."""
    head, tail = _wrapper_lines(chunk.patient_id)
    lines = [head]
    for visit in chunk.visits:
        lines.extend(_visit_lines(visit))
    lines.append(tail)
    return "\n".join(lines) + "\n"


def parse_xml(text: str, index: int = 0, estimator: TokenEstimator = estimate_tokens) -> ContextChunk:
    """Rebuild a ContextChunk from its XML record."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise TimelineError(f"malformed XML record: {e}") from e
    if root.tag != "patient":
        raise TimelineError(f"expected <patient> root, got <{root.tag}>")
    patient_id = root.get("id", "")
    visits = []
    for visit_el in root.findall("visit"):
        day = date.fromisoformat(visit_el.get("date", ""))
        events = []
        for ev in visit_el.findall("event"):
            clock = time.fromisoformat(ev.get("time")) if ev.get("time") else time()
            value = ev.get("value")
            events.append(ClinicalEvent(
                patient_id=patient_id,
                timestamp=datetime.combine(day, clock),
                event_type=ev.get("type", ""),
                code=ev.get("code"),
                value=Decimal(value) if value is not None else None,
                unit=ev.get("unit"),
                text=ev.text,
            ))
        visits.append(Visit(visit_date=day, events=tuple(events)))
    return ContextChunk(
        patient_id=patient_id,
        visits=tuple(visits),
        token_estimate=estimator(text),
        index=index,
    )


# --- Chunking ---

def visit_cost(visit: Visit, estimator: TokenEstimator = estimate_tokens) -> int:
    return estimator("\n".join(_visit_lines(visit)))


def _wrapper_cost(patient_id: str, estimator: TokenEstimator) -> int:
    return estimator("\n".join(_wrapper_lines(patient_id)))


def _truncate_visit(visit: Visit, limit: int, estimator: TokenEstimator) -> Visit:
    """Halve the longest note texts until the visit costs at most limit tokens."""
    events = list(visit.events)
    current = replace(visit, events=tuple(events))
    while visit_cost(current, estimator) > limit:
        notes = [
            (len(e.text or ""), -i, i) for i, e in enumerate(events)
            if e.event_type == "note" and e.text and e.text != TRUNCATION_MARK
        ]
        if not notes:
            raise OversizedVisitError(visit.visit_date.isoformat(), visit_cost(current, estimator), limit)
        _, _, idx = max(notes)
        words = events[idx].text.split()
        kept = words[: len(words) // 2]
        new_text = f"{' '.join(kept)} {TRUNCATION_MARK}" if kept else TRUNCATION_MARK
        events[idx] = replace(events[idx], text=new_text)
        current = replace(visit, events=tuple(events))
    return current


def chunk_timeline(
    timeline: PatientTimeline,
    token_budget: int,
    estimator: TokenEstimator = estimate_tokens,
    on_oversize: str = "error",
) -> List[ContextChunk]:
    """
    Greedily pack whole visits, left to right, into token-budgeted chunks.

    A chunk closes when the next visit would push it over the budget.
    Chunk token_estimate is the wrapper cost plus the sum of visit costs.

    Args:
        timeline: Patient timeline to cut
        token_budget: Maximum tokens per chunk (> 0)
        estimator: Maps text to a non-negative token count
        on_oversize: 'error' raises OversizedVisitError for a visit that
            cannot fit alone; 'truncate' halves its longest notes until it
            fits and flags the chunk

    Returns:
        List[ContextChunk]: chunks whose visits concatenate to the timeline
    """
    if token_budget <= 0:
        raise ValueError("token_budget must be positive")
    if on_oversize not in OVERSIZE_POLICIES:
        raise ValueError(f"on_oversize must be one of {OVERSIZE_POLICIES}")

    wrapper = _wrapper_cost(timeline.patient_id, estimator)
    chunks: List[ContextChunk] = []
    current: List[Visit] = []
    cost = wrapper
    flagged = False

    def close() -> None:
        nonlocal current, cost, flagged
        chunks.append(ContextChunk(
            patient_id=timeline.patient_id,
            visits=tuple(current),
            token_estimate=cost,
            index=len(chunks),
            truncated=flagged,
        ))
        current, cost, flagged = [], wrapper, False

    for visit in timeline.visits:
        vcost = visit_cost(visit, estimator)
        truncated = False
        if wrapper + vcost > token_budget:
            if on_oversize == "error":
                raise OversizedVisitError(visit.visit_date.isoformat(), wrapper + vcost, token_budget)
            visit = _truncate_visit(visit, token_budget - wrapper, estimator)
            vcost = visit_cost(visit, estimator)
            truncated = True
            logger.warning(
                f"Truncated notes of visit {visit.visit_date.isoformat()} "
                f"({timeline.patient_id}) to fit {token_budget} tokens"
            )
        if current and cost + vcost > token_budget:
            close()
        current.append(visit)
        cost += vcost
        flagged = flagged or truncated

    close()
    logger.debug(f"Chunked {timeline.patient_id}: {len(timeline.visits)} visits -> {len(chunks)} chunks")
    return chunks


def fit_recent(
    timeline: Union[PatientTimeline, ContextChunk],
    token_budget: int,
    estimator: TokenEstimator = estimate_tokens,
) -> ContextChunk:
    """Keep the most recent whole visits that fit a (smaller) context budget.

    At least the last visit is always kept, truncating its notes if needed.
    """
    wrapper = _wrapper_cost(timeline.patient_id, estimator)
    kept: List[Visit] = []
    cost = wrapper
    for visit in reversed(timeline.visits):
        vcost = visit_cost(visit, estimator)
        if kept and cost + vcost > token_budget:
            break
        kept.append(visit)
        cost += vcost
    truncated = False
    if cost > token_budget:
        last = _truncate_visit(kept[0], max(token_budget - wrapper, 0), estimator)
        kept = [last]
        cost = wrapper + visit_cost(last, estimator)
        truncated = True
    kept.reverse()
    index = timeline.index if isinstance(timeline, ContextChunk) else 0
    return ContextChunk(
        patient_id=timeline.patient_id,
        visits=tuple(kept),
        token_estimate=cost,
        index=index,
        truncated=truncated or len(kept) < len(timeline.visits),
    )


# --- Timeline persistence ---

def timeline_to_json(timeline: PatientTimeline) -> Dict[str, object]:
    return {
        "patient_id": timeline.patient_id,
        "events": [e.to_record() for e in timeline.events()],
    }


def timeline_from_json(payload: Dict[str, object]) -> PatientTimeline:
    events = []
    for line, row in enumerate(payload["events"], start=1):
        item = _event_from_row(row, line)
        if isinstance(item, RowError):
            raise TimelineError(f"{payload.get('patient_id')}: {item.message}")
        events.append(item)
    return build_timeline(events)
import random
from dataclasses import replace
from datetime import date, datetime
from decimal import Decimal

import pytest

from timer_bench.errors import EventStreamError, OversizedVisitError, TimelineError
from timer_bench.synth import SynthParams, generate_cohort
from timer_bench.timeline import (
    TRUNCATION_MARK,
    ClinicalEvent,
    ContextChunk,
    build_timeline,
    chunk_timeline,
    dump_events,
    estimate_tokens,
    fit_recent,
    group_by_patient,
    parse_events,
    parse_xml,
    serialize_xml,
    timeline_from_json,
    timeline_to_json,
)

HEADER = b"patient_id,timestamp,event_type,code,value,text\n"


def visits_cost(per_visit: int):
    """Estimator charging a flat amount per serialized visit and nothing for the wrapper."""
    return lambda text: per_visit * text.count("<visit ")


# --- parse_events ---

def test_csv_row_maps_fields():
    result = parse_events(HEADER + b"p1,2020-01-05,condition,C34.90,,lung cancer dx\n", "csv")

    assert result.errors == []
    assert result.events == [
        ClinicalEvent("p1", datetime(2020, 1, 5), "condition", code="C34.90", text="lung cancer dx")
    ]


def test_invalid_timestamp_is_a_row_error_with_line_number():
    stream = HEADER + b"p1,2020-01-05,note,,,ok\np1,2020-13-40,note,,,bad\n"
    result = parse_events(stream, "csv")

    assert len(result.events) == 1
    assert [e.message for e in result.errors] == ["invalid timestamp, line 3"]


def test_unknown_event_type_is_a_row_error():
    result = parse_events(HEADER + b"p1,2020-01-05,allergy,,,peanuts\n", "csv")

    assert result.events == []
    assert "unknown event_type 'allergy'" in result.errors[0].message


def test_empty_stream_gives_nothing():
    result = parse_events(b"", "csv")
    assert result.events == [] and result.errors == []


def test_undecodable_stream_is_fatal():
    with pytest.raises(EventStreamError):
        parse_events(HEADER + b"p1,2020-01-05,note,,,\xff\xfe\n", "csv")


def test_bad_header_is_fatal():
    with pytest.raises(EventStreamError):
        parse_events(b"id,when,what\np1,2020-01-05,note\n", "csv")


def test_jsonl_values_carry_units_and_keep_input_order():
    stream = (
        b'{"patient_id": "p1", "timestamp": "2020-02-01T08:30:00Z", "event_type": "measurement", '
        b'"code": "4548-4", "value": "7.2 %"}\n'
        b"not json\n"
        b'{"patient_id": "p1", "timestamp": "2020-01-01", "event_type": "note", "text": "first"}\n'
    )
    result = parse_events(stream, "jsonl")

    assert [e.event_type for e in result.events] == ["measurement", "note"]
    measurement = result.events[0]
    assert measurement.value == Decimal("7.2")
    assert measurement.unit == "%"
    assert measurement.timestamp == datetime(2020, 2, 1, 8, 30)
    assert [e.line for e in result.errors] == [2]


def test_dump_and_parse_preserve_events():
    cohort = generate_cohort(SynthParams(seed=3, n_patients=2))
    events = [e for tl in cohort for e in tl.events()]

    for fmt in ("csv", "jsonl"):
        result = parse_events(dump_events(events, fmt), fmt)
        assert result.errors == []
        assert result.events == events


@pytest.mark.parametrize("value", ["[7.2]", '{"v": 7.2}', "true", '"NaN"', "NaN", '"seven"'])
def test_unusable_jsonl_value_is_a_row_error(value):
    stream = (
        '{"patient_id": "p1", "timestamp": "2020-01-05", "event_type": "measurement", '
        f'"code": "4548-4", "value": {value}}}\n'
        '{"patient_id": "p1", "timestamp": "2020-01-06", "event_type": "note", "text": "still read"}\n'
    ).encode("utf-8")
    result = parse_events(stream, "jsonl")

    assert [e.message for e in result.errors] == ["invalid value, line 1"]
    assert [e.text for e in result.events] == ["still read"]


def test_control_characters_are_row_errors():
    stream = HEADER + "p1,2020-01-05,note,,,line one\x0bline two\np1,2020-01-06,note,,,clean\n".encode("utf-8")
    result = parse_events(stream, "csv")

    assert [e.line for e in result.errors] == [2]
    assert "not allowed in XML records" in result.errors[0].message
    assert [e.text for e in result.events] == ["clean"]

    jsonl = b'{"patient_id": "p1", "timestamp": "2020-01-05", "event_type": "note", "text": "a\\u0000b"}\n'
    assert parse_events(jsonl, "jsonl").errors[0].line == 1


@pytest.mark.parametrize("char", ["\x00", "\x08", "\x0b", "\x1f", "\ufffe"])
def test_events_refuse_text_xml_cannot_carry(char):
    with pytest.raises(TimelineError):
        ClinicalEvent("p1", datetime(2020, 1, 5), "note", text=f"a{char}b")
    with pytest.raises(TimelineError):
        ClinicalEvent("p1", datetime(2020, 1, 5), "condition", code=f"C{char}1")


def test_jsonl_lines_end_only_at_line_feed():
    events = [
        ClinicalEvent("p1", datetime(2020, 1, 5), "note", text="para one\u2028para two\u2029end\u0085."),
        ClinicalEvent("p1", datetime(2020, 1, 6), "note", text="crlf next"),
    ]
    stream = dump_events(events, "jsonl").replace(b"\n", b"\r\n")
    result = parse_events(stream, "jsonl")

    assert result.errors == []
    assert result.events == events


# --- build_timeline ---

def test_events_group_into_sorted_visits(make_note):
    tl = build_timeline([
        make_note("p1", "2020-05-01"),
        make_note("p1", "2020-01-01", "a"),
        make_note("p1", "2020-01-01", "b"),
    ])

    assert [(v.visit_date, len(v.events)) for v in tl.visits] == [
        (date(2020, 1, 1), 2),
        (date(2020, 5, 1), 1),
    ]
    assert [e.text for e in tl.visits[0].events] == ["a", "b"]


def test_single_event_has_zero_span(make_note):
    tl = build_timeline([make_note("p1", "2020-01-01")])
    assert len(tl.visits) == 1
    assert tl.t_min == tl.t_max


def test_mixed_patients_rejected(make_note):
    with pytest.raises(TimelineError, match="multiple patients"):
        build_timeline([make_note("p1", "2020-01-01"), make_note("p2", "2020-01-02")])


def test_empty_input_rejected():
    with pytest.raises(TimelineError):
        build_timeline([])


def test_rebuilding_from_flattened_events_is_idempotent():
    for tl in generate_cohort(SynthParams(seed=11, n_patients=5)):
        assert build_timeline(tl.events()) == tl


def test_group_by_patient_keeps_first_appearance_order(make_note):
    timelines = group_by_patient([
        make_note("p2", "2020-01-01"),
        make_note("p1", "2020-01-01"),
        make_note("p2", "2020-03-01"),
    ])
    assert list(timelines) == ["p2", "p1"]
    assert len(timelines["p2"].visits) == 2


def test_timeline_json_round_trip():
    tl = generate_cohort(SynthParams(seed=5, n_patients=1))[0]
    assert timeline_from_json(timeline_to_json(tl)) == tl


# --- XML records ---

def test_serialize_single_note():
    chunk = ContextChunk(
        patient_id="p1",
        visits=build_timeline([ClinicalEvent("p1", datetime(2020, 1, 5), "note", text="saw patient")]).visits,
        token_estimate=0,
    )

    assert serialize_xml(chunk) == (
        '<patient id="p1">\n'
        '  <visit date="2020-01-05">\n'
        '    <event type="note">saw patient</event>\n'
        "  </visit>\n"
        "</patient>\n"
    )


def test_markup_in_text_is_escaped():
    tl = build_timeline([ClinicalEvent("p1", datetime(2020, 1, 5), "note", text="<b>bold</b>")])
    assert "&lt;b&gt;bold&lt;/b&gt;" in serialize_xml(tl)


def test_xml_round_trip_with_special_characters():
    events = [
        ClinicalEvent("p&1", datetime(2020, 1, 5), "note", text='a & b < c "quoted" \'single\'\r\nnext line'),
        ClinicalEvent("p&1", datetime(2020, 1, 5, 14, 30), "measurement", code="4548-4", value=Decimal("7.20"), unit="%"),
        ClinicalEvent("p&1", datetime(2021, 6, 1), "condition", code="C34.90", text="lung cancer dx"),
    ]
    tl = build_timeline(events)
    chunk = ContextChunk(patient_id=tl.patient_id, visits=tl.visits, token_estimate=0, index=3)

    back = parse_xml(serialize_xml(chunk), index=3)

    assert back.patient_id == "p&1"
    assert back.visits == chunk.visits
    assert back.index == 3


def test_malformed_xml_rejected():
    with pytest.raises(TimelineError):
        parse_xml("<patient id='p1'><visit")


def test_whitespace_in_attributes_survives():
    tl = build_timeline([
        ClinicalEvent("p\t1\n", datetime(2020, 1, 5), "measurement", code="C34\t90", value=Decimal("1"), unit="mg\n/dL"),
        ClinicalEvent("p\t1\n", datetime(2020, 1, 5), "condition", code="\r\nC\r"),
    ])
    back = parse_xml(serialize_xml(tl))

    assert back.patient_id == "p\t1\n"
    assert back.visits == tl.visits


FUZZ_ALPHABET = "ab Z09&<>\"'\t\n\r;\u00e9\u2028\u00a0\U0001f600]"


def fuzz_text(rng: random.Random) -> str:
    return "".join(rng.choice(FUZZ_ALPHABET) for _ in range(rng.randint(1, 12)))


def test_xml_round_trip_over_generated_cohorts():
    rng = random.Random(11)
    for tl in generate_cohort(SynthParams(seed=5, n_patients=25)):
        for chunk in chunk_timeline(tl, 16000):
            assert parse_xml(serialize_xml(chunk), index=chunk.index).visits == chunk.visits

        patient_id = fuzz_text(rng)
        events = [
            replace(
                e,
                patient_id=patient_id,
                code=fuzz_text(rng) if e.code is not None else None,
                unit=fuzz_text(rng) if e.unit is not None else None,
                text=fuzz_text(rng) if e.text is not None else None,
            )
            for e in tl.events()
        ]
        fuzzed = build_timeline(events)
        chunk = ContextChunk(patient_id=patient_id, visits=fuzzed.visits, token_estimate=0, index=2)

        back = parse_xml(serialize_xml(chunk), index=2)

        assert back.patient_id == patient_id
        assert back.visits == chunk.visits


# --- Token estimate ---

@pytest.mark.parametrize("text,expected", [
    ("", 0),
    ("a b c", 4),
    (" ".join(["w"] * 1000), 1300),
])
def test_estimate_tokens(text, expected):
    assert estimate_tokens(text) == expected


# --- Chunking ---

def test_greedy_chunking(make_timeline):
    tl = make_timeline("p1", ["2020-01-01", "2020-02-01", "2020-03-01", "2020-04-01"])
    chunks = chunk_timeline(tl, 16000, estimator=visits_cost(5000))

    assert [len(c.visits) for c in chunks] == [3, 1]
    assert [c.token_estimate for c in chunks] == [15000, 5000]
    assert [c.chunk_ref for c in chunks] == ["p1#0", "p1#1"]


def test_oversized_visit_names_its_date(make_timeline):
    tl = make_timeline("p1", ["2020-01-01", "2020-02-01"])

    with pytest.raises(OversizedVisitError, match="2020-01-01"):
        chunk_timeline(tl, 16000, estimator=visits_cost(20000))


def test_everything_fits_in_one_chunk(make_timeline):
    tl = make_timeline("p1", ["2020-01-01", "2020-02-01", "2020-03-01"])
    chunks = chunk_timeline(tl, 16000)

    assert len(chunks) == 1
    assert chunks[0].visits == tl.visits
    assert chunks[0].token_estimate >= estimate_tokens(serialize_xml(tl))


def test_truncate_fallback_flags_the_chunk():
    long_note = " ".join(f"word{i}" for i in range(100))
    tl = build_timeline([ClinicalEvent("p1", datetime(2020, 1, 1), "note", text=long_note)])

    chunks = chunk_timeline(tl, 60, on_oversize="truncate")

    assert len(chunks) == 1
    assert chunks[0].truncated
    assert chunks[0].token_estimate <= 60
    assert chunks[0].visits[0].events[0].text.endswith(TRUNCATION_MARK)


def test_chunks_partition_the_timeline():
    for tl in generate_cohort(SynthParams(seed=2, n_patients=6, visits_per_patient=(8, 12))):
        chunks = chunk_timeline(tl, 400)

        assert tuple(v for c in chunks for v in c.visits) == tl.visits
        assert all(c.token_estimate <= 400 for c in chunks)
        assert all(a.t_max < b.t_min for a, b in zip(chunks, chunks[1:]))
        assert [c.index for c in chunks] == list(range(len(chunks)))


def test_fit_recent_keeps_latest_visits(make_timeline):
    tl = make_timeline("p1", ["2020-01-01", "2020-02-01", "2020-03-01", "2020-04-01"])
    fitted = fit_recent(tl, 10000, estimator=visits_cost(4000))

    assert fitted.visit_dates == ["2020-03-01", "2020-04-01"]
    assert fitted.truncated

from datetime import date, datetime
from typing import List, Sequence

import pytest

from timer_bench import api
from timer_bench.timeline import ClinicalEvent, ContextChunk, PatientTimeline, Visit, build_timeline


def note(pid: str, day: str, text: str = "saw patient") -> ClinicalEvent:
    return ClinicalEvent(pid, datetime.fromisoformat(day), "note", text=text)


def timeline_of(pid: str, days: Sequence[str]) -> PatientTimeline:
    """One note per day, worded the way synthetic notes are."""
    return build_timeline([note(pid, d, f"Visit on {d}. Plan to reassess.") for d in days])


def chunk_of(pid: str, days: Sequence[str], index: int = 0) -> ContextChunk:
    tl = timeline_of(pid, days)
    return ContextChunk(patient_id=pid, visits=tl.visits, token_estimate=0, index=index)


@pytest.fixture
def make_timeline():
    return timeline_of


@pytest.fixture
def make_chunk():
    return chunk_of


@pytest.fixture
def make_note():
    return note


@pytest.fixture(autouse=True)
def offline_config(monkeypatch):
    """Every test starts from the mock provider with no pacing or backoff."""
    monkeypatch.setattr(api, "_CONFIG", dict(api._CONFIG))
    api.init_config(provider="mock", model="mock-1", requests_per_minute=0, backoff_base=0.0)
    yield

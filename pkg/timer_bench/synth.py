"""
Deterministic synthetic longitudinal records for offline runs.

Every patient gets its own RNG seeded from (seed, patient index), so a
patient's record does not depend on how many patients are generated
after it. Each visit carries a clinical note that states the visit date,
which is what lets the offline generation provider ground its evidence.
"""

import logging
import random
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from decimal import Decimal
from typing import List, Tuple

from .timeline import ClinicalEvent, PatientTimeline, build_timeline

logger = logging.getLogger(__name__)

SPACINGS = ("uniform", "clustered")

CONDITIONS = [
    ("E11.9", "type 2 diabetes mellitus"),
    ("I10", "essential hypertension"),
    ("J45.909", "asthma"),
    ("N18.3", "chronic kidney disease stage 3"),
    ("E78.5", "hyperlipidemia"),
    ("I48.91", "atrial fibrillation"),
    ("M17.11", "osteoarthritis of the right knee"),
    ("F32.9", "major depressive disorder"),
]

MEDICATIONS = [
    ("860975", "metformin 500 mg twice daily"),
    ("197361", "amlodipine 5 mg daily"),
    ("617314", "atorvastatin 20 mg daily"),
    ("745679", "albuterol inhaler as needed"),
    ("855332", "warfarin 5 mg daily"),
    ("312940", "sertraline 50 mg daily"),
    ("314076", "lisinopril 10 mg daily"),
]

MEASUREMENTS = [
    ("4548-4", "%", 5.0, 11.0),
    ("2160-0", "mg/dL", 0.6, 3.5),
    ("8480-6", "mmHg", 100.0, 180.0),
    ("39156-5", "kg/m2", 18.0, 42.0),
    ("2345-7", "mg/dL", 70.0, 260.0),
    ("8867-4", "bpm", 50.0, 120.0),
]

PROCEDURES = [
    ("93000", "electrocardiogram"),
    ("71046", "chest x-ray"),
    ("45378", "colonoscopy"),
    ("93306", "echocardiogram"),
    ("20610", "knee joint injection"),
]

NOTE_PHRASES = [
    "Patient reports improved energy since the last visit.",
    "Complains of intermittent shortness of breath on exertion.",
    "Blood pressure remains above goal despite therapy.",
    "Glucose log reviewed with the patient.",
    "Medication adherence discussed; no missed doses reported.",
    "Mild ankle edema noted on examination.",
    "Denies chest pain, palpitations or syncope.",
    "Weight is stable compared with the prior visit.",
    "Counseled on diet and daily physical activity.",
    "Sleep has been poor over the past month.",
    "Follow-up labs ordered before the next appointment.",
    "Knee pain limits walking to a few blocks.",
    "Mood has improved on the current regimen.",
    "Referred to nephrology for declining kidney function.",
    "Inhaler technique reviewed and corrected.",
    "No adverse effects from the new medication.",
    "Patient is planning travel and requested refills.",
    "Home readings brought to the visit were reviewed.",
    "Discussed risks and benefits of anticoagulation.",
    "Plan to reassess in three months.",
]


@dataclass(frozen=True)
class SynthParams:
    """
    Shape of a synthetic cohort. Ranges are inclusive (low, high) pairs.

    spacing 'uniform' spreads visit dates evenly over the span; 'clustered'
    piles them up near both ends of the span.
    """

    seed: int = 0
    n_patients: int = 10
    visits_per_patient: Tuple[int, int] = (3, 12)
    span_days: Tuple[int, int] = (365, 3650)
    events_per_visit: Tuple[int, int] = (2, 6)
    note_vocabulary: int = len(NOTE_PHRASES)
    spacing: str = "uniform"
    start_date: date = date(2015, 1, 1)

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        for name in ("visits_per_patient", "span_days", "events_per_visit"):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                raise ValueError(f"{name} must be a non-empty positive range, got ({low}, {high})")
        if not 1 <= self.note_vocabulary <= len(NOTE_PHRASES):
            raise ValueError(f"note_vocabulary must be between 1 and {len(NOTE_PHRASES)}")
        if self.spacing not in SPACINGS:
            raise ValueError(f"spacing must be one of {SPACINGS}")


def patient_id(index: int) -> str:
    return f"P{index:05d}"


def _visit_days(rng: random.Random, count: int, span: int, spacing: str) -> List[int]:
    count = min(count, span + 1)
    if spacing == "uniform":
        return sorted(rng.sample(range(span + 1), count))
    days = set()
    while len(days) < count:
        days.add(round(rng.betavariate(0.5, 0.5) * span))
    return sorted(days)


def _structured_event(pid: str, ts: datetime, rng: random.Random) -> ClinicalEvent:
    kind = rng.choice(("condition", "medication", "measurement", "procedure"))
    if kind == "measurement":
        code, unit, low, high = rng.choice(MEASUREMENTS)
        value = Decimal(f"{rng.uniform(low, high):.1f}")
        return ClinicalEvent(pid, ts, kind, code=code, value=value, unit=unit)
    catalog = {"condition": CONDITIONS, "medication": MEDICATIONS, "procedure": PROCEDURES}[kind]
    code, text = rng.choice(catalog)
    return ClinicalEvent(pid, ts, kind, code=code, text=text)


def _note(pid: str, ts: datetime, rng: random.Random, vocabulary: List[str]) -> ClinicalEvent:
    phrases = rng.sample(vocabulary, min(2, len(vocabulary)))
    text = f"Visit on {ts.date().isoformat()}. " + " ".join(phrases)
    return ClinicalEvent(pid, ts, "note", text=text)


def generate_patient(params: SynthParams, index: int) -> PatientTimeline:
    rng = random.Random(f"{params.seed}:{index}")
    pid = patient_id(index)
    span = rng.randint(*params.span_days)
    days = _visit_days(rng, rng.randint(*params.visits_per_patient), span, params.spacing)
    vocabulary = NOTE_PHRASES[:params.note_vocabulary]

    events: List[ClinicalEvent] = []
    for offset in days:
        ts = datetime.combine(params.start_date + timedelta(days=offset), time())
        events.append(_note(pid, ts, rng, vocabulary))
        for _ in range(rng.randint(*params.events_per_visit) - 1):
            events.append(_structured_event(pid, ts, rng))
    return build_timeline(events)


def generate_cohort(params: SynthParams) -> List[PatientTimeline]:
    """Generate params.n_patients timelines, deterministic in params.seed."""
    cohort = [generate_patient(params, i) for i in range(params.n_patients)]
    visits = sum(len(t.visits) for t in cohort)
    logger.info(f"✓ Generated {len(cohort)} synthetic patients ({visits} visits, seed {params.seed})")
    return cohort

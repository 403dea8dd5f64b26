import pytest
from scipy import stats

from timer_bench.synth import SynthParams, generate_cohort, generate_patient, patient_id
from timer_bench.temporal import visit_positions
from timer_bench.timeline import ContextChunk, dump_events


def as_chunk(timeline) -> ContextChunk:
    return ContextChunk(patient_id=timeline.patient_id, visits=timeline.visits, token_estimate=0)


def test_same_seed_gives_identical_bytes():
    params = SynthParams(seed=7, n_patients=2)
    first = dump_events([e for tl in generate_cohort(params) for e in tl.events()], "csv")
    second = dump_events([e for tl in generate_cohort(params) for e in tl.events()], "csv")
    assert first == second


def test_different_seeds_differ():
    a = generate_cohort(SynthParams(seed=1, n_patients=3))
    b = generate_cohort(SynthParams(seed=2, n_patients=3))
    assert a != b


def test_patient_does_not_depend_on_cohort_size():
    small = generate_cohort(SynthParams(seed=4, n_patients=2))
    large = generate_cohort(SynthParams(seed=4, n_patients=6))
    assert large[:2] == small


def test_fixed_visit_count():
    cohort = generate_cohort(SynthParams(seed=3, n_patients=10, visits_per_patient=(3, 3)))
    assert all(len(tl.visits) == 3 for tl in cohort)


def test_every_visit_has_a_dated_note():
    for tl in generate_cohort(SynthParams(seed=9, n_patients=4)):
        for visit in tl.visits:
            notes = [e for e in visit.events if e.event_type == "note"]
            assert notes
            assert notes[0].text.startswith(f"Visit on {visit.visit_date.isoformat()}.")


def test_events_per_visit_range():
    for tl in generate_cohort(SynthParams(seed=5, n_patients=5, events_per_visit=(2, 4))):
        assert all(2 <= len(v.events) <= 4 for v in tl.visits)


def test_span_stays_inside_range():
    for tl in generate_cohort(SynthParams(seed=6, n_patients=8, span_days=(100, 200))):
        assert (tl.t_max - tl.t_min).days <= 200


def test_patient_ids_are_zero_padded():
    assert patient_id(12) == "P00012"
    assert generate_patient(SynthParams(seed=0), 3).patient_id == "P00003"


def test_uniform_spacing_gives_uniform_visit_positions():
    params = SynthParams(seed=0, n_patients=125, visits_per_patient=(12, 12), span_days=(365, 365))
    positions = []
    for tl in generate_cohort(params):
        # first and last visit sit on the bounds by construction
        positions.extend(visit_positions(as_chunk(tl))[1:-1])

    assert len(positions) == 1250
    assert stats.kstest(positions, "uniform").pvalue > 0.01


def test_clustered_spacing_piles_up_at_the_ends():
    params = SynthParams(seed=0, n_patients=60, visits_per_patient=(12, 12), spacing="clustered")
    positions = [p for tl in generate_cohort(params) for p in visit_positions(as_chunk(tl))[1:-1]]
    tails = sum(1 for p in positions if p < 0.1 or p > 0.9) / len(positions)
    assert tails > 0.3


@pytest.mark.parametrize("kwargs", [
    {"n_patients": 0},
    {"visits_per_patient": (5, 2)},
    {"span_days": (0, 10)},
    {"note_vocabulary": 0},
    {"spacing": "random"},
])
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        SynthParams(**kwargs)

"""
Exception hierarchy for the TIMER pipeline.

Every error derives from ValueError so callers that only know the
standard library still catch them. Row-level ingestion problems and
per-chunk / per-sample failures are recorded as values elsewhere; the
exceptions here are for failures that stop one operation.
"""

from typing import Dict, List, Optional


class TimerError(ValueError):
    """Base class for all pipeline errors."""


class EventStreamError(TimerError):
    """The event stream cannot be read at all (decoding, header, format)."""


class TimelineError(TimerError):
    """Events cannot form a valid patient timeline."""


class OversizedVisitError(TimelineError):
    """A single visit does not fit the token budget on its own."""

    def __init__(self, visit_date: str, cost: int, budget: int):
        self.visit_date = visit_date
        self.cost = cost
        self.budget = budget
        super().__init__(
            f"visit {visit_date} needs {cost} tokens, budget is {budget}"
        )


class EvidenceRangeError(TimerError):
    """Evidence timestamps fall outside the bounds of their chunk."""

    def __init__(self, offenders: List[str], t_min: str, t_max: str):
        self.offenders = offenders
        super().__init__(
            f"evidence not in chunk [{t_min}, {t_max}]: {', '.join(offenders)}"
        )


class GenerationParseError(TimerError):
    """A provider response holds no usable JSON array of candidates."""


class ProviderError(TimerError):
    """Transport or API failure after all retries."""

    def __init__(self, message: str, status_code: Optional[int] = None):
        self.status_code = status_code
        super().__init__(message)


class SamplingError(TimerError):
    """A sample cannot be drawn from the given pool."""


class PatientOverlapError(TimerError):
    """Benchmark and tuning pools share patients."""

    def __init__(self, patient_ids: List[str]):
        self.patient_ids = sorted(patient_ids)
        super().__init__(f"patient overlap: {', '.join(self.patient_ids)}")


class JudgeParseError(TimerError):
    """The judge reply does not follow the verdict grammar."""

    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class MetricInputError(TimerError):
    """Invalid input to a statistic (empty sample, length mismatch, ...)."""


class ConfigError(TimerError):
    """Run configuration failed validation.

    Attributes:
        fields: mapping of config field name to the validation message.
    """

    def __init__(self, fields: Dict[str, str]):
        self.fields = dict(fields)
        details = "; ".join(f"{k}: {v}" for k, v in sorted(self.fields.items()))
        super().__init__(f"invalid configuration: {details}")


class MissingInputError(TimerError):
    """A pipeline stage was asked to run before its inputs exist."""

    def __init__(self, missing: List[str]):
        self.missing = list(missing)
        super().__init__(f"missing inputs: {', '.join(self.missing)}")

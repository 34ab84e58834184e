"""Core entities and the participant lifecycle state machine.

A participant is created when its device is issued a verification code and
is keyed by ``device_id`` until the crowd worker who entered that code is
approved. Every change to a participant happens by folding a
:class:`StudyEvent` through :func:`transition`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from functools import lru_cache
from typing import Any, Optional
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from .config import StudyConfig
from .errors import (
    ConsentIncomplete,
    IllegalTransition,
    InvalidDemographics,
    OutOfWindow,
    StudyError,
)

UTC = timezone.utc


class LifecycleState(str, enum.Enum):
    CODE_ISSUED = "CodeIssued"
    ENROLLED = "Enrolled"
    ACTIVE = "Active"
    COMPLETED = "Completed"
    EXPIRED = "Expired"
    REJECTED = "Rejected"

    @property
    def terminal(self) -> bool:
        return self in (LifecycleState.COMPLETED, LifecycleState.EXPIRED, LifecycleState.REJECTED)

    @property
    def participating(self) -> bool:
        return self in (LifecycleState.ENROLLED, LifecycleState.ACTIVE)


class EventKind(str, enum.Enum):
    HIT_PUBLISHED = "HitPublished"
    CODE_ISSUED = "CodeIssued"
    CODE_EXPIRED = "CodeExpired"
    ENROLLMENT_APPROVED = "EnrollmentApproved"
    ENROLLMENT_REJECTED = "EnrollmentRejected"
    ASSIGNMENT_APPROVED = "AssignmentApproved"
    ASSIGNMENT_REJECTED = "AssignmentRejected"
    PARTICIPANT_ACTIVATED = "ParticipantActivated"
    MEASUREMENT_SUBMITTED = "MeasurementSubmitted"
    DUPLICATE_SUBMISSION = "DuplicateSubmission"
    BONUS_PAID = "BonusPaid"
    NOTIFICATION_SCHEDULED = "NotificationScheduled"
    NOTIFICATION_SENT = "NotificationSent"
    NOTIFICATION_SUPPRESSED = "NotificationSuppressed"
    NOTIFICATION_CANCELLED = "NotificationCancelled"
    NOTIFICATION_FAILED = "NotificationFailed"
    STUDY_ENDED = "StudyEnded"
    SURVEY_PUBLISHED = "SurveyPublished"
    SURVEY_PAID = "SurveyPaid"


class NotificationKind(str, enum.Enum):
    MORNING = "Morning"
    EVENING_CONDITIONAL = "EveningConditional"
    REENGAGEMENT = "Reengagement"


class NotificationState(str, enum.Enum):
    PENDING = "Pending"
    SENT = "Sent"
    CANCELLED = "Cancelled"
    SUPPRESSED = "Suppressed"
    FAILED = "Failed"


class CodeState(str, enum.Enum):
    UNUSED = "Unused"
    CONSUMED = "Consumed"
    EXPIRED = "Expired"


HANDS = ("left", "right", "ambidextrous")


@dataclass(frozen=True)
class Demographics:
    country: str
    dominant_hand: str
    height: Optional[float] = None
    weight: Optional[float] = None
    gender: str = ""

    def __post_init__(self) -> None:
        if self.dominant_hand not in HANDS:
            raise InvalidDemographics(f"dominant_hand must be one of {HANDS}")
        for name in ("height", "weight"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise InvalidDemographics(f"{name} must be positive")
        if not self.country:
            raise InvalidDemographics("country is required")


@dataclass(frozen=True)
class ConsentRecord:
    toggles: tuple[bool, ...]
    timestamp: datetime

    def require_complete(self) -> None:
        if not self.toggles or not all(self.toggles):
            raise ConsentIncomplete("every consent condition must be accepted")


@dataclass(frozen=True)
class RoundResult:
    round_index: int
    parameters: dict
    answer_correct: bool


@dataclass(frozen=True)
class MeasurementRecord:
    worker_id: str
    study_day: int
    submitted_at: datetime
    local_time: str
    scroll_rounds: tuple[RoundResult, ...]
    swipe_rounds: tuple[RoundResult, ...]
    bonus_index: int
    bonus_paid: int
    duration: float


@dataclass(frozen=True)
class VerificationCode:
    code: str
    device_id: str
    issued_at: datetime
    expires_at: datetime
    state: CodeState = CodeState.UNUSED


@dataclass(frozen=True)
class ScheduledNotification:
    id: str
    worker_id: str
    device_id: str
    study_day: int
    kind: NotificationKind
    fire_at: datetime
    state: NotificationState = NotificationState.PENDING
    attempts: int = 0


@dataclass(frozen=True)
class Participant:
    device_id: str
    timezone: str
    scheme_id: str
    enrolled_at: datetime
    demographics: Demographics
    consent: ConsentRecord
    device_model: str = ""
    worker_id: Optional[str] = None
    state: LifecycleState = LifecycleState.CODE_ISSUED
    bonus_count: int = 0
    measurement_count: int = 0
    last_day: int = 0


@dataclass(frozen=True)
class StudyEvent:
    seq: int
    at: datetime
    kind: EventKind
    worker_id: Optional[str]
    payload: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "at": self.at.isoformat(),
            "kind": self.kind.value,
            "worker_id": self.worker_id,
            "payload": self.payload,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "StudyEvent":
        return cls(
            seq=int(rec["seq"]),
            at=datetime.fromisoformat(rec["at"]),
            kind=EventKind(rec["kind"]),
            worker_id=rec["worker_id"],
            payload=rec["payload"],
        )


# ---------------------------------------------------------------- time helpers

@lru_cache(maxsize=None)
def zone(name: str) -> ZoneInfo:
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise StudyError(f"unknown timezone {name!r}") from exc


def local_date(ts: datetime, tz: str) -> date:
    return ts.astimezone(zone(tz)).date()


def local_time_of(ts: datetime, tz: str) -> str:
    return ts.astimezone(zone(tz)).strftime("%H:%M:%S")


def at_local(day: date, tod, tz: str) -> datetime:
    """UTC instant of wall-clock ``tod`` on local calendar ``day``."""
    return datetime.combine(day, tod, tzinfo=zone(tz)).astimezone(UTC)


def local_midnight(day: date, tz: str) -> datetime:
    # Midnight can fall in a DST gap in a few zones; step forward until the
    # wall clock round-trips onto ``day``.
    ts = datetime.combine(day, datetime.min.time(), tzinfo=zone(tz)).astimezone(UTC)
    while local_date(ts, tz) < day:
        ts += timedelta(minutes=15)
    return ts


def day_date(participant: Participant, day_index: int) -> date:
    """Local calendar date of 1-based study day ``day_index``."""
    return local_date(participant.enrolled_at, participant.timezone) + timedelta(days=day_index - 1)


def raw_study_day(participant: Participant, ts: datetime) -> int:
    start = local_date(participant.enrolled_at, participant.timezone)
    return (local_date(ts, participant.timezone) - start).days + 1


def study_day(participant: Participant, ts: datetime, duration_days: int = 31) -> int:
    """1-based study day of ``ts`` on the participant's local calendar."""
    if ts < participant.enrolled_at:
        raise OutOfWindow(f"{ts.isoformat()} precedes enrollment")
    day = raw_study_day(participant, ts)
    if day > duration_days:
        raise OutOfWindow(f"day {day} is past the {duration_days}-day window")
    return day


# --------------------------------------------------------------- state machine

_S = LifecycleState
_K = EventKind

_ALWAYS_OK = {
    _K.NOTIFICATION_CANCELLED, _K.NOTIFICATION_SUPPRESSED, _K.NOTIFICATION_FAILED,
    _K.DUPLICATE_SUBMISSION, _K.ASSIGNMENT_APPROVED, _K.SURVEY_PAID,
}
_WHILE_PARTICIPATING = {_K.NOTIFICATION_SCHEDULED, _K.NOTIFICATION_SENT}


def _illegal(p: Optional[Participant], event: StudyEvent) -> IllegalTransition:
    state = p.state.value if p else "<none>"
    return IllegalTransition(f"{event.kind.value} not permitted in state {state}")


def participant_from_code(event: StudyEvent) -> Participant:
    pl = event.payload
    return Participant(
        device_id=pl["device_id"],
        timezone=pl["timezone"],
        scheme_id=pl["scheme_id"],
        enrolled_at=datetime.fromisoformat(pl["first_measurement_at"]),
        demographics=Demographics(**pl["demographics"]),
        consent=ConsentRecord(
            tuple(pl["consent"]["toggles"]),
            datetime.fromisoformat(pl["consent"]["timestamp"]),
        ),
        device_model=pl.get("device_model", ""),
    )


def transition(participant: Optional[Participant], event: StudyEvent,
               config: StudyConfig = StudyConfig()) -> Participant:
    """Return the participant after ``event``; the input is left untouched."""
    p = participant
    kind = event.kind
    if kind is _K.CODE_ISSUED:
        if p is not None:
            raise _illegal(p, event)
        return participant_from_code(event)
    if p is None:
        raise _illegal(p, event)

    if kind in _ALWAYS_OK:
        return p
    if kind in _WHILE_PARTICIPATING:
        if not p.state.participating:
            raise _illegal(p, event)
        return p
    if kind is _K.ENROLLMENT_APPROVED:
        if p.state is not _S.CODE_ISSUED or not event.worker_id:
            raise _illegal(p, event)
        return replace(p, state=_S.ENROLLED, worker_id=event.worker_id)
    if kind is _K.CODE_EXPIRED:
        if p.state is not _S.CODE_ISSUED:
            raise _illegal(p, event)
        return replace(p, state=_S.REJECTED)
    if kind is _K.PARTICIPANT_ACTIVATED:
        if p.state is not _S.ENROLLED:
            raise _illegal(p, event)
        return replace(p, state=_S.ACTIVE)
    if kind is _K.STUDY_ENDED:
        if p.state is not _S.ACTIVE:
            raise _illegal(p, event)
        return replace(p, state=_S.EXPIRED)
    if kind is _K.BONUS_PAID:
        if p.state in (_S.CODE_ISSUED, _S.REJECTED):
            raise _illegal(p, event)
        return p
    if kind is _K.MEASUREMENT_SUBMITTED:
        return _apply_measurement(p, event, config)
    raise _illegal(p, event)


def _apply_measurement(p: Participant, event: StudyEvent, config: StudyConfig) -> Participant:
    day = int(event.payload["study_day"])
    bonus_index = int(event.payload["bonus_index"])
    if p.state is _S.ENROLLED:
        ok = p.measurement_count == 0 and day == 1 and bonus_index == 0
    elif p.state is _S.ACTIVE:
        ok = (day > p.last_day and day <= config.duration_days
              and bonus_index == p.bonus_count + 1 <= config.max_bonuses)
    else:
        ok = False
    if not ok:
        raise _illegal(p, event)
    bonus_count = p.bonus_count + (1 if bonus_index else 0)
    state = _S.COMPLETED if bonus_count >= config.max_bonuses else p.state
    return replace(p, state=state, bonus_count=bonus_count,
                   measurement_count=p.measurement_count + 1, last_day=day)

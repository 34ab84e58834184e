"""Materialized study state, derived only by folding the event log.

The live service and replay share :meth:`StudyState.apply`, so replaying a
log reproduces the live state field for field. ``apply`` checks everything
before it mutates anything: a rejected event leaves the state untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

from . import _codec
from .config import StudyConfig
from .domain import (
    CodeState,
    EventKind,
    MeasurementRecord,
    NotificationKind,
    NotificationState,
    Participant,
    RoundResult,
    ScheduledNotification,
    StudyEvent,
    VerificationCode,
    transition,
)
from .errors import StorageError, ValidationError

APPROVED = "Approved"
REJECTED = "Rejected"

HIT_PAYMENT = "HitPayment"
BONUS = "Bonus"
SURVEY_PAYMENT = "SurveyPayment"


def bonus_key(worker_id: str, study_day: int) -> str:
    return f"bonus:{worker_id}:{study_day}"


@dataclass(frozen=True)
class AssignmentDecision:
    assignment_id: str
    worker_id: str
    code: str
    decision: str
    reason: str = ""
    device_id: Optional[str] = None
    acked: bool = False


@dataclass(frozen=True)
class LedgerMirrorEntry:
    worker_id: str
    kind: str
    amount: int
    idempotency_key: str
    at: datetime


def _rounds(raw) -> tuple[RoundResult, ...]:
    return tuple(RoundResult(int(r["round_index"]), dict(r.get("parameters", {})),
                             bool(r["answer_correct"])) for r in raw)


@dataclass
class StudyState:
    config: StudyConfig = field(default_factory=StudyConfig, compare=False, repr=False)
    seq: int = 0
    hit_id: Optional[str] = None
    survey_hit_id: Optional[str] = None
    codes: dict[str, VerificationCode] = field(default_factory=dict)
    participants: dict[str, Participant] = field(default_factory=dict)
    first_measurements: dict[str, dict] = field(default_factory=dict)
    worker_devices: dict[str, str] = field(default_factory=dict)
    assignments: dict[str, AssignmentDecision] = field(default_factory=dict)
    measurements: dict[str, list[MeasurementRecord]] = field(default_factory=dict)
    bonus_receipts: dict[str, str] = field(default_factory=dict)
    notifications: dict[str, ScheduledNotification] = field(default_factory=dict)
    ledger: list[LedgerMirrorEntry] = field(default_factory=list)

    # ----------------------------------------------------------- queries

    def participant_by_worker(self, worker_id: str) -> Optional[Participant]:
        device = self.worker_devices.get(worker_id)
        return self.participants.get(device) if device else None

    def has_measurement(self, worker_id: str, day: int) -> bool:
        return any(m.study_day == day for m in self.measurements.get(worker_id, ()))

    def pending_bonuses(self) -> list[MeasurementRecord]:
        out = []
        for worker_id in sorted(self.measurements):
            for m in self.measurements[worker_id]:
                if m.bonus_paid and bonus_key(worker_id, m.study_day) not in self.bonus_receipts:
                    out.append(m)
        return out

    def unacked_decisions(self) -> list[AssignmentDecision]:
        return [d for _, d in sorted(self.assignments.items()) if not d.acked]

    def pending_notifications(self, worker_id: Optional[str] = None) -> list[ScheduledNotification]:
        return [n for n in self.notifications.values()
                if n.state is NotificationState.PENDING
                and (worker_id is None or n.worker_id == worker_id)]

    def ledger_total(self, worker_id: str, kinds=(HIT_PAYMENT, BONUS)) -> int:
        return sum(e.amount for e in self.ledger if e.worker_id == worker_id and e.kind in kinds)

    # ------------------------------------------------------------ folding

    def apply(self, event: StudyEvent) -> None:
        if event.seq != self.seq + 1:
            raise ValidationError(f"expected seq {self.seq + 1}, got {event.seq}")
        handler = getattr(self, "_on_" + event.kind.name.lower())
        handler(event)
        self.seq = event.seq

    def _participant_for(self, event: StudyEvent) -> Participant:
        p = self.participant_by_worker(event.worker_id) if event.worker_id else None
        if p is None:
            raise ValidationError(f"{event.kind.value}: unknown worker {event.worker_id!r}")
        return p

    def _on_hit_published(self, ev: StudyEvent) -> None:
        if self.hit_id is not None:
            raise ValidationError("enrollment HIT already published")
        self.hit_id = ev.payload["hit_id"]

    def _on_survey_published(self, ev: StudyEvent) -> None:
        if self.survey_hit_id is not None:
            raise ValidationError("survey HIT already published")
        self.survey_hit_id = ev.payload["hit_id"]

    def _on_code_issued(self, ev: StudyEvent) -> None:
        pl = ev.payload
        code, device = pl["code"], pl["device_id"]
        if code in self.codes:
            raise ValidationError(f"code {code} already issued")
        if device in self.participants:
            raise ValidationError(f"device {device} already has a participant record")
        participant = transition(None, ev, self.config)
        vc = VerificationCode(code, device, ev.at, datetime.fromisoformat(pl["expires_at"]))
        self.codes[code] = vc
        self.participants[device] = participant
        self.first_measurements[device] = dict(pl["first_measurement"], at=pl["first_measurement_at"])

    def _on_code_expired(self, ev: StudyEvent) -> None:
        vc = self.codes.get(ev.payload["code"])
        if vc is None or vc.state is not CodeState.UNUSED:
            raise ValidationError("only unused codes can expire")
        p = transition(self.participants[vc.device_id], ev, self.config)
        self.codes[vc.code] = replace(vc, state=CodeState.EXPIRED)
        self.participants[vc.device_id] = p

    def _check_undecided(self, assignment_id: str) -> None:
        if assignment_id in self.assignments:
            raise ValidationError(f"assignment {assignment_id} already decided")

    def _on_enrollment_approved(self, ev: StudyEvent) -> None:
        pl = ev.payload
        self._check_undecided(pl["assignment_id"])
        vc = self.codes.get(pl["code"])
        if vc is None or vc.state is not CodeState.UNUSED:
            raise ValidationError("approval requires an unused code")
        if ev.worker_id in self.worker_devices:
            raise ValidationError(f"worker {ev.worker_id} already associated")
        p = transition(self.participants[vc.device_id], ev, self.config)
        self.codes[vc.code] = replace(vc, state=CodeState.CONSUMED)
        self.participants[vc.device_id] = p
        self.worker_devices[ev.worker_id] = vc.device_id
        self.measurements.setdefault(ev.worker_id, [])
        self.assignments[pl["assignment_id"]] = AssignmentDecision(
            pl["assignment_id"], ev.worker_id, vc.code, APPROVED, device_id=vc.device_id)

    def _on_enrollment_rejected(self, ev: StudyEvent) -> None:
        pl = ev.payload
        self._check_undecided(pl["assignment_id"])
        self.assignments[pl["assignment_id"]] = AssignmentDecision(
            pl["assignment_id"], ev.worker_id, pl.get("code", ""), REJECTED, pl.get("reason", ""))

    def _ack(self, ev: StudyEvent, decision: str) -> AssignmentDecision:
        d = self.assignments.get(ev.payload["assignment_id"])
        if d is None or d.decision != decision or d.acked:
            raise ValidationError(f"{ev.kind.value}: no unacknowledged {decision} decision")
        return d

    def _on_assignment_approved(self, ev: StudyEvent) -> None:
        d = self._ack(ev, APPROVED)
        self.assignments[d.assignment_id] = replace(d, acked=True)
        self.ledger.append(LedgerMirrorEntry(d.worker_id, HIT_PAYMENT, int(ev.payload["amount"]),
                                             d.assignment_id, ev.at))

    def _on_assignment_rejected(self, ev: StudyEvent) -> None:
        d = self._ack(ev, REJECTED)
        self.assignments[d.assignment_id] = replace(d, acked=True)

    def _on_participant_activated(self, ev: StudyEvent) -> None:
        p = self._participant_for(ev)
        self.participants[p.device_id] = transition(p, ev, self.config)

    def _on_study_ended(self, ev: StudyEvent) -> None:
        p = self._participant_for(ev)
        self.participants[p.device_id] = transition(p, ev, self.config)

    def _on_measurement_submitted(self, ev: StudyEvent) -> None:
        p = self._participant_for(ev)
        pl = ev.payload
        new_p = transition(p, ev, self.config)
        record = MeasurementRecord(
            worker_id=ev.worker_id,
            study_day=int(pl["study_day"]),
            submitted_at=datetime.fromisoformat(pl["submitted_at"]),
            local_time=pl["local_time"],
            scroll_rounds=_rounds(pl["scroll_rounds"]),
            swipe_rounds=_rounds(pl["swipe_rounds"]),
            bonus_index=int(pl["bonus_index"]),
            bonus_paid=int(pl["amount"]),
            duration=float(pl.get("duration", 0.0)),
        )
        self.participants[p.device_id] = new_p
        self.measurements.setdefault(ev.worker_id, []).append(record)

    def _on_duplicate_submission(self, ev: StudyEvent) -> None:
        self._participant_for(ev)

    def _on_bonus_paid(self, ev: StudyEvent) -> None:
        p = self._participant_for(ev)
        transition(p, ev, self.config)
        key = ev.payload["idempotency_key"]
        day = int(ev.payload["study_day"])
        if key != bonus_key(ev.worker_id, day) or key in self.bonus_receipts:
            raise ValidationError(f"bonus {key} already paid or malformed")
        rec = next((m for m in self.measurements[ev.worker_id] if m.study_day == day), None)
        if rec is None or rec.bonus_paid != int(ev.payload["amount"]) or rec.bonus_paid <= 0:
            raise ValidationError(f"bonus {key} has no matching measurement")
        self.bonus_receipts[key] = ev.payload["receipt"]
        self.ledger.append(LedgerMirrorEntry(ev.worker_id, BONUS, rec.bonus_paid, key, ev.at))

    def _on_survey_paid(self, ev: StudyEvent) -> None:
        self.ledger.append(LedgerMirrorEntry(ev.worker_id, SURVEY_PAYMENT, int(ev.payload["amount"]),
                                             ev.payload["assignment_id"], ev.at))

    def _on_notification_scheduled(self, ev: StudyEvent) -> None:
        p = self._participant_for(ev)
        transition(p, ev, self.config)
        pl = ev.payload
        if pl["id"] in self.notifications:
            raise ValidationError(f"notification {pl['id']} already scheduled")
        self.notifications[pl["id"]] = ScheduledNotification(
            id=pl["id"], worker_id=ev.worker_id, device_id=p.device_id,
            study_day=int(pl["study_day"]), kind=NotificationKind(pl["kind"]),
            fire_at=datetime.fromisoformat(pl["fire_at"]))

    def _resolve(self, ev: StudyEvent, new_state: NotificationState, attempt: bool = False) -> None:
        p = self._participant_for(ev)
        transition(p, ev, self.config)
        n = self.notifications.get(ev.payload["id"])
        if n is None or n.state is not NotificationState.PENDING or n.worker_id != ev.worker_id:
            raise ValidationError(f"{ev.kind.value}: notification is not pending")
        self.notifications[n.id] = replace(n, state=new_state, attempts=n.attempts + int(attempt))

    def _on_notification_sent(self, ev: StudyEvent) -> None:
        self._resolve(ev, NotificationState.SENT, attempt=True)

    def _on_notification_suppressed(self, ev: StudyEvent) -> None:
        self._resolve(ev, NotificationState.SUPPRESSED)

    def _on_notification_cancelled(self, ev: StudyEvent) -> None:
        self._resolve(ev, NotificationState.CANCELLED)

    def _on_notification_failed(self, ev: StudyEvent) -> None:
        final = bool(ev.payload.get("final"))
        self._resolve(ev, NotificationState.FAILED if final else NotificationState.PENDING,
                      attempt=True)

    # ---------------------------------------------------------- snapshots

    def to_snapshot(self) -> dict:
        data = _codec.to_jsonable(self)
        data.pop("config")
        return data

    @classmethod
    def from_snapshot(cls, data: dict, config: StudyConfig) -> "StudyState":
        state = _codec.from_jsonable(cls, {k: v for k, v in data.items() if k != "config"})
        state.config = config
        return state


def replay(events: Iterable[StudyEvent], config: StudyConfig,
           snapshot: Optional[StudyState] = None) -> StudyState:
    """Fold ``events`` (skipping those already covered by ``snapshot``)."""
    state = StudyState(config=config) if snapshot is None else snapshot
    for ev in events:
        if ev.seq <= state.seq:
            continue
        state.apply(ev)
    return state


def write_snapshot(path: str | Path, state: StudyState) -> None:
    body = {"seq": state.seq, "state": state.to_snapshot()}
    Path(path).write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")


def read_snapshot(path: str | Path, config: StudyConfig) -> StudyState:
    try:
        body = json.loads(Path(path).read_text())
        return StudyState.from_snapshot(body["state"], config)
    except (OSError, ValueError, KeyError) as exc:
        raise StorageError(f"cannot read snapshot {path}: {exc}") from exc

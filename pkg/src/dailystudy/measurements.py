"""Daily measurement intake: round validation, instant bonus, earnings quote."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Sequence

from .domain import (
    EventKind,
    LifecycleState,
    RoundResult,
    local_time_of,
    raw_study_day,
)
from .errors import (
    DuplicateDay,
    GatewayError,
    InvalidMeasurement,
    NotActive,
    UnknownParticipant,
    WindowExpired,
)
from .payments import PayQuote, bonus_amount, quote
from .state import bonus_key

if TYPE_CHECKING:
    from .service import StudyService

log = logging.getLogger(__name__)

SUBTASKS = ("scroll_rounds", "swipe_rounds")


def validate_rounds(rounds: Sequence[RoundResult], required: int) -> bool:
    """True when at least ``required`` rounds were correct and the session ended on one."""
    if not rounds:
        return False
    correct = sum(1 for r in rounds if r.answer_correct)
    return correct >= required and rounds[-1].answer_correct


def _round(raw) -> RoundResult:
    try:
        return RoundResult(int(raw["round_index"]), dict(raw.get("parameters") or {}),
                           bool(raw["answer_correct"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidMeasurement(f"malformed round: {raw!r}") from exc


def parse_measurement(payload: dict, required: int) -> tuple[list[dict], list[dict], float]:
    """Check a client measurement payload; returns JSON-ready rounds and duration."""
    out = []
    for name in SUBTASKS:
        raw = payload.get(name)
        if not isinstance(raw, list) or not raw:
            raise InvalidMeasurement(f"{name} must be a non-empty list")
        rounds = [_round(r) for r in raw]
        for prev, cur in zip(rounds, rounds[1:]):
            if prev.parameters and prev.parameters == cur.parameters:
                raise InvalidMeasurement(f"{name}: consecutive rounds reuse the same parameters")
        if not validate_rounds(rounds, required):
            correct = sum(r.answer_correct for r in rounds)
            raise InvalidMeasurement(f"{name}: {correct} correct rounds, {required} required")
        out.append([{"round_index": r.round_index, "parameters": r.parameters,
                     "answer_correct": r.answer_correct} for r in rounds])
    try:
        duration = float(payload.get("duration", 0.0))
    except (TypeError, ValueError) as exc:
        raise InvalidMeasurement("duration must be a number of seconds") from exc
    return out[0], out[1], duration


class MeasurementPipeline:
    def __init__(self, service: "StudyService"):
        self.svc = service

    def _participant(self, worker_id: str):
        p = self.svc.state.participant_by_worker(worker_id)
        if p is None:
            raise UnknownParticipant(f"no enrolled participant for worker {worker_id!r}")
        return p

    def earnings(self, worker_id: str) -> PayQuote:
        with self.svc.lock:
            p = self._participant(worker_id)
            return quote(self.svc.config.scheme(p.scheme_id), p.bonus_count, self.svc.config)

    def submit_measurement(self, worker_id: str, payload: dict) -> PayQuote:
        svc = self.svc
        config = svc.config
        with svc.lock:
            now = svc.clock.now()
            p = self._participant(worker_id)
            day = raw_study_day(p, now)
            if p.state is LifecycleState.EXPIRED or (p.state.participating and day > config.duration_days):
                svc.sweep_participant(p.device_id, now)
                raise WindowExpired(f"the {config.duration_days}-day window has ended")
            if p.state is LifecycleState.COMPLETED:
                raise NotActive("study already completed")
            if not p.state.participating:
                raise NotActive(f"participant is {p.state.value}")
            if svc.state.has_measurement(worker_id, day):
                svc.emit(EventKind.DUPLICATE_SUBMISSION, worker_id,
                         {"study_day": day, "submitted_at": now.isoformat()})
                raise DuplicateDay(f"day {day} already recorded")
            scroll, swipe, duration = parse_measurement(payload, config.required_correct_rounds)
            if p.state is LifecycleState.ENROLLED:
                svc.emit(EventKind.PARTICIPANT_ACTIVATED, worker_id, {"study_day": day})
                p = svc.state.participant_by_worker(worker_id)
            scheme = config.scheme(p.scheme_id)
            bonus_index = p.bonus_count + 1
            amount = bonus_amount(scheme, bonus_index, config)
            svc.emit(EventKind.MEASUREMENT_SUBMITTED, worker_id, {
                "study_day": day,
                "bonus_index": bonus_index,
                "amount": amount,
                "submitted_at": now.isoformat(),
                "local_time": local_time_of(now, p.timezone),
                "scroll_rounds": scroll,
                "swipe_rounds": swipe,
                "duration": duration,
            })
            p = svc.state.participant_by_worker(worker_id)
            sched = svc.scheduler
            if p.state is LifecycleState.COMPLETED:
                sched.cancel_all(worker_id)
            else:
                sched.cancel_for_day(worker_id, day, kinds=sched.PRE_SUBMISSION_KINDS)
            paid = self.pay_bonus(worker_id, day, amount)
            if p.state is not LifecycleState.COMPLETED:
                sched.schedule_after_submission(worker_id, now)
            return quote(scheme, p.bonus_count, config, bonus_pending=not paid)

    def pay_bonus(self, worker_id: str, day: int, amount: int) -> bool:
        """Send one logged bonus to the platform; True once it is on the ledger."""
        key = bonus_key(worker_id, day)
        if key in self.svc.state.bonus_receipts:
            return True
        try:
            entry = self.svc.crowd.send_bonus(worker_id, amount, f"daily measurement, study day {day}", key)
        except GatewayError as exc:
            log.warning("bonus %s not sent yet: %s", key, exc)
            return False
        self.svc.emit(EventKind.BONUS_PAID, worker_id, {
            "study_day": day, "amount": amount, "idempotency_key": key, "receipt": entry.entry_id,
        })
        return True

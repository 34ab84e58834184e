"""Reminder scheduling in each worker's local time, dispatched by ``tick``.

After a successful measurement on local day *k* two reminders are queued for
day *k+1*: one at the morning time and a conditional one in the evening that
is suppressed if the worker has already submitted by then. A submission
before the morning reminder fires cancels it. A reminder still pending once
its local day is over is cancelled as stale rather than sent late.
"""

from __future__ import annotations

import heapq
import logging
from datetime import datetime
from typing import TYPE_CHECKING, Iterable, Optional

from .domain import (
    EventKind,
    LifecycleState,
    NotificationKind,
    NotificationState,
    ScheduledNotification,
    at_local,
    day_date,
    raw_study_day,
)
from .errors import PushGatewayError
from .payments import format_cents, quote

if TYPE_CHECKING:
    from .service import StudyService

log = logging.getLogger(__name__)

_MORNING = NotificationKind.MORNING
_EVENING = NotificationKind.EVENING_CONDITIONAL
_REENGAGE = NotificationKind.REENGAGEMENT


def notification_id(worker_id: str, study_day: int, kind: NotificationKind) -> str:
    return f"{worker_id}:{study_day}:{kind.value}"


class NotificationScheduler:
    PRE_SUBMISSION_KINDS = (_MORNING, _REENGAGE)

    def __init__(self, service: "StudyService"):
        self.svc = service
        self._heap: list[tuple[datetime, str]] = []
        self._retry: list[str] = []
        for n in service.state.pending_notifications():
            heapq.heappush(self._heap, (n.fire_at, n.id))

    def on_scheduled(self, n: ScheduledNotification) -> None:
        heapq.heappush(self._heap, (n.fire_at, n.id))

    def next_due(self) -> Optional[datetime]:
        pending = self.svc.state.notifications
        while self._heap and pending[self._heap[0][1]].state is not NotificationState.PENDING:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    @property
    def has_retries(self) -> bool:
        return bool(self._retry)

    # ---------------------------------------------------------- scheduling

    def _worker_pending(self, worker_id: str, days: Iterable[int]) -> list[ScheduledNotification]:
        # ids are derived from (worker, day, kind), so look them up directly
        notes = self.svc.state.notifications
        out = []
        for day in days:
            for kind in NotificationKind:
                n = notes.get(notification_id(worker_id, day, kind))
                if n is not None and n.state is NotificationState.PENDING:
                    out.append(n)
        return out

    def _schedule(self, worker_id: str, day: int, kind: NotificationKind) -> Optional[ScheduledNotification]:
        state = self.svc.state
        nid = notification_id(worker_id, day, kind)
        if nid in state.notifications:
            return None
        p = state.participant_by_worker(worker_id)
        tod = self.svc.config.evening_reminder if kind is _EVENING else self.svc.config.morning_reminder
        fire_at = at_local(day_date(p, day), tod, p.timezone)
        if fire_at <= self.svc.clock.now():
            return None  # e.g. an enrollment reviewed after the reminder time
        self.svc.emit(EventKind.NOTIFICATION_SCHEDULED, worker_id, {
            "id": nid, "kind": kind.value, "study_day": day, "fire_at": fire_at.isoformat(),
        })
        return state.notifications[nid]

    def schedule_after_submission(self, worker_id: str, submission_time: datetime) -> list[ScheduledNotification]:
        with self.svc.lock:
            p = self.svc.state.participant_by_worker(worker_id)
            if p is None or not p.state.participating:
                return []
            next_day = raw_study_day(p, submission_time) + 1
            if next_day > self.svc.config.duration_days:
                return []
            out = [self._schedule(worker_id, next_day, kind) for kind in (_MORNING, _EVENING)]
            return [n for n in out if n is not None]

    def schedule_reengagement(self, worker_id: str, missed_day: int) -> Optional[ScheduledNotification]:
        svc = self.svc
        with svc.lock:
            if not svc.config.reengagement_enabled:
                return None
            p = svc.state.participant_by_worker(worker_id)
            if p is None or p.state is not LifecycleState.ACTIVE:
                return None
            day = missed_day + 1
            if missed_day < 2 or day > svc.config.duration_days:
                return None
            if svc.state.has_measurement(worker_id, missed_day):
                return None
            if not svc.state.has_measurement(worker_id, missed_day - 1):
                return None  # only the first day of a lapse
            if notification_id(worker_id, day, _MORNING) in svc.state.notifications:
                return None
            return self._schedule(worker_id, day, _REENGAGE)

    def cancel_for_day(self, worker_id: str, study_day: int,
                       kinds: Iterable[NotificationKind] = tuple(NotificationKind)) -> list[str]:
        kinds = tuple(kinds)
        with self.svc.lock:
            victims = [n for n in self._worker_pending(worker_id, (study_day,)) if n.kind in kinds]
            return self._cancel(victims, "submitted")

    def cancel_all(self, worker_id: str, reason: str = "participation ended") -> list[str]:
        with self.svc.lock:
            horizon = range(1, self.svc.config.duration_days + 2)
            return self._cancel(self._worker_pending(worker_id, horizon), reason)

    def _cancel(self, victims: list[ScheduledNotification], reason: str) -> list[str]:
        for n in sorted(victims, key=lambda n: (n.fire_at, n.id)):
            self.svc.emit(EventKind.NOTIFICATION_CANCELLED, n.worker_id, {"id": n.id, "reason": reason})
        return [n.id for n in victims]

    # ------------------------------------------------------------ dispatch

    def _message(self, n: ScheduledNotification) -> str:
        p = self.svc.state.participant_by_worker(n.worker_id)
        q = quote(self.svc.config.scheme(p.scheme_id), p.bonus_count, self.svc.config)
        reward = format_cents(q.next_bonus)
        if n.kind is _EVENING:
            return f"You haven't done today's task yet: ${reward} is waiting for you."
        if n.kind is _REENGAGE:
            return f"We missed you yesterday! Today's task still pays ${reward}."
        return f"Today's task is ready: complete it to earn ${reward}."

    def dispatch_due(self, now: datetime) -> list[ScheduledNotification]:
        """Resolve every pending notification with ``fire_at <= now``."""
        svc = self.svc
        state = svc.state
        due: list[str] = self._retry
        self._retry = []
        while self._heap and self._heap[0][0] <= now:
            due.append(heapq.heappop(self._heap)[1])
        sent = []
        for nid in sorted(set(due), key=lambda i: (state.notifications[i].fire_at, i)):
            n = state.notifications[nid]
            if n.state is not NotificationState.PENDING:
                continue
            p = state.participant_by_worker(n.worker_id)
            if not p.state.participating:
                svc.emit(EventKind.NOTIFICATION_CANCELLED, n.worker_id, {"id": nid, "reason": "not participating"})
                continue
            if state.has_measurement(n.worker_id, n.study_day):
                svc.emit(EventKind.NOTIFICATION_SUPPRESSED, n.worker_id, {"id": nid})
                continue
            if raw_study_day(p, now) > n.study_day:
                # the day it was meant for is over (missed ticks or retries ran past midnight)
                svc.emit(EventKind.NOTIFICATION_CANCELLED, n.worker_id, {"id": nid, "reason": "stale"})
                continue
            try:
                svc.push.send(n.device_id, self._message(n))
            except PushGatewayError as exc:
                final = n.attempts + 1 >= svc.config.push_max_attempts
                svc.emit(EventKind.NOTIFICATION_FAILED, n.worker_id,
                         {"id": nid, "attempt": n.attempts + 1, "final": final, "error": str(exc)})
                if not final:
                    self._retry.append(nid)
                continue
            svc.emit(EventKind.NOTIFICATION_SENT, n.worker_id, {"id": nid})
            sent.append(state.notifications[nid])
        return sent

"""The study backend: one event log, its materialized state and the
components that act on it.

Every state change goes through :meth:`StudyService.emit`, which folds the
event into the state and then appends it to the log. All public operations
hold one re-entrant lock, which serializes each worker's events (and, more
coarsely, everyone else's).
"""

from __future__ import annotations

import heapq
import logging
import threading
from datetime import datetime, timedelta
from typing import Callable, Optional

from .config import StudyConfig
from .domain import (
    CodeState,
    EventKind,
    LifecycleState,
    Participant,
    StudyEvent,
    day_date,
    local_midnight,
    raw_study_day,
)
from .enrollment import Enrollment
from .errors import GatewayError, StorageError
from .eventlog import EventLog
from .measurements import MeasurementPipeline
from .notifications import NotificationScheduler
from .state import APPROVED, StudyState, bonus_key, replay

log = logging.getLogger(__name__)

Allocator = Callable[[str, StudyState], str]

RETRY_INTERVAL = timedelta(minutes=1)
POLL_INTERVAL = timedelta(minutes=5)


def balanced_allocator(device_id: str, state: StudyState) -> str:
    """Assign the scheme with the fewest non-rejected participants so far."""
    counts = {s.id: 0 for s in state.config.schemes}
    for p in state.participants.values():
        if p.state is not LifecycleState.REJECTED and p.scheme_id in counts:
            counts[p.scheme_id] += 1
    return min(counts, key=lambda sid: counts[sid])


class StudyService:
    def __init__(self, config: StudyConfig, clock, crowd, push,
                 log_store: Optional[EventLog] = None, code_rng=None,
                 allocator: Allocator = balanced_allocator, snapshot: Optional[StudyState] = None):
        self.config = config
        self.clock = clock
        self.crowd = crowd
        self.push = push
        self.log = log_store if log_store is not None else EventLog()
        self.allocator = allocator
        self.lock = threading.RLock()
        # kept in serialized form so a failed append can rebuild from it
        self._snapshot = snapshot.to_snapshot() if snapshot is not None else None
        self.state = self._restore()
        self._last_poll: Optional[datetime] = None
        self._outbox: set[tuple[str, str]] = set()
        self._boundaries: list[tuple[datetime, str]] = []
        self.enrollment = Enrollment(self, code_rng=code_rng)
        self.pipeline = MeasurementPipeline(self)
        self.scheduler = NotificationScheduler(self)
        self._rebuild_indexes()

    # ------------------------------------------------------------ events

    def emit(self, kind: EventKind, worker_id: Optional[str], payload: dict) -> StudyEvent:
        with self.lock:
            event = StudyEvent(self.log.next_seq, self.clock.now(), kind, worker_id, payload)
            self.state.apply(event)
            try:
                self.log.append(event)
            except StorageError:
                self.state = self._restore()
                self._rebuild_indexes()
                raise
            self._index(event)
            return event

    def _restore(self) -> StudyState:
        base = None
        if self._snapshot is not None:
            base = StudyState.from_snapshot(self._snapshot, self.config)
        return replay(self.log, self.config, base)

    def _index(self, ev: StudyEvent) -> None:
        k = ev.kind
        if k is EventKind.NOTIFICATION_SCHEDULED:
            self.scheduler.on_scheduled(self.state.notifications[ev.payload["id"]])
        elif k in (EventKind.ENROLLMENT_APPROVED, EventKind.ENROLLMENT_REJECTED):
            self._outbox.add(("assignment", ev.payload["assignment_id"]))
        elif k in (EventKind.ASSIGNMENT_APPROVED, EventKind.ASSIGNMENT_REJECTED):
            self._outbox.discard(("assignment", ev.payload["assignment_id"]))
        elif k is EventKind.MEASUREMENT_SUBMITTED and ev.payload["amount"]:
            self._outbox.add(("bonus", bonus_key(ev.worker_id, ev.payload["study_day"])))
        elif k is EventKind.BONUS_PAID:
            self._outbox.discard(("bonus", ev.payload["idempotency_key"]))
        if k is EventKind.CODE_ISSUED:
            self._push_boundary(ev.payload["device_id"], ev.at)
        elif ev.worker_id and k in (EventKind.ENROLLMENT_APPROVED, EventKind.PARTICIPANT_ACTIVATED):
            self._push_boundary(self.state.worker_devices[ev.worker_id], ev.at)

    def _rebuild_indexes(self) -> None:
        self._outbox = {("assignment", d.assignment_id) for d in self.state.unacked_decisions()}
        self._outbox |= {("bonus", bonus_key(m.worker_id, m.study_day)) for m in self.state.pending_bonuses()}
        self._boundaries = []
        now = self.clock.now()
        for device in sorted(self.state.participants):
            self._push_boundary(device, now)
        self.scheduler = NotificationScheduler(self)

    def allocate_scheme(self, device_id: str) -> str:
        return self.allocator(device_id, self.state)

    # ---------------------------------------------------- lifecycle sweep

    def _next_boundary(self, p: Participant, after: datetime) -> Optional[datetime]:
        if p.state is LifecycleState.CODE_ISSUED:
            codes = [vc.expires_at for vc in self.state.codes.values()
                     if vc.device_id == p.device_id and vc.state is CodeState.UNUSED]
            return min(codes) if codes else None
        if p.state is LifecycleState.ENROLLED:
            return local_midnight(day_date(p, 2), p.timezone)
        if p.state is LifecycleState.ACTIVE:
            end = local_midnight(day_date(p, self.config.duration_days + 1), p.timezone)
            if not self.config.reengagement_enabled:
                return end
            nxt = local_midnight(day_date(p, raw_study_day(p, after) + 1), p.timezone)
            return min(nxt, end)
        return None

    def _push_boundary(self, device_id: str, after: datetime) -> None:
        when = self._next_boundary(self.state.participants[device_id], after)
        if when is not None:
            heapq.heappush(self._boundaries, (when, device_id))

    def sweep_participant(self, device_id: str, now: datetime) -> None:
        """Apply every time-driven transition that is due for one participant."""
        with self.lock:
            state = self.state
            p = state.participants[device_id]
            if p.state is LifecycleState.CODE_ISSUED:
                for vc in sorted(state.codes.values(), key=lambda v: v.code):
                    if vc.device_id == device_id and vc.state is CodeState.UNUSED and now >= vc.expires_at:
                        self.enrollment.expire_code(vc)
                p = state.participants[device_id]
            day = raw_study_day(p, now)
            if p.state is LifecycleState.ENROLLED and day >= 2:
                self.emit(EventKind.PARTICIPANT_ACTIVATED, p.worker_id, {"study_day": min(day, self.config.duration_days)})
                p = state.participants[device_id]
            if p.state is LifecycleState.ACTIVE and day > self.config.duration_days:
                self.scheduler.cancel_all(p.worker_id, "window ended")
                self.emit(EventKind.STUDY_ENDED, p.worker_id,
                          {"reason": "window elapsed", "measurements": p.measurement_count})
                p = state.participants[device_id]
            if p.state is LifecycleState.ACTIVE and self.config.reengagement_enabled and day >= 3:
                self.scheduler.schedule_reengagement(p.worker_id, day - 1)
            self._push_boundary(device_id, now)

    def _sweep(self, now: datetime) -> None:
        due = []
        while self._boundaries and self._boundaries[0][0] <= now:
            due.append(heapq.heappop(self._boundaries)[1])
        for device_id in sorted(set(due)):
            self.sweep_participant(device_id, now)

    # ------------------------------------------------------------- outbox

    def drain_outbox(self) -> int:
        """Retry platform calls whose decision is logged but unacknowledged."""
        done = 0
        for kind, key in sorted(self._outbox):
            if kind == "assignment":
                ok = self.enrollment.push_decision(self.state.assignments[key])
            else:
                _, worker_id, day = key.split(":")
                m = next(m for m in self.state.measurements[worker_id] if m.study_day == int(day))
                ok = self.pipeline.pay_bonus(worker_id, m.study_day, m.bonus_paid)
            done += ok
        return done

    @property
    def outbox_size(self) -> int:
        return len(self._outbox)

    # --------------------------------------------------------------- tick

    def tick(self, now: Optional[datetime] = None):
        """Run all time-driven work that is due; returns notifications sent."""
        with self.lock:
            if now is not None and hasattr(self.clock, "set") and now > self.clock.now():
                self.clock.set(now)
            now = self.clock.now()
            self._sweep(now)
            if self._last_poll is None or now - self._last_poll >= POLL_INTERVAL:
                self._last_poll = now
                self.enrollment.process_submitted_assignments()
            if self._outbox:
                self.drain_outbox()
            return self.scheduler.dispatch_due(now)

    def next_due(self) -> Optional[datetime]:
        """Earliest instant at which :meth:`tick` has work to do."""
        with self.lock:
            candidates = []
            while self._boundaries and self._stale_boundary(self._boundaries[0][1]):
                heapq.heappop(self._boundaries)
            if self._boundaries:
                candidates.append(self._boundaries[0][0])
            nd = self.scheduler.next_due()
            if nd is not None:
                candidates.append(nd)
            if self._outbox or self.scheduler.has_retries:
                candidates.append(self.clock.now() + RETRY_INTERVAL)
            return min(candidates) if candidates else None

    def _stale_boundary(self, device_id: str) -> bool:
        return self.state.participants[device_id].state.terminal

    # ------------------------------------------------------------- survey

    def publish_exit_survey(self, reward: int = 100) -> str:
        """Qualify every enrolled worker and post the survey HIT to them only."""
        with self.lock:
            qual = self.crowd.create_qualification("daily-study-participant")
            workers = sorted(self.state.worker_devices)
            for w in workers:
                self.crowd.grant_qualification(qual, w)
            hit_id = self.crowd.publish_survey_hit(qual, reward)
            self.emit(EventKind.SURVEY_PUBLISHED, None,
                      {"hit_id": hit_id, "qualification": qual, "workers": workers, "reward": reward})
            return hit_id

    def pay_survey_responses(self) -> int:
        with self.lock:
            hit_id = self.state.survey_hit_id
            if hit_id is None:
                return 0
            paid = 0
            for a in sorted(self.crowd.list_submitted(hit_id), key=lambda a: a.assignment_id):
                try:
                    entry = self.crowd.approve_assignment(a.assignment_id)
                except GatewayError as exc:
                    log.warning("survey approval %s failed: %s", a.assignment_id, exc)
                    continue
                self.emit(EventKind.SURVEY_PAID, a.worker_id,
                          {"assignment_id": a.assignment_id, "amount": entry.amount})
                paid += 1
            return paid

    # ------------------------------------------------------- conveniences

    def device_worker(self, device_id: str) -> Optional[str]:
        p = self.state.participants.get(device_id)
        return p.worker_id if p else None

    def decisions_approved(self) -> int:
        return sum(1 for d in self.state.assignments.values() if d.decision == APPROVED)

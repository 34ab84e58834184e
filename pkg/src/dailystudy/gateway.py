"""Crowd-work platform and push-notification gateways.

:class:`CrowdGateway` / :class:`PushGateway` are the contracts the service
talks to. The in-process mocks keep a money ledger and a send log and can
inject transient failures, either before the call takes effect or after it
(the response is lost but the side effect happened), so callers' retry and
idempotency paths get exercised.
"""

from __future__ import annotations

import csv
import io
import itertools
import random
import threading
import time
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Optional, Protocol

from .errors import (
    AlreadyResolved,
    GatewayError,
    NotQualified,
    PushGatewayError,
    UnknownAssignment,
    UnknownQualification,
    UnknownWorker,
)
from .state import BONUS, HIT_PAYMENT, SURVEY_PAYMENT

SUBMITTED = "Submitted"
APPROVED = "Approved"
REJECTED = "Rejected"


@dataclass(frozen=True)
class LedgerEntry:
    entry_id: str
    worker_id: str
    kind: str
    amount: int
    reason: str
    at: datetime
    idempotency_key: str


@dataclass
class Hit:
    hit_id: str
    title: str
    description: str
    reward: int
    kind: str  # "enrollment" | "survey"
    qualification: Optional[str] = None


@dataclass
class Assignment:
    assignment_id: str
    hit_id: str
    worker_id: str
    answer: str
    status: str = SUBMITTED
    feedback: str = ""


class CrowdGateway(Protocol):
    def create_hit(self, title: str, description: str, reward: int) -> str: ...
    def list_submitted(self, hit_id: str) -> list[Assignment]: ...
    def get_assignment(self, assignment_id: str) -> Assignment: ...
    def approve_assignment(self, assignment_id: str) -> LedgerEntry: ...
    def reject_assignment(self, assignment_id: str, feedback: str) -> None: ...
    def send_bonus(self, worker_id: str, amount: int, reason: str, idempotency_key: str) -> LedgerEntry: ...
    def create_qualification(self, name: str) -> str: ...
    def grant_qualification(self, qualification: str, worker_id: str) -> None: ...
    def publish_survey_hit(self, qualification: str, reward: int = 100) -> str: ...


class PushGateway(Protocol):
    def send(self, device_id: str, message: str) -> None: ...


class FaultInjector:
    """Seeded coin flips deciding whether a gateway call fails.

    ``mode`` is ``"before"`` (nothing happens), ``"after"`` (the effect is
    applied, then the caller sees an error) or ``"mixed"``.
    """

    def __init__(self, rate: float = 0.0, seed: int = 0, mode: str = "mixed"):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("failure rate must be in [0, 1]")
        if mode not in ("before", "after", "mixed"):
            raise ValueError(f"unknown failure mode {mode!r}")
        self.rate = rate
        self.mode = mode
        self._rng = random.Random(seed)

    def roll(self) -> Optional[str]:
        if self.rate <= 0 or self._rng.random() >= self.rate:
            return None
        if self.mode == "mixed":
            return "before" if self._rng.random() < 0.5 else "after"
        return self.mode


class MockCrowdGateway:
    def __init__(self, clock, faults: Optional[FaultInjector] = None,
                 latency: float = 0.0, sleep: Callable[[float], None] = time.sleep):
        self.clock = clock
        self.faults = faults or FaultInjector()
        self.latency = latency
        self._sleep = sleep
        self.down = False
        self.hits: dict[str, Hit] = {}
        self.assignments: dict[str, Assignment] = {}
        self.qualifications: dict[str, set[str]] = {}
        self.ledger: list[LedgerEntry] = []
        self._by_key: dict[str, LedgerEntry] = {}
        self._ids = itertools.count(1)
        self._lock = threading.RLock()
        self.calls: list[tuple[str, str]] = []

    # ----------------------------------------------------------- plumbing

    def _next_id(self, prefix: str) -> str:
        return f"{prefix}{next(self._ids):06d}"

    def _call(self, op: str, target: str, effect: Callable):
        if self.latency:
            self._sleep(self.latency)
        with self._lock:
            self.calls.append((op, target))
            if self.down:
                raise GatewayError(f"{op}: gateway unreachable")
            fault = self.faults.roll()
            if fault == "before":
                raise GatewayError(f"{op}: injected transient failure")
            result = effect()
            if fault == "after":
                raise GatewayError(f"{op}: injected failure after commit")
            return result

    def _record(self, worker_id: str, kind: str, amount: int, reason: str, key: str) -> LedgerEntry:
        if amount <= 0:
            raise GatewayError("ledger amounts must be positive")
        entry = LedgerEntry(self._next_id("L"), worker_id, kind, amount, reason,
                            self.clock.now(), key)
        self.ledger.append(entry)
        self._by_key[key] = entry
        return entry

    # --------------------------------------------------------- worker side

    def submit_assignment(self, hit_id: str, worker_id: str, answer: str) -> str:
        """What a worker does on the platform: accept the HIT and submit a code."""
        with self._lock:
            hit = self.hits.get(hit_id)
            if hit is None:
                raise GatewayError(f"unknown HIT {hit_id}")
            if hit.qualification and worker_id not in self.qualifications.get(hit.qualification, set()):
                raise NotQualified(f"{worker_id} lacks qualification {hit.qualification}")
            aid = self._next_id("A")
            self.assignments[aid] = Assignment(aid, hit_id, worker_id, answer)
            return aid

    # ------------------------------------------------------ requester side

    def create_hit(self, title: str, description: str, reward: int) -> str:
        def effect():
            hid = self._next_id("H")
            self.hits[hid] = Hit(hid, title, description, reward, "enrollment")
            return hid
        return self._call("create_hit", title, effect)

    def list_submitted(self, hit_id: str) -> list[Assignment]:
        with self._lock:
            if self.down:
                raise GatewayError("list_submitted: gateway unreachable")
            return [a for a in self.assignments.values()
                    if a.hit_id == hit_id and a.status == SUBMITTED]

    def get_assignment(self, assignment_id: str) -> Assignment:
        with self._lock:
            try:
                return self.assignments[assignment_id]
            except KeyError:
                raise UnknownAssignment(assignment_id) from None

    def approve_assignment(self, assignment_id: str) -> LedgerEntry:
        def effect():
            a = self.get_assignment(assignment_id)
            if a.status != SUBMITTED:
                raise AlreadyResolved(f"assignment {assignment_id} is {a.status}")
            hit = self.hits[a.hit_id]
            a.status = APPROVED
            kind = SURVEY_PAYMENT if hit.kind == "survey" else HIT_PAYMENT
            return self._record(a.worker_id, kind, hit.reward, f"HIT {hit.hit_id}", assignment_id)
        return self._call("approve_assignment", assignment_id, effect)

    def reject_assignment(self, assignment_id: str, feedback: str) -> None:
        def effect():
            a = self.get_assignment(assignment_id)
            if a.status != SUBMITTED:
                raise AlreadyResolved(f"assignment {assignment_id} is {a.status}")
            a.status = REJECTED
            a.feedback = feedback
        return self._call("reject_assignment", assignment_id, effect)

    def send_bonus(self, worker_id: str, amount: int, reason: str, idempotency_key: str) -> LedgerEntry:
        def effect():
            existing = self._by_key.get(idempotency_key)
            if existing is not None:
                return existing
            if not any(a.worker_id == worker_id and a.status == APPROVED
                       for a in self.assignments.values()):
                raise UnknownWorker(f"{worker_id} has no approved assignment to attach a bonus to")
            return self._record(worker_id, BONUS, amount, reason, idempotency_key)
        return self._call("send_bonus", idempotency_key, effect)

    def create_qualification(self, name: str) -> str:
        with self._lock:
            qid = self._next_id("Q")
            self.qualifications[qid] = set()
            return qid

    def grant_qualification(self, qualification: str, worker_id: str) -> None:
        def effect():
            if qualification not in self.qualifications:
                raise UnknownQualification(qualification)
            self.qualifications[qualification].add(worker_id)
        return self._call("grant_qualification", worker_id, effect)

    def publish_survey_hit(self, qualification: str, reward: int = 100) -> str:
        def effect():
            if qualification not in self.qualifications:
                raise UnknownQualification(qualification)
            hid = self._next_id("H")
            self.hits[hid] = Hit(hid, "Exit survey for daily study participants",
                                 "Short questionnaire about the study you took part in.",
                                 reward, "survey", qualification)
            return hid
        return self._call("publish_survey_hit", qualification, effect)

    # ------------------------------------------------------------- reports

    def totals(self, kinds=(HIT_PAYMENT, BONUS)) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.ledger:
            if e.kind in kinds:
                out[e.worker_id] = out.get(e.worker_id, 0) + e.amount
        return out

    def export_csv(self) -> str:
        return ledger_csv(self.ledger)


def ledger_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["worker_id", "kind", "amount_cents", "at", "reason"])
    for e in entries:
        w.writerow([e.worker_id, e.kind, e.amount, e.at.isoformat(), getattr(e, "reason", e.idempotency_key)])
    return buf.getvalue()


@dataclass(frozen=True)
class PushRecord:
    device_id: str
    message: str
    at: datetime


class MockPushGateway:
    """Records every delivered push with its (virtual) timestamp."""

    def __init__(self, clock, faults: Optional[FaultInjector] = None):
        self.clock = clock
        self.faults = faults or FaultInjector()
        self.sent: list[PushRecord] = []
        self.unreachable: set[str] = set()
        self._lock = threading.Lock()

    def send(self, device_id: str, message: str) -> None:
        with self._lock:
            if device_id in self.unreachable:
                raise PushGatewayError(f"device {device_id} is not registered")
            if self.faults.roll():
                raise PushGatewayError("injected push failure")
            self.sent.append(PushRecord(device_id, message, self.clock.now()))


class UnavailableCrowdGateway:
    """Placeholder for a production platform client; every call fails."""

    def __getattr__(self, name):
        def fail(*args, **kwargs):
            raise GatewayError(f"{name}: no production crowd-platform client is configured")
        return fail

"""Enrollment HIT, verification codes and automatic assignment review.

The decision for an assignment is written to the event log *before* the
platform is told about it. A failed approve/reject call is retried from the
log later, so an assignment is decided exactly once no matter how often the
gateway misbehaves.
"""

from __future__ import annotations

import logging
import secrets
import string
from datetime import datetime, timedelta
from typing import TYPE_CHECKING, Optional

from .domain import (
    CodeState,
    ConsentRecord,
    Demographics,
    EventKind,
    LifecycleState,
    VerificationCode,
    local_time_of,
    zone,
)
from .errors import (
    AlreadyResolved,
    ConsentIncomplete,
    DeviceAlreadyEnrolled,
    DeviceNotSupported,
    DuplicateHit,
    GatewayError,
    InvalidDemographics,
    StudyError,
    UnknownAssignment,
)
from .measurements import parse_measurement
from .state import APPROVED, REJECTED, AssignmentDecision

if TYPE_CHECKING:
    from .service import StudyService

log = logging.getLogger(__name__)

# no I, O, 0 or 1
CODE_ALPHABET = "".join(c for c in string.ascii_uppercase + string.digits if c not in "IO01")
CODE_LENGTH = 8

REJECT_FEEDBACK = ("The verification code did not match an unused code issued by the study app. "
                   "Please complete the in-app task and enter the code it displays.")


def normalize_code(raw: str) -> str:
    return "".join(raw.split()).upper()


def parse_consent(raw: dict, now: datetime) -> ConsentRecord:
    toggles = raw.get("toggles") if isinstance(raw, dict) else None
    if not isinstance(toggles, (list, tuple)) or not all(isinstance(t, bool) for t in toggles):
        raise ConsentIncomplete("consent toggles must be a list of booleans")
    ts = raw.get("timestamp")
    consent = ConsentRecord(tuple(toggles), datetime.fromisoformat(ts) if ts else now)
    consent.require_complete()
    return consent


def parse_demographics(raw: dict) -> Demographics:
    try:
        return Demographics(**raw)
    except TypeError as exc:
        raise InvalidDemographics(str(exc)) from exc


class Enrollment:
    def __init__(self, service: "StudyService", code_rng=None):
        self.svc = service
        self._rng = code_rng or secrets.SystemRandom()
        self._drafts: dict[str, dict] = {}

    @property
    def config(self):
        return self.svc.config

    # ---------------------------------------------------------- HIT

    def publish_enrollment_hit(self) -> str:
        with self.svc.lock:
            if self.svc.state.hit_id is not None:
                raise DuplicateHit(f"enrollment HIT {self.svc.state.hit_id} already published")
            hit_id = self.svc.crowd.create_hit(self.config.hit_title, self.config.hit_description,
                                               self.config.enrollment_pay)
            self.svc.emit(EventKind.HIT_PUBLISHED, None,
                          {"hit_id": hit_id, "title": self.config.hit_title,
                           "reward": self.config.enrollment_pay})
            return hit_id

    # -------------------------------------------------- device side

    def _check_device(self, device_id: str, device_model: str) -> None:
        allowed = self.config.allowed_device_models
        if allowed and device_model not in allowed:
            raise DeviceNotSupported(f"device model {device_model!r} is not supported")
        p = self.svc.state.participants.get(device_id)
        if p is not None and p.state is not LifecycleState.CODE_ISSUED:
            raise DeviceAlreadyEnrolled(f"device {device_id} is already registered ({p.state.value})")

    def start(self, device_id: str, consent: dict, demographics: dict,
              device_model: str, timezone: str) -> None:
        """First half of in-app on-boarding: consent and demographics."""
        with self.svc.lock:
            self._check_device(device_id, device_model)
            zone(timezone)
            parse_consent(consent, self.svc.clock.now())
            parse_demographics(demographics)
            self._drafts[device_id] = {"consent": consent, "demographics": demographics,
                                       "device_model": device_model, "timezone": timezone}

    def finish(self, device_id: str, first_measurement: dict) -> VerificationCode:
        with self.svc.lock:
            draft = self._drafts.get(device_id)
            if draft is None:
                raise StudyError(f"device {device_id} has not started enrollment")
            code = self.issue_code(device_id, dict(draft, first_measurement=first_measurement))
            self._drafts.pop(device_id, None)
            return code

    def _new_code(self) -> str:
        while True:
            code = "".join(self._rng.choice(CODE_ALPHABET) for _ in range(CODE_LENGTH))
            if code not in self.svc.state.codes:
                return code

    def _live_code(self, device_id: str, now: datetime) -> Optional[VerificationCode]:
        for vc in self.svc.state.codes.values():
            if vc.device_id == device_id and vc.state is CodeState.UNUSED and now < vc.expires_at:
                return vc
        return None

    def issue_code(self, device_id: str, enrollment_payload: dict) -> VerificationCode:
        """Validate on-boarding data plus the first measurement and issue a code.

        Re-sending the same device's payload while its code is still live
        returns that code again.
        """
        with self.svc.lock:
            now = self.svc.clock.now()
            pl = enrollment_payload
            device_model = pl.get("device_model", "")
            self._check_device(device_id, device_model)
            consent = parse_consent(pl.get("consent", {}), now)
            demographics = parse_demographics(pl.get("demographics", {}))
            tz = pl.get("timezone", "UTC")
            zone(tz)
            scroll, swipe, duration = parse_measurement(pl.get("first_measurement") or {},
                                                        self.config.required_correct_rounds)
            existing = self._live_code(device_id, now)
            if existing is not None:
                return existing
            if device_id in self.svc.state.participants:
                raise DeviceAlreadyEnrolled(f"device {device_id} already holds an expired code")
            scheme_id = self.svc.allocate_scheme(device_id)
            code = self._new_code()
            expires = now + timedelta(hours=self.config.code_ttl_hours)
            self.svc.emit(EventKind.CODE_ISSUED, None, {
                "code": code,
                "device_id": device_id,
                "device_model": device_model,
                "timezone": tz,
                "scheme_id": scheme_id,
                "expires_at": expires.isoformat(),
                "first_measurement_at": now.isoformat(),
                "first_measurement": {"scroll_rounds": scroll, "swipe_rounds": swipe,
                                      "duration": duration},
                "consent": {"toggles": list(consent.toggles),
                            "timestamp": consent.timestamp.isoformat()},
                "demographics": {"country": demographics.country,
                                 "dominant_hand": demographics.dominant_hand,
                                 "height": demographics.height, "weight": demographics.weight,
                                 "gender": demographics.gender},
            })
            return self.svc.state.codes[code]

    # ------------------------------------------------ requester side

    def validate_submission(self, worker_id: str, assignment_id: str, submitted_code: str) -> str:
        """Approve or reject one enrollment assignment; returns the decision."""
        with self.svc.lock:
            state = self.svc.state
            decided = state.assignments.get(assignment_id)
            if decided is not None:
                self.push_decision(decided)
                return decided.decision
            assignment = self.svc.crowd.get_assignment(assignment_id)
            if assignment.worker_id != worker_id:
                raise UnknownAssignment(f"{assignment_id} belongs to another worker")
            now = self.svc.clock.now()
            code = normalize_code(submitted_code)
            vc = state.codes.get(code)
            reason = ""
            if vc is None:
                reason = "unknown code"
            elif vc.state is not CodeState.UNUSED:
                reason = f"code {vc.state.value.lower()}"
            elif now >= vc.expires_at:
                reason = "code expired"
            elif worker_id in state.worker_devices:
                reason = "worker already enrolled with another device"
            if reason:
                self.svc.emit(EventKind.ENROLLMENT_REJECTED, worker_id,
                              {"assignment_id": assignment_id, "code": code, "reason": reason})
            else:
                self._approve(worker_id, assignment_id, vc, now)
            decision = state.assignments[assignment_id]
            self.push_decision(decision)
            if decision.decision == APPROVED:
                p = state.participant_by_worker(worker_id)
                if p.state.participating:
                    # reminders follow the day of the first measurement, not of the review
                    self.svc.scheduler.schedule_after_submission(worker_id, p.enrolled_at)
            return decision.decision

    def _approve(self, worker_id: str, assignment_id: str, vc: VerificationCode, now: datetime) -> None:
        state = self.svc.state
        first = state.first_measurements[vc.device_id]
        self.svc.emit(EventKind.ENROLLMENT_APPROVED, worker_id,
                      {"assignment_id": assignment_id, "code": vc.code, "device_id": vc.device_id})
        p = state.participant_by_worker(worker_id)
        first_at = datetime.fromisoformat(first["at"])
        self.svc.emit(EventKind.MEASUREMENT_SUBMITTED, worker_id, {
            "study_day": 1,
            "bonus_index": 0,
            "amount": 0,
            "submitted_at": first_at.isoformat(),
            "local_time": local_time_of(first_at, p.timezone),
            "scroll_rounds": first["scroll_rounds"],
            "swipe_rounds": first["swipe_rounds"],
            "duration": first["duration"],
        })

    def push_decision(self, decision: AssignmentDecision) -> bool:
        """Tell the platform about a logged decision; True once acknowledged."""
        if decision.acked:
            return True
        crowd = self.svc.crowd
        aid = decision.assignment_id
        try:
            if decision.decision == APPROVED:
                crowd.approve_assignment(aid)
            else:
                crowd.reject_assignment(aid, REJECT_FEEDBACK)
        except AlreadyResolved:
            # an earlier call took effect but its response was lost
            status = crowd.get_assignment(aid).status
            if status != decision.decision:
                log.error("assignment %s is %s on the platform but we decided %s",
                          aid, status, decision.decision)
                return False
        except GatewayError as exc:
            log.warning("platform call for assignment %s failed, will retry: %s", aid, exc)
            return False
        if decision.decision == APPROVED:
            self.svc.emit(EventKind.ASSIGNMENT_APPROVED, decision.worker_id,
                          {"assignment_id": aid, "amount": self.config.enrollment_pay})
        else:
            self.svc.emit(EventKind.ASSIGNMENT_REJECTED, decision.worker_id,
                          {"assignment_id": aid})
        return True

    def process_submitted_assignments(self) -> dict[str, str]:
        """Review every submitted, undecided assignment on the enrollment HIT."""
        with self.svc.lock:
            hit_id = self.svc.state.hit_id
            if hit_id is None:
                return {}
            try:
                submitted = self.svc.crowd.list_submitted(hit_id)
            except GatewayError as exc:
                log.warning("could not list assignments: %s", exc)
                return {}
            out = {}
            for a in sorted(submitted, key=lambda a: a.assignment_id):
                if a.assignment_id in self.svc.state.assignments:
                    continue
                out[a.assignment_id] = self.validate_submission(a.worker_id, a.assignment_id, a.answer)
            return out

    def expire_code(self, vc: VerificationCode) -> None:
        self.svc.emit(EventKind.CODE_EXPIRED, None, {"code": vc.code, "device_id": vc.device_id})

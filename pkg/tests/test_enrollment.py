import random
from datetime import timedelta

import pytest

from dailystudy.domain import CodeState, EventKind, LifecycleState
from dailystudy.enrollment import CODE_ALPHABET, CODE_LENGTH, normalize_code
from dailystudy.errors import (
    ConsentIncomplete,
    DeviceAlreadyEnrolled,
    DeviceNotSupported,
    DuplicateHit,
    InvalidDemographics,
    InvalidMeasurement,
    StudyError,
    UnknownAssignment,
)
from dailystudy.gateway import APPROVED, HIT_PAYMENT, REJECTED, FaultInjector
from dailystudy.harness import CONSENT, DEMOGRAPHICS, DEVICE_MODEL, make_harness, measurement_payload

from support import START, UTC_MINUS_5


@pytest.fixture
def h():
    return make_harness(start=START)


def kinds(h):
    return [e.kind for e in h.service.log.events]


def test_hit_published_once(h):
    assert h.state.hit_id in h.crowd.hits
    with pytest.raises(DuplicateHit):
        h.service.enrollment.publish_enrollment_hit()


def test_code_shape_and_normalization(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    assert len(code) == CODE_LENGTH and set(code) <= set(CODE_ALPHABET)
    assert normalize_code(" ab cd\t12 ") == "ABCD12"


def test_full_enrollment(h):
    assert h.enroll("W1", "D1") == APPROVED
    p = h.state.participant_by_worker("W1")
    assert p.state is LifecycleState.ENROLLED and p.measurement_count == 1
    assert h.crowd.assignments[h.state.assignments[next(iter(h.state.assignments))].assignment_id].status == APPROVED
    assert h.crowd.totals() == {"W1": 100}
    assert h.state.codes[h.state.assignments[next(iter(h.state.assignments))].code].state is CodeState.CONSUMED
    assert EventKind.NOTIFICATION_SCHEDULED in kinds(h)


def test_code_entered_in_lower_case_with_spaces(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    aid = h.submit_code("W1", " ".join(code.lower()))
    assert h.service.enrollment.validate_submission("W1", aid, h.crowd.assignments[aid].answer) == APPROVED


def test_wrong_code_rejected_with_feedback(h):
    h.enroll_device("D1", UTC_MINUS_5)
    aid = h.submit_code("W1", "ZZZZZZZZ")
    assert h.service.enrollment.validate_submission("W1", aid, "ZZZZZZZZ") == REJECTED
    a = h.crowd.assignments[aid]
    assert a.status == REJECTED and "verification code" in a.feedback
    assert h.state.assignments[aid].reason == "unknown code"
    assert h.state.participants["D1"].state is LifecycleState.CODE_ISSUED


def test_rejected_worker_may_retry_with_a_new_assignment(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    bad = h.submit_code("W1", "ZZZZZZZZ")
    assert h.service.enrollment.validate_submission("W1", bad, "ZZZZZZZZ") == REJECTED
    good = h.submit_code("W1", code)
    assert h.service.enrollment.validate_submission("W1", good, code) == APPROVED
    assert h.state.worker_devices == {"W1": "D1"}


def test_replayed_code_rejected(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    first = h.submit_code("W1", code)
    second = h.submit_code("W2", code)
    h.advance_to(START + timedelta(minutes=10))
    assert h.state.assignments[first].decision == APPROVED
    assert h.state.assignments[second].decision == REJECTED
    assert h.state.assignments[second].reason == "code consumed"
    assert "W2" not in h.state.worker_devices


def test_worker_cannot_enroll_two_devices(h):
    assert h.enroll("W1", "D1") == APPROVED
    assert h.enroll("W1", "D2") == REJECTED
    assert h.state.worker_devices == {"W1": "D1"}


def test_revalidating_a_decided_assignment_is_idempotent(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    aid = h.submit_code("W1", code)
    enrollment = h.service.enrollment
    assert enrollment.validate_submission("W1", aid, code) == APPROVED
    n = len(h.service.log)
    assert enrollment.validate_submission("W1", aid, code) == APPROVED
    assert len(h.service.log) == n
    assert len([e for e in h.crowd.ledger if e.kind == HIT_PAYMENT]) == 1


def test_assignment_of_another_worker(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    aid = h.submit_code("W1", code)
    with pytest.raises(UnknownAssignment):
        h.service.enrollment.validate_submission("W2", aid, code)


def test_expired_code_rejects_device(h):
    code = h.enroll_device("D1", UTC_MINUS_5)
    h.advance_to(START + timedelta(hours=25))
    assert h.state.participants["D1"].state is LifecycleState.REJECTED
    assert h.state.codes[code].state is CodeState.EXPIRED
    aid = h.submit_code("W1", code)
    assert h.service.enrollment.validate_submission("W1", aid, code) == REJECTED
    with pytest.raises(DeviceAlreadyEnrolled):
        h.enroll_device("D1", UTC_MINUS_5)


def test_resending_first_measurement_returns_same_code(h):
    svc = h.service
    first = h.enroll_device("D1", UTC_MINUS_5)
    again = h.enroll_device("D1", UTC_MINUS_5)
    assert first == again
    assert sum(e.kind is EventKind.CODE_ISSUED for e in svc.log.events) == 1


def test_enrolled_device_cannot_restart(h):
    h.enroll("W1", "D1")
    with pytest.raises(DeviceAlreadyEnrolled):
        h.enroll_device("D1", UTC_MINUS_5)


@pytest.mark.parametrize("field,value,error", [
    ("consent", {"toggles": [True, False]}, ConsentIncomplete),
    ("consent", {}, ConsentIncomplete),
    ("demographics", {"country": "US", "dominant_hand": "tentacle"}, InvalidDemographics),
    ("demographics", {"dominant_hand": "left"}, InvalidDemographics),
    ("device_model", "Pixel 5", DeviceNotSupported),
    ("timezone", "Nowhere/Land", StudyError),
])
def test_onboarding_validation(h, field, value, error):
    args = {"consent": CONSENT, "demographics": DEMOGRAPHICS, "device_model": DEVICE_MODEL,
            "timezone": UTC_MINUS_5}
    args[field] = value
    with pytest.raises(error):
        h.service.enrollment.start("D1", args["consent"], args["demographics"],
                                   args["device_model"], args["timezone"])
    assert "D1" not in h.state.participants


def test_finish_without_start(h):
    with pytest.raises(StudyError, match="not started"):
        h.service.enrollment.finish("D1", measurement_payload())


def test_first_measurement_is_validated(h):
    h.service.enrollment.start("D1", CONSENT, DEMOGRAPHICS, DEVICE_MODEL, UTC_MINUS_5)
    with pytest.raises(InvalidMeasurement):
        h.service.enrollment.finish("D1", measurement_payload(required=4))
    assert h.state.codes == {}


def test_allocation_is_balanced(h):
    rng = random.Random(1)
    for i in range(30):
        h.enroll_device(f"D{i}", UTC_MINUS_5, rng)
    counts = {}
    for p in h.state.participants.values():
        counts[p.scheme_id] = counts.get(p.scheme_id, 0) + 1
    assert counts == {"LC": 10, "HC": 10, "HI": 10}


def test_decision_survives_platform_outage():
    h = make_harness(start=START)
    code = h.enroll_device("D1", UTC_MINUS_5)
    aid = h.submit_code("W1", code)
    h.crowd.down = True
    assert h.service.enrollment.validate_submission("W1", aid, code) == APPROVED
    assert h.crowd.assignments[aid].status == "Submitted"
    assert h.service.outbox_size == 1
    h.crowd.down = False
    h.advance_to(START + timedelta(minutes=2))
    assert h.crowd.assignments[aid].status == APPROVED
    assert h.service.outbox_size == 0
    assert h.state.assignments[aid].acked


def test_lost_response_is_not_applied_twice():
    # every call succeeds on the platform but reports failure to the caller
    h = make_harness(start=START)
    code = h.enroll_device("D1", UTC_MINUS_5)
    aid = h.submit_code("W1", code)
    h.crowd.faults = FaultInjector(1.0, mode="after")
    h.service.enrollment.validate_submission("W1", aid, code)
    h.crowd.faults = FaultInjector(0.0)
    h.advance_to(START + timedelta(minutes=2))
    assert [e.kind for e in h.crowd.ledger] == [HIT_PAYMENT]
    assert h.state.assignments[aid].acked


def test_polling_reviews_submitted_assignments(h):
    codes = [h.enroll_device(f"D{i}", UTC_MINUS_5) for i in range(3)]
    for i, c in enumerate(codes):
        h.submit_code(f"W{i}", c)
    h.advance_to(START + timedelta(minutes=6))
    assert len(h.state.worker_devices) == 3
    assert h.service.decisions_approved() == 3


def test_exit_survey_only_reaches_participants(h):
    h.enroll("W1", "D1")
    hit = h.service.publish_exit_survey()
    h.crowd.submit_assignment(hit, "W1", "answers")
    with pytest.raises(StudyError):
        h.crowd.submit_assignment(hit, "W9", "answers")
    assert h.service.pay_survey_responses() == 1
    assert h.state.ledger[-1].kind == "SurveyPayment"

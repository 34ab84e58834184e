import random
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dailystudy.config import StudyConfig
from dailystudy.domain import EventKind, LifecycleState
from dailystudy.errors import DuplicateDay, InvalidMeasurement, NotActive, UnknownParticipant, WindowExpired
from dailystudy.gateway import BONUS
from dailystudy.harness import measurement_payload
from dailystudy.measurements import parse_measurement
from dailystudy.payments import cumulative_pay

from support import enrolled_harness, local


def test_second_measurement_pays_first_bonus():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 2, 10))
    q = h.measure("W0")
    scheme = h.state.participant_by_worker("W0").scheme_id
    assert q.cumulative == cumulative_pay(h.service.config.scheme(scheme), 2)
    assert not q.bonus_pending
    assert h.crowd.totals()["W0"] == q.cumulative
    assert h.state.participant_by_worker("W0").state is LifecycleState.ACTIVE


def test_same_day_duplicate_is_logged_and_refused():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 2, 10))
    h.measure("W0")
    ledger = len(h.crowd.ledger)
    with pytest.raises(DuplicateDay):
        h.measure("W0")
    assert h.service.log.events[-1].kind is EventKind.DUPLICATE_SUBMISSION
    assert len(h.crowd.ledger) == ledger


def test_second_submission_on_enrollment_day_is_duplicate():
    h = enrolled_harness(1)
    with pytest.raises(DuplicateDay):
        h.measure("W0")


def test_unknown_worker():
    h = enrolled_harness(1)
    with pytest.raises(UnknownParticipant):
        h.measure("nobody")


def test_skipped_days_do_not_skip_bonus_index():
    h = enrolled_harness(1)
    for day in (3, 7, 8):
        h.advance_to(local(h, "W0", day, 12))
        h.measure("W0")
    recs = h.state.measurements["W0"]
    assert [(r.study_day, r.bonus_index) for r in recs] == [(1, 0), (3, 1), (7, 2), (8, 3)]


def test_window_expiry():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 2, 10))
    h.measure("W0")
    h.advance_to(local(h, "W0", 32, 0, 1))
    assert h.state.participant_by_worker("W0").state is LifecycleState.EXPIRED
    with pytest.raises(WindowExpired):
        h.measure("W0")
    assert not h.state.pending_notifications("W0")


def test_completion_after_31_measurements():
    h = enrolled_harness(1)
    for day in range(2, 32):
        h.advance_to(local(h, "W0", day, 12))
        h.measure("W0")
    p = h.state.participant_by_worker("W0")
    assert p.state is LifecycleState.COMPLETED and p.bonus_count == 30
    assert h.crowd.totals()["W0"] == cumulative_pay(h.service.config.scheme(p.scheme_id), 31)
    assert not h.state.pending_notifications("W0")
    h.advance_to(local(h, "W0", 31, 20))
    with pytest.raises(NotActive):
        h.measure("W0")


def test_bonus_outage_is_retried_exactly_once():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 2, 10))
    h.crowd.down = True
    q = h.measure("W0")
    assert q.bonus_pending
    assert h.service.outbox_size == 1
    h.advance_to(h.clock.now() + timedelta(minutes=3))
    assert h.service.outbox_size == 1
    h.crowd.down = False
    h.advance_to(h.clock.now() + timedelta(minutes=3))
    assert h.service.outbox_size == 0
    assert sum(e.kind == BONUS for e in h.crowd.ledger) == 1
    assert not h.service.pipeline.earnings("W0").bonus_pending


def test_earnings_view():
    h = enrolled_harness(1)
    q = h.service.pipeline.earnings("W0")
    assert q.cumulative == 100
    assert q.remaining_potential > 0


@pytest.mark.parametrize("payload", [
    {},
    {"scroll_rounds": [], "swipe_rounds": []},
    measurement_payload(required=4),
    {**measurement_payload(), "duration": "soon"},
    {**measurement_payload(), "scroll_rounds": [{"round_index": 0}]},
])
def test_invalid_payloads(payload):
    with pytest.raises(InvalidMeasurement):
        parse_measurement(payload, 5)


def test_repeated_parameters_are_rejected():
    payload = measurement_payload()
    rounds = payload["scroll_rounds"]
    rounds[1]["parameters"] = dict(rounds[0]["parameters"])
    with pytest.raises(InvalidMeasurement, match="reuse"):
        parse_measurement(payload, 5)


def test_wrong_rounds_are_kept():
    scroll, swipe, _ = parse_measurement(measurement_payload(random.Random(3), wrong=2), 5)
    assert len(scroll) == 7 and sum(r["answer_correct"] for r in scroll) == 5


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(2, 31), min_size=1, max_size=40))
def test_ledger_matches_measurements(days):
    h = enrolled_harness(1)
    for day in sorted(days):
        target = local(h, "W0", day, 15)
        if target > h.clock.now():
            h.advance_to(target)
        try:
            h.measure("W0")
        except DuplicateDay:
            pass
    p = h.state.participant_by_worker("W0")
    scheme = StudyConfig().scheme(p.scheme_id)
    assert p.measurement_count == len(set(days)) + 1
    assert h.crowd.totals()["W0"] == cumulative_pay(scheme, p.measurement_count)
    assert h.state.ledger_total("W0") == h.crowd.totals()["W0"]

from datetime import timedelta

from hypothesis import given, settings
from hypothesis import strategies as st

from dailystudy.clock import VirtualClock
from dailystudy.config import StudyConfig
from dailystudy.domain import EventKind, NotificationKind, NotificationState
from dailystudy.eventlog import EventLog
from dailystudy.gateway import FaultInjector, MockCrowdGateway, MockPushGateway
from dailystudy.service import StudyService

from support import enrolled_harness, local


def state_of(h, nid):
    return h.state.notifications[nid].state


def test_enrollment_schedules_day_two():
    h = enrolled_harness(1)
    pending = {n.id for n in h.state.pending_notifications("W0")}
    assert pending == {"W0:2:Morning", "W0:2:EveningConditional"}


def test_late_review_skips_reminders_already_past():
    # enrolled at 23:50 local, reviewed just after midnight: the day-2 reminders are still ahead
    h = enrolled_harness(1, at=(23, 50))
    assert {n.study_day for n in h.state.pending_notifications("W0")} == {2}


def test_morning_sent_and_evening_sent_without_submission():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 2, 19, 1))
    assert state_of(h, "W0:2:Morning") is NotificationState.SENT
    assert state_of(h, "W0:2:EveningConditional") is NotificationState.SENT
    assert [r.at for r in h.push.sent] == [local(h, "W0", 2, 9), local(h, "W0", 2, 19)]
    assert "$" in h.push.sent[0].message


def test_no_submission_means_no_further_schedule():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 4, 0))
    assert not h.state.pending_notifications("W0")


def test_push_failures_retry_then_give_up():
    h = enrolled_harness(1, push_faults=FaultInjector(1.0))
    h.advance_to(local(h, "W0", 2, 9, 10))
    n = h.state.notifications["W0:2:Morning"]
    assert n.state is NotificationState.FAILED
    assert n.attempts == StudyConfig().push_max_attempts
    assert h.push.sent == []


def test_unreachable_device_then_recovery():
    h = enrolled_harness(1)
    h.push.unreachable.add("D0")
    h.advance_to(local(h, "W0", 2, 9))
    h.push.unreachable.clear()
    h.advance_to(local(h, "W0", 2, 9, 5))
    assert state_of(h, "W0:2:Morning") is NotificationState.SENT
    failed = [e for e in h.service.log.events if e.kind is EventKind.NOTIFICATION_FAILED]
    assert len(failed) == 1 and not failed[0].payload["final"]


def test_reengagement_after_a_missed_day():
    h = enrolled_harness(1, config=StudyConfig(reengagement_enabled=True))
    h.advance_to(local(h, "W0", 2, 10))
    h.measure("W0")
    h.advance_to(local(h, "W0", 4, 9, 30))  # day 3 missed
    assert state_of(h, "W0:4:Reengagement") is NotificationState.SENT
    assert "missed you" in h.push.sent[-1].message
    h.advance_to(local(h, "W0", 6, 9, 30))  # day 4 missed as well: no second nudge
    assert "W0:5:Reengagement" not in h.state.notifications


def test_reengagement_off_by_default():
    h = enrolled_harness(1)
    h.advance_to(local(h, "W0", 2, 10))
    h.measure("W0")
    h.advance_to(local(h, "W0", 5, 0))
    assert not any(n.kind is NotificationKind.REENGAGEMENT for n in h.state.notifications.values())


def test_replay_rebuilds_the_pending_heap():
    h = enrolled_harness(1)
    clock = VirtualClock(h.clock.now())
    push = MockPushGateway(clock)
    svc = StudyService(h.service.config, clock, MockCrowdGateway(clock), push,
                       EventLog(events=h.service.log.events))
    assert svc.next_due() == local(h, "W0", 2, 0)
    svc.tick(local(h, "W0", 2, 9))
    assert [r.device_id for r in push.sent] == ["D0"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 6), st.integers(0, 23), st.integers(0, 59)), max_size=12),
       st.lists(st.integers(0, 5 * 24 * 60), max_size=30))
def test_at_most_two_per_day_and_none_after_submission(submissions, ticks):
    h = enrolled_harness(1)
    start = h.clock.now()
    plan = sorted([(local(h, "W0", d, hh, mm), "measure") for d, hh, mm in submissions]
                  + [(start + timedelta(minutes=m), "tick") for m in ticks])
    for when, action in plan:
        if when > h.clock.now():
            h.service.tick(when)
        if action == "measure":
            try:
                h.measure("W0")
            except Exception:  # noqa: BLE001 - same-day repeats are expected here
                pass
    h.advance_to(local(h, "W0", 8, 0))
    per_day = {}
    for rec in h.push.sent:
        day = rec.at - timedelta(hours=5)
        per_day[day.date()] = per_day.get(day.date(), 0) + 1
    assert max(per_day.values(), default=0) <= 2
    for m in h.state.measurements["W0"]:
        for n in h.state.notifications.values():
            if n.study_day == m.study_day and n.state is NotificationState.SENT:
                assert n.fire_at <= m.submitted_at


def test_reminder_is_not_sent_after_its_day():
    h = enrolled_harness(1)
    h.service.tick(local(h, "W0", 3, 8))  # the scheduler slept through all of day 2
    assert state_of(h, "W0:2:Morning") is NotificationState.CANCELLED
    assert state_of(h, "W0:2:EveningConditional") is NotificationState.CANCELLED
    assert h.push.sent == []
    assert h.service.log.events[-1].payload["reason"] == "stale"

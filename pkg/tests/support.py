"""Helpers shared by the test modules."""

from __future__ import annotations

import random
from dataclasses import fields
from datetime import datetime, time, timezone

from dailystudy import analytics as A
from dailystudy.config import StudyConfig
from dailystudy.domain import at_local, day_date
from dailystudy.harness import Harness, make_harness
from dailystudy.state import StudyState, replay

# A fixed UTC-5 zone: no daylight saving shifts to reason about.
UTC_MINUS_5 = "Etc/GMT+5"
START = datetime(2021, 3, 1, tzinfo=timezone.utc)


def local(h: Harness, worker_id: str, day: int, hh: int, mm: int = 0) -> datetime:
    """UTC instant of ``hh:mm`` local on study ``day`` of ``worker_id``."""
    p = h.state.participant_by_worker(worker_id)
    return at_local(day_date(p, day), time(hh, mm), p.timezone)


def enrolled_harness(n: int = 1, tz: str = UTC_MINUS_5, at=(10, 0), config: StudyConfig | None = None,
                     **kwargs) -> Harness:
    """A harness whose workers ``W0``..``Wn-1`` all enrolled at ``at`` local on one day."""
    h = make_harness(config, start=START, **kwargs)
    first = at_local(datetime(2021, 3, 2).date(), time(*at), tz)
    h.advance_to(first)
    rng = random.Random(7)
    for i in range(n):
        h.enroll(f"W{i}", f"D{i}", tz, rng)
    return h


def reports(state: StudyState) -> dict[str, str]:
    """Every analytics artifact, rendered to text."""
    matrix = A.CompletionMatrix.from_state(state)
    out = {
        "matrix": matrix.to_csv(),
        "histogram": A.histogram_csv(A.submission_histogram(state)),
        "payments": A.payments_csv(A.payment_rows(state)),
        "ledger": A.ledger_mirror_csv(state),
        "heatmap": A.heatmap_pbm(matrix),
        "tests": A.battery_csv(A.test_battery(state)),
    }
    if matrix.rows:
        out["retention"] = A.retention_summary(matrix).render()
    return out


def replay_differences(state: StudyState, events, config: StudyConfig | None = None) -> list[str]:
    """Names of state fields (and reports) where a replay disagrees with ``state``."""
    again = replay(events, config or state.config)
    diffs = [f.name for f in fields(StudyState)
             if f.compare and getattr(again, f.name) != getattr(state, f.name)]
    live, replayed = reports(state), reports(again)
    diffs += [f"report:{k}" for k in live if live[k] != replayed[k]]
    return diffs

from dataclasses import replace
from datetime import time
from zoneinfo import ZoneInfo

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dailystudy import analytics as A
from dailystudy.calibrate import loss, score
from dailystudy.config import StudyConfig
from dailystudy.domain import NotificationKind
from dailystudy.errors import ConfigError
from dailystudy.eventlog import encode_event
from dailystudy.payments import cumulative_pay
from dailystudy.simulator import (
    DRAWS_PER_DAY,
    Action,
    BehaviorProfile,
    DayState,
    SimConfig,
    dump_sim_config,
    fast_matrix,
    parse_sim_config,
    plan_workers,
    simulate_study,
    worker_day_decision,
)

from support import replay_differences

SMALL = {"HI": 6, "HC": 6, "LC": 8}
MORNING = NotificationKind.MORNING
EVENING = NotificationKind.EVENING_CONDITIONAL


def small(seed=1, **kw):
    return SimConfig(n_workers=SMALL, seed=seed, **kw)


def log_bytes(result):
    return "".join(encode_event(e) for e in result.events)


def test_same_seed_same_log():
    assert log_bytes(simulate_study(small(5))) == log_bytes(simulate_study(small(5)))


def test_different_seed_different_log():
    assert log_bytes(simulate_study(small(5))) != log_bytes(simulate_study(small(6)))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_fast_model_matches_service(seed):
    cfg = small(seed)
    assert A.CompletionMatrix.from_state(simulate_study(cfg).service.state) == fast_matrix(cfg)


def test_fast_model_matches_service_with_reengagement():
    cfg = small(4)
    study = StudyConfig(reengagement_enabled=True)
    result = simulate_study(cfg, study)
    assert A.CompletionMatrix.from_state(result.service.state) == fast_matrix(cfg, study)
    assert any(n.kind is NotificationKind.REENGAGEMENT for n in result.service.state.notifications.values())


def test_faults_do_not_break_conservation():
    result = simulate_study(small(7, crowd_failure_rate=0.15, push_failure_rate=0.15))
    state = result.service.state
    totals = result.harness.crowd.totals()
    assert len(state.worker_devices) == sum(SMALL.values())
    for w, device in state.worker_devices.items():
        p = state.participants[device]
        assert totals[w] == cumulative_pay(state.config.scheme(p.scheme_id), p.measurement_count)
    assert result.service.outbox_size == 0
    assert replay_differences(state, result.events) == []


def test_duplicates_are_all_rejected():
    result = simulate_study(small(3, duplicate_rate=0.5))
    assert result.duplicates_attempted > 10
    assert result.duplicates_rejected == result.duplicates_attempted


def test_plans_respect_counts_and_onboarding_hours():
    plans, streams = plan_workers(small(2))
    assert [p.scheme_id for p in plans].count("LC") == 8
    assert len(streams) == 20
    for p in plans:
        local = p.onboard_at.astimezone(ZoneInfo(p.timezone))
        assert time(8) <= local.time() < time(22)


def decision(profile, seed, reminders=frozenset(), streak=0, rate=None):
    return worker_day_decision(profile, DayState(5, frozenset(reminders), streak),
                               np.random.default_rng(seed), rate)


def test_one_day_uses_fixed_number_of_draws():
    rng = np.random.default_rng(0)
    worker_day_decision(BehaviorProfile(), DayState(2), rng)
    twin = np.random.default_rng(0)
    twin.random(DRAWS_PER_DAY)
    assert rng.random() == twin.random()


@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
def test_completion_is_monotone_in_rate(seed, r1, r2):
    lo, hi = sorted((r1, r2))
    p = BehaviorProfile(hazard=(0.0,))
    if decision(p, seed, rate=lo).action is Action.COMPLETE:
        assert decision(p, seed, rate=hi).action is Action.COMPLETE


@given(st.integers(0, 2**32 - 1))
def test_reminders_only_help(seed):
    p = BehaviorProfile(hazard=(0.0,))
    if decision(p, seed).action is Action.COMPLETE:
        assert decision(p, seed, {MORNING, EVENING}).action is Action.COMPLETE


@given(st.integers(0, 2**32 - 1))
def test_unresponsive_workers_ignore_reminders(seed):
    p = BehaviorProfile(notification_responsiveness=0.0, hazard=(0.0,))
    d = decision(p, seed, {MORNING, EVENING})
    assert d.trigger is None
    assert d.action is decision(p, seed).action


@given(st.integers(0, 2**32 - 1))
def test_reminder_completion_lands_in_ten_minute_window(seed):
    p = BehaviorProfile(notification_responsiveness=1.0, base_daily_completion=0.0, hazard=(0.0,))
    d = decision(p, seed, {MORNING})
    assert d.trigger is MORNING and time(9) <= d.at < time(9, 10)


def test_certain_hazard_drops():
    p = BehaviorProfile(hazard=(0.0, 1.0))
    assert decision(p, 0, streak=3).action is Action.DROP
    assert decision(p, 0, streak=0).action is not Action.DROP


@given(st.floats(0, 1, exclude_max=True))
def test_diurnal_time_follows_profile(u):
    night_only = BehaviorProfile(diurnal_profile=(1.0,) * 6 + (0.0,) * 18)
    assert night_only.diurnal_time(u).hour < 6
    t = BehaviorProfile().diurnal_time(u)
    assert time(0) <= t <= time(23, 59, 59)


@pytest.mark.parametrize("kwargs", [
    {"p_abandon_after_first": 1.5},
    {"hazard": (0.5, 0.1)},
    {"hazard": ()},
    {"diurnal_profile": (1.0,) * 23},
    {"scheme_sensitivity": {"HI": -1}},
])
def test_profile_validation(kwargs):
    with pytest.raises(ConfigError):
        BehaviorProfile(**kwargs)


@pytest.mark.parametrize("kwargs", [
    {"n_workers": {}},
    {"timezones": (("Bad/Zone", 1.0),)},
    {"duplicate_rate": 2.0},
    {"enrollment_spread_days": 0},
])
def test_sim_config_validation(kwargs):
    with pytest.raises(Exception):
        SimConfig(**kwargs)


def test_sim_config_round_trip():
    cfg = SimConfig(seed=9, n_workers={"HI": 3, "LC": 4}, jitter=0.1,
                    timezones=(("Europe/Paris", 2.0), ("Asia/Tokyo", 1.0)),
                    profile=replace(BehaviorProfile(), hazard=(0.0, 0.2), scheme_sensitivity={"HI": 1.2, "HC": 1.0, "LC": 1.0}))
    assert parse_sim_config(dump_sim_config(cfg)) == cfg


def test_sim_config_partial_and_errors():
    cfg = parse_sim_config("seed = 3\nworkers.HI = 2\nprofile.sensitivity.HI = 1.5\n")
    assert cfg.seed == 3 and cfg.n_workers == {"HI": 2}
    assert cfg.profile.sensitivity("HI") == 1.5
    for bad in ("colour = blue", "profile.mood = 1", "seed = x"):
        with pytest.raises(ConfigError):
            parse_sim_config(bad)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_fast_model_retention_is_monotone_in_base_rate(seed):
    def pct(rate):
        cfg = SimConfig(seed=seed, profile=BehaviorProfile(base_daily_completion=rate))
        return A.retention_summary(fast_matrix(cfg)).pct_over_75
    assert pct(0.95) >= pct(0.6)


def test_calibration_score_and_loss():
    metrics = score(BehaviorProfile(), seeds=[1], jitter=0.304)
    assert len(metrics) == 3 and all(0 <= m <= 100 for m in metrics)
    assert loss((36.8, 68.4, 39.0)) == 0
    assert loss(metrics) > 0

from datetime import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dailystudy.config import (
    CONSTANT,
    PaymentScheme,
    StudyConfig,
    dump_config,
    load_config,
    parse_config,
)
from dailystudy.errors import ConfigError


def test_defaults_round_trip():
    cfg = StudyConfig()
    assert parse_config(dump_config(cfg)) == cfg


@given(
    days=st.integers(1, 60),
    pay=st.integers(1, 1000),
    reeng=st.booleans(),
    amount=st.integers(1, 500),
    ttl=st.floats(0.5, 72, allow_nan=False),
)
def test_round_trip_property(days, pay, reeng, amount, ttl):
    cfg = StudyConfig(duration_days=days, max_measurements=days, enrollment_pay=pay,
                      reengagement_enabled=reeng, code_ttl_hours=ttl,
                      schemes=(PaymentScheme("A", CONSTANT, constant_amount=amount),))
    assert parse_config(dump_config(cfg)) == cfg


def test_partial_file_keeps_defaults(tmp_path):
    path = tmp_path / "study.conf"
    path.write_text("# shorter study\nduration_days = 14\nmax_measurements = 14\n"
                    "morning_reminder = 08:30\nscheme.X = increasing 10 2\n")
    cfg = load_config(path)
    assert cfg.duration_days == 14
    assert cfg.morning_reminder == time(8, 30)
    assert [s.id for s in cfg.schemes] == ["X"]
    assert cfg.enrollment_pay == 100


@pytest.mark.parametrize("text", [
    "nonsense = 1",
    "duration_days = many",
    "morning_reminder = 9am",
    "reengagement_enabled = maybe",
    "scheme.X = constant",
    "scheme.X = stepped 1 2",
    "morning_reminder = 20:00",
    "duration_days = 10",  # max_measurements 31 > 10 days
    "scheme.A = constant 5\nscheme.A = constant 6",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.conf")


def test_scheme_lookup():
    cfg = StudyConfig()
    assert cfg.scheme("HI").base == 40
    with pytest.raises(ConfigError):
        cfg.scheme("ZZ")
    assert cfg.max_bonuses == 30

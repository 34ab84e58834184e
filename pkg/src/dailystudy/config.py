"""Study configuration and payment-scheme definitions.

Configuration files are plain ``key = value`` lines; ``#`` starts a comment.
Payment schemes are declared one per line::

    scheme.LC = constant 88
    scheme.HC = constant 113
    scheme.HI = increasing 40 5

List values (``allowed_device_models``) are separated by whitespace, since
model identifiers such as ``iPhone12,1`` contain commas. Omitted keys take
the defaults below.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from datetime import time
from pathlib import Path

from .errors import ConfigError

CONSTANT = "constant"
INCREASING = "increasing"


@dataclass(frozen=True)
class PaymentScheme:
    id: str
    kind: str
    constant_amount: int = 0
    base: int = 0
    increment: int = 0

    def __post_init__(self) -> None:
        if self.kind == CONSTANT:
            if self.constant_amount <= 0:
                raise ConfigError(f"scheme {self.id}: constant_amount must be > 0")
        elif self.kind == INCREASING:
            if self.base <= 0 or self.increment < 0:
                raise ConfigError(f"scheme {self.id}: need base > 0 and increment >= 0")
        else:
            raise ConfigError(f"scheme {self.id}: unknown kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == CONSTANT:
            return f"{CONSTANT} {self.constant_amount}"
        return f"{INCREASING} {self.base} {self.increment}"


LC = PaymentScheme("LC", CONSTANT, constant_amount=88)
HC = PaymentScheme("HC", CONSTANT, constant_amount=113)
HI = PaymentScheme("HI", INCREASING, base=40, increment=5)
DEFAULT_SCHEMES = (LC, HC, HI)

DEFAULT_DEVICE_MODELS = (
    "iPhone8,1", "iPhone8,2", "iPhone9,1", "iPhone9,2", "iPhone9,3", "iPhone9,4",
    "iPhone10,1", "iPhone10,2", "iPhone10,4", "iPhone10,5", "iPhone11,2",
    "iPhone11,8", "iPhone12,1", "iPhone12,3", "iPhone12,5", "iPhone12,8",
)


@dataclass(frozen=True)
class StudyConfig:
    duration_days: int = 31
    max_measurements: int = 31
    enrollment_pay: int = 100
    schemes: tuple[PaymentScheme, ...] = DEFAULT_SCHEMES
    morning_reminder: time = time(9, 0)
    evening_reminder: time = time(19, 0)
    required_correct_rounds: int = 5
    reengagement_enabled: bool = False
    code_ttl_hours: float = 24.0
    push_max_attempts: int = 3
    allowed_device_models: tuple[str, ...] = DEFAULT_DEVICE_MODELS
    hit_title: str = "31-day daily touch study (iPhone only: see description for supported models)"
    hit_description: str = (
        "Install our iOS app, complete a short daily task and earn an instant bonus per day. "
        "Only the listed iPhone models are supported; please return the HIT otherwise."
    )
    seconds_per_measurement: str = "241.44"
    onboarding_seconds: int = 480

    def __post_init__(self) -> None:
        if self.duration_days < 1:
            raise ConfigError("duration_days must be >= 1")
        if not 1 <= self.max_measurements <= self.duration_days:
            raise ConfigError("max_measurements must be in [1, duration_days]")
        if self.morning_reminder >= self.evening_reminder:
            raise ConfigError("morning_reminder must be earlier than evening_reminder")
        if self.enrollment_pay <= 0:
            raise ConfigError("enrollment_pay must be > 0")
        if self.required_correct_rounds < 1:
            raise ConfigError("required_correct_rounds must be >= 1")
        if self.code_ttl_hours <= 0:
            raise ConfigError("code_ttl_hours must be > 0")
        if self.push_max_attempts < 1:
            raise ConfigError("push_max_attempts must be >= 1")
        ids = [s.id for s in self.schemes]
        if not ids or len(set(ids)) != len(ids):
            raise ConfigError("scheme ids must be non-empty and unique")

    @property
    def max_bonuses(self) -> int:
        return self.max_measurements - 1

    def scheme(self, scheme_id: str) -> PaymentScheme:
        for s in self.schemes:
            if s.id == scheme_id:
                return s
        raise ConfigError(f"unknown payment scheme {scheme_id!r}")


def _parse_time(value: str) -> time:
    try:
        hh, mm = value.split(":")
        return time(int(hh), int(mm))
    except ValueError as exc:
        raise ConfigError(f"bad time of day {value!r} (want HH:MM)") from exc


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {value!r}")


def _parse_scheme(scheme_id: str, value: str) -> PaymentScheme:
    parts = value.split()
    try:
        if parts[0] == CONSTANT and len(parts) == 2:
            return PaymentScheme(scheme_id, CONSTANT, constant_amount=int(parts[1]))
        if parts[0] == INCREASING and len(parts) == 3:
            return PaymentScheme(scheme_id, INCREASING, base=int(parts[1]), increment=int(parts[2]))
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad scheme line for {scheme_id}: {value!r}") from exc
    raise ConfigError(f"bad scheme line for {scheme_id}: {value!r}")


def read_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines (no section headers) into a dict."""
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), delimiters=("=",)
    )
    parser.optionxform = str  # keep case: scheme ids are case-sensitive
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    return dict(parser["root"])


def parse_config(text: str) -> StudyConfig:
    raw = read_key_values(text)
    kwargs: dict = {}
    schemes = []
    known = {f.name: f for f in fields(StudyConfig)}
    for key, value in raw.items():
        if key.startswith("scheme."):
            schemes.append(_parse_scheme(key.split(".", 1)[1], value))
            continue
        if key not in known or key == "schemes":
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(StudyConfig, key)
        try:
            if isinstance(default, bool):
                kwargs[key] = _parse_bool(value)
            elif isinstance(default, time):
                kwargs[key] = _parse_time(value)
            elif isinstance(default, tuple):
                kwargs[key] = tuple(value.split())
            elif isinstance(default, int):
                kwargs[key] = int(value)
            elif isinstance(default, float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if schemes:
        kwargs["schemes"] = tuple(schemes)
    return StudyConfig(**kwargs)


def load_config(path: str | Path) -> StudyConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(config: StudyConfig) -> str:
    lines = []
    for f in fields(StudyConfig):
        value = getattr(config, f.name)
        if f.name == "schemes":
            lines.extend(f"scheme.{s.id} = {s.describe()}" for s in value)
        elif isinstance(value, bool):
            lines.append(f"{f.name} = {'true' if value else 'false'}")
        elif isinstance(value, time):
            lines.append(f"{f.name} = {value.strftime('%H:%M')}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = {' '.join(value)}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def with_overrides(config: StudyConfig, **changes) -> StudyConfig:
    return replace(config, **changes)

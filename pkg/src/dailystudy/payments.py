"""Per-measurement bonus arithmetic.

All money is integer cents. The enrollment HIT reward pays for the first
measurement, so bonus index 1 is the second measurement a worker completes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal

from .config import CONSTANT, StudyConfig, PaymentScheme
from .errors import IndexOutOfRange

_DEFAULT = StudyConfig()
_CENT = Decimal("0.01")


@dataclass(frozen=True)
class PayQuote:
    next_bonus: int
    cumulative: int
    remaining_potential: int
    equivalent_hourly: Decimal
    bonus_pending: bool = False

    def to_json(self) -> dict:
        d = asdict(self)
        d["equivalent_hourly"] = str(self.equivalent_hourly)
        return d


def bonus_amount(scheme: PaymentScheme, bonus_index: int, config: StudyConfig = _DEFAULT) -> int:
    if not 1 <= bonus_index <= config.max_bonuses:
        raise IndexOutOfRange(f"bonus index {bonus_index} outside [1, {config.max_bonuses}]")
    if scheme.kind == CONSTANT:
        return scheme.constant_amount
    return scheme.base + scheme.increment * (bonus_index - 1)


def _check_measurements(n: int, config: StudyConfig) -> None:
    if not 1 <= n <= config.max_measurements:
        raise IndexOutOfRange(f"measurement count {n} outside [1, {config.max_measurements}]")


def cumulative_pay(scheme: PaymentScheme, n: int, config: StudyConfig = _DEFAULT) -> int:
    """Total paid after ``n`` measurements, enrollment reward included."""
    _check_measurements(n, config)
    return config.enrollment_pay + sum(bonus_amount(scheme, j, config) for j in range(1, n))


def equivalent_hourly(scheme: PaymentScheme, n: int, config: StudyConfig = _DEFAULT) -> Decimal:
    """Dollars per hour after ``n`` measurements, rounded half-up to cents."""
    seconds = config.onboarding_seconds + (n - 1) * Decimal(config.seconds_per_measurement)
    dollars = Decimal(cumulative_pay(scheme, n, config)) / 100
    return (dollars * 3600 / seconds).quantize(_CENT, rounding=ROUND_HALF_UP)


def remaining_potential(scheme: PaymentScheme, bonus_count: int, config: StudyConfig = _DEFAULT) -> int:
    start = max(bonus_count, 0) + 1
    return sum(bonus_amount(scheme, j, config) for j in range(start, config.max_bonuses + 1))


def quote(scheme: PaymentScheme, bonus_count: int, config: StudyConfig = _DEFAULT,
          bonus_pending: bool = False) -> PayQuote:
    """Earnings view shown in the app after ``bonus_count`` paid bonuses."""
    done = bonus_count >= config.max_bonuses
    return PayQuote(
        next_bonus=0 if done else bonus_amount(scheme, bonus_count + 1, config),
        cumulative=cumulative_pay(scheme, bonus_count + 1, config),
        remaining_potential=remaining_potential(scheme, bonus_count, config),
        equivalent_hourly=equivalent_hourly(scheme, bonus_count + 1, config),
        bonus_pending=bonus_pending,
    )


TABLE_ROWS = (1, 11, 21, 31)


def format_cents(cents: int) -> str:
    sign = "-" if cents < 0 else ""
    return f"{sign}{abs(cents) // 100}.{abs(cents) % 100:02d}"


def pay_table(config: StudyConfig = _DEFAULT, rows=TABLE_ROWS) -> list[dict]:
    out = []
    for n in rows:
        row: dict = {"measures": n}
        for s in config.schemes:
            row[f"pay_{s.id}"] = cumulative_pay(s, n, config)
            row[f"hourly_{s.id}"] = equivalent_hourly(s, n, config)
        out.append(row)
    return out


def format_pay_table(config: StudyConfig = _DEFAULT, rows=TABLE_ROWS) -> str:
    ids = [s.id for s in config.schemes]
    head = ["measures"] + [f"pay_{i}" for i in ids] + [f"hourly_{i}" for i in ids]
    lines = ["  ".join(f"{h:>9}" for h in head)]
    for row in pay_table(config, rows):
        cells = [str(row["measures"])]
        cells += [format_cents(row[f"pay_{i}"]) for i in ids]
        cells += [str(row[f"hourly_{i}"]) for i in ids]
        lines.append("  ".join(f"{c:>9}" for c in cells))
    return "\n".join(lines) + "\n"

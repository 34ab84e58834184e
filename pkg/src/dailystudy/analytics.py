"""Reports computed from the event log: completion, retention, timing and tests.

Every function accepts either a replayed :class:`StudyState` or an iterable
of events (which is replayed first), so the same report can be produced
from a live service or from a log file on disk.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .config import StudyConfig
from .domain import StudyEvent
from .errors import EmptyMatrix
from .payments import cumulative_pay, format_cents
from .state import BONUS, HIT_PAYMENT, StudyState, replay
from .stats import TestResult, t_test, two_proportion_z

Source = Union[StudyState, Iterable[StudyEvent]]

BIN_MINUTES = 10
N_BINS = 24 * 60 // BIN_MINUTES
DEFAULT_PAIRS = (("HI", "HC"), ("HI", "LC"), ("HC", "LC"))


def as_state(source: Source, config: Optional[StudyConfig] = None) -> StudyState:
    if isinstance(source, StudyState):
        return source
    return replay(source, config or StudyConfig())


# ---------------------------------------------------------- completion matrix

@dataclass(frozen=True)
class CompletionMatrix:
    workers: tuple[str, ...]
    schemes: tuple[str, ...]
    rows: tuple[tuple[bool, ...], ...]

    def __post_init__(self) -> None:
        if not (len(self.workers) == len(self.schemes) == len(self.rows)):
            raise ValueError("workers, schemes and rows must have equal length")
        if len({len(r) for r in self.rows}) > 1:
            raise ValueError("ragged completion matrix")

    @property
    def days(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int | bool]], schemes: Optional[Sequence[str]] = None,
                  workers: Optional[Sequence[str]] = None) -> "CompletionMatrix":
        n = len(rows)
        return cls(tuple(workers or (f"W{i:04d}" for i in range(n))),
                   tuple(schemes or ("",) * n),
                   tuple(tuple(bool(x) for x in r) for r in rows))

    @classmethod
    def from_state(cls, source: Source, config: Optional[StudyConfig] = None) -> "CompletionMatrix":
        """One row per approved worker, grouped by scheme in configuration order."""
        state = as_state(source, config)
        days = state.config.duration_days
        order = {s.id: i for i, s in enumerate(state.config.schemes)}
        enrolled = sorted(
            (p for p in state.participants.values() if p.worker_id is not None),
            key=lambda p: (order.get(p.scheme_id, len(order)), p.worker_id),
        )
        rows = []
        for p in enrolled:
            done = {m.study_day for m in state.measurements.get(p.worker_id, ())}
            rows.append(tuple(d in done for d in range(1, days + 1)))
        return cls(tuple(p.worker_id for p in enrolled), tuple(p.scheme_id for p in enrolled), tuple(rows))

    def counts(self) -> list[int]:
        return [sum(r) for r in self.rows]

    def subset(self, scheme: str) -> "CompletionMatrix":
        idx = [i for i, s in enumerate(self.schemes) if s == scheme]
        return CompletionMatrix(tuple(self.workers[i] for i in idx), (scheme,) * len(idx),
                                tuple(self.rows[i] for i in idx))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["worker_id", "scheme"] + [f"d{d}" for d in range(1, self.days + 1)])
        for worker, scheme, row in zip(self.workers, self.schemes, self.rows):
            w.writerow([worker, scheme] + [int(x) for x in row])
        return buf.getvalue()


def trailing_missed(row: Sequence[bool]) -> int:
    n = 0
    for done in reversed(row):
        if done:
            break
        n += 1
    return n


# ------------------------------------------------------------------ retention

@dataclass(frozen=True)
class RetentionSummary:
    workers: int
    pct_all_days: float
    pct_over_75: float
    dropouts_after_first: int
    terminal_run_workers: int
    missed_any: int

    def render(self) -> str:
        share = 100.0 * self.terminal_run_workers / self.missed_any if self.missed_any else 0.0
        return (
            f"workers                      {self.workers}\n"
            f"completed every day          {self.pct_all_days:.1f}%\n"
            f"completed more than 75%      {self.pct_over_75:.1f}%\n"
            f"missed at least one day      {self.missed_any}\n"
            f"ended on 3+ missed days      {self.terminal_run_workers} ({share:.0f}% of those)\n"
            f"stopped after the first      {self.dropouts_after_first}\n"
        )


def over_75_threshold(days: int) -> int:
    """Smallest completed-day count that is strictly more than 75% of ``days``."""
    return 3 * days // 4 + 1


def retention_summary(matrix: CompletionMatrix, terminal_run: int = 3) -> RetentionSummary:
    if not matrix.rows:
        raise EmptyMatrix("retention needs at least one worker")
    n = len(matrix.rows)
    days = matrix.days
    counts = matrix.counts()
    threshold = over_75_threshold(days)
    missed = [r for r in matrix.rows if not all(r)]
    return RetentionSummary(
        workers=n,
        pct_all_days=100.0 * sum(c == days for c in counts) / n,
        pct_over_75=100.0 * sum(c >= threshold for c in counts) / n,
        dropouts_after_first=sum(c == 1 for c in counts),
        terminal_run_workers=sum(trailing_missed(r) >= terminal_run for r in missed),
        missed_any=len(missed),
    )


# ------------------------------------------------------------- per-scheme data

def measures_completed_samples(source: Source, exclude_single: bool = True,
                               config: Optional[StudyConfig] = None) -> dict[str, list[int]]:
    """Measurements per approved worker, keyed by scheme."""
    state = as_state(source, config)
    m = CompletionMatrix.from_state(state)
    out: dict[str, list[int]] = {s.id: [] for s in state.config.schemes}
    for scheme, count in zip(m.schemes, m.counts()):
        if exclude_single and count == 1:
            continue
        out.setdefault(scheme, []).append(count)
    return out


def submission_histogram(source: Source, config: Optional[StudyConfig] = None) -> list[int]:
    """Counts of submissions per ten-minute bin of local time of day."""
    state = as_state(source, config)
    bins = [0] * N_BINS
    for records in state.measurements.values():
        for rec in records:
            h, m, _ = (int(x) for x in rec.local_time.split(":"))
            bins[(h * 60 + m) // BIN_MINUTES] += 1
    return bins


def histogram_csv(bins: Sequence[int]) -> str:
    lines = ["bin_start_minute,count"]
    lines += [f"{i * BIN_MINUTES},{c}" for i, c in enumerate(bins)]
    return "\n".join(lines) + "\n"


def render_histogram(bins: Sequence[int], width: int = 50) -> str:
    peak = max(bins) if any(bins) else 1
    out = []
    for i, c in enumerate(bins):
        minute = i * BIN_MINUTES
        bar = "#" * round(width * c / peak)
        out.append(f"{minute // 60:02d}:{minute % 60:02d} {c:6d} {bar}".rstrip())
    return "\n".join(out) + "\n"


def spike_ratio(bins: Sequence[int], index: int, exclude: Sequence[int] = ()) -> float:
    """Bin ``index`` divided by the median of every bin not listed in ``exclude``."""
    skip = set(exclude) | {index}
    rest = [c for i, c in enumerate(bins) if i not in skip]
    med = statistics.median(rest)
    if med == 0:
        return float("inf") if bins[index] else 0.0
    return bins[index] / med


# -------------------------------------------------------------- test battery

@dataclass(frozen=True)
class BatteryRow:
    variable: str
    test: str
    scheme_1: str
    scheme_2: str
    n_1: int
    n_2: int
    result: TestResult

    @property
    def comparison(self) -> str:
        return f"{self.scheme_1} vs {self.scheme_2}"


def test_battery(source: Source, variant: str = "welch", pairs=DEFAULT_PAIRS,
                 config: Optional[StudyConfig] = None) -> list[BatteryRow]:
    """The four scheme comparisons on drop-out, measures completed and full completion."""
    matrix = CompletionMatrix.from_state(source, config)
    days = matrix.days
    groups = {s: matrix.subset(s).counts() for s in dict.fromkeys(matrix.schemes)}
    rows: list[BatteryRow] = []

    def add(variable, test, a, b, na, nb, result):
        rows.append(BatteryRow(variable, test, a, b, na, nb, result))

    present = [(a, b) for a, b in pairs if groups.get(a) and groups.get(b)]
    for a, b in present:
        ca, cb = groups[a], groups[b]
        add("drop out after first", "two-proportion z, two-sided", a, b, len(ca), len(cb),
            two_proportion_z(sum(c == 1 for c in ca), len(ca), sum(c == 1 for c in cb), len(cb)))
    for alternative, label in (("two_sided", f"{variant} t, two-sided"), ("greater", f"{variant} t, 1 > 2")):
        for a, b in present:
            xa = [c for c in groups[a] if c != 1]
            xb = [c for c in groups[b] if c != 1]
            if len(xa) < 2 or len(xb) < 2:
                continue
            add("measures completed", label, a, b, len(xa), len(xb), t_test(xa, xb, alternative, variant))
    for a, b in present:
        ca, cb = groups[a], groups[b]
        add("completed every day", "two-proportion z, 1 > 2", a, b, len(ca), len(cb),
            two_proportion_z(sum(c == days for c in ca), len(ca), sum(c == days for c in cb), len(cb),
                             "greater"))
    return rows


# keep pytest from collecting the battery as a test function
test_battery.__test__ = False


def battery_csv(rows: Sequence[BatteryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variable", "comparison", "variant", "n_1", "n_2", "statistic", "p_value"])
    for r in rows:
        w.writerow([r.variable, r.comparison, r.test, r.n_1, r.n_2,
                    f"{r.result.statistic:.6f}", f"{r.result.p_value:.6f}"])
    return buf.getvalue()


def render_battery(rows: Sequence[BatteryRow]) -> str:
    out = [f"{'variable':<22}{'test':<30}{'pair':<10}{'n':>9}{'stat':>9}{'p':>8}  5%  10%"]
    for r in rows:
        p = r.result.p_value
        out.append(f"{r.variable:<22}{r.test:<30}{r.comparison:<10}{f'{r.n_1}/{r.n_2}':>9}"
                   f"{r.result.statistic:>9.3f}{p:>8.3f}  {'*' if p < 0.05 else '-'}   "
                   f"{'*' if p < 0.10 else '-'}")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------- heatmap

def heatmap_pbm(matrix: CompletionMatrix, scale: int = 4) -> str:
    """Plain PBM (P1): one ``scale``-sized square per cell, black where a day was missed."""
    width, height = matrix.days * scale, len(matrix.rows) * scale
    lines = ["P1", f"{width} {height}"]
    for row in matrix.rows:
        line = " ".join(("0" if done else "1") for done in row for _ in range(scale))
        lines.extend([line] * scale)
    return "\n".join(lines) + "\n"


def heatmap_text(matrix: CompletionMatrix) -> str:
    out = []
    for worker, scheme, row in zip(matrix.workers, matrix.schemes, matrix.rows):
        out.append(f"{worker:<12}{scheme:<4}{''.join('#' if d else '.' for d in row)}")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ payments

@dataclass(frozen=True)
class PaymentRow:
    worker_id: str
    scheme: str
    measurements: int
    paid: int
    expected: int

    @property
    def balanced(self) -> bool:
        return self.paid == self.expected


def payment_rows(source: Source, config: Optional[StudyConfig] = None) -> list[PaymentRow]:
    """Per-worker ledger total next to what the scheme says they should have earned."""
    state = as_state(source, config)
    cfg = state.config
    paid: dict[str, int] = {}
    for e in state.ledger:
        if e.kind in (HIT_PAYMENT, BONUS):
            paid[e.worker_id] = paid.get(e.worker_id, 0) + e.amount
    out = []
    for p in sorted(state.participants.values(), key=lambda p: p.worker_id or ""):
        if p.worker_id is None:
            continue
        n = p.measurement_count
        expected = cumulative_pay(cfg.scheme(p.scheme_id), n, cfg) if n else 0
        out.append(PaymentRow(p.worker_id, p.scheme_id, n, paid.get(p.worker_id, 0), expected))
    return out


def render_payments(rows: Sequence[PaymentRow]) -> str:
    by_scheme: dict[str, list[PaymentRow]] = {}
    for r in rows:
        by_scheme.setdefault(r.scheme, []).append(r)
    out = [f"{'scheme':<8}{'workers':>8}{'measures':>10}{'paid':>12}{'expected':>12}{'unbalanced':>12}"]
    for scheme in sorted(by_scheme):
        rs = by_scheme[scheme]
        out.append(f"{scheme:<8}{len(rs):>8}{sum(r.measurements for r in rs):>10}"
                   f"{format_cents(sum(r.paid for r in rs)):>12}{format_cents(sum(r.expected for r in rs)):>12}"
                   f"{sum(not r.balanced for r in rs):>12}")
    return "\n".join(out) + "\n"


def payments_csv(rows: Sequence[PaymentRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["worker_id", "scheme", "measurements", "paid_cents", "expected_cents"])
    for r in rows:
        w.writerow([r.worker_id, r.scheme, r.measurements, r.paid, r.expected])
    return buf.getvalue()


def ledger_mirror_csv(source: Source, config: Optional[StudyConfig] = None) -> str:
    state = as_state(source, config)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["worker_id", "kind", "amount_cents", "at", "idempotency_key"])
    for e in state.ledger:
        w.writerow([e.worker_id, e.kind, e.amount, e.at.isoformat(), e.idempotency_key])
    return buf.getvalue()

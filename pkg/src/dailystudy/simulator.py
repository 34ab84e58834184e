"""Seeded behavioural model of study workers, driven through the real service.

Each simulated worker gets an independent random substream spawned from the
master seed. Every worker-day consumes exactly :data:`DRAWS_PER_DAY`
uniforms whatever the outcome, so two runs that differ only in one
parameter see the same random numbers day by day. That is what makes the
"more base completion never means fewer measurements" property hold.
"""

from __future__ import annotations

import enum
import heapq
import random
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from datetime import datetime, time, timedelta, timezone
from itertools import accumulate
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .config import StudyConfig, read_key_values
from .domain import (
    NotificationKind,
    NotificationState,
    at_local,
    day_date,
    local_midnight,
    raw_study_day,
    zone,
)
from .errors import ConfigError, DuplicateDay
from .gateway import FaultInjector
from .harness import Harness, make_harness
from .notifications import notification_id

DRAWS_PER_DAY = 8
REMINDER_WINDOW_S = 600

_MORNING = NotificationKind.MORNING
_EVENING = NotificationKind.EVENING_CONDITIONAL
_REENGAGE = NotificationKind.REENGAGEMENT

# Mostly US zones with a few European ones, UTC-8 to UTC+1 in winter.
DEFAULT_TIMEZONES: tuple[tuple[str, float], ...] = (
    ("America/Los_Angeles", 0.22),
    ("America/Denver", 0.08),
    ("America/Chicago", 0.22),
    ("America/New_York", 0.30),
    ("Europe/London", 0.12),
    ("Etc/GMT-1", 0.06),
)

# Relative weight of unprompted completions per local hour: low overnight,
# flat while awake.
DEFAULT_DIURNAL: tuple[float, ...] = (0.15,) * 7 + (1.0,) * 17


@dataclass(frozen=True)
class BehaviorProfile:
    """How a simulated worker behaves. Defaults come from ``dailystudy.calibrate``."""

    p_abandon_after_first: float = 0.098
    base_daily_completion: float = 0.861
    notification_responsiveness: float = 0.197
    # probability of quitting for good, indexed by the current run of missed
    # days; the last entry applies to every longer run
    hazard: tuple[float, ...] = (0.0, 0.034, 0.077, 0.267)
    scheme_sensitivity: Mapping[str, float] = field(
        default_factory=lambda: {"HI": 1.03, "HC": 1.0, "LC": 1.0})
    diurnal_profile: tuple[float, ...] = DEFAULT_DIURNAL

    def __post_init__(self) -> None:
        for name in ("p_abandon_after_first", "base_daily_completion", "notification_responsiveness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if not self.hazard or any(not 0.0 <= h <= 1.0 for h in self.hazard):
            raise ConfigError("hazard values must be probabilities")
        if any(b < a for a, b in zip(self.hazard, self.hazard[1:])):
            raise ConfigError("hazard must be non-decreasing in the missed-day streak")
        if any(v < 0 for v in self.scheme_sensitivity.values()):
            raise ConfigError("scheme sensitivities must be non-negative")
        if len(self.diurnal_profile) != 24 or any(w < 0 for w in self.diurnal_profile) \
                or sum(self.diurnal_profile) <= 0:
            raise ConfigError("diurnal_profile needs 24 non-negative hourly weights")

    def terminal_hazard(self, missed_streak: int) -> float:
        return self.hazard[min(missed_streak, len(self.hazard) - 1)]

    def sensitivity(self, scheme_id: str) -> float:
        return self.scheme_sensitivity.get(scheme_id, 1.0)

    def diurnal_time(self, u: float) -> time:
        """Inverse CDF of the piecewise-uniform hourly profile."""
        cum = list(accumulate(self.diurnal_profile))
        target = u * cum[-1]
        hour = min(bisect_right(cum, target), 23)
        lo = cum[hour - 1] if hour else 0.0
        frac = (target - lo) / self.diurnal_profile[hour] if self.diurnal_profile[hour] else 0.0
        secs = min(int(frac * 3600), 3599)
        return time(hour, secs // 60, secs % 60)


class Action(enum.Enum):
    COMPLETE = "complete"
    SKIP = "skip"
    DROP = "drop"


@dataclass(frozen=True)
class DayState:
    day_index: int
    reminders: frozenset = frozenset()
    missed_streak: int = 0


@dataclass(frozen=True)
class Decision:
    action: Action
    at: Optional[time] = None
    trigger: Optional[NotificationKind] = None
    duplicate: bool = False


def _offset(t: time, seconds: int) -> time:
    total = t.hour * 3600 + t.minute * 60 + t.second + seconds
    return time(total // 3600, total % 3600 // 60, total % 60)


def worker_day_decision(profile: BehaviorProfile, day: DayState, rng: np.random.Generator,
                        rate: Optional[float] = None, duplicate_rate: float = 0.0,
                        morning: time = time(9), evening: time = time(19)) -> Decision:
    """Decide what one worker does on one study day.

    ``rate`` is the worker's own daily completion probability (base rate
    times scheme sensitivity and personal jitter); it defaults to the
    profile's base rate.
    """
    u = rng.random(DRAWS_PER_DAY)
    if u[0] < profile.terminal_hazard(day.missed_streak):
        return Decision(Action.DROP)
    rate = profile.base_daily_completion if rate is None else min(1.0, rate)
    intends = u[1] < rate
    t = profile.diurnal_time(u[4])
    dup = bool(u[7] < duplicate_rate)
    resp = profile.notification_responsiveness
    morning_kind = next((k for k in (_MORNING, _REENGAGE) if k in day.reminders), None)
    if intends and t < morning:
        return Decision(Action.COMPLETE, t, duplicate=dup)
    if morning_kind is not None and u[2] < resp:
        return Decision(Action.COMPLETE, _offset(morning, int(u[3] * REMINDER_WINDOW_S)), morning_kind, dup)
    if intends and t < evening:
        return Decision(Action.COMPLETE, t, duplicate=dup)
    if _EVENING in day.reminders and u[5] < resp:
        return Decision(Action.COMPLETE, _offset(evening, int(u[6] * REMINDER_WINDOW_S)), _EVENING, dup)
    if intends:
        return Decision(Action.COMPLETE, t, duplicate=dup)
    return Decision(Action.SKIP)


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class SimConfig:
    n_workers: Mapping[str, int] = field(default_factory=lambda: {"HI": 44, "HC": 54, "LC": 89})
    seed: int = 42
    timezones: tuple[tuple[str, float], ...] = DEFAULT_TIMEZONES
    profile: BehaviorProfile = field(default_factory=BehaviorProfile)
    jitter: float = 0.304
    duplicate_rate: float = 0.05
    start: datetime = datetime(2021, 3, 1, tzinfo=timezone.utc)
    enrollment_spread_days: int = 3
    review_delay_minutes: float = 5.0
    crowd_failure_rate: float = 0.0
    push_failure_rate: float = 0.0

    def __post_init__(self) -> None:
        if not self.n_workers or any(n < 1 for n in self.n_workers.values()):
            raise ConfigError("every scheme needs at least one simulated worker")
        if not self.timezones or any(w <= 0 for _, w in self.timezones):
            raise ConfigError("timezone weights must be positive")
        for name, _ in self.timezones:
            zone(name)
        for name in ("duplicate_rate", "crowd_failure_rate", "push_failure_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        if self.jitter < 0 or self.enrollment_spread_days < 1 or self.review_delay_minutes < 0:
            raise ConfigError("jitter, enrollment_spread_days and review_delay_minutes out of range")
        if self.start.tzinfo is None:
            raise ConfigError("start must carry a timezone")

    @property
    def total_workers(self) -> int:
        return sum(self.n_workers.values())


_PROFILE_FLOATS = ("p_abandon_after_first", "base_daily_completion", "notification_responsiveness")
_SIM_FLOATS = ("jitter", "duplicate_rate", "review_delay_minutes", "crowd_failure_rate", "push_failure_rate")


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.replace(",", " ").split())


def parse_sim_config(text: str, base: Optional[SimConfig] = None) -> SimConfig:
    """Read ``key = value`` lines; unknown keys are an error.

    Keys: ``seed``, ``workers.<SCHEME>``, ``timezones`` (``Zone:weight``
    pairs separated by commas), ``start`` (ISO 8601), the ``_SIM_FLOATS``
    names, ``enrollment_spread_days``, and ``profile.<field>`` for the
    behaviour profile (``profile.hazard`` and ``profile.diurnal_profile``
    take number lists, ``profile.sensitivity.<SCHEME>`` one number).
    """
    cfg = base or SimConfig()
    sim: dict = {}
    prof: dict = {}
    workers = dict(cfg.n_workers) if base else {}
    sens = dict(cfg.profile.scheme_sensitivity)
    try:
        for key, value in read_key_values(text).items():
            if key == "seed":
                sim["seed"] = int(value)
            elif key.startswith("workers."):
                workers[key.split(".", 1)[1]] = int(value)
            elif key == "timezones":
                pairs = []
                for item in value.split(","):
                    name, _, weight = item.strip().rpartition(":")
                    pairs.append((name, float(weight)))
                sim["timezones"] = tuple(pairs)
            elif key == "start":
                sim["start"] = datetime.fromisoformat(value)
            elif key == "enrollment_spread_days":
                sim[key] = int(value)
            elif key in _SIM_FLOATS:
                sim[key] = float(value)
            elif key.startswith("profile.sensitivity."):
                sens[key.rsplit(".", 1)[1]] = float(value)
            elif key.startswith("profile."):
                name = key.split(".", 1)[1]
                if name in _PROFILE_FLOATS:
                    prof[name] = float(value)
                elif name in ("hazard", "diurnal_profile"):
                    prof[name] = _floats(value)
                else:
                    raise ConfigError(f"unknown profile key {key!r}")
            else:
                raise ConfigError(f"unknown simulation key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad simulation config value: {exc}") from exc
    if workers:
        sim["n_workers"] = workers
    profile = replace(cfg.profile, scheme_sensitivity=sens, **prof)
    return replace(cfg, profile=profile, **sim)


def load_sim_config(path: str | Path) -> SimConfig:
    return parse_sim_config(Path(path).read_text())


def dump_sim_config(cfg: SimConfig) -> str:
    p = cfg.profile
    lines = [f"seed = {cfg.seed}"]
    lines += [f"workers.{s} = {n}" for s, n in cfg.n_workers.items()]
    lines.append("timezones = " + ", ".join(f"{name}:{w:g}" for name, w in cfg.timezones))
    lines.append(f"start = {cfg.start.isoformat()}")
    lines.append(f"enrollment_spread_days = {cfg.enrollment_spread_days}")
    lines += [f"{name} = {getattr(cfg, name):g}" for name in _SIM_FLOATS]
    lines += [f"profile.{name} = {getattr(p, name):g}" for name in _PROFILE_FLOATS]
    lines.append("profile.hazard = " + " ".join(f"{h:g}" for h in p.hazard))
    lines.append("profile.diurnal_profile = " + " ".join(f"{h:g}" for h in p.diurnal_profile))
    lines += [f"profile.sensitivity.{s} = {v:g}" for s, v in p.scheme_sensitivity.items()]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ worker set-up

@dataclass(frozen=True)
class WorkerPlan:
    index: int
    worker_id: str
    device_id: str
    scheme_id: str
    timezone: str
    onboard_at: datetime
    rate: float
    abandons: bool


def worker_streams(cfg: SimConfig) -> list[np.random.Generator]:
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.total_workers)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def plan_worker(cfg: SimConfig, index: int, scheme_id: str, rng: np.random.Generator) -> WorkerPlan:
    """Draw a worker's fixed traits; always consumes the same number of draws."""
    u_tz, u_day, u_time, u_abandon = rng.random(4)
    z = rng.standard_normal()
    names = [n for n, _ in cfg.timezones]
    cum = list(accumulate(w for _, w in cfg.timezones))
    tz = names[min(bisect_right(cum, u_tz * cum[-1]), len(names) - 1)]
    start_day = cfg.start.astimezone(zone(tz)).date() + timedelta(days=1 + int(u_day * cfg.enrollment_spread_days))
    # on-boarding happens between 08:00 and 22:00 local so review finishes the same day
    secs = 8 * 3600 + int(u_time * 14 * 3600)
    onboard = at_local(start_day, time(secs // 3600, secs % 3600 // 60, secs % 60), tz)
    p = cfg.profile
    rate = p.base_daily_completion * p.sensitivity(scheme_id) * float(np.exp(cfg.jitter * z))
    return WorkerPlan(index, f"W{index:04d}", f"D{index:04d}", scheme_id, tz, onboard,
                      min(1.0, rate), bool(u_abandon < p.p_abandon_after_first))


def plan_workers(cfg: SimConfig) -> tuple[list[WorkerPlan], list[np.random.Generator]]:
    streams = worker_streams(cfg)
    plans = []
    i = 0
    for scheme_id, n in cfg.n_workers.items():
        for _ in range(n):
            plans.append(plan_worker(cfg, i, scheme_id, streams[i]))
            i += 1
    return plans, streams


# --------------------------------------------------------------- fast model

def fast_worker_row(plan: WorkerPlan, rng: np.random.Generator, cfg: SimConfig,
                    study: StudyConfig) -> list[bool]:
    """Completion row for one worker without running the service.

    Mirrors the reminder rules of the scheduler: a measurement on day d-1
    queues a morning and an evening reminder for day d; with re-engagement
    on, the first missed day after a measurement queues one for the next
    morning.
    """
    days = study.duration_days
    row = [True] + [False] * (days - 1)
    if plan.abandons:
        return row
    streak = 0
    for d in range(2, days + 1):
        reminders: set = set()
        if row[d - 2]:
            reminders = {_MORNING, _EVENING}
        elif study.reengagement_enabled and d >= 3 and row[d - 3]:
            reminders = {_REENGAGE}
        dec = worker_day_decision(cfg.profile, DayState(d, frozenset(reminders), streak), rng,
                                  plan.rate, cfg.duplicate_rate, study.morning_reminder,
                                  study.evening_reminder)
        if dec.action is Action.DROP:
            break
        if dec.action is Action.COMPLETE:
            row[d - 1] = True
            streak = 0
        else:
            streak += 1
    return row


def fast_matrix(cfg: SimConfig, study: Optional[StudyConfig] = None):
    """Completion matrix from the fast model, in the service's worker order."""
    from .analytics import CompletionMatrix

    study = study or StudyConfig()
    plans, streams = plan_workers(cfg)
    rows = {p.worker_id: fast_worker_row(p, s, cfg, study) for p, s in zip(plans, streams)}
    order = {s.id: i for i, s in enumerate(study.schemes)}
    plans.sort(key=lambda p: (order.get(p.scheme_id, len(order)), p.worker_id))
    return CompletionMatrix(tuple(p.worker_id for p in plans), tuple(p.scheme_id for p in plans),
                            tuple(tuple(rows[p.worker_id]) for p in plans))


# --------------------------------------------------------- full simulation

@dataclass
class SimResult:
    harness: Harness
    plans: list[WorkerPlan]
    duplicates_attempted: int = 0
    duplicates_rejected: int = 0
    missed_reminders: int = 0

    @property
    def service(self):
        return self.harness.service

    @property
    def events(self):
        return self.harness.service.log.events


class _Sim:
    def __init__(self, cfg: SimConfig, study: StudyConfig, log_path=None):
        self.cfg = cfg
        self.study = study
        self.plans, self.streams = plan_workers(cfg)
        schemes = {p.device_id: p.scheme_id for p in self.plans}
        crowd_faults = FaultInjector(cfg.crowd_failure_rate, seed=cfg.seed ^ 0xC0)
        push_faults = FaultInjector(cfg.push_failure_rate, seed=cfg.seed ^ 0x9C)
        self.h = make_harness(study, start=cfg.start, crowd_faults=crowd_faults, push_faults=push_faults,
                              log_path=log_path, code_seed=cfg.seed,
                              allocator=lambda device_id, state: schemes[device_id])
        self.result = SimResult(self.h, self.plans)
        self._queue: list = []
        self._n = 0
        self._streak = [0] * len(self.plans)
        self._code: dict[int, str] = {}
        self._payload_rng = random.Random(cfg.seed)

    def push(self, when: datetime, index: int, action: str, *args) -> None:
        self._n += 1
        heapq.heappush(self._queue, (when, self._n, index, action, args))

    def run(self) -> SimResult:
        for p in self.plans:
            self.push(p.onboard_at, p.index, "onboard")
        while self._queue:
            when, _, index, action, args = heapq.heappop(self._queue)
            self.h.advance_to(when)
            getattr(self, "_" + action)(self.plans[index], *args)
        last = max(p.onboard_at for p in self.plans) + timedelta(days=self.study.duration_days + 2)
        self.h.advance_to(last)
        self._settle()
        return self.result

    def _settle(self) -> None:
        # let transient gateway failures drain before reporting
        svc = self.h.service
        for _ in range(1000):
            if not svc.outbox_size and not svc.scheduler.has_retries:
                return
            self.h.advance_to(self.h.clock.now() + timedelta(minutes=1))

    # ------------------------------------------------------------ actions

    def _onboard(self, plan: WorkerPlan) -> None:
        self._code[plan.index] = self.h.enroll_device(plan.device_id, plan.timezone, self._payload_rng)
        self.push(plan.onboard_at + timedelta(minutes=2), plan.index, "submit_code")

    def _submit_code(self, plan: WorkerPlan) -> None:
        self.h.submit_code(plan.worker_id, self._code.pop(plan.index))
        self.push(self.h.clock.now() + timedelta(minutes=self.cfg.review_delay_minutes), plan.index, "review")

    def _review(self, plan: WorkerPlan) -> None:
        svc = self.h.service
        svc.enrollment.process_submitted_assignments()
        p = svc.state.participant_by_worker(plan.worker_id)
        if p is None:
            # the platform listing failed; the requester retries shortly
            self.push(self.h.clock.now() + timedelta(minutes=1), plan.index, "review")
            return
        if not plan.abandons:
            self.push(local_midnight(day_date(p, 2), p.timezone), plan.index, "plan_day", 2)

    def _plan_day(self, plan: WorkerPlan, day: int) -> None:
        state = self.h.state
        p = state.participant_by_worker(plan.worker_id)
        if not p.state.participating:
            return
        w = plan.worker_id
        reminders = frozenset(
            k for k in NotificationKind
            if (n := state.notifications.get(notification_id(w, day, k))) is not None
            and n.state is NotificationState.PENDING
        )
        dec = worker_day_decision(self.cfg.profile, DayState(day, reminders, self._streak[plan.index]),
                                  self.streams[plan.index], plan.rate, self.cfg.duplicate_rate,
                                  self.study.morning_reminder, self.study.evening_reminder)
        if dec.action is Action.DROP:
            return
        if dec.action is Action.COMPLETE:
            when = at_local(day_date(p, day), dec.at, p.timezone)
            self.push(when, plan.index, "measure", day, dec.trigger)
            if dec.duplicate:
                self.push(when + timedelta(seconds=90), plan.index, "duplicate", day)
        else:
            self._streak[plan.index] += 1
        if day < self.study.duration_days:
            self.push(local_midnight(day_date(p, day + 1), p.timezone), plan.index, "plan_day", day + 1)

    def _measure(self, plan: WorkerPlan, day: int, trigger: Optional[NotificationKind]) -> None:
        if trigger is not None:
            n = self.h.state.notifications.get(notification_id(plan.worker_id, day, trigger))
            if n is None or n.state is not NotificationState.SENT:
                # the reminder never reached the phone
                self.result.missed_reminders += 1
                self._streak[plan.index] += 1
                return
        self.h.measure(plan.worker_id, self._payload_rng)
        self._streak[plan.index] = 0

    def _duplicate(self, plan: WorkerPlan, day: int) -> None:
        p = self.h.state.participant_by_worker(plan.worker_id)
        if not p.state.participating or raw_study_day(p, self.h.clock.now()) != day:
            return  # a resubmission after midnight would be a fresh day
        self.result.duplicates_attempted += 1
        try:
            self.h.measure(plan.worker_id, self._payload_rng)
        except DuplicateDay:
            self.result.duplicates_rejected += 1


def simulate_study(cfg: Optional[SimConfig] = None, study: Optional[StudyConfig] = None,
                   log_path: Optional[str | Path] = None) -> SimResult:
    """Run every simulated worker through the real service on a virtual clock."""
    return _Sim(cfg or SimConfig(), study or StudyConfig(), log_path).run()

"""In-process wiring of the service with a virtual clock and mock gateways.

Used by the simulator, the tests and the CLI's ``simulate`` command.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .clock import VirtualClock
from .config import StudyConfig
from .eventlog import EventLog
from .gateway import FaultInjector, MockCrowdGateway, MockPushGateway
from .service import Allocator, StudyService, balanced_allocator

DEFAULT_START = datetime(2021, 3, 1, tzinfo=timezone.utc)

CONSENT = {"toggles": [True, True, True, True]}
DEMOGRAPHICS = {"country": "US", "dominant_hand": "right"}
DEVICE_MODEL = "iPhone12,1"


def measurement_payload(rng: Optional[random.Random] = None, required: int = 5,
                        wrong: int = 0, duration: float = 241.44) -> dict:
    """A client payload with ``required`` correct rounds per sub-task.

    ``wrong`` incorrect rounds are interleaved before the final correct one.
    """
    rng = rng or random.Random(0)
    out = {"duration": duration}
    for name in ("scroll_rounds", "swipe_rounds"):
        results = [True] * (required - 1) + [False] * wrong
        rng.shuffle(results)
        results.append(True)
        out[name] = [
            {"round_index": i, "parameters": {"target": i, "variant": rng.randrange(1000)},
             "answer_correct": ok}
            for i, ok in enumerate(results)
        ]
    return out


@dataclass
class Harness:
    service: StudyService
    clock: VirtualClock
    crowd: MockCrowdGateway
    push: MockPushGateway

    @property
    def state(self):
        return self.service.state

    def enroll_device(self, device_id: str, tz: str, rng: Optional[random.Random] = None) -> str:
        """Run the in-app on-boarding for a device and return its code."""
        svc = self.service
        svc.enrollment.start(device_id, CONSENT, DEMOGRAPHICS, DEVICE_MODEL, tz)
        return svc.enrollment.finish(device_id, measurement_payload(rng, svc.config.required_correct_rounds)).code

    def submit_code(self, worker_id: str, code: str) -> str:
        return self.crowd.submit_assignment(self.state.hit_id, worker_id, code)

    def enroll(self, worker_id: str, device_id: str, tz: str = "America/New_York",
               rng: Optional[random.Random] = None) -> str:
        """Full enrollment: on-boarding, code submission and review."""
        code = self.enroll_device(device_id, tz, rng)
        aid = self.submit_code(worker_id, code)
        return self.service.enrollment.validate_submission(worker_id, aid, code)

    def measure(self, worker_id: str, rng: Optional[random.Random] = None):
        return self.service.pipeline.submit_measurement(
            worker_id, measurement_payload(rng, self.service.config.required_correct_rounds))

    def advance_to(self, when: datetime) -> None:
        """Move the clock to ``when``, running every tick that falls due on the way."""
        svc = self.service
        while True:
            nd = svc.next_due()
            if nd is None or nd > when:
                break
            svc.tick(max(nd, self.clock.now()))
        if when > self.clock.now():
            svc.tick(when)


def make_harness(config: Optional[StudyConfig] = None, start: datetime = DEFAULT_START,
                 crowd_faults: Optional[FaultInjector] = None,
                 push_faults: Optional[FaultInjector] = None,
                 log_path: Optional[str | Path] = None, fsync: bool = False,
                 code_seed: int = 0, publish: bool = True,
                 allocator: Optional[Allocator] = None) -> Harness:
    config = config or StudyConfig()
    clock = VirtualClock(start)
    crowd = MockCrowdGateway(clock, crowd_faults)
    push = MockPushGateway(clock, push_faults)
    svc = StudyService(config, clock, crowd, push, EventLog(log_path, fsync=fsync),
                       code_rng=random.Random(code_seed), allocator=allocator or balanced_allocator)
    h = Harness(svc, clock, crowd, push)
    if publish:
        _publish(h)
    return h


def _publish(h: Harness) -> None:
    # the HIT must exist even if the first create_hit call hits an injected fault
    while h.state.hit_id is None:
        try:
            h.service.enrollment.publish_enrollment_hit()
        except Exception:  # noqa: BLE001 - GatewayError, retried
            continue

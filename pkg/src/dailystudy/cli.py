"""Command-line entry point: ``dailystudy <command>``.

Every command works on one study directory (``--home``, or the
``DAILYSTUDY_HOME`` environment variable, or ``./study``).
"""

from __future__ import annotations

import argparse
import logging
import sys
import threading
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import analytics as A
from .config import StudyConfig, load_config
from .errors import StudyError
from .payments import format_pay_table
from .store import HOME_ENV, StudyStore

log = logging.getLogger("dailystudy")

REPORTS = ("retention", "payments", "histogram", "tests", "heatmap")


def parse_workers(text: str) -> dict[str, int]:
    """``HI:44,HC:54,LC:89`` -> {"HI": 44, ...}"""
    out = {}
    for item in text.split(","):
        scheme, sep, n = item.strip().partition(":")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected SCHEME:COUNT, got {item!r}")
        try:
            count = int(n)
        except ValueError:
            raise argparse.ArgumentTypeError(f"worker count for {scheme} is not an integer") from None
        if count < 0:
            raise argparse.ArgumentTypeError(f"worker count for {scheme} is negative")
        out[scheme] = count
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dailystudy", description="Run and analyse a paid daily-measurement study.")
    ap.add_argument("--home", type=Path, help=f"study directory (default: ${HOME_ENV} or ./study)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="validate a study config and install it")
    p.add_argument("config", nargs="?", type=Path, help="key = value config file (default settings if omitted)")
    p.add_argument("--force", action="store_true", help="replace an existing config")

    p = sub.add_parser("serve", help="run the HTTP service and the reminder scheduler")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--tick", type=float, default=30.0, help="seconds between scheduler ticks")
    p.add_argument("--gateway", choices=("mock", "none"), default="mock",
                   help="crowd platform: in-process mock, or none (every call fails and is retried)")

    p = sub.add_parser("simulate", help="simulate workers through the service on a virtual clock")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=parse_workers, help="e.g. HI:44,HC:54,LC:89")
    p.add_argument("--sim-config", type=Path, help="simulation key = value file")

    p = sub.add_parser("report", help="print an analytics report")
    p.add_argument("kind", choices=REPORTS)
    p.add_argument("--variant", choices=("welch", "pooled"), default="welch")
    p.add_argument("--format", choices=("text", "pbm"), default="text", help="heatmap output format")

    p = sub.add_parser("export", help="write CSV artifacts")
    p.add_argument("--format", choices=("csv",), default="csv")
    p.add_argument("--out", type=Path, help="output directory (default: <home>/export)")

    sub.add_parser("paytable", help="print cumulative and hourly pay per scheme")
    sub.add_parser("compact", help="snapshot the state and archive the log behind it")
    return ap


# -------------------------------------------------------------------- commands

def cmd_init(store: StudyStore, args) -> int:
    config = load_config(args.config) if args.config else StudyConfig()
    store.init(config, force=args.force)
    print(f"initialised study in {store.root}")
    return 0


def cmd_serve(store: StudyStore, args) -> int:
    import uvicorn

    from .clock import SystemClock
    from .gateway import MockCrowdGateway, MockPushGateway, UnavailableCrowdGateway
    from .http import create_app
    from .service import StudyService

    config = store.config()
    snapshot = store.snapshot(config)
    clock = SystemClock()
    crowd = MockCrowdGateway(clock) if args.gateway == "mock" else UnavailableCrowdGateway()
    svc = StudyService(config, clock, crowd, MockPushGateway(clock), store.open_log(snapshot), snapshot=snapshot)
    if svc.state.hit_id is None:
        try:
            svc.enrollment.publish_enrollment_hit()
        except StudyError as exc:
            log.warning("enrollment HIT not published yet: %s", exc)
    stop = threading.Event()

    def ticker():
        while not stop.wait(args.tick):
            try:
                svc.tick()
            except StudyError:
                log.exception("scheduler tick failed")

    threading.Thread(target=ticker, name="scheduler", daemon=True).start()
    try:
        uvicorn.run(create_app(svc), host=args.host, port=args.port)
    finally:
        stop.set()
        svc.log.close()
    return 0


def cmd_simulate(store: StudyStore, args) -> int:
    from .simulator import SimConfig, load_sim_config, simulate_study

    cfg = load_sim_config(args.sim_config) if args.sim_config else SimConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.workers:
        cfg = replace(cfg, n_workers=args.workers)
    if store.config_path.exists():
        study = store.config()
    else:
        study = StudyConfig()
        store.init(study)
    result = simulate_study(cfg, study)
    store.write_events(result.events)
    state = result.service.state
    print(f"seed {cfg.seed}: {len(result.events)} events, {len(state.worker_devices)} workers -> {store.log_path}")
    print(A.retention_summary(A.CompletionMatrix.from_state(state)).render(), end="")
    return 0


def render_report(kind: str, state, variant: str = "welch", fmt: str = "text") -> str:
    """Every report is a pure function of the replayed state."""
    if kind == "retention":
        return A.retention_summary(A.CompletionMatrix.from_state(state)).render()
    if kind == "payments":
        return A.render_payments(A.payment_rows(state))
    if kind == "histogram":
        return A.render_histogram(A.submission_histogram(state))
    if kind == "tests":
        return A.render_battery(A.test_battery(state, variant))
    matrix = A.CompletionMatrix.from_state(state)
    return A.heatmap_pbm(matrix) if fmt == "pbm" else A.heatmap_text(matrix)


def cmd_report(store: StudyStore, args) -> int:
    sys.stdout.write(render_report(args.kind, store.load_state(), args.variant, args.format))
    return 0


def export_files(state) -> dict[str, str]:
    matrix = A.CompletionMatrix.from_state(state)
    return {
        "completion_matrix.csv": matrix.to_csv(),
        "histogram.csv": A.histogram_csv(A.submission_histogram(state)),
        "tests.csv": A.battery_csv(A.test_battery(state)),
        "payments.csv": A.payments_csv(A.payment_rows(state)),
        "ledger.csv": A.ledger_mirror_csv(state),
        "heatmap.pbm": A.heatmap_pbm(matrix),
    }


def cmd_export(store: StudyStore, args) -> int:
    out = args.out or store.root / "export"
    out.mkdir(parents=True, exist_ok=True)
    for name, body in export_files(store.load_state()).items():
        (out / name).write_text(body)
        print(out / name)
    return 0


def cmd_paytable(store: StudyStore, args) -> int:
    config = store.config() if store.config_path.exists() else StudyConfig()
    sys.stdout.write(format_pay_table(config))
    return 0


def cmd_compact(store: StudyStore, args) -> int:
    head = store.compact()
    print(f"snapshot at seq {head} -> {store.snapshot_path}")
    return 0


COMMANDS = {
    "init": cmd_init, "serve": cmd_serve, "simulate": cmd_simulate, "report": cmd_report,
    "export": cmd_export, "paytable": cmd_paytable, "compact": cmd_compact,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    store = StudyStore(args.home)
    try:
        return COMMANDS[args.command](store, args)
    except (StudyError, OSError) as exc:
        print(f"dailystudy {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

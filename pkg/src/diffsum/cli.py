"""Command-line interface.

Subcommands: plan (parameter arithmetic), simulate (one Monte Carlo run),
reproduce-table (the delta error-rate table), audit (interactive terminal
audit writing the same event logs as the service), serve (HTTP API + UI).

Exit codes follow the usual discipline: 0 success, 1 runtime failure,
2 usage error.  Randomized subcommands take --seed and are reproducible
under it; report files never embed wall-clock timings, so identical seeds
give identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
import time
from typing import Sequence

from .bravo import bravo_expected_size
from .core import (
    AcceptOutcome,
    AuditParams,
    Continue,
    Decision,
    FullCountComplete,
    RecommendCutover,
    choose_c,
    decimal_digits,
    expected_stop_size,
    max_error_rate,
)
from .sampling import BallotManifest, SeededRng, parse_schedule
from .session import (
    AuditSessionError,
    create_session,
    read_events,
    replay,
    write_events,
)
from .simulator import (
    BravoRule,
    DiffSumRule,
    SimulationConfig,
    delta_table_csv,
    reproduce_delta_table,
    run_simulation,
)


def _write_or_print(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _figure_path(output: str | None, explicit: str | None) -> str | None:
    if explicit:
        return explicit
    if output:
        stem, _ = os.path.splitext(output)
        return stem + ".png"
    return None


def format_decision(decision: Decision) -> str:
    if isinstance(decision, Continue):
        return "continue sampling"
    if isinstance(decision, AcceptOutcome):
        return f"ACCEPT reported outcome: winner {decision.winner}"
    if isinstance(decision, RecommendCutover):
        return f"RECOMMEND CUTOVER to full hand count ({decision.reason})"
    if isinstance(decision, FullCountComplete):
        who = "tie" if decision.winner is None else f"winner {decision.winner}"
        return f"FULL COUNT COMPLETE: {who}"
    return str(decision)


# -- plan ----------------------------------------------------------------------


def cmd_plan(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.n < 1:
        parser.error("--n must be a positive integer")
    if not 0 <= args.delta <= 4:
        parser.error("--delta must be in 0..4")
    if args.margin is not None and not 0 < args.margin <= 1:
        parser.error("--margin must be in (0, 1]")
    d = decimal_digits(args.n)
    c = choose_c(args.n, args.delta)
    risk = max_error_rate(args.delta)
    print(f"electorate size n        {args.n}")
    print(f"decimal digits d         {d}")
    print(f"delta                    {args.delta}")
    print(f"threshold c = d + delta  {c}")
    print(f"worst-case error rate    {risk:.2f}")
    if args.margin is not None:
        m = args.margin
        print(f"expected stop sizes at margin m = {m}:")
        print(f"  DiffSum  c/m^2             {expected_stop_size(c, m):10.1f} ballots")
        print(
            f"  BRAVO    2*ln(1/a)/m^2     {bravo_expected_size(risk, m):10.1f} ballots"
            f"   (risk limit {risk})"
        )
    return 0


# -- simulate -------------------------------------------------------------------


def _parse_counts(text: str) -> tuple[tuple[str, int], ...]:
    pairs = []
    for chunk in text.split(","):
        name, _, value = chunk.partition("=")
        if not name or not value:
            raise ValueError(f"bad counts entry {chunk!r}; expected NAME=COUNT")
        pairs.append((name.strip(), int(value)))
    return tuple(pairs)


def _config_from_flags(args: argparse.Namespace, parser: argparse.ArgumentParser) -> SimulationConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            return SimulationConfig.from_dict(json.load(fh))
    if (args.margin is None) == (args.counts is None):
        parser.error("exactly one of --margin or --counts is required")
    if args.rule == "diffsum":
        if (args.c is None) == (args.delta is None):
            parser.error("diffsum rule needs exactly one of --c or --delta")
        rule: DiffSumRule | BravoRule = DiffSumRule(c=args.c, delta=args.delta)
    else:
        if args.alpha is None or args.p_w is None:
            parser.error("bravo rule needs --alpha and --p-w")
        rule = BravoRule(alpha=args.alpha, reported_winner_share=args.p_w)
    try:
        return SimulationConfig(
            n=args.n,
            rule=rule,
            margin=args.margin,
            counts=_parse_counts(args.counts) if args.counts else None,
            reported_winner=args.reported_winner,
            trials=args.trials,
            master_seed=args.seed,
            schedule=parse_schedule(args.schedule),
            initial_sample_size=args.initial_size,
            cutover_enabled=args.cutover,
        )
    except ValueError as exc:
        parser.error(str(exc))
        raise  # unreachable; parser.error exits


def cmd_simulate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = _config_from_flags(args, parser)
    report = run_simulation(config, workers=args.workers)
    if args.format == "csv":
        text = report.CSV_HEADER + "\n" + report.csv_row() + "\n"
    else:
        text = report.to_json()
    _write_or_print(text, args.output)
    figure = _figure_path(args.output, args.figure)
    if figure and not args.no_figure:
        from . import figures

        figures.render_stop_size_histogram(report, figure)
        print(f"figure written to {figure}", file=sys.stderr)
    print(
        f"{config.trials} trials in {report.duration_seconds:.1f}s "
        f"(rate {report.wrong_acceptance_rate:.4f}, mean stop {report.mean_stopped_at:.1f})",
        file=sys.stderr,
    )
    return 0


# -- reproduce-table -------------------------------------------------------------


def cmd_reproduce_table(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    started = time.perf_counter()
    rows = reproduce_delta_table(
        n_grid=tuple(args.n) if args.n else (10_000,),
        delta_grid=tuple(range(0, 5)),
        trials=args.trials,
        master_seed=args.seed,
        workers=args.workers,
    )
    _write_or_print(delta_table_csv(rows), args.output)
    figure = _figure_path(args.output, args.figure)
    if figure and not args.no_figure:
        from . import figures

        figures.render_delta_table_chart(rows, figure)
        print(f"figure written to {figure}", file=sys.stderr)
    for row in rows:
        print(
            f"delta={row.delta} c={row.c}: measured {row.wrong_acceptance_rate:.4f} "
            f"vs bound {row.bound:.2f} -> {row.verdict}",
            file=sys.stderr,
        )
    print(f"table done in {time.perf_counter() - started:.1f}s", file=sys.stderr)
    return 0


# -- audit -----------------------------------------------------------------------


def cmd_audit(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    try:
        manifest = BallotManifest.from_csv_path(args.manifest)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read manifest: {exc}")
    if args.resume:
        log_path = args.resume
        session = replay(read_events(log_path), manifest=manifest)
        flushed = len(session.events)
        print(f"resumed session {session.session_id} from {log_path}")
    else:
        if not args.candidates:
            parser.error("--candidates is required for a new audit")
        try:
            params = AuditParams(
                n=len(manifest),
                candidates=tuple(args.candidates.split(",")),
                delta=args.delta,
                c=args.c,
                initial_sample_size=args.initial_size,
            )
        except ValueError as exc:
            parser.error(str(exc))
        session = create_session(
            params,
            manifest,
            SeededRng(args.seed, args.stream_id),
            schedule=parse_schedule(args.schedule),
        )
        log_path = args.log or f"audit-{session.session_id}.events.jsonl"
        flushed = 0
        print(f"session {session.session_id}  (log: {log_path})")

    def flush() -> None:
        nonlocal flushed
        fresh = session.events[flushed:]
        if fresh:
            durable = any(e.kind in ("decision_reached", "session_closed") for e in fresh)
            write_events(log_path, fresh, fsync=durable)
            flushed = len(session.events)

    flush()
    view = session.status_view()
    print(
        f"n={view['n']}  c={view['c']}  candidates={','.join(view['candidates'])}  "
        f"risk bound={view['risk_bound']}"
    )
    if session.status != "open":
        print(format_decision(session.current_decision()))
        return 0
    print("ballots to retrieve:")
    for bid in session.pending():
        print(f"  {bid}")
    print("enter: `<ballot_id> <label>`, `<label>` (next pending ballot), or `quit`")

    while session.status == "open":
        try:
            line = input().strip()
        except EOFError:
            session.close("input ended")
            break
        if not line:
            continue
        if line in ("quit", "q"):
            session.close("operator quit")
            break
        tokens = line.split()
        if len(tokens) == 2:
            ballot_id, label = tokens
        elif len(tokens) == 1:
            pending = session.pending()
            if not pending:
                print("no pending ballots; something is off — use `quit`")
                continue
            ballot_id, label = pending[0], tokens[0]
        else:
            print("expected `<ballot_id> <label>` or `<label>`")
            continue
        before_planned = len(session.planned)
        try:
            decision = session.record_interpretation(ballot_id, label)
        except (AuditSessionError, ValueError) as exc:
            print(f"rejected: {exc}")
            continue
        flush()
        view = session.status_view()
        counts = " ".join(f"{cand}={cnt}" for cand, cnt in view["counts"].items())
        print(
            f"[{view['total_drawn']}/{view['n']}] {counts}  "
            f"(a-b)^2={view['statistic']} vs c(a+b)={view['threshold']}  "
            f"-> {format_decision(decision)}"
        )
        if len(session.planned) > before_planned:
            fresh = session.planned[before_planned:]
            print("next ballots to retrieve:")
            for bid in fresh:
                print(f"  {bid}")
    flush()
    print(format_decision(session.current_decision()))
    return 0


# -- serve -----------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    data_dir = args.data_dir or os.environ.get("DIFFSUM_DATA_DIR", "diffsum-data")
    ui_dir = args.ui_dir or os.environ.get("DIFFSUM_UI_DIR")
    if ui_dir is None and os.path.isdir(os.path.join("frontend", "dist")):
        ui_dir = os.path.join("frontend", "dist")
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        probe.bind((args.host, args.port))
    except OSError as exc:
        print(f"cannot bind {args.host}:{args.port}: {exc}", file=sys.stderr)
        return 1
    finally:
        probe.close()

    from .service import create_app
    import uvicorn

    app = create_app(data_dir, ui_dir)
    print(f"serving on http://{args.host}:{args.port}  (data: {data_dir}, ui: {ui_dir})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffsum",
        description="Ballot-polling risk-limiting audits with the DiffSum stopping rule.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="derive audit parameters and expected sample sizes")
    p.add_argument("--n", type=int, required=True, help="total ballots cast")
    p.add_argument("--delta", type=int, default=2, help="error-control increment (0..4)")
    p.add_argument("--margin", type=float, help="estimated margin for size forecasts")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run one Monte Carlo experiment")
    p.add_argument("--config", help="JSON config file (overrides the flags below)")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--margin", type=float, help="two-candidate margin; 0 is a tie")
    p.add_argument("--counts", help="explicit electorate, e.g. A=5100,B=4900")
    p.add_argument("--reported-winner", help="candidate under audit (default: first)")
    p.add_argument("--rule", choices=("diffsum", "bravo"), default="diffsum")
    p.add_argument("--c", type=int, help="diffsum threshold constant")
    p.add_argument("--delta", type=int, help="diffsum delta (c = digits(n) + delta)")
    p.add_argument("--alpha", type=float, help="bravo risk limit")
    p.add_argument("--p-w", dest="p_w", type=float, help="bravo reported winner share")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", default="per-ballot")
    p.add_argument("--initial-size", type=int, default=24)
    p.add_argument("--cutover", action="store_true", help="stop trials at the 4%% point")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--figure", help="explicit figure path (default: alongside --output)")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce-table", help="measure the delta error-rate table")
    p.add_argument("--n", type=int, action="append", default=None,
                   help="electorate size; repeatable (default 10000)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output", help="write the CSV here instead of stdout")
    p.add_argument("--figure", help="explicit figure path (default: alongside --output)")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_reproduce_table)

    p = sub.add_parser("audit", help="run a live audit in the terminal")
    p.add_argument("--manifest", required=True, help="ballot manifest CSV")
    p.add_argument("--candidates", help="comma-separated candidate ids")
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--c", type=int, default=None)
    p.add_argument("--initial-size", type=int, default=24)
    p.add_argument("--schedule", default="fixed:10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream-id", type=int, default=0)
    p.add_argument("--log", help="event log path (default: audit-<id>.events.jsonl)")
    p.add_argument("--resume", help="resume from an existing event log")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("serve", help="serve the HTTP API and web UI")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", help="session storage (env DIFFSUM_DATA_DIR)")
    p.add_argument("--ui-dir", help="built web UI assets (env DIFFSUM_UI_DIR)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, distinct from usage errors
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

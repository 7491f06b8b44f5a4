"""Operator command line: serve, chat, validate-kb, simulate, analyze, replay.

Exit codes: 0 success, 1 validation/integrity failure, 2 input error,
3 environment error.
"""

from __future__ import annotations

import argparse
import socket
import sys
from collections import Counter
from pathlib import Path

from . import kb as kbmod
from .clock import SystemClock
from .errors import CorruptLog, MentigoError, ParseError, ValidationError
from .evalkit import (
    EngagementReport,
    EpisodeResult,
    compute_engagement,
    export_csv_for,
    load_persona,
    run_episode,
)
from .gateway import (
    Backend,
    BackendConfig,
    ScriptedBackend,
    live_config_from_env,
    load_script_config,
)
from .kb import load_knowledge_base, validate_alias_table
from .session import SessionStore, read_event_log, replay, seeded_id_factory

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2
EXIT_ENV = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mentigo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, backend: bool = True) -> None:
        p.add_argument("--kb", default=None, help="knowledge base JSON path (default: bundled fixture)")
        if backend:
            p.add_argument("--backend", choices=("live", "scripted"), default="scripted")
            p.add_argument("--script", default=None, help="scripted backend config JSON")

    p_serve = sub.add_parser("serve", help="run the HTTP/WebSocket session service")
    common(p_serve)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--log-dir", default=None, help="directory for per-session event logs")

    p_chat = sub.add_parser("chat", help="interactive terminal session")
    common(p_chat)
    p_chat.add_argument("--trace", action="store_true", help="print the decision triple per round")
    p_chat.add_argument("--topic", default="Low-Carbon Campus")
    p_chat.add_argument("--out", default=None, help="write the transcript here on exit")

    p_val = sub.add_parser("validate-kb", help="check a knowledge base against every invariant")
    common(p_val, backend=False)

    p_sim = sub.add_parser("simulate", help="run persona episodes against scripted backends")
    common(p_sim)
    p_sim.add_argument("personas", nargs="+", help="persona JSON files")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default=None, help="episode results CSV path")
    p_sim.add_argument("--log-dir", default=None, help="directory for per-session event logs")

    p_an = sub.add_parser("analyze", help="engagement metrics and frequency histograms from event logs")
    common(p_an, backend=False)
    p_an.add_argument("logs", nargs="+", help="session event log files")
    p_an.add_argument("--out", default=None, help="engagement CSV path")

    p_rp = sub.add_parser("replay", help="rebuild and print a session from its event log")
    common(p_rp, backend=False)
    p_rp.add_argument("log", help="session event log file")

    return parser


KB_PATH_ENV = "MENTIGO_KB_PATH"


def _load_kb(path: str | None):
    import os

    resolved = path or os.environ.get(KB_PATH_ENV) or kbmod.default_fixture_path()
    kb_path = Path(resolved)
    if not kb_path.exists():
        raise FileNotFoundError(kb_path)
    return load_knowledge_base(kb_path)


def _make_backend(args) -> Backend:
    if args.backend == "live":
        return _live_backend(args)
    if args.script:
        return ScriptedBackend(load_script_config(args.script))
    return ScriptedBackend(
        BackendConfig(
            kind="scripted",
            default_response="Got it — tell me a bit more about what you're thinking?",
        )
    )


def _live_backend(args):
    from .gateway import LiveBackend

    return LiveBackend(live_config_from_env())


def cmd_validate_kb(args) -> int:
    try:
        kb = _load_kb(args.kb)
    except FileNotFoundError as exc:
        print(f"error: knowledge base not found: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ParseError as exc:
        print(f"error: knowledge base unreadable: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as exc:
        print("knowledge base invalid:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_FAILURE
    unresolved = validate_alias_table(kb)
    state_categories = len({s.category for s in kb.states})
    strategy_categories = len({s.category for s in kb.strategies})
    print(f"OK: {len(kb.stages)} stages, {len(kb.states)} states, {len(kb.strategies)} strategies")
    print(
        f"    {state_categories} state categories, {strategy_categories} strategy categories, "
        f"{len(kb.alias_table)} alias entries ({len(unresolved)} unresolved)"
    )
    if unresolved:
        for name in unresolved:
            print(f"  unresolved alias: {name}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    try:
        kb = _load_kb(args.kb)
    except FileNotFoundError as exc:
        print(f"error: knowledge base not found: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MentigoError as exc:
        print(f"error: knowledge base rejected: {exc}", file=sys.stderr)
        return EXIT_INPUT

    import os

    port = args.port or int(os.environ.get("MENTIGO_PORT", "8470"))
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind(("127.0.0.1", port))
    except OSError:
        print(f"error: port {port} is already in use", file=sys.stderr)
        return EXIT_ENV
    finally:
        probe.close()

    try:
        backend = _make_backend(args)
    except MentigoError as exc:
        print(f"error: backend configuration: {exc}", file=sys.stderr)
        return EXIT_ENV
    store = SessionStore(kb, backend, backend, log_dir=args.log_dir)
    app = create_app(store)
    from .service import start_ticker

    stop_ticker = start_ticker(store)
    print(f"serving on http://127.0.0.1:{port}")
    try:
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    finally:
        stop_ticker()
    return EXIT_OK


def cmd_chat(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    try:
        kb = _load_kb(args.kb)
        backend = _make_backend(args)
    except FileNotFoundError as exc:
        print(f"error: knowledge base not found: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MentigoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV

    store = SessionStore(kb, backend, backend, clock=SystemClock())
    session = store.create_session(args.topic)
    print(f"mentor> {session.transcript[-1].text}", file=stdout)
    rounds = 0
    for line in stdin:
        text = line.strip()
        if not text:
            continue
        try:
            message, decision = store.post_student_message(session.id, text)
        except MentigoError as exc:
            print(f"[degraded: {exc}]", file=stdout)
            continue
        rounds += 1
        if args.trace:
            states = ",".join(str(s) for s in decision.active_states)
            print(
                f"stage={decision.stage_after} states=[{states}] strategy={decision.chosen_strategy}",
                file=stdout,
            )
        print(f"mentor> {message.text}", file=stdout)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for turn in store.get(session.id).transcript:
                fh.write(f"{turn.author}: {turn.text}\n")
    final = store.get(session.id)
    print(
        f"-- session over: {rounds} rounds, reached stage {final.stage} ({kb.stage(final.stage).name})",
        file=stdout,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        kb = _load_kb(args.kb)
    except (FileNotFoundError, MentigoError) as exc:
        print(f"error: knowledge base: {exc}", file=sys.stderr)
        return EXIT_INPUT

    for path in args.personas:
        if not Path(path).exists():
            print(f"error: persona file not found: {path}", file=sys.stderr)
            return EXIT_INPUT

    results: list[EpisodeResult] = []
    failures = 0
    for index, path in enumerate(args.personas):
        try:
            persona = load_persona(path)
            backend = _make_backend(args)
            result = run_episode(
                persona,
                kb,
                backend,
                backend,
                id_factory=seeded_id_factory(args.seed * 10_000 + index),
                log_dir=args.log_dir,
            )
            results.append(result)
            print(
                f"{path}: rounds={result.rounds} stages_reached={result.stages_reached} "
                f"accuracy={result.state_accuracy:.3f} compliance={result.mapping_compliance:.3f}"
            )
        except MentigoError as exc:
            failures += 1
            print(f"{path}: failed: {exc}", file=sys.stderr)
    if args.out and results:
        export_csv_for(EpisodeResult, results, args.out)
        print(f"wrote {len(results)} episode rows to {args.out}")
    if results:
        mean_acc = sum(r.state_accuracy for r in results) / len(results)
        mean_cmp = sum(r.mapping_compliance for r in results) / len(results)
        print(f"summary: episodes={len(results)} mean_accuracy={mean_acc:.3f} mean_compliance={mean_cmp:.3f}")
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def _histogram(title: str, counts: Counter, label: str) -> list[str]:
    lines = [f"{title} (total {sum(counts.values())})"]
    for key in sorted(counts):
        bar = "#" * counts[key]
        lines.append(f"  {label}{key:>3}: {bar} {counts[key]}")
    return lines


def cmd_analyze(args) -> int:
    reports: list[EngagementReport] = []
    state_counts: Counter = Counter()
    strategy_counts: Counter = Counter()
    for path in args.logs:
        if not Path(path).exists():
            print(f"error: event log not found: {path}", file=sys.stderr)
            return EXIT_INPUT
        try:
            session = replay(read_event_log(path))
        except CorruptLog as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        report = compute_engagement(session)
        reports.append(report)
        state_counts.update(report.state_freq)
        strategy_counts.update(report.strategy_freq)
        print(
            f"{path}: duration_min={report.duration_min:.2f} rounds={report.rounds} "
            f"words={report.student_word_count}"
        )
    for line in _histogram("state frequencies", state_counts, "state "):
        print(line)
    for line in _histogram("strategy frequencies", strategy_counts, "strategy "):
        print(line)
    if args.out:
        export_csv_for(EngagementReport, reports, args.out)
        print(f"wrote {len(reports)} engagement rows to {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    if not Path(args.log).exists():
        print(f"error: event log not found: {args.log}", file=sys.stderr)
        return EXIT_INPUT
    try:
        events = read_event_log(args.log)
        session = replay(events)
    except CorruptLog as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"session {session.id} — topic: {session.task_topic} — status: {session.status}")
    stage_seq = [d.stage_after for d in session.decisions]
    print(f"stage sequence: {stage_seq or '[no rounds]'}")
    for turn in session.transcript:
        print(f"  {turn.author}> {turn.text}")
    print(f"events: {len(events)}, decisions: {len(session.decisions)}, final stage: {session.stage}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "serve": cmd_serve,
        "chat": cmd_chat,
        "validate-kb": cmd_validate_kb,
        "simulate": cmd_simulate,
        "analyze": cmd_analyze,
        "replay": cmd_replay,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())

"""``repairgraph`` command line.

Exit codes: 0 success, 1 config-check findings, 2 repair budget exhausted,
3 backend error, 64 usage error, 65 bad input data (unknown record, unreadable
report or snapshot).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence, TextIO

import httpx

from .config import CliConfig, ConfigError, load_config
from .graph import TraceStep
from .llm import BackendConfig, Cassette, LLMGateway, MockPlaybook
from .memory import BugMemory, MemoryStoreError, UnknownRecord
from .pipeline import PipelineConfig, PipelineState, Services, TaskOutcome, TaskSpec, build_pipeline, run_task
from .sandbox import Sandbox

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_MAX_REPAIRS = 2
EXIT_BACKEND = 3
EXIT_USAGE = 64
EXIT_DATA = 65

STATUS_EXIT = {"success": EXIT_OK, "failed_max_repairs": EXIT_MAX_REPAIRS, "backend_error": EXIT_BACKEND}

log = logging.getLogger("repairgraph")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which means "repairs exhausted" here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="config file (JSON)")
    p.add_argument("--mock", metavar="PLAYBOOK", help="scripted replies: a playbook file, or for batch a directory of <task-id>.json")
    p.add_argument("--cassette", metavar="PATH", help="replay model replies from a cassette (JSON lines)")
    p.add_argument("--record", action="store_true", help="with --cassette: call the live backend and append to the cassette")
    p.add_argument("--timeout", type=float, dest="default_timeout_s", help="per-call sandbox timeout in seconds")
    p.add_argument("--max-repairs", type=int, dest="default_max_repairs")
    p.add_argument("--k", type=int, help="memory hits to retrieve")
    p.add_argument("--tau", type=float, help="similarity threshold for reusing a memory")
    p.add_argument("--report-dir")
    p.add_argument("--memory", dest="memory_path", help="memory snapshot path")
    p.add_argument("--interpreter", dest="interpreter_path", help="interpreter that runs generated code")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="repairgraph", description="Generate, run and repair Python functions with an LLM.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run_p = sub.add_parser("run", parents=[common], help="run one task from a prompt")
    run_p.add_argument("prompt")
    run_p.add_argument("--args", required=True, dest="args_json", help='argument lists as JSON, e.g. "[[10, 2], [10, 0]]"')
    run_p.add_argument("--expected", help="expected return value of the last call, as JSON")
    run_p.add_argument("--id", dest="task_id")

    batch_p = sub.add_parser("batch", parents=[common], help="run every task file in a directory")
    batch_p.add_argument("corpus_dir")
    batch_p.add_argument("--jobs", type=int, default=1)

    mem_p = sub.add_parser("memory", help="inspect the bug memory")
    mem_sub = mem_p.add_subparsers(dest="memory_command", required=True, parser_class=_Parser)
    mem_sub.add_parser("list", parents=[common])
    search_p = mem_sub.add_parser("search", parents=[common])
    search_p.add_argument("query")
    show_p = mem_sub.add_parser("show", parents=[common])
    show_p.add_argument("record_id")

    trace_p = sub.add_parser("trace", parents=[common], help="print the node sequence of a run report")
    trace_p.add_argument("report_file")

    sub.add_parser("config-check", parents=[common], help="validate configuration and environment")
    return parser


def _resolve_config(ns: argparse.Namespace) -> CliConfig:
    overrides = {
        name: getattr(ns, name, None)
        for name in ("memory_path", "interpreter_path", "k", "tau", "default_timeout_s", "default_max_repairs", "report_dir")
    }
    try:
        config = load_config(ns.config, overrides=overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    problems = config.validate()
    if problems and ns.command != "config-check":
        raise UsageError("; ".join(problems))
    return config


def _gateway(ns: argparse.Namespace, config: CliConfig, playbook_path: Optional[Path] = None) -> LLMGateway:
    backend = config.backend
    if ns.record and not ns.cassette:
        raise UsageError("--record needs --cassette")
    if ns.mock and ns.cassette:
        raise UsageError("--mock and --cassette are alternatives; pick one")
    if ns.mock:
        path = playbook_path or Path(ns.mock)
        try:
            playbook = MockPlaybook.load(path)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load playbook {path}: {exc}") from exc
        return LLMGateway(BackendConfig(**{**vars(backend), "mode": "mock"}), playbook=playbook)
    if ns.cassette:
        mode = "record" if ns.record else "replay"
        if mode == "replay" and not Path(ns.cassette).exists():
            raise UsageError(f"cassette {ns.cassette} does not exist")
        return LLMGateway(BackendConfig(**{**vars(backend), "mode": mode}), cassette=Cassette(ns.cassette))
    if backend.mode in ("mock", "replay", "record"):
        raise UsageError(f"backend mode {backend.mode!r} needs --mock or --cassette")
    return LLMGateway(backend)


def _open_memory(config: CliConfig) -> BugMemory:
    try:
        return BugMemory.open(config.memory_path)
    except MemoryStoreError as exc:
        raise DataError(f"memory snapshot {config.memory_path}: {exc}") from exc


def _pipeline_config(config: CliConfig) -> PipelineConfig:
    return PipelineConfig(k=config.k, tau=config.tau, timeout_s=config.default_timeout_s)


def _write_report(outcome: TaskOutcome, report_dir: str) -> Path:
    path = Path(report_dir) / f"{outcome.final_state.task.id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(outcome.report(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _indent(text: str, prefix: str = "    ") -> str:
    return "\n".join(prefix + line for line in text.splitlines())


class NarrativeLog:
    """Prints each node transition in the order a human would tell the story."""

    def __init__(self, out: TextIO):
        self.out = out

    def __call__(self, step: TraceStep, state: PipelineState) -> None:
        write = lambda text="": print(text, file=self.out)  # noqa: E731
        node = step.node
        if node == "code_generation":
            write(f"[{step.step}] task prompt: {state.task.prompt}")
            write(f"[{step.step}] generated code ({state.entry_name}):")
            write(_indent(state.function_code))
        elif node == "code_execution":
            for run in state.runs:
                call = f"{state.entry_name}({', '.join(json.dumps(a) for a in run.args)})"
                if run.ok:
                    write(f"[{step.step}] execute {call} -> {json.dumps(run.return_value)}")
                else:
                    write(f"[{step.step}] execute {call} -> {run.status}: {run.error.headline() if run.error else ''}")
            if state.execution_result is not None and not state.execution_result.ok and state.runs[-1].ok:
                write(f"[{step.step}] check failed: {state.execution_result.error.headline()}")
        elif node == "bug_issue":
            write(f"[{step.step}] bug report:")
            write(_indent(state.bug_report.raw_text))
        elif node == "memory_search":
            top = f", top score {state.search_hits[0].score:.3f}" if state.search_hits else ""
            write(f"[{step.step}] memory search: {len(state.search_hits)} hit(s){top}")
        elif node == "memory_filter":
            write(f"[{step.step}] memory filter: {len(state.filtered_hits)} hit(s) kept")
        elif node in ("memory_create", "memory_update"):
            m = state.memory_mutations[-1]
            write(f"[{step.step}] memory {m.op}: {m.record_id} ({m.error_type}, seen {m.occurrence_count}x)")
        elif node == "code_update":
            write(f"[{step.step}] updated code:")
            write(_indent(state.candidate_fix))
        elif node == "code_repair":
            write(f"[{step.step}] repair #{state.repair_count} applied, executing again")


def cmd_run(ns: argparse.Namespace, out: TextIO) -> int:
    config = _resolve_config(ns)
    try:
        arg_sets = json.loads(ns.args_json)
    except ValueError as exc:
        raise UsageError(f"--args is not JSON: {exc}") from exc
    if not isinstance(arg_sets, list) or not arg_sets or not all(isinstance(a, list) for a in arg_sets):
        raise UsageError("--args must be a non-empty JSON list of argument lists")
    data: dict[str, Any] = {
        "id": ns.task_id or "task-" + hashlib.sha256(ns.prompt.encode("utf-8")).hexdigest()[:8],
        "prompt": ns.prompt,
        "arg_sets": arg_sets,
        "max_repairs": config.default_max_repairs,
    }
    if ns.expected is not None:
        try:
            data["expected_return"] = json.loads(ns.expected)
        except ValueError as exc:
            raise UsageError(f"--expected is not JSON: {exc}") from exc
    try:
        task = TaskSpec.from_json(data)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc

    memory = _open_memory(config)
    gateway = _gateway(ns, config)
    pcfg = _pipeline_config(config)
    pipeline = build_pipeline(Services(gateway, Sandbox(config.interpreter_path), memory), pcfg)
    outcome = run_task(pipeline, task, observer=NarrativeLog(out), config=pcfg)
    memory.persist(config.memory_path)
    report_path = _write_report(outcome, config.report_dir)

    print(f"status: {outcome.status}  repairs used: {outcome.repairs_used}", file=out)
    if outcome.final_state.error:
        print(f"error: {outcome.final_state.error}", file=out)
    print("final code:", file=out)
    print(_indent(outcome.final_state.function_code or "(none)"), file=out)
    print(f"report: {report_path}", file=out)
    return STATUS_EXIT[outcome.status]


def _load_corpus(corpus_dir: str, default_max_repairs: int) -> list[TaskSpec]:
    root = Path(corpus_dir)
    if not root.is_dir():
        raise UsageError(f"{corpus_dir} is not a directory")
    files = sorted(root.glob("*.json"))
    if not files:
        raise UsageError(f"no task files in {corpus_dir}")
    tasks = []
    for path in files:
        try:
            tasks.append(TaskSpec.load(path, default_max_repairs))
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"{path}: {exc}") from exc
    return sorted(tasks, key=lambda t: t.id)


def cmd_batch(ns: argparse.Namespace, out: TextIO) -> int:
    config = _resolve_config(ns)
    if ns.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    tasks = _load_corpus(ns.corpus_dir, config.default_max_repairs)
    memory = _open_memory(config)
    sandbox = Sandbox(config.interpreter_path)
    pcfg = _pipeline_config(config)

    shared_gateway = None
    playbook_dir = Path(ns.mock) if ns.mock and Path(ns.mock).is_dir() else None
    if playbook_dir is None:
        shared_gateway = _gateway(ns, config)
        if ns.mock and ns.jobs > 1:
            raise UsageError("a single playbook is consumed in order; use a playbook directory with --jobs")
    gateways = {
        t.id: shared_gateway or _gateway(ns, config, playbook_dir / f"{t.id}.json") for t in tasks
    }

    def one(task: TaskSpec) -> TaskOutcome:
        pipeline = build_pipeline(Services(gateways[task.id], sandbox, memory), pcfg)
        return run_task(pipeline, task, config=pcfg)

    with ThreadPoolExecutor(max_workers=ns.jobs) as pool:
        outcomes = list(pool.map(one, tasks))
    memory.persist(config.memory_path)

    print(f"{'task':<24} {'status':<20} {'repairs':>7} {'wall ms':>10}", file=out)
    for outcome in outcomes:
        _write_report(outcome, config.report_dir)
        print(
            f"{outcome.final_state.task.id:<24} {outcome.status:<20} {outcome.repairs_used:>7} {outcome.wall_ms:>10.1f}",
            file=out,
        )
    statuses = {o.status for o in outcomes}
    ok = sum(o.status == "success" for o in outcomes)
    print(f"{ok}/{len(outcomes)} succeeded; reports in {config.report_dir}", file=out)
    if statuses == {"success"}:
        return EXIT_OK
    return EXIT_BACKEND if "backend_error" in statuses else EXIT_MAX_REPAIRS


def cmd_memory(ns: argparse.Namespace, out: TextIO) -> int:
    config = _resolve_config(ns)
    memory = _open_memory(config)
    if ns.memory_command == "list":
        print(f"{'id':<36}  {'error_type':<22} {'count':>5}  updated_at", file=out)
        for r in memory.records():
            print(f"{r.id:<36}  {r.error_type:<22} {r.occurrence_count:>5}  {r.updated_at.isoformat()}", file=out)
        return EXIT_OK
    if ns.memory_command == "search":
        for hit in memory.search(ns.query, config.k):
            print(f"{hit.score:8.4f}  {hit.record.id}  {hit.record.error_type}  {hit.record.summary.splitlines()[0]}", file=out)
        return EXIT_OK
    try:
        record = memory.get(ns.record_id)
    except UnknownRecord:
        raise DataError(f"no memory record {ns.record_id}") from None
    row = record.to_json()
    row.pop("embedding")
    print(json.dumps(row, indent=2), file=out)
    return EXIT_OK


def cmd_trace(ns: argparse.Namespace, out: TextIO) -> int:
    try:
        report = json.loads(Path(ns.report_file).read_text(encoding="utf-8"))
        steps = report["trace"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read report {ns.report_file}: {exc}") from exc
    print(f"task {report.get('task_id')}: {report.get('status')}, {report.get('repairs_used')} repair(s)", file=out)
    total = 0.0
    for s in steps:
        total += s["ms"]
        print(f"{s['step']:>4}  {s['node']:<16} {s['ms']:>10.3f} ms  {s['digest'][:12]}", file=out)
    print(f"      {'total':<16} {total:>10.3f} ms", file=out)
    return EXIT_OK


def cmd_config_check(ns: argparse.Namespace, out: TextIO) -> int:
    try:
        config = load_config(ns.config)
    except ConfigError as exc:
        print(f"FAIL config: {exc}", file=out)
        return EXIT_CHECK_FAILED
    findings: list[tuple[bool, str]] = []
    problems = config.validate()
    findings.append((not problems, "config values: " + ("; ".join(problems) or "ok")))

    interp = config.interpreter_path
    try:
        proc = subprocess.run([interp, "-c", "import sys; print(sys.version_info[0])"], capture_output=True, text=True, timeout=10)
        ok = proc.returncode == 0 and proc.stdout.strip() == "3"
        findings.append((ok, f"interpreter {interp}: " + ("python 3" if ok else proc.stderr.strip() or "not python 3")))
    except (OSError, subprocess.TimeoutExpired) as exc:
        findings.append((False, f"interpreter {interp}: {exc}"))

    mem = Path(config.memory_path)
    if mem.exists():
        try:
            n = len(BugMemory.load(mem))
            findings.append((True, f"memory {mem}: {n} record(s)"))
        except MemoryStoreError as exc:
            findings.append((False, f"memory {mem}: {exc}"))
    else:
        findings.append((True, f"memory {mem}: not created yet"))

    backend = config.backend
    if backend.mode in ("live", "record"):
        findings.append((bool(os.environ.get(backend.api_key_env)), f"api key ${backend.api_key_env}"))
        try:
            httpx.get(backend.base_url, timeout=min(backend.timeout_s, 10.0))
            findings.append((True, f"backend {backend.base_url}: reachable"))
        except httpx.HTTPError as exc:
            findings.append((False, f"backend {backend.base_url}: {exc}"))
    else:
        findings.append((True, f"backend mode {backend.mode}: no network check"))

    for ok, text in findings:
        print(f"{'ok  ' if ok else 'FAIL'} {text}", file=out)
    return EXIT_OK if all(ok for ok, _ in findings) else EXIT_CHECK_FAILED


COMMANDS = {
    "run": cmd_run,
    "batch": cmd_batch,
    "memory": cmd_memory,
    "trace": cmd_trace,
    "config-check": cmd_config_check,
}


def main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[ns.command](ns, out)
    except UsageError as exc:
        print(f"repairgraph: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"repairgraph: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

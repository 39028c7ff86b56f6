"""The generate / execute / report / remember / fix loop as a state graph."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

from .graph import END, START, CompiledGraph, StateGraph, TraceStep, canonical_json
from .llm import EmptyCode, GatewayError, LLMGateway, MalformedJson, NoJsonFound, extract_code, extract_json
from .llm.templates import render_template
from .memory import DEFAULT_K, DEFAULT_TAU, BugMemory, SearchHit, filter_hits
from .sandbox import ExecutionResult, Sandbox, StructuredError

log = logging.getLogger(__name__)

NODE_NAMES = (
    "code_generation",
    "code_execution",
    "bug_issue",
    "memory_search",
    "memory_filter",
    "memory_create",
    "memory_update",
    "code_update",
    "code_repair",
)
STATUSES = ("in_progress", "success", "failed_max_repairs", "backend_error")
DEFAULT_MAX_REPAIRS = 5
SUMMARY_FALLBACK_CHARS = 2000

_DEF = re.compile(r"^def\s+([A-Za-z_]\w*)\s*\(", re.M)


class BackendError(RuntimeError):
    """The model could not produce something the pipeline can use."""


@dataclass(frozen=True)
class TaskSpec:
    id: str
    prompt: str
    arg_sets: tuple[tuple[Any, ...], ...]
    expected_return: Any = None
    check_return: bool = False
    max_repairs: int = DEFAULT_MAX_REPAIRS

    def __post_init__(self) -> None:
        object.__setattr__(self, "arg_sets", tuple(tuple(a) for a in self.arg_sets))
        if not self.arg_sets:
            raise ValueError("arg_sets must be non-empty")
        if self.max_repairs < 1:
            raise ValueError("max_repairs must be positive")
        json.dumps([list(a) for a in self.arg_sets], allow_nan=False)

    @classmethod
    def from_json(cls, data: dict[str, Any], default_max_repairs: int = DEFAULT_MAX_REPAIRS) -> TaskSpec:
        return cls(
            id=str(data["id"]),
            prompt=str(data["prompt"]),
            arg_sets=data["arg_sets"],
            expected_return=data.get("expected_return"),
            check_return="expected_return" in data,
            max_repairs=int(data.get("max_repairs", default_max_repairs)),
        )

    @classmethod
    def load(cls, path: str | Path, default_max_repairs: int = DEFAULT_MAX_REPAIRS) -> TaskSpec:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")), default_max_repairs)


@dataclass(frozen=True)
class BugReport:
    function_name: str
    error_type: str
    error_message: str
    context: str
    location: str
    expected_behavior: str
    actual_behavior: str
    raw_text: str = ""

    def __post_init__(self) -> None:
        if not self.error_type or not self.error_message:
            raise ValueError("bug report needs error_type and error_message")
        if not self.raw_text:
            object.__setattr__(self, "raw_text", self.render())

    def render(self) -> str:
        return "\n".join(
            [
                f"Function: {self.function_name}",
                f"Error type: {self.error_type}",
                f"Error message: {self.error_message}",
                f"Location: {self.location}",
                f"Context:\n{self.context}",
                f"Expected behavior: {self.expected_behavior}",
                f"Actual behavior: {self.actual_behavior}",
            ]
        )

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self).encode("utf-8")).hexdigest()

    @property
    def search_query(self) -> str:
        return f"{self.error_type} {self.error_message} {self.function_name}"


@dataclass(frozen=True)
class MemoryMutation:
    op: str  # "create" | "update"
    record_id: str
    error_type: str
    occurrence_count: int


@dataclass(frozen=True)
class PipelineState:
    task: TaskSpec
    function_code: Optional[str] = None
    entry_name: Optional[str] = None
    current_args: Optional[tuple[Any, ...]] = None
    execution_result: Optional[ExecutionResult] = None
    runs: tuple[ExecutionResult, ...] = ()
    bug_report: Optional[BugReport] = None
    search_hits: tuple[SearchHit, ...] = ()
    filtered_hits: tuple[SearchHit, ...] = ()
    matched_record_id: Optional[str] = None
    candidate_fix: Optional[str] = None
    repair_count: int = 0
    status: str = "in_progress"
    memory_mutations: tuple[MemoryMutation, ...] = ()
    error: Optional[str] = None


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    timeout_s: float = 10.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be positive")


@dataclass
class Services:
    gateway: LLMGateway
    sandbox: Sandbox
    memory: BugMemory


@dataclass
class TaskOutcome:
    final_state: PipelineState
    trace: list[TraceStep]
    wall_ms: float
    config: PipelineConfig = field(default_factory=PipelineConfig)

    @property
    def repairs_used(self) -> int:
        return self.final_state.repair_count

    @property
    def status(self) -> str:
        return self.final_state.status

    @property
    def nodes(self) -> list[str]:
        return [s.node for s in self.trace]

    @property
    def final_return(self) -> Any:
        result = self.final_state.execution_result
        return result.return_value if result is not None and result.ok else None

    def report(self) -> dict[str, Any]:
        state = self.final_state
        return {
            "task_id": state.task.id,
            "status": state.status,
            "repairs_used": self.repairs_used,
            "final_code": state.function_code,
            "entry": state.entry_name,
            "final_return": self.final_return,
            "runs": [r.to_json() for r in state.runs],
            "error": state.error,
            "wall_ms": round(self.wall_ms, 3),
            "trace": [s.to_json() for s in self.trace],
            "memory_mutations": [
                {"op": m.op, "record_id": m.record_id, "error_type": m.error_type, "occurrence_count": m.occurrence_count}
                for m in state.memory_mutations
            ],
            "memory_policy": {
                "k": self.config.k,
                "tau": self.config.tau,
                "branch": "update top filtered hit if any scores >= tau, else create",
                "memories_in_fix_prompt": True,
            },
        }


def find_entry(source: str) -> Optional[str]:
    """Name of the first top-level ``def``; works on code that does not parse."""
    m = _DEF.search(source)
    return m.group(1) if m else None


def _code_excerpt(source: str, line: Optional[int], radius: int = 2) -> str:
    lines = source.splitlines()
    if not line or not 1 <= line <= len(lines):
        return source
    lo, hi = max(1, line - radius), min(len(lines), line + radius)
    return "\n".join(f"{n:>4}{'>' if n == line else ' '} {lines[n - 1]}" for n in range(lo, hi + 1))


def _describe_failure(result: ExecutionResult) -> str:
    err = result.error
    parts = [f"Arguments: {json.dumps(list(result.args))}", f"Outcome: {result.status}"]
    if err is not None:
        parts.append(f"Error: {err.headline()}")
        if err.line:
            parts.append(f"Line: {err.line}" + (f" in {err.function}" if err.function else ""))
        if err.traceback_text:
            parts.append("Traceback:\n" + err.traceback_text.strip())
    return "\n".join(parts)


class RepairNodes:
    """Node handlers and routers bound to one set of services."""

    def __init__(self, services: Services, config: PipelineConfig = PipelineConfig()):
        self.services = services
        self.config = config

    def _ask(self, template: str, variables: dict[str, str]) -> str:
        prompt = render_template(template, variables)
        try:
            return self.services.gateway.ask(prompt, template=template)
        except GatewayError as exc:
            raise BackendError(f"{template}: {exc}") from exc

    def code_generation(self, state: PipelineState) -> PipelineState:
        text = self._ask("codegen", {"task": state.task.prompt})
        try:
            code = extract_code(text)
        except EmptyCode as exc:
            raise BackendError(f"codegen: {exc}") from exc
        entry = find_entry(code)
        if entry is None:
            raise BackendError("codegen: reply defines no function")
        return replace(state, function_code=code, entry_name=entry)

    def code_execution(self, state: PipelineState) -> PipelineState:
        task = state.task
        runs: list[ExecutionResult] = []
        for args in task.arg_sets:
            result = self.services.sandbox.run(state.function_code, state.entry_name, args, self.config.timeout_s)
            runs.append(result)
            if not result.ok:
                break
        last = runs[-1]
        if last.ok and task.check_return and last.return_value != task.expected_return:
            last = ExecutionResult(
                status="exception",
                stdout=last.stdout,
                stderr=last.stderr,
                error=StructuredError(
                    "AssertionFailure",
                    f"expected {task.expected_return!r}, got {last.return_value!r}",
                    function=state.entry_name,
                ),
                wall_ms=last.wall_ms,
                args=last.args,
            )
            runs[-1] = last
        if last.ok:
            status = "success"
        elif state.repair_count >= task.max_repairs:
            status = "failed_max_repairs"
        else:
            status = "in_progress"
        return replace(state, execution_result=last, current_args=last.args, runs=tuple(runs), status=status)

    def route_after_execution(self, state: PipelineState) -> str:
        result = state.execution_result
        if result.ok or state.repair_count >= state.task.max_repairs:
            return END
        return "bug_issue"

    def _fallback_report(self, state: PipelineState, err: StructuredError) -> BugReport:
        result = state.execution_result
        function = err.function or state.entry_name or "<module>"
        if result.status == "timeout":
            actual = f"Did not return within {self.config.timeout_s:g} s."
        else:
            actual = f"Raised {err.headline()}."
        return BugReport(
            function_name=function,
            error_type=err.error_type,
            error_message=err.message or result.status,
            context=_code_excerpt(state.function_code or "", err.line),
            location=f"line {err.line} in {function}" if err.line else function,
            expected_behavior=f"{state.entry_name}({', '.join(map(repr, result.args))}) returns a result without raising.",
            actual_behavior=actual,
        )

    def bug_issue(self, state: PipelineState) -> PipelineState:
        result = state.execution_result
        err = result.error or StructuredError("UnknownError", result.status)
        fallback = self._fallback_report(state, err)
        try:
            text = self._ask("bug_report", {"code": state.function_code, "error": _describe_failure(result)})
            data = extract_json(text)
        except (BackendError, NoJsonFound, MalformedJson) as exc:
            log.info("bug report falls back to the structured error: %s", exc)
            return replace(state, bug_report=fallback)

        def pick(key: str, default: str) -> str:
            value = data.get(key)
            return str(value).strip() if value not in (None, "") else default

        # the sandbox's observation of type and message wins over the model's
        report = BugReport(
            function_name=pick("function_name", fallback.function_name),
            error_type=err.error_type if err.error_type != "UnknownError" else pick("error_type", err.error_type),
            error_message=err.message or pick("error_message", fallback.error_message),
            context=pick("context", fallback.context),
            location=pick("location", fallback.location),
            expected_behavior=pick("expected_behavior", fallback.expected_behavior),
            actual_behavior=pick("actual_behavior", fallback.actual_behavior),
        )
        return replace(state, bug_report=report)

    def memory_search(self, state: PipelineState) -> PipelineState:
        hits = self.services.memory.search(state.bug_report.search_query, self.config.k)
        return replace(state, search_hits=tuple(hits))

    def memory_filter(self, state: PipelineState) -> PipelineState:
        kept = filter_hits(state.search_hits, self.config.tau)
        matched = kept[0].record.id if kept else None
        return replace(state, filtered_hits=tuple(kept), matched_record_id=matched)

    def route_after_filter(self, state: PipelineState) -> str:
        return "memory_update" if state.matched_record_id else "memory_create"

    def _summary(self, template: str, variables: dict[str, str], fallback: str) -> str:
        try:
            text = self._ask(template, variables).strip()
        except BackendError as exc:
            log.info("%s falls back to the raw report: %s", template, exc)
            text = ""
        return text or fallback[:SUMMARY_FALLBACK_CHARS]

    def memory_create(self, state: PipelineState) -> PipelineState:
        report = state.bug_report
        summary = self._summary("memory_create_summary", {"report": report.raw_text}, report.raw_text)
        record = self.services.memory.create_record(summary, report.error_type, report.digest())
        mutation = MemoryMutation("create", record.id, record.error_type, record.occurrence_count)
        return replace(state, memory_mutations=state.memory_mutations + (mutation,))

    def memory_update(self, state: PipelineState) -> PipelineState:
        report = state.bug_report
        previous = self.services.memory.get(state.matched_record_id).summary
        summary = self._summary(
            "memory_update_summary",
            {"previous_summary": previous, "report": report.raw_text},
            f"{previous}\n{report.raw_text}",
        )
        record = self.services.memory.update_record(state.matched_record_id, summary)
        mutation = MemoryMutation("update", record.id, record.error_type, record.occurrence_count)
        return replace(state, memory_mutations=state.memory_mutations + (mutation,))

    def code_update(self, state: PipelineState) -> PipelineState:
        memories = "\n".join(f"- {hit.record.summary}" for hit in state.filtered_hits) or "(none)"
        text = self._ask(
            "code_fix",
            {"code": state.function_code, "report": state.bug_report.raw_text, "memories": memories},
        )
        try:
            candidate = extract_code(text)
        except EmptyCode as exc:
            raise BackendError(f"code_fix: {exc}") from exc
        return replace(state, candidate_fix=candidate)

    def code_repair(self, state: PipelineState) -> PipelineState:
        return replace(
            state,
            function_code=state.candidate_fix,
            candidate_fix=None,
            repair_count=state.repair_count + 1,
            execution_result=None,
            current_args=None,
            runs=(),
            bug_report=None,
            search_hits=(),
            filtered_hits=(),
            matched_record_id=None,
        )


def build_pipeline(services: Services, config: PipelineConfig = PipelineConfig()) -> CompiledGraph:
    nodes = RepairNodes(services, config)
    graph = StateGraph()
    for name in NODE_NAMES:
        graph.add_node(name, getattr(nodes, name))
    graph.add_edge(START, "code_generation")
    graph.add_edge("code_generation", "code_execution")
    graph.add_conditional_edge("code_execution", nodes.route_after_execution, {END, "bug_issue"})
    graph.add_edge("bug_issue", "memory_search")
    graph.add_edge("memory_search", "memory_filter")
    graph.add_conditional_edge("memory_filter", nodes.route_after_filter, {"memory_create", "memory_update"})
    graph.add_edge("memory_create", "code_update")
    graph.add_edge("memory_update", "code_update")
    graph.add_edge("code_update", "code_repair")
    graph.add_edge("code_repair", "code_execution")
    return graph.compile()


def step_budget(max_repairs: int) -> int:
    return 9 * (max_repairs + 1) + 2


def run_task(
    pipeline: CompiledGraph,
    task: TaskSpec,
    observer: Optional[Callable[[TraceStep, PipelineState], None]] = None,
    config: Optional[PipelineConfig] = None,
) -> TaskOutcome:
    """Run one task to a terminal status.

    A handler failure of any kind ends the run as ``backend_error`` with the
    exception text kept on the final state.
    """
    t0 = time.perf_counter()
    result = pipeline.run(PipelineState(task=task), step_budget(task.max_repairs), observer)
    state = result.final_state
    if result.outcome == "handler_error":
        state = replace(state, status="backend_error", error=f"{type(result.error).__name__}: {result.error}")
    elif result.outcome == "budget_exhausted":
        raise RuntimeError(f"task {task.id} exhausted its step budget; routing is broken")
    return TaskOutcome(state, result.trace, (time.perf_counter() - t0) * 1000.0, config or PipelineConfig())

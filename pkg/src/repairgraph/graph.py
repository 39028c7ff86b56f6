"""Stateful directed-graph execution engine.

Nodes are plain callables ``state -> state``. Each node has exactly one way
out: a plain edge or a router that picks the next node from a declared
candidate set. A compiled graph runs from its entry node until it reaches
:data:`END`, runs out of steps, or a handler raises.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import enum
import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional

START = "__start__"
END = "__end__"

DEFAULT_MAX_STEPS = 64

Handler = Callable[[Any], Any]
Router = Callable[[Any], str]
StepObserver = Callable[["TraceStep", Any], None]


class GraphError(Exception):
    """Base class for graph construction and routing failures."""


class DuplicateNode(GraphError):
    pass


class ReservedName(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class ConflictingRoute(GraphError):
    pass


class EmptyCandidates(GraphError):
    pass


class DanglingTarget(GraphError):
    pass


class UnreachableEnd(GraphError):
    pass


class MissingEntry(GraphError):
    pass


class MissingRoute(GraphError):
    """A declared node has neither a plain edge nor a router."""


class RouteViolation(GraphError):
    """A router returned a node outside its declared candidates."""


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: _jsonable(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
            if f.metadata.get("digest", True)
        }
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted((_jsonable(v) for v in obj), key=repr)
    if isinstance(obj, enum.Enum):
        return _jsonable(obj.value)
    if isinstance(obj, uuid.UUID):
        return str(obj)
    if isinstance(obj, (_dt.datetime, _dt.date)):
        return obj.isoformat()
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize ``obj`` to a key-sorted compact JSON string.

    Dataclass fields declared with ``metadata={"digest": False}`` (timings,
    wall-clock stamps) are left out so equal content hashes equally.
    """
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"), default=repr)


def state_digest(state: Any) -> str:
    return hashlib.sha256(canonical_json(state).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TraceStep:
    step: int
    node: str
    digest: str
    ms: float

    def to_json(self) -> dict[str, Any]:
        return {"step": self.step, "node": self.node, "digest": self.digest, "ms": self.ms}


@dataclass
class RunResult:
    final_state: Any
    trace: list[TraceStep]
    outcome: str  # "completed" | "budget_exhausted" | "handler_error"
    error: Optional[BaseException] = None

    @property
    def nodes(self) -> list[str]:
        return [s.node for s in self.trace]

    def trace_json(self) -> list[dict[str, Any]]:
        return [s.to_json() for s in self.trace]


@dataclass(frozen=True)
class _Conditional:
    router: Router
    candidates: frozenset[str]


@dataclass
class StateGraph:
    """Mutable graph definition; call :meth:`compile` to freeze it."""

    nodes: dict[str, Handler] = field(default_factory=dict)
    edges: dict[str, str] = field(default_factory=dict)
    routers: dict[str, _Conditional] = field(default_factory=dict)

    @property
    def entry(self) -> Optional[str]:
        return self.edges.get(START)

    def add_node(self, name: str, handler: Handler) -> StateGraph:
        if not isinstance(name, str) or not name:
            raise ReservedName(f"node name must be a non-empty string, got {name!r}")
        if name in (START, END):
            raise ReservedName(f"{name!r} is reserved")
        if name in self.nodes:
            raise DuplicateNode(f"node {name!r} already declared")
        self.nodes[name] = handler
        return self

    def _check_source(self, src: str) -> None:
        if src != START and src not in self.nodes:
            raise UnknownNode(f"edge source {src!r} is not a declared node")
        if src in self.edges or src in self.routers:
            raise ConflictingRoute(f"node {src!r} already has an outgoing route")

    def add_edge(self, src: str, dst: str) -> StateGraph:
        self._check_source(src)
        self.edges[src] = dst
        return self

    def add_conditional_edge(self, src: str, router: Router, candidates: Iterable[str]) -> StateGraph:
        if src == START:
            raise UnknownNode("the entry must be set with a plain edge from START")
        self._check_source(src)
        cands = frozenset(candidates)
        if not cands:
            raise EmptyCandidates(f"router on {src!r} declares no candidates")
        self.routers[src] = _Conditional(router, cands)
        return self

    def successors(self, name: str) -> frozenset[str]:
        if name in self.edges:
            return frozenset({self.edges[name]})
        if name in self.routers:
            return self.routers[name].candidates
        return frozenset()

    def compile(self, max_steps: int = DEFAULT_MAX_STEPS) -> CompiledGraph:
        entry = self.entry
        if entry is None:
            raise MissingEntry("no edge from START")
        for src in [START, *self.nodes]:
            for dst in self.successors(src):
                if dst != END and dst not in self.nodes:
                    raise DanglingTarget(f"{src!r} routes to undeclared node {dst!r}")
        for name in self.nodes:
            if not self.successors(name):
                raise MissingRoute(f"node {name!r} has no outgoing edge or router")

        seen = {entry}
        frontier = [entry]
        while frontier:
            node = frontier.pop()
            if node == END:
                continue
            for nxt in self.successors(node):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        if END not in seen:
            raise UnreachableEnd(f"END is not reachable from entry {entry!r}")

        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        return CompiledGraph(
            entry=entry,
            nodes=dict(self.nodes),
            edges={k: v for k, v in self.edges.items() if k != START},
            routers=dict(self.routers),
            max_steps=max_steps,
        )


@dataclass(frozen=True)
class CompiledGraph:
    """Validated, immutable graph. Safe to share between concurrent runs."""

    entry: str
    nodes: Mapping[str, Handler]
    edges: Mapping[str, str]
    routers: Mapping[str, _Conditional]
    max_steps: int = DEFAULT_MAX_STEPS

    def next_node(self, name: str, state: Any) -> str:
        if name in self.edges:
            return self.edges[name]
        cond = self.routers[name]
        target = cond.router(state)
        if target not in cond.candidates:
            raise RouteViolation(
                f"router on {name!r} returned {target!r}; allowed: {sorted(cond.candidates)}"
            )
        return target

    def run(
        self,
        initial_state: Any,
        max_steps: Optional[int] = None,
        observer: Optional[StepObserver] = None,
    ) -> RunResult:
        """Run from the entry node.

        Handler exceptions end the run with outcome ``handler_error``; the
        exception is kept on the result and the trace covers every step that
        completed before it. Router contract breaches raise
        :class:`RouteViolation`.
        """
        budget = self.max_steps if max_steps is None else max_steps
        if budget < 1:
            raise ValueError("max_steps must be >= 1")

        state = initial_state
        trace: list[TraceStep] = []
        node = self.entry
        while True:
            handler = self.nodes[node]
            t0 = time.perf_counter()
            try:
                new_state = handler(state)
            except Exception as exc:
                return RunResult(state, trace, "handler_error", exc)
            state = new_state
            step = TraceStep(
                step=len(trace),
                node=node,
                digest=state_digest(state),
                ms=round((time.perf_counter() - t0) * 1000.0, 3),
            )
            trace.append(step)
            if observer is not None:
                observer(step, state)

            node = self.next_node(node, state)
            if node == END:
                return RunResult(state, trace, "completed")
            if len(trace) >= budget:
                return RunResult(state, trace, "budget_exhausted")


def run(compiled: CompiledGraph, initial_state: Any, max_steps: Optional[int] = None) -> RunResult:
    return compiled.run(initial_state, max_steps)

from .executor import ExecutionRequest, ExecutionResult, HarnessFailure, Sandbox, execute, split_envelope
from .tracebacks import StructuredError, parse_traceback, status_for

__all__ = [
    "ExecutionRequest",
    "ExecutionResult",
    "HarnessFailure",
    "Sandbox",
    "StructuredError",
    "execute",
    "parse_traceback",
    "split_envelope",
    "status_for",
]

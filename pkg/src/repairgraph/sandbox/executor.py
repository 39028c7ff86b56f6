"""Run candidate code in a child interpreter and classify the outcome."""

from __future__ import annotations

import json
import os
import re
import secrets
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional, Sequence

from .tracebacks import StructuredError, parse_traceback

STATUSES = ("success", "exception", "syntax_error", "timeout", "crash")
KILL_GRACE_S = 1.0


class HarnessFailure(RuntimeError):
    """The harness exited cleanly but its envelope was missing or unreadable."""


@dataclass(frozen=True)
class ExecutionRequest:
    source: str
    entry: str
    args: tuple[Any, ...] = ()
    timeout_s: float = 10.0

    def __post_init__(self) -> None:
        if not self.entry:
            raise ValueError("entry must be non-empty")
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be positive")
        object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class ExecutionResult:
    status: str
    stdout: str = ""
    stderr: str = ""
    return_value: Any = None
    error: Optional[StructuredError] = None
    wall_ms: float = field(default=0.0, metadata={"digest": False})
    args: tuple[Any, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "status": self.status,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "wall_ms": self.wall_ms,
            "args": list(self.args),
        }
        if self.ok:
            out["return_value"] = self.return_value
        if self.error is not None:
            out["error"] = self.error.to_json()
        return out


def _harness_source() -> str:
    return resources.files(__package__).joinpath("_harness.py").read_text(encoding="utf-8")


def split_envelope(stdout: str, nonce: str) -> tuple[Optional[str], str]:
    """Return ``(envelope_json, user_stdout)``. Only the last envelope counts."""
    marker = re.escape(f"<<{nonce}>>")
    matches = list(re.finditer(rf"\n{marker}\n(.*?)\n{marker}\n", stdout, re.S))
    if not matches:
        return None, stdout
    m = matches[-1]
    return m.group(1), stdout[: m.start()] + stdout[m.end():]


class Sandbox:
    """Cooperative sandbox: a fresh interpreter and scratch directory per call.

    Only wall-clock time is limited. The child may touch the filesystem and
    network like any other process run by this user.
    """

    def __init__(self, interpreter: Optional[str] = None, default_timeout_s: float = 10.0):
        self.interpreter = interpreter or sys.executable
        self.default_timeout_s = default_timeout_s
        self._harness = _harness_source()

    def run(self, source: str, entry: str, args: Sequence[Any] = (), timeout_s: Optional[float] = None) -> ExecutionResult:
        return self.execute(ExecutionRequest(source, entry, tuple(args), timeout_s or self.default_timeout_s))

    def execute(self, request: ExecutionRequest) -> ExecutionResult:
        nonce = secrets.token_hex(16)
        scratch = tempfile.mkdtemp(prefix="repairgraph_")
        try:
            harness_path = os.path.join(scratch, "_harness.py")
            source_path = os.path.join(scratch, "candidate.py")
            request_path = os.path.join(scratch, "request.json")
            with open(harness_path, "w", encoding="utf-8") as fh:
                fh.write(self._harness)
            with open(source_path, "w", encoding="utf-8") as fh:
                fh.write(request.source)
            with open(request_path, "w", encoding="utf-8") as fh:
                json.dump(
                    {"nonce": nonce, "source_file": "candidate.py", "entry": request.entry, "args": list(request.args)},
                    fh,
                )
            return self._spawn(request, nonce, scratch)
        finally:
            shutil.rmtree(scratch, ignore_errors=True)

    def _spawn(self, request: ExecutionRequest, nonce: str, scratch: str) -> ExecutionResult:
        env = {
            "PATH": os.environ.get("PATH", ""),
            "PYTHONIOENCODING": "utf-8",
            "PYTHONDONTWRITEBYTECODE": "1",
            "LANG": "C.UTF-8",
        }
        t0 = time.monotonic()
        proc = subprocess.Popen(
            # relative paths keep tracebacks identical across runs
            [self.interpreter, "-I", "_harness.py", "request.json"],
            cwd=scratch,
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )
        try:
            out_b, err_b = proc.communicate(timeout=request.timeout_s)
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            try:
                out_b, err_b = proc.communicate(timeout=KILL_GRACE_S)
            except subprocess.TimeoutExpired:
                out_b, err_b = b"", b""
            wall_ms = (time.monotonic() - t0) * 1000.0
            _, user_out = split_envelope(out_b.decode("utf-8", "replace"), nonce)
            return ExecutionResult(
                status="timeout",
                stdout=user_out,
                stderr=err_b.decode("utf-8", "replace"),
                error=StructuredError("Timeout", f"no result within {request.timeout_s:g} s"),
                wall_ms=wall_ms,
                args=request.args,
            )
        wall_ms = (time.monotonic() - t0) * 1000.0
        stdout = out_b.decode("utf-8", "replace")
        stderr = err_b.decode("utf-8", "replace")
        body, user_out = split_envelope(stdout, nonce)

        if body is None:
            if proc.returncode == 0:
                raise HarnessFailure("interpreter exited 0 without a result envelope")
            if "Traceback (most recent call last)" in stderr:
                error = parse_traceback(stderr)
            else:
                error = StructuredError(
                    "ProcessExit", f"interpreter exited with code {proc.returncode} before reporting", traceback_text=stderr
                )
            return ExecutionResult("crash", user_out, stderr, error=error, wall_ms=wall_ms, args=request.args)

        try:
            envelope = json.loads(body)
            status = envelope["status"]
        except (ValueError, KeyError, TypeError) as exc:
            raise HarnessFailure(f"unreadable envelope: {exc}") from exc
        if status == "success":
            return ExecutionResult(
                "success", user_out, stderr, return_value=envelope.get("return_value"), wall_ms=wall_ms, args=request.args
            )
        if status not in ("exception", "syntax_error"):
            raise HarnessFailure(f"unknown envelope status {status!r}")
        return ExecutionResult(
            status,
            user_out,
            stderr,
            error=StructuredError.from_json(envelope.get("error") or {}),
            wall_ms=wall_ms,
            args=request.args,
        )


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def execute(request: ExecutionRequest, interpreter: Optional[str] = None) -> ExecutionResult:
    return Sandbox(interpreter).execute(request)

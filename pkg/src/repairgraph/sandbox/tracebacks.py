"""Turn interpreter traceback text into a :class:`StructuredError`."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Any, Optional

SYNTAX_ERRORS = frozenset({"SyntaxError", "IndentationError", "TabError"})

_FRAME = re.compile(r'^\s*File "(?P<file>[^"]*)", line (?P<line>\d+)(?:, in (?P<func>\S+))?', re.M)
_EXC_LINE = re.compile(r"^(?P<name>[A-Za-z_][\w.]*)(?::\s?(?P<msg>.*))?$")
_EXC_SUFFIXES = ("Error", "Exception", "Exit", "Interrupt", "Warning", "Iteration", "Failure")


@dataclass(frozen=True)
class StructuredError:
    error_type: str
    message: str
    line: Optional[int] = None
    function: Optional[str] = None
    traceback_text: str = ""

    def __post_init__(self) -> None:
        if not self.error_type:
            raise ValueError("error_type must be non-empty")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> StructuredError:
        return cls(
            error_type=data.get("error_type") or "UnknownError",
            message=data.get("message") or "",
            line=data.get("line"),
            function=data.get("function"),
            traceback_text=data.get("traceback_text") or "",
        )

    def headline(self) -> str:
        return f"{self.error_type}: {self.message}" if self.message else self.error_type


def status_for(error_type: str) -> str:
    return "syntax_error" if error_type in SYNTAX_ERRORS else "exception"


def parse_traceback(text: str) -> StructuredError:
    """Extract the final exception and its innermost frame.

    Never raises; input that does not look like a traceback comes back as
    ``UnknownError`` carrying the raw text.
    """
    frames = list(_FRAME.finditer(text))
    if frames:
        last = frames[-1]
        tail = text[last.end():].splitlines()[1:]
        # skip the echoed source line and caret markers under the frame
        lines = [ln for ln in tail if ln.strip() and not ln[:1].isspace()]
        for i, raw in enumerate(lines):
            m = _EXC_LINE.match(raw.rstrip())
            if m:
                message = "\n".join([(m.group("msg") or "").strip(), *lines[i + 1:]]).strip()
                return StructuredError(
                    error_type=m.group("name").rsplit(".", 1)[-1],
                    message=message,
                    line=int(last.group("line")),
                    function=last.group("func"),
                    traceback_text=text,
                )
    else:
        for raw in reversed(text.splitlines()):
            m = _EXC_LINE.match(raw.strip())
            if m and m.group("name").rsplit(".", 1)[-1].endswith(_EXC_SUFFIXES):
                return StructuredError(
                    error_type=m.group("name").rsplit(".", 1)[-1],
                    message=(m.group("msg") or "").strip(),
                    traceback_text=text,
                )
    return StructuredError(error_type="UnknownError", message=text, traceback_text=text)

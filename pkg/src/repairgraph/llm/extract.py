"""Pull code blocks and JSON objects out of free-form model replies."""

from __future__ import annotations

import json
import re
from typing import Any

_FENCE = re.compile(r"```[^\n`]*\n(.*?)(?:```|\Z)", re.DOTALL)


class EmptyCode(ValueError):
    pass


class NoJsonFound(ValueError):
    pass


class MalformedJson(ValueError):
    pass


def extract_code(response_text: str) -> str:
    """Return the body of the first fenced block, else the whole reply trimmed.

    An unterminated fence (a truncated reply) runs to the end of the text.
    """
    match = _FENCE.search(response_text)
    if match:
        source = match.group(1).strip("\n").rstrip()
    else:
        source = response_text.strip()
    if not source.strip():
        raise EmptyCode("reply contains no code")
    return source


def extract_json(response_text: str) -> Any:
    """Decode the first JSON object in the reply, fenced or bare."""
    decoder = json.JSONDecoder()
    starts = [m.start() for m in re.finditer(r"\{", response_text)]
    if not starts:
        raise NoJsonFound("reply contains no JSON object")
    last_error: Exception | None = None
    for pos in starts:
        try:
            value, _ = decoder.raw_decode(response_text, pos)
        except json.JSONDecodeError as exc:
            last_error = exc
            continue
        if isinstance(value, dict):
            return value
    raise MalformedJson(f"no decodable JSON object in reply: {last_error}")

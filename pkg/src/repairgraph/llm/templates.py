"""Prompt templates shipped as plain-text files with ``{placeholder}`` fields."""

from __future__ import annotations

import string
from functools import lru_cache
from importlib import resources
from typing import Mapping

TEMPLATE_NAMES = (
    "codegen",
    "bug_report",
    "memory_create_summary",
    "memory_update_summary",
    "code_fix",
)


class UnknownTemplate(KeyError):
    pass


class UnboundPlaceholder(KeyError):
    pass


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise UnknownTemplate(name)
    return resources.files(__package__).joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def placeholders(text: str) -> list[str]:
    return [field for _, field, _, _ in string.Formatter().parse(text) if field is not None]


def render_template(name: str, variables: Mapping[str, str]) -> str:
    """Substitute ``variables`` into template ``name``.

    Substituted values are inserted verbatim; braces inside them are not
    expanded again.
    """
    text = load_template(name)
    out: list[str] = []
    for literal, field, _, _ in string.Formatter().parse(text):
        out.append(literal)
        if field is None:
            continue
        if field not in variables:
            raise UnboundPlaceholder(f"template {name!r} needs {field!r}")
        out.append(str(variables[field]))
    return "".join(out)

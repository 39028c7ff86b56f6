from .embedding import DIMENSION, cosine, embed, tokens
from .store import (
    DEFAULT_K,
    DEFAULT_TAU,
    BugMemory,
    CorruptSnapshot,
    EmptySummary,
    IoFailure,
    MemoryRecord,
    MemoryStoreError,
    SearchHit,
    UnknownRecord,
    filter_hits,
)

__all__ = [
    "BugMemory",
    "CorruptSnapshot",
    "DEFAULT_K",
    "DEFAULT_TAU",
    "DIMENSION",
    "EmptySummary",
    "IoFailure",
    "MemoryRecord",
    "MemoryStoreError",
    "SearchHit",
    "UnknownRecord",
    "cosine",
    "embed",
    "filter_hits",
    "tokens",
]

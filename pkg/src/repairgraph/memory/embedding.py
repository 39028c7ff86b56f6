"""Deterministic signed feature-hashing embedder."""

from __future__ import annotations

import hashlib
import math
import re
from typing import Callable, Iterator, Sequence

DIMENSION = 256

_WORD = re.compile(r"\w+")
# boundary markers so every non-empty text yields at least one trigram
_BOS, _EOS = "\x02", "\x03"

Embedder = Callable[[str], list[float]]


def tokens(text: str) -> Iterator[str]:
    """Lowercase words plus character trigrams of the whole lowercased text."""
    lowered = text.lower()
    for word in _WORD.findall(lowered):
        yield "w:" + word
    padded = _BOS + lowered + _EOS
    for i in range(len(padded) - 2):
        yield "c:" + padded[i : i + 3]


def _bucket_and_sign(token: str, dimension: int) -> tuple[int, int]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    bucket = int.from_bytes(digest[:4], "little") % dimension
    sign = 1 if digest[4] & 1 else -1
    return bucket, sign


def embed(text: str, dimension: int = DIMENSION) -> list[float]:
    """Embed ``text`` as a unit vector; the empty string maps to the zero vector."""
    signed = [0.0] * dimension
    unsigned = [0.0] * dimension
    for tok in tokens(text):
        bucket, sign = _bucket_and_sign(tok, dimension)
        signed[bucket] += sign
        unsigned[bucket] += 1.0
    if not any(unsigned):
        return signed
    # signed hashing can cancel to exactly zero on very short texts
    vec = signed if any(signed) else unsigned
    norm = math.sqrt(math.fsum(v * v for v in vec))
    return [v / norm for v in vec]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)

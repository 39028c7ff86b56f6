"""In-process vector store for bug summaries."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import os
import tempfile
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .embedding import DIMENSION, Embedder, embed

SNAPSHOT_VERSION = 1
DEFAULT_K = 5
DEFAULT_TAU = 0.35


class MemoryStoreError(Exception):
    pass


class EmptySummary(MemoryStoreError, ValueError):
    pass


class UnknownRecord(MemoryStoreError, KeyError):
    pass


class IoFailure(MemoryStoreError, OSError):
    pass


class CorruptSnapshot(MemoryStoreError, ValueError):
    pass


def utcnow() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


@dataclass(frozen=True)
class MemoryRecord:
    id: str
    summary: str
    error_type: str
    embedding: tuple[float, ...] = field(repr=False)
    occurrence_count: int = 1
    created_at: dt.datetime = field(default_factory=utcnow, metadata={"digest": False})
    updated_at: dt.datetime = field(default_factory=utcnow, metadata={"digest": False})
    source_digest: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "summary": self.summary,
            "error_type": self.error_type,
            "embedding": list(self.embedding),
            "occurrence_count": self.occurrence_count,
            "created_at": self.created_at.isoformat(),
            "updated_at": self.updated_at.isoformat(),
            "source_digest": self.source_digest,
        }

    @classmethod
    def from_json(cls, row: dict[str, Any], dimension: int) -> MemoryRecord:
        embedding = tuple(float(v) for v in row["embedding"])
        if len(embedding) != dimension:
            raise CorruptSnapshot(f"record {row.get('id')} has {len(embedding)} dims, expected {dimension}")
        record = cls(
            id=str(uuid.UUID(row["id"])),
            summary=str(row["summary"]),
            error_type=str(row["error_type"]),
            embedding=embedding,
            occurrence_count=int(row["occurrence_count"]),
            created_at=dt.datetime.fromisoformat(row["created_at"]),
            updated_at=dt.datetime.fromisoformat(row["updated_at"]),
            source_digest=str(row["source_digest"]),
        )
        if record.occurrence_count < 1 or record.updated_at < record.created_at:
            raise CorruptSnapshot(f"record {record.id} violates count/timestamp invariants")
        return record


@dataclass(frozen=True)
class SearchHit:
    record: MemoryRecord
    score: float


def filter_hits(hits: Sequence[SearchHit], threshold: float) -> list[SearchHit]:
    return [h for h in hits if h.score >= threshold]


def _records_digest(rows: list[dict[str, Any]]) -> str:
    blob = json.dumps(rows, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class BugMemory:
    """Exhaustive-scan cosine store.

    One lock serializes every operation, so reads never observe a half-done
    write. ``id_factory`` exists so tests can pin record ids.
    """

    def __init__(
        self,
        records: Iterable[MemoryRecord] = (),
        embedder: Embedder = embed,
        dimension: int = DIMENSION,
        id_factory: Callable[[], uuid.UUID] = uuid.uuid4,
        clock: Callable[[], dt.datetime] = utcnow,
    ):
        self.dimension = dimension
        self._embed = embedder
        self._new_id = id_factory
        self._clock = clock
        self._lock = threading.RLock()
        self._records: dict[str, MemoryRecord] = {r.id: r for r in records}

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def records(self) -> list[MemoryRecord]:
        with self._lock:
            return sorted(self._records.values(), key=lambda r: r.id)

    def get(self, record_id: str) -> MemoryRecord:
        with self._lock:
            try:
                return self._records[str(record_id)]
            except KeyError:
                raise UnknownRecord(str(record_id)) from None

    def total_occurrences(self) -> int:
        with self._lock:
            return sum(r.occurrence_count for r in self._records.values())

    def embed(self, text: str) -> tuple[float, ...]:
        vec = tuple(self._embed(text))
        if len(vec) != self.dimension:
            raise ValueError(f"embedder returned {len(vec)} dims, store expects {self.dimension}")
        return vec

    def search(self, query_text: str, k: int = DEFAULT_K) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        query = np.asarray(self.embed(query_text), dtype=np.float64)
        with self._lock:
            records = list(self._records.values())
        if not records:
            return []
        matrix = np.asarray([r.embedding for r in records], dtype=np.float64)
        # elementwise products in numpy, then exactly rounded row sums: the score
        # does not depend on summation order, so mathematically tied records
        # (same values in different buckets) tie bitwise as well
        dots = [math.fsum(row) for row in (matrix * query).tolist()]
        squares = [math.fsum(row) for row in (matrix * matrix).tolist()]
        q_norm = math.sqrt(math.fsum((query * query).tolist()))
        scores = [
            d / (math.sqrt(s) * q_norm) if s > 0.0 and q_norm > 0.0 else 0.0 for d, s in zip(dots, squares)
        ]
        ranked = sorted(zip(scores, records), key=lambda p: (-p[0], p[1].id))
        return [SearchHit(rec, score) for score, rec in ranked[:k]]

    def create_record(self, summary: str, error_type: str, source_digest: str = "") -> MemoryRecord:
        if not summary or not summary.strip():
            raise EmptySummary("summary must be non-empty")
        now = self._clock()
        record = MemoryRecord(
            id=str(self._new_id()),
            summary=summary,
            error_type=error_type,
            embedding=self.embed(summary),
            occurrence_count=1,
            created_at=now,
            updated_at=now,
            source_digest=source_digest,
        )
        with self._lock:
            self._records[record.id] = record
        return record

    def update_record(self, record_id: str, new_summary: str) -> MemoryRecord:
        if not new_summary or not new_summary.strip():
            raise EmptySummary("summary must be non-empty")
        embedding = self.embed(new_summary)
        with self._lock:
            old = self.get(record_id)
            updated = replace(
                old,
                summary=new_summary,
                embedding=embedding,
                occurrence_count=old.occurrence_count + 1,
                updated_at=max(self._clock(), old.created_at),
            )
            self._records[updated.id] = updated
        return updated

    def snapshot(self) -> dict[str, Any]:
        rows = [r.to_json() for r in self.records()]
        return {
            "version": SNAPSHOT_VERSION,
            "dimension": self.dimension,
            "records": rows,
            "digest": _records_digest(rows),
        }

    def persist(self, path: str | os.PathLike[str]) -> None:
        """Write a snapshot atomically (temp file in the same directory, then rename)."""
        target = Path(path)
        with self._lock:
            payload = json.dumps(self.snapshot())
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp, target)
            except OSError as exc:
                raise IoFailure(f"cannot write snapshot {target}: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike[str], **kwargs: Any) -> BugMemory:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read snapshot {path}: {exc}") from exc
        return cls.from_snapshot(text, **kwargs)

    @classmethod
    def from_snapshot(cls, text: str, **kwargs: Any) -> BugMemory:
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise CorruptSnapshot(f"snapshot is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or data.get("version") != SNAPSHOT_VERSION:
            raise CorruptSnapshot("unsupported snapshot version")
        rows = data.get("records")
        dimension = data.get("dimension")
        if not isinstance(rows, list) or not isinstance(dimension, int):
            raise CorruptSnapshot("snapshot lacks records or dimension")
        if "digest" in data and data["digest"] != _records_digest(rows):
            raise CorruptSnapshot("snapshot digest mismatch")
        try:
            records = [MemoryRecord.from_json(row, dimension) for row in rows]
        except CorruptSnapshot:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptSnapshot(f"malformed record: {exc}") from exc
        if len({r.id for r in records}) != len(records):
            raise CorruptSnapshot("duplicate record ids")
        return cls(records, dimension=dimension, **kwargs)

    @classmethod
    def open(cls, path: Optional[str | os.PathLike[str]], **kwargs: Any) -> BugMemory:
        """Load ``path`` if it exists, else start empty."""
        if path is not None and Path(path).exists():
            return cls.load(path, **kwargs)
        return cls(**kwargs)

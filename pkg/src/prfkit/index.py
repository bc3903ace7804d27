"""Exact cosine top-k search over unit-norm vectors, with a brute-force
oracle and checksummed binary persistence.

Scores are dot products of normalized float32 vectors, accumulated in
float64 and reported as float32. Result order is total: score descending,
then id ascending, so identical inputs give identical hit lists on every
run and platform.

File format (all integers little-endian):

    magic    8 bytes  b"PRFIDX1\\0"
    version  u32      currently 1
    d        u32      vector dimension
    n        u64      row count
    ids      n entries, each u32 byte length + UTF-8 bytes
    rows     n*d float32, row-major
    checksum u64      first 8 bytes of SHA-256 over everything above
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyIndexError,
    VersionMismatchError,
)

__all__ = ["SearchHit", "VectorIndex", "brute_force_search"]

MAGIC = b"PRFIDX1\0"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SearchHit:
    id: str
    score: float


class VectorIndex:
    """Immutable id -> unit-norm vector table answering exact top-k queries.

    Rows are stored sorted by ascending id, so the kernel's lowest-row-index
    tie rule coincides with the id tie rule.
    """

    def __init__(self, ids: Sequence[str], rows: np.ndarray) -> None:
        self.ids: tuple[str, ...] = tuple(ids)
        self.rows = np.ascontiguousarray(rows, dtype=np.float32)
        self.dimension = int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, pairs: Iterable[tuple[str, np.ndarray]]) -> "VectorIndex":
        """Build an index over (id, vector) pairs.

        Raises EmptyIndexError, DuplicateIdError, or DimensionMismatchError.
        """
        items = list(pairs)
        if not items:
            raise EmptyIndexError("cannot build an index from zero vectors")
        seen: set[str] = set()
        for vid, _ in items:
            if vid in seen:
                raise DuplicateIdError(vid)
            seen.add(vid)
        dim = len(items[0][1])
        for vid, vec in items:
            if len(vec) != dim:
                raise DimensionMismatchError(f"{vid!r} has {len(vec)} dims, expected {dim}")
        items.sort(key=lambda pair: pair[0])
        rows = np.stack([np.asarray(vec, dtype=np.float32) for _, vec in items])
        return cls([vid for vid, _ in items], rows)

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        """Exact top-k by cosine score; fewer hits when the index is smaller."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.ascontiguousarray(query, dtype=np.float32)
        if q.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query has shape {q.shape}, expected ({self.dimension},)"
            )
        indices, scores = kernels.topk_dot(self.rows, q, k)
        return [SearchHit(id=self.ids[i], score=float(s)) for i, s in zip(indices, scores)]

    def save(self, path: str | Path) -> None:
        parts = [MAGIC, struct.pack("<IIQ", FORMAT_VERSION, self.dimension, len(self.ids))]
        for vid in self.ids:
            raw = vid.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
        parts.append(self.rows.astype("<f4").tobytes())
        body = b"".join(parts)
        checksum = hashlib.sha256(body).digest()[:8]
        Path(path).write_bytes(body + checksum)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        data = Path(path).read_bytes()
        if len(data) < len(MAGIC) or not data.startswith(MAGIC):
            raise BadMagicError(f"{path}: not an index file")
        if len(data) < len(MAGIC) + 8 or hashlib.sha256(data[:-8]).digest()[:8] != data[-8:]:
            raise ChecksumMismatchError(f"{path}: integrity check failed")
        body = data[:-8]
        pos = len(MAGIC)
        version, dim, n = struct.unpack_from("<IIQ", body, pos)
        pos += 16
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"{path}: version {version}, expected {FORMAT_VERSION}")
        ids = []
        for _ in range(n):
            (length,) = struct.unpack_from("<I", body, pos)
            pos += 4
            ids.append(body[pos : pos + length].decode("utf-8"))
            pos += length
        rows = np.frombuffer(body, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
        return cls(ids, rows.copy())


def brute_force_search(pairs: Sequence[tuple[str, np.ndarray]], query: np.ndarray,
                       k: int) -> list[SearchHit]:
    """Oracle search: score every vector, sort everything, take k.

    This is the normative semantics of :meth:`VectorIndex.search`; it stays
    a literal scan plus full sort on purpose. Taking k is a prefix of the
    full sorted list, so results for smaller k are prefixes of larger k.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float32).astype(np.float64)
    hits = []
    for vid, vec in pairs:
        row = np.asarray(vec, dtype=np.float32)
        if row.shape != q.shape:
            raise DimensionMismatchError(
                f"{vid!r} has shape {row.shape}, expected {q.shape}"
            )
        score = float(np.float32(np.dot(row.astype(np.float64), q)))
        hits.append(SearchHit(id=vid, score=score))
    hits.sort(key=lambda hit: (-hit.score, hit.id))
    return hits[:k]

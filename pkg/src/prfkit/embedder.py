"""Text/image feature extraction behind a swappable backend.

Embeddings are float32 numpy vectors of the knowledge base's configured
dimension, stored L2-normalized (norm within 1e-6 of 1).

The mock backend is a pure function of (seed, input bytes) and is the
normative test backend. Its expansion, exactly:

1. ``key = sha256(pack('<q', seed) + kind_byte + payload)`` where
   ``kind_byte`` is ``b"T"`` for text (payload = UTF-8 bytes) and ``b"I"``
   for images (payload = canonical PPM bytes).
2. Block ``i`` is ``sha256(key + pack('<I', i))``; each 32-byte block
   yields four little-endian uint64 values.
3. The first ``d`` values map to floats ``u / 2**63 - 1.0`` in [-1, 1),
   then the vector is L2-normalized.

Because images are keyed on canonical bytes, crop/flip visibly change the
mock embedding, so tool effects are observable in retrieval tests.
"""

from __future__ import annotations

import base64
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from ._http import JsonServiceClient
from .errors import DimensionMismatchError, EmptyInputError, RemoteUnavailableError
from .imaging import Image, encode_ppm

__all__ = ["EmbedderConfig", "MockEmbedder", "RemoteEmbedder", "l2_normalize",
           "make_embedder", "DEFAULT_DIMENSION"]

DEFAULT_DIMENSION = 64


def l2_normalize(values: np.ndarray) -> np.ndarray:
    """Return a float32 copy scaled to unit L2 norm (within float32 rounding)."""
    v = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    out = (v / norm).astype(np.float32)
    # One correction pass pulls the float32 norm within ~1e-7 of 1.
    out = (out.astype(np.float64) / np.linalg.norm(out.astype(np.float64))).astype(np.float32)
    return out


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "mock"  # "mock" | "remote"
    dimension: int = DEFAULT_DIMENSION
    seed: int = 0
    endpoint: str | None = None
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if self.backend not in ("mock", "remote"):
            raise ValueError(f"unknown embedder backend {self.backend!r}")
        if self.backend == "remote" and not self.endpoint:
            raise ValueError("remote embedder needs an endpoint")


class MockEmbedder:
    """Deterministic hash-expansion embedder (see module docstring)."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0) -> None:
        self.dimension = dimension
        self.seed = seed

    def _expand(self, kind: bytes, payload: bytes) -> np.ndarray:
        key = hashlib.sha256(struct.pack("<q", self.seed) + kind + payload).digest()
        values: list[float] = []
        counter = 0
        while len(values) < self.dimension:
            block = hashlib.sha256(key + struct.pack("<I", counter)).digest()
            for off in range(0, 32, 8):
                u = int.from_bytes(block[off : off + 8], "little")
                values.append(u / 2.0**63 - 1.0)
            counter += 1
        raw = np.array(values[: self.dimension], dtype=np.float64)
        if not raw.any():  # astronomically unlikely, but keeps the contract total
            raw[0] = 1.0
        return l2_normalize(raw)

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyInputError("text is empty after trimming")
        return self._expand(b"T", text.encode("utf-8"))

    def embed_image(self, image: Image) -> np.ndarray:
        return self._expand(b"I", encode_ppm(image))


class RemoteEmbedder:
    """Client for an embedding service speaking JSON over HTTP.

    Request: ``{"kind": "text"|"image", "payload": <text or base64 PPM>}``.
    Response: ``{"embedding": [<d floats>]}``. Responses are re-normalized
    locally so stored embeddings always satisfy the unit-norm invariant.
    """

    def __init__(self, endpoint: str, dimension: int, *, timeout: float = 30.0,
                 attempts: int = 3, max_in_flight: int = 8) -> None:
        self.dimension = dimension
        self._client = JsonServiceClient(
            endpoint, timeout=timeout, attempts=attempts, max_in_flight=max_in_flight
        )

    def _request(self, kind: str, payload: str) -> np.ndarray:
        document = self._client.post({"kind": kind, "payload": payload})
        embedding = document.get("embedding")
        if not isinstance(embedding, list):
            raise RemoteUnavailableError("service response lacks an embedding array")
        if len(embedding) != self.dimension:
            raise DimensionMismatchError(
                f"service returned {len(embedding)} dims, expected {self.dimension}"
            )
        return l2_normalize(np.array(embedding, dtype=np.float64))

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyInputError("text is empty after trimming")
        return self._request("text", text)

    def embed_image(self, image: Image) -> np.ndarray:
        return self._request("image", base64.b64encode(encode_ppm(image)).decode("ascii"))


def make_embedder(config: EmbedderConfig):
    if config.backend == "mock":
        return MockEmbedder(dimension=config.dimension, seed=config.seed)
    return RemoteEmbedder(config.endpoint, config.dimension, timeout=config.timeout)

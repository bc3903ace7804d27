"""Small shared helper for the remote embedder/model clients."""

from __future__ import annotations

import threading
import time

import requests

from .errors import RemoteUnavailableError


class JsonServiceClient:
    """POSTs JSON documents to one endpoint with bounded retries and
    a cap on concurrent in-flight requests."""

    def __init__(self, endpoint: str, *, timeout: float = 30.0, attempts: int = 3,
                 max_in_flight: int = 8, backoff: float = 0.1) -> None:
        self.endpoint = endpoint
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * attempt)
            try:
                with self._slots:
                    response = requests.post(self.endpoint, json=payload, timeout=self.timeout)
                response.raise_for_status()
                return response.json()
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
        raise RemoteUnavailableError(
            f"{self.endpoint} failed after {self.attempts} attempts: {last_error}"
        )

"""Generate-text backends: a scripted deterministic mock and a remote
HTTP client, behind one request/response surface.

The scripted mock is the normative test backend. A script is an ordered
rule list; a rule fires when its stage matches the request and its
``contains`` substring appears in the prompt, first match wins. Requests
carry no stage field, so the mock recognizes the stage from fixed marker
text that each prompt template is guaranteed to contain.
"""

from __future__ import annotations

import base64
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ._http import JsonServiceClient
from .errors import NoScriptMatchError, RemoteUnavailableError
from .imaging import Image, encode_ppm

__all__ = ["Role", "DecodeParams", "ModelRequest", "ModelResponse", "ScriptRule",
           "ScriptedModel", "RemoteModel", "load_script", "classify_stage", "STAGES"]

STAGES = ("tool_plan", "caption", "grounding", "filter", "answer")

# Marker text unique to each prompt template, checked in this order.
_STAGE_MARKERS = (
    ("tool_plan", "knowledge base by providing information you need"),
    ("filter", "<retrieved_information>"),
    ("caption", "describe the image in the context of the question and the caption"),
    ("grounding", "output its bbox coordinates"),
    ("answer", "Here is the retrieval information,"),
)


class Role(enum.Enum):
    POLICY = "policy"
    TOOL_WORKER = "tool_worker"


@dataclass(frozen=True)
class DecodeParams:
    max_tokens: int = 512
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ModelRequest:
    role: Role
    prompt: str
    images: tuple[Image, ...] = ()
    decode: DecodeParams = field(default_factory=DecodeParams)

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    token_logprobs: tuple[tuple[int, float], ...] | None = None
    latency: float = 0.0


@dataclass(frozen=True)
class ScriptRule:
    stage: str
    contains: str
    response: str

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}, expected one of {STAGES}")


def classify_stage(prompt: str) -> str | None:
    for stage, marker in _STAGE_MARKERS:
        if marker in prompt:
            return stage
    return None


class ScriptedModel:
    """Pure scripted backend: response depends only on (script, request)."""

    def __init__(self, rules: Sequence[ScriptRule]) -> None:
        self.rules = tuple(rules)

    def generate(self, request: ModelRequest) -> ModelResponse:
        stage = classify_stage(request.prompt)
        for rule in self.rules:
            if rule.stage == stage and rule.contains in request.prompt:
                return ModelResponse(text=rule.response)
        raise NoScriptMatchError(
            f"no rule for stage {stage!r} and prompt {request.prompt[:60]!r}"
        )


def load_script(path: str | Path) -> ScriptedModel:
    """Load a script from line-delimited JSON: {stage, contains, response}."""
    rules = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        try:
            rules.append(ScriptRule(
                stage=record["stage"],
                contains=record.get("contains", ""),
                response=record["response"],
            ))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad script rule ({exc})") from None
    return ScriptedModel(rules)


class RemoteModel:
    """Client for a generation service speaking JSON over HTTP.

    Request: ``{"role", "prompt", "images": [base64 PPM...], "max_tokens",
    "temperature", "seed"}``. Response: ``{"text", "token_logprobs"?}``
    where token_logprobs is an array of [token_id, logprob] pairs.
    """

    def __init__(self, endpoint: str, *, timeout: float = 60.0, attempts: int = 3,
                 max_in_flight: int = 4) -> None:
        self._client = JsonServiceClient(
            endpoint, timeout=timeout, attempts=attempts, max_in_flight=max_in_flight
        )

    def generate(self, request: ModelRequest) -> ModelResponse:
        document = self._client.post({
            "role": request.role.value,
            "prompt": request.prompt,
            "images": [
                base64.b64encode(encode_ppm(img)).decode("ascii") for img in request.images
            ],
            "max_tokens": request.decode.max_tokens,
            "temperature": request.decode.temperature,
            "seed": request.decode.seed,
        })
        text = document.get("text")
        if not isinstance(text, str):
            raise RemoteUnavailableError("service response lacks a text field")
        raw_logprobs = document.get("token_logprobs")
        logprobs = None
        if raw_logprobs is not None:
            logprobs = tuple((int(t), float(lp)) for t, lp in raw_logprobs)
        return ModelResponse(text=text, token_logprobs=logprobs)

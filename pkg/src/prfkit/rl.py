"""Training-signal math: exact-match answer reward, weighted reward
composition, group-standardized advantages, and the clipped surrogate
objective value (no KL term, no optimization).

The objective here is evaluated, never differentiated: it exists so the
reward pipeline can be tested against hand-derived values.
"""

from __future__ import annotations

import json
import math
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import GroupTooSmallError, LengthMismatchError

__all__ = ["RewardWeights", "ResponseSample", "GroupSample", "WEIGHT_PRESETS",
           "normalize_answer", "em_answer_reward", "compose_reward",
           "group_advantages", "clipped_term", "grpo_objective", "load_group_fixtures"]


@dataclass(frozen=True)
class RewardWeights:
    """Weights for the answer, tool-format, and filter-format reward terms."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("weights must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ValueError("at least one weight must be positive")


WEIGHT_PRESETS = {
    "paper": RewardWeights(alpha=1.0, beta=0.3, gamma=0.7),
    "appendix-equal": RewardWeights(alpha=2.0, beta=1.0, gamma=1.0),
}


_ARTICLES = {"a", "an", "the"}
_TERMINAL_PUNCT = ".,!?;:"
_WS_RE = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """Case-fold, trim, collapse whitespace, strip terminal punctuation,
    and drop leading articles (a, an, the)."""
    text = _WS_RE.sub(" ", text.casefold().strip()).rstrip(_TERMINAL_PUNCT).strip()
    tokens = text.split(" ") if text else []
    while tokens and tokens[0] in _ARTICLES:
        tokens.pop(0)
    return " ".join(tokens)


def em_answer_reward(pred: str, gt: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized ground truth."""
    if not gt:
        raise ValueError("ground-truth list must be non-empty")
    norm = normalize_answer(pred)
    return int(any(norm == normalize_answer(g) for g in gt))


def compose_reward(em: int, tool_ok: bool, filter_ok: bool, weights: RewardWeights) -> float:
    """alpha * em + beta * [tool format ok] + gamma * [filter format ok]."""
    return weights.alpha * em + weights.beta * bool(tool_ok) + weights.gamma * bool(filter_ok)


def group_advantages(rewards: Sequence[float], eps: float = 1e-8) -> list[float]:
    """Standardize rewards within the group: (r - mean) / (pstdev + eps).

    The advantage is constant across tokens of a response. Population
    standard deviation; eps keeps zero-variance groups at exactly zero.
    """
    if len(rewards) < 2:
        raise GroupTooSmallError(f"need >= 2 responses, got {len(rewards)}")
    mean = statistics.fmean(rewards)
    std = statistics.pstdev(rewards)
    return [(r - mean) / (std + eps) for r in rewards]


@dataclass(frozen=True)
class ResponseSample:
    """One response: scalar reward plus per-token log-probabilities under
    the old and new policies."""

    reward: float
    old_logprobs: tuple[float, ...]
    new_logprobs: tuple[float, ...]


@dataclass(frozen=True)
class GroupSample:
    responses: tuple[ResponseSample, ...]

    @property
    def rewards(self) -> list[float]:
        return [r.reward for r in self.responses]


def clipped_term(ratio: float, advantage: float, eps_clip: float) -> float:
    """min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A) for one token."""
    clipped = min(max(ratio, 1.0 - eps_clip), 1.0 + eps_clip)
    return min(ratio * advantage, clipped * advantage)


def grpo_objective(group: GroupSample, eps_clip: float, adv_eps: float = 1e-8) -> float:
    """Evaluate the clipped surrogate objective for one group.

    Per token, the probability ratio is exp(new - old); the clipped
    minimum is averaged per response (1/token count), then across the
    group. Advantages come from :func:`group_advantages` on the group's
    rewards.
    """
    if eps_clip <= 0:
        raise ValueError("eps_clip must be positive")
    advantages = group_advantages(group.rewards, eps=adv_eps)
    per_response = []
    for sample, advantage in zip(group.responses, advantages):
        if len(sample.old_logprobs) != len(sample.new_logprobs):
            raise LengthMismatchError(
                f"{len(sample.old_logprobs)} old vs {len(sample.new_logprobs)} new logprobs"
            )
        if not sample.old_logprobs:
            raise LengthMismatchError("response has zero tokens")
        terms = [
            clipped_term(math.exp(new - old), advantage, eps_clip)
            for old, new in zip(sample.old_logprobs, sample.new_logprobs)
        ]
        per_response.append(sum(terms) / len(terms))
    return sum(per_response) / len(per_response)


def load_group_fixtures(path: str | Path, weights: RewardWeights | None = None) -> list[GroupSample]:
    """Load groups from line-delimited JSON.

    Each record holds ``responses`` (objects with ``old_logprobs`` and
    ``new_logprobs``) and either explicit ``rewards`` or per-response
    ``components`` ({em, tool_ok, filter_ok}), which are composed with
    ``weights`` at load time.
    """
    groups = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        responses = record["responses"]
        if len(responses) < 2:
            raise ValueError(f"{path}:{lineno}: a group needs at least 2 responses")
        if "rewards" in record:
            rewards = [float(r) for r in record["rewards"]]
        elif all("components" in r for r in responses):
            if weights is None:
                raise ValueError(f"{path}:{lineno}: component rewards need a weight preset")
            rewards = [
                compose_reward(
                    int(r["components"]["em"]),
                    bool(r["components"]["tool_ok"]),
                    bool(r["components"]["filter_ok"]),
                    weights,
                )
                for r in responses
            ]
        else:
            raise ValueError(f"{path}:{lineno}: record needs 'rewards' or per-response 'components'")
        if len(rewards) != len(responses):
            raise ValueError(f"{path}:{lineno}: rewards and responses disagree in length")
        samples = tuple(
            ResponseSample(
                reward=reward,
                old_logprobs=tuple(float(v) for v in response["old_logprobs"]),
                new_logprobs=tuple(float(v) for v in response["new_logprobs"]),
            )
            for reward, response in zip(rewards, responses)
        )
        groups.append(GroupSample(responses=samples))
    return groups

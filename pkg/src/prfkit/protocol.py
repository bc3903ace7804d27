"""Tag-based interaction protocol: prompt templates, plan/filter parsing,
and format compliance checks.

Prompt templates ship as text assets under ``prfkit/assets``. Each asset
file ends with a single newline that is not part of the template; slots use
``{Name}`` syntax and are substituted verbatim, so rendering is pure and
byte-stable.

Parsing is deliberately forgiving: model generations are noisy, so parse
functions never raise on malformed input. Problems are reported through a
``diagnostics`` tuple carried on the result (excluded from equality).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import MissingSlotError, UnknownSlotError

__all__ = [
    "PromptKind",
    "Tool",
    "ToolInvocation",
    "ToolPlan",
    "FilterOutput",
    "FormatKind",
    "render_prompt",
    "parse_tool_plan",
    "parse_filter_output",
    "match_format",
    "serialize_tool_plan",
    "template_text",
]


class PromptKind(enum.Enum):
    TOOL_CALLING = "tool_calling"
    CAPTIONING = "captioning"
    GROUNDING = "grounding"
    FILTERING = "filtering"
    ANSWERING = "answering"


class Tool(enum.Enum):
    CAPTION = "caption"
    GROUNDING = "grounding"
    FLIP = "flip"


class FormatKind(enum.Enum):
    TOOL_TEMPLATE = "tool"
    FILTER_TEMPLATE = "answer"


@dataclass(frozen=True)
class ToolInvocation:
    """One ordered tool call: 1-based index, tool, and its argument text.

    For ``Tool.FLIP`` the argument is normalized to ``"left"`` or
    ``"right"``.
    """

    index: int
    tool: Tool
    argument: str


@dataclass(frozen=True)
class ToolPlan:
    """Parsed processing-stage output: reasoning plus ordered tool calls."""

    think: str
    invocations: tuple[ToolInvocation, ...] = ()
    diagnostics: tuple[str, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class FilterOutput:
    """Parsed filtering/answering-stage output: reasoning plus payload."""

    think: str
    answer: str
    diagnostics: tuple[str, ...] = field(default=(), compare=False)


_SLOT_RE = re.compile(r"\{([A-Za-z_]+)\}")
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_TOOL_RE = re.compile(r"<tool>(.*?)</tool>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)

# "N. name: argument" lines inside a <tool> block. Tool names match
# case-insensitively; the argument may be empty.
_PLAN_LINE_RE = re.compile(r"^\s*(\d+)\s*\.\s*([A-Za-z]+)\s*:\s*(.*?)\s*$")

_TOOL_NAMES = {
    "caption": Tool.CAPTION,
    "grounding": Tool.GROUNDING,
    "flip": Tool.FLIP,
}

_FLIP_DIRECTION_RE = re.compile(r"\b(left|right)\b", re.IGNORECASE)

_templates: dict[PromptKind, str] = {}


def template_text(kind: PromptKind) -> str:
    """Return the raw template for a prompt kind (cached after first load)."""
    text = _templates.get(kind)
    if text is None:
        raw = resources.files("prfkit.assets").joinpath(f"{kind.value}.txt").read_text("utf-8")
        # Asset files carry one trailing newline that is not template text.
        text = raw[:-1] if raw.endswith("\n") else raw
        _templates[kind] = text
    return text


def template_slots(kind: PromptKind) -> tuple[str, ...]:
    """Slot names a template declares, in order of first appearance."""
    seen: list[str] = []
    for name in _SLOT_RE.findall(template_text(kind)):
        if name not in seen:
            seen.append(name)
    return tuple(seen)


def render_prompt(kind: PromptKind, bindings: dict[str, str]) -> str:
    """Substitute ``{Name}`` slots in a template with the given bindings.

    Every declared slot needs a binding (MissingSlotError otherwise) and
    every binding must name a declared slot (UnknownSlotError). Values are
    inserted verbatim; no other characters change.
    """
    declared = template_slots(kind)
    for slot in declared:
        if slot not in bindings:
            raise MissingSlotError(slot)
    for name in bindings:
        if name not in declared:
            raise UnknownSlotError(name)
    return _SLOT_RE.sub(lambda m: bindings[m.group(1)], template_text(kind))


def _first_block(pattern: re.Pattern[str], text: str, tag: str,
                 diagnostics: list[str]) -> str | None:
    matches = pattern.findall(text)
    if not matches:
        return None
    if len(matches) > 1:
        diagnostics.append(f"duplicate <{tag}> block ignored ({len(matches) - 1} extra)")
    return matches[0]


def parse_tool_plan(text: str) -> ToolPlan:
    """Parse processing-stage output into a ToolPlan.

    Takes the first ``<think>`` and first ``<tool>`` block, then reads
    "N. name: argument" lines inside the tool block. Unparseable lines,
    unknown tool names, flip calls without a left/right direction, and
    missing or duplicate blocks all become diagnostics, never exceptions.
    Invocation indices are renumbered to run 1..n in parse order.
    """
    diagnostics: list[str] = []
    think = _first_block(_THINK_RE, text, "think", diagnostics)
    if think is None:
        think = ""
        diagnostics.append("no <think> block")
    block = _first_block(_TOOL_RE, text, "tool", diagnostics)
    if block is None:
        diagnostics.append("no <tool> block")
        return ToolPlan(think=think, diagnostics=tuple(diagnostics))

    invocations: list[ToolInvocation] = []
    for line in block.split("\n"):  # strictly \n: other control chars are argument text
        if not line.strip():
            continue
        m = _PLAN_LINE_RE.match(line)
        if m is None:
            diagnostics.append(f"malformed line: {line.strip()!r}")
            continue
        tool = _TOOL_NAMES.get(m.group(2).casefold())
        if tool is None:
            diagnostics.append(f"malformed line (unknown tool): {line.strip()!r}")
            continue
        argument = m.group(3)
        if tool is Tool.FLIP:
            direction = _FLIP_DIRECTION_RE.search(argument)
            if direction is None:
                diagnostics.append(f"malformed line (flip without direction): {line.strip()!r}")
                continue
            argument = direction.group(1).casefold()
        invocations.append(ToolInvocation(index=len(invocations) + 1, tool=tool, argument=argument))
    return ToolPlan(think=think, invocations=tuple(invocations), diagnostics=tuple(diagnostics))


def serialize_tool_plan(plan: ToolPlan) -> str:
    """Emit a plan in the numbered-lines-inside-tags layout.

    Inverse of :func:`parse_tool_plan` for plans whose think text contains
    no protocol tags and whose arguments are single-line.
    """
    lines = "".join(
        f"{inv.index}. {inv.tool.value}: {inv.argument}\n" for inv in plan.invocations
    )
    return f"<think>{plan.think}</think><tool>\n{lines}</tool>"


def parse_filter_output(text: str) -> FilterOutput:
    """Parse filtering/answering-stage output into a FilterOutput.

    Takes the first ``<think>`` and first ``<answer>`` block. Without an
    answer block, the payload falls back to everything after the last
    ``</think>``, trimmed; with neither block the whole trimmed input is
    the payload.
    """
    diagnostics: list[str] = []
    think = _first_block(_THINK_RE, text, "think", diagnostics)
    answer = _first_block(_ANSWER_RE, text, "answer", diagnostics)
    if think is None:
        think = ""
        diagnostics.append("no <think> block")
    if answer is None:
        diagnostics.append("no <answer> block, using trailing-text fallback")
        tail = text.rsplit("</think>", 1)[-1]
        answer = tail.strip()
    return FilterOutput(think=think, answer=answer, diagnostics=tuple(diagnostics))


def match_format(text: str, kind: FormatKind) -> bool:
    """Decide format compliance of a generation.

    True iff the text contains exactly one ``<think>...</think>`` followed
    by exactly one block of the kind's second tag (``<tool>`` or
    ``<answer>``), with no stray open or close tags of those two names.
    """
    second = kind.value
    positions = []
    for tag in ("<think>", "</think>", f"<{second}>", f"</{second}>"):
        if text.count(tag) != 1:
            return False
        positions.append(text.index(tag))
    return positions == sorted(positions)

"""Three-stage orchestration: tool-driven query processing, multimodal
retrieval with section selection, filtering, and answering.

Every run emits a complete, JSON-serializable trace: the parsed plan, all
tool events, every retrieval hit with scores, all model responses
verbatim, and per-stage timings. With the scripted model and mock
embedder a run is bit-deterministic, and feeding a trace's recorded
responses back through the pipeline reproduces the same filtered
knowledge and answer.
"""

from __future__ import annotations

import base64
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .embedder import MockEmbedder, RemoteEmbedder
from .errors import PrfError
from .imaging import Image, crop, decode_ppm, flip_horizontal, parse_bbox_json
from .index import VectorIndex
from .kb import Article, KnowledgeBase, Section
from .model import ModelRequest, ModelResponse, Role
from .protocol import (
    PromptKind,
    Tool,
    ToolPlan,
    parse_filter_output,
    parse_tool_plan,
    render_prompt,
)

__all__ = ["Sample", "RetrievalConfig", "QueryBundle", "PipelineTrace", "Pipeline",
           "ReplayModel", "load_samples", "step_clock", "TRACE_SCHEMA_VERSION"]

TRACE_SCHEMA_VERSION = 1

Clock = Callable[[], float]


def step_clock(step: float = 0.001) -> Clock:
    """Deterministic clock for mock-backend runs: advances by ``step`` per
    call, so recorded stage durations are reproducible byte for byte."""
    state = {"now": 0.0}

    def clock() -> float:
        state["now"] += step
        return state["now"]

    return clock


@dataclass(frozen=True)
class Sample:
    id: str
    image: Image
    question: str
    gt_answer: str | None = None
    gt_article_id: str | None = None


@dataclass(frozen=True)
class RetrievalConfig:
    k_direct_articles: int = 1
    k_tool_articles: int = 5
    k_sections: int = 3
    dedup: bool = True

    def __post_init__(self) -> None:
        for name in ("k_direct_articles", "k_tool_articles", "k_sections"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class QueryBundle:
    """Retrieval queries produced by tool execution.

    All caption queries are kept so repeated caption calls can each drive
    a search; ``caption_query`` exposes the most recent one.
    """

    caption_queries: list[str] = field(default_factory=list)
    init_captions: list[str] = field(default_factory=list)
    grounded_images: list[Image] = field(default_factory=list)
    flipped_image: Image | None = None
    flip_direction: str | None = None

    @property
    def caption_query(self) -> str | None:
        return self.caption_queries[-1] if self.caption_queries else None

    def is_empty(self) -> bool:
        return not (self.caption_queries or self.grounded_images or self.flipped_image)


@dataclass
class PipelineTrace:
    """Complete record of one sample's run; JSON fields only."""

    sample_id: str
    question: str
    gt_answer: str | None = None
    gt_article_id: str | None = None
    plan: dict = field(default_factory=dict)
    tool_events: list[dict] = field(default_factory=list)
    caption_queries: list[str] = field(default_factory=list)
    init_captions: list[str] = field(default_factory=list)
    n_grounded: int = 0
    flip_direction: str | None = None
    direct_hits: list[dict] = field(default_factory=list)
    tool_queries: list[dict] = field(default_factory=list)
    s_search_sections: list[dict] = field(default_factory=list)
    s_search: str = ""
    document_text: str = ""
    search_tags: str = ""
    filter_think: str = ""
    filtered_knowledge: str = ""
    filter_degraded: bool = False
    filter_disabled: bool = False
    tools_disabled: bool = False
    answer: str = ""
    answer_failed: bool = False
    stage_seconds: dict = field(default_factory=dict)
    model_calls: list[dict] = field(default_factory=list)
    error: str | None = None
    schema_version: int = TRACE_SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PipelineTrace":
        return cls(**json.loads(text))


class ReplayModel:
    """Backend that replays a trace's recorded responses in call order."""

    def __init__(self, model_calls: Sequence[dict]) -> None:
        self._calls = list(model_calls)
        self._cursor = 0

    def generate(self, request: ModelRequest) -> ModelResponse:
        if self._cursor >= len(self._calls):
            raise PrfError("replay exhausted: more model calls than the trace recorded")
        call = self._calls[self._cursor]
        self._cursor += 1
        if call.get("failed"):
            raise PrfError(f"replayed {call['stage']} failure")
        return ModelResponse(text=call["text"])


def _cosine_scores(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    return (rows.astype(np.float64) @ query.astype(np.float64)).astype(np.float32)


def concat_documents(articles: Sequence[Article]) -> str:
    """Title then section bodies in document order, blank-line separated."""
    parts: list[str] = []
    for article in articles:
        parts.append(article.title)
        parts.extend(section.body for section in article.sections)
    return "\n\n".join(parts)


class Pipeline:
    def __init__(
        self,
        kb: KnowledgeBase,
        article_index: VectorIndex,
        section_index: VectorIndex,
        embedder: MockEmbedder | RemoteEmbedder,
        policy,
        tool_worker,
        config: RetrievalConfig | None = None,
        *,
        use_tools: bool = True,
        use_filter: bool = True,
        clock_factory: Callable[[], Clock] | None = None,
    ) -> None:
        self.kb = kb
        self.article_index = article_index
        self.section_index = section_index
        self.embedder = embedder
        self.policy = policy
        self.tool_worker = tool_worker
        self.config = config or RetrievalConfig()
        self.use_tools = use_tools
        self.use_filter = use_filter
        self.clock_factory = clock_factory or (lambda: time.perf_counter)

    # -- model plumbing -------------------------------------------------

    def _call_model(self, backend, stage: str, prompt: str, trace: PipelineTrace,
                    images: tuple[Image, ...] = (),
                    role: Role = Role.POLICY) -> str:
        # Failed attempts are recorded too, so a replay fails at the same
        # point and reproduces the same degraded path.
        try:
            response = backend.generate(ModelRequest(role=role, prompt=prompt, images=images))
        except PrfError:
            trace.model_calls.append({"stage": stage, "text": "", "failed": True})
            raise
        trace.model_calls.append({"stage": stage, "text": response.text, "failed": False})
        return response.text

    # -- stage 1: processing --------------------------------------------

    def run_processing(self, image: Image, question: str,
                       trace: PipelineTrace, clock: Clock) -> tuple[ToolPlan, QueryBundle]:
        """Plan tools with the policy model, then execute them in order.

        A flip changes the working image, so later groundings crop the
        flipped image. Tool failures are recorded and skipped; a policy
        failure degrades to an empty plan.
        """
        bundle = QueryBundle()
        prompt = render_prompt(PromptKind.TOOL_CALLING, {"Question": question})
        try:
            text = self._call_model(self.policy, "tool_plan", prompt, trace,
                                    images=(image,), role=Role.POLICY)
        except PrfError as exc:
            plan = ToolPlan(think="", diagnostics=(f"policy failure: {exc}",))
            trace.plan = _plan_to_dict(plan)
            return plan, bundle
        plan = parse_tool_plan(text)
        trace.plan = _plan_to_dict(plan)

        working = image
        for invocation in plan.invocations:
            t0 = clock()
            ok, detail = True, ""
            try:
                if invocation.tool is Tool.CAPTION:
                    caption_prompt = render_prompt(
                        PromptKind.CAPTIONING,
                        {"Question": question, "Caption": invocation.argument},
                    )
                    caption = self._call_model(self.tool_worker, "caption", caption_prompt,
                                               trace, images=(working,), role=Role.TOOL_WORKER)
                    bundle.init_captions.append(invocation.argument)
                    bundle.caption_queries.append(caption.strip())
                elif invocation.tool is Tool.GROUNDING:
                    grounding_prompt = render_prompt(
                        PromptKind.GROUNDING, {"object": invocation.argument}
                    )
                    box_text = self._call_model(self.tool_worker, "grounding", grounding_prompt,
                                                trace, images=(working,), role=Role.TOOL_WORKER)
                    box = parse_bbox_json(box_text, working.width, working.height)
                    bundle.grounded_images.append(crop(working, box))
                else:  # flip
                    working = flip_horizontal(working)
                    bundle.flipped_image = working
                    bundle.flip_direction = invocation.argument
            except PrfError as exc:
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            trace.tool_events.append({
                "tool": invocation.tool.value,
                "argument": invocation.argument,
                "ok": ok,
                "detail": detail,
                "seconds": clock() - t0,
            })
        trace.caption_queries = list(bundle.caption_queries)
        trace.init_captions = list(bundle.init_captions)
        trace.n_grounded = len(bundle.grounded_images)
        trace.flip_direction = bundle.flip_direction
        return plan, bundle

    # -- stage 2: retrieval ---------------------------------------------

    def run_direct_retrieval(self, image: Image,
                             trace: PipelineTrace) -> list[Article]:
        """Embed the reference image and take the top articles whole."""
        query = self.embedder.embed_image(image)
        hits = self.article_index.search(query, self.config.k_direct_articles)
        trace.direct_hits = [{"article_id": h.id, "score": h.score} for h in hits]
        return [self.kb.get_article(h.id) for h in hits]

    def run_tool_search(self, bundle: QueryBundle, question: str,
                        trace: PipelineTrace) -> list[Section]:
        """Search the article-image index per tool query, pick sections.

        Caption queries score sections against the caption embedding;
        image-derived queries (grounding crops and the flipped image)
        score sections against the question embedding. Per-query top
        sections are unioned in first-seen order, deduplicated on
        (article, section).
        """
        queries: list[tuple[str, np.ndarray, np.ndarray]] = []
        question_vec: np.ndarray | None = None

        def q_vec() -> np.ndarray:
            nonlocal question_vec
            if question_vec is None:
                question_vec = self.embedder.embed_text(question)
            return question_vec

        for i, caption in enumerate(bundle.caption_queries):
            vec = self.embedder.embed_text(caption)
            queries.append((f"caption:{i}", vec, vec))
        for i, grounded in enumerate(bundle.grounded_images):
            queries.append((f"grounding:{i}", self.embedder.embed_image(grounded), q_vec()))
        if bundle.flipped_image is not None:
            queries.append(("flip", self.embedder.embed_image(bundle.flipped_image), q_vec()))

        selected: list[Section] = []
        seen: set[tuple[str, int]] = set()
        for tag, article_vec, section_vec in queries:
            article_hits = self.article_index.search(article_vec, self.config.k_tool_articles)
            candidates: list[Section] = []
            for hit in article_hits:
                candidates.extend(self.kb.get_article(hit.id).sections)
            scored: list[tuple[float, str, int, Section]] = []
            if candidates:
                rows = np.stack([s.embedding for s in candidates])
                scores = _cosine_scores(section_vec, rows)
                scored = [
                    (float(score), s.article_id, s.section_index, s)
                    for score, s in zip(scores, candidates)
                ]
                scored.sort(key=lambda item: (-item[0], item[1], item[2]))
            top = scored[: self.config.k_sections]
            trace.tool_queries.append({
                "tag": tag,
                "article_hits": [{"article_id": h.id, "score": h.score} for h in article_hits],
                "section_hits": [
                    {"article_id": aid, "section_index": j, "score": score}
                    for score, aid, j, _ in top
                ],
            })
            for score, aid, j, section in top:
                key = (aid, j)
                if self.config.dedup and key in seen:
                    continue
                seen.add(key)
                selected.append(section)
                trace.s_search_sections.append({
                    "article_id": aid, "section_index": j, "score": score, "query": tag,
                })
        return selected

    # -- stage 3: filtering ----------------------------------------------

    def run_filtering(self, articles: Sequence[Article], s_search: str, question: str,
                      image: Image, search_tags: str, trace: PipelineTrace) -> str:
        """Condense retrieved knowledge with the policy model.

        On model failure the raw search text passes through, flagged as
        degraded, so downstream answering still runs.
        """
        document = concat_documents(articles)
        trace.document_text = document
        trace.search_tags = search_tags
        if not self.use_filter:
            trace.filter_disabled = True
            filtered = document + "\n\n" + s_search if s_search else document
            trace.filtered_knowledge = filtered
            return filtered
        prompt = render_prompt(PromptKind.FILTERING, {
            "Question": question,
            "Document": document,
            "Search": search_tags,
            "Search_result": s_search,
        })
        try:
            text = self._call_model(self.policy, "filter", prompt, trace,
                                    images=(image,), role=Role.POLICY)
        except PrfError:
            trace.filter_degraded = True
            trace.filter_think = ""
            trace.filtered_knowledge = s_search
            return s_search
        output = parse_filter_output(text)
        trace.filter_think = output.think
        trace.filtered_knowledge = output.answer
        return output.answer

    # -- stage 4: answering ----------------------------------------------

    def run_answering(self, filtered: str, question: str, trace: PipelineTrace) -> str:
        prompt = render_prompt(PromptKind.ANSWERING, {
            "Question": question,
            "Search_results": filtered,
        })
        try:
            text = self._call_model(self.tool_worker, "answer", prompt, trace,
                                    role=Role.TOOL_WORKER)
        except PrfError:
            trace.answer_failed = True
            trace.answer = ""
            return ""
        trace.answer = text.strip()
        return trace.answer

    # -- composition -----------------------------------------------------

    def run(self, sample: Sample) -> PipelineTrace:
        """Run all stages for one sample; failures land in the trace."""
        trace = PipelineTrace(
            sample_id=sample.id,
            question=sample.question,
            gt_answer=sample.gt_answer,
            gt_article_id=sample.gt_article_id,
        )
        clock = self.clock_factory()
        try:
            t0 = clock()
            if self.use_tools:
                _, bundle = self.run_processing(sample.image, sample.question, trace, clock)
            else:
                bundle = QueryBundle()
                trace.tools_disabled = True
                trace.plan = _plan_to_dict(ToolPlan(think="", diagnostics=("tools disabled",)))
            t1 = clock()
            trace.stage_seconds["processing"] = t1 - t0

            articles = self.run_direct_retrieval(sample.image, trace)
            sections = []
            if self.use_tools and not bundle.is_empty():
                sections = self.run_tool_search(bundle, sample.question, trace)
            s_search = "\n\n".join(section.body for section in sections)
            trace.s_search = s_search
            t2 = clock()
            trace.stage_seconds["retrieval"] = t2 - t1

            tool_names = []
            for event in trace.tool_events:
                if event["tool"] not in tool_names:
                    tool_names.append(event["tool"])
            filtered = self.run_filtering(articles, s_search, sample.question,
                                          sample.image, ", ".join(tool_names), trace)
            t3 = clock()
            trace.stage_seconds["filtering"] = t3 - t2

            self.run_answering(filtered, sample.question, trace)
            t4 = clock()
            trace.stage_seconds["answering"] = t4 - t3
        except Exception as exc:  # per-sample isolation: a batch never dies here
            trace.error = f"{type(exc).__name__}: {exc}"
        return trace

    def run_batch(self, samples: Sequence[Sample], workers: int = 1) -> list[PipelineTrace]:
        if workers <= 1:
            return [self.run(sample) for sample in samples]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.run, samples))


def _plan_to_dict(plan: ToolPlan) -> dict:
    return {
        "think": plan.think,
        "invocations": [
            {"index": inv.index, "tool": inv.tool.value, "argument": inv.argument}
            for inv in plan.invocations
        ],
        "diagnostics": list(plan.diagnostics),
    }


def load_samples(path: str | Path) -> list[Sample]:
    """Load line-delimited sample records.

    Each record: ``id``, ``question``, one of ``image_ppm_base64`` or
    ``image_path`` (relative paths resolve against the record file), and
    optional ``gt_answer`` / ``gt_article_id``.
    """
    path = Path(path)
    samples = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        try:
            if "image_ppm_base64" in record:
                image = decode_ppm(base64.b64decode(record["image_ppm_base64"]))
            else:
                image_path = Path(record["image_path"])
                if not image_path.is_absolute():
                    image_path = path.parent / image_path
                image = decode_ppm(image_path.read_bytes())
            samples.append(Sample(
                id=str(record["id"]),
                image=image,
                question=record["question"],
                gt_answer=record.get("gt_answer"),
                gt_article_id=record.get("gt_article_id"),
            ))
        except (KeyError, PrfError, OSError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad sample record ({exc})") from None
    return samples

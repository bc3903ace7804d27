"""Process-retrieve-filter engine for knowledge-based VQA.

Three pipeline stages (tool-driven query processing, multimodal cosine
retrieval over a sectioned knowledge base, model-based filtering), the
reward and clipped-objective math used to train the policy, and an
evaluation harness. All of it runs offline against a deterministic mock
embedder and a scripted model backend.
"""

__version__ = "0.1.0"

from .embedder import EmbedderConfig, MockEmbedder, RemoteEmbedder
from .imaging import BBox, Image
from .index import SearchHit, VectorIndex, brute_force_search
from .kb import Article, KnowledgeBase, Section, ingest, split_sections
from .model import ModelRequest, ModelResponse, RemoteModel, ScriptedModel
from .pipeline import Pipeline, PipelineTrace, RetrievalConfig, Sample
from .protocol import (
    FilterOutput,
    FormatKind,
    PromptKind,
    Tool,
    ToolInvocation,
    ToolPlan,
    match_format,
    parse_filter_output,
    parse_tool_plan,
    render_prompt,
)
from .rl import (
    GroupSample,
    ResponseSample,
    RewardWeights,
    WEIGHT_PRESETS,
    compose_reward,
    em_answer_reward,
    group_advantages,
    grpo_objective,
)

__all__ = [
    "__version__",
    "EmbedderConfig", "MockEmbedder", "RemoteEmbedder",
    "BBox", "Image",
    "SearchHit", "VectorIndex", "brute_force_search",
    "Article", "KnowledgeBase", "Section", "ingest", "split_sections",
    "ModelRequest", "ModelResponse", "RemoteModel", "ScriptedModel",
    "Pipeline", "PipelineTrace", "RetrievalConfig", "Sample",
    "FilterOutput", "FormatKind", "PromptKind", "Tool", "ToolInvocation", "ToolPlan",
    "match_format", "parse_filter_output", "parse_tool_plan", "render_prompt",
    "GroupSample", "ResponseSample", "RewardWeights", "WEIGHT_PRESETS",
    "compose_reward", "em_answer_reward", "group_advantages", "grpo_objective",
]

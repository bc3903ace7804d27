"""Metrics over pipeline traces: article recall, answer accuracy,
token-level F1, tool-usage statistics, and stage-latency summaries.

For recall, direct and tool article hits are merged into one ranking by
(score descending, id ascending), keeping each article's best score, so a
strong tool hit can outrank the direct hit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .errors import MissingGroundTruthError
from .pipeline import PipelineTrace
from .rl import em_answer_reward, normalize_answer

__all__ = ["EvalReport", "ToolStats", "recall_at_k", "vqa_accuracy", "token_f1",
           "tool_usage_stats", "build_report", "report_text", "TOOL_NAMES"]

TOOL_NAMES = ("caption", "grounding", "flip")


def ranked_articles(trace: PipelineTrace, include_tools: bool = True) -> list[str]:
    """Article ids ordered by best hit score (descending, ties by id)."""
    best: dict[str, float] = {}
    for hit in trace.direct_hits:
        aid, score = hit["article_id"], hit["score"]
        if aid not in best or score > best[aid]:
            best[aid] = score
    if include_tools:
        for query in trace.tool_queries:
            for hit in query["article_hits"]:
                aid, score = hit["article_id"], hit["score"]
                if aid not in best or score > best[aid]:
                    best[aid] = score
    return [aid for aid, _ in sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))]


def recall_at_k(traces: Sequence[PipelineTrace], k: int, *, include_tools: bool = True) -> float:
    """Percent of samples whose ground-truth article is in the top k."""
    if not traces:
        raise MissingGroundTruthError("no traces")
    hits = 0
    for trace in traces:
        if not trace.gt_article_id:
            raise MissingGroundTruthError(f"trace {trace.sample_id} lacks gt_article_id")
        if trace.gt_article_id in ranked_articles(trace, include_tools)[:k]:
            hits += 1
    return 100.0 * hits / len(traces)


def vqa_accuracy(traces: Sequence[PipelineTrace]) -> float:
    """Percent of samples whose answer exact-matches the ground truth."""
    if not traces:
        raise MissingGroundTruthError("no traces")
    total = 0
    for trace in traces:
        if trace.gt_answer is None:
            raise MissingGroundTruthError(f"trace {trace.sample_id} lacks gt_answer")
        total += em_answer_reward(trace.answer, [trace.gt_answer])
    return 100.0 * total / len(traces)


def token_f1(pred: str, gt: str) -> float:
    """Harmonic mean of token precision/recall after answer normalization."""
    pred_tokens = normalize_answer(pred).split()
    gt_tokens = normalize_answer(gt).split()
    if pred_tokens == gt_tokens:
        return 1.0
    if not pred_tokens or not gt_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gt_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gt_tokens)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ToolStats:
    mean: float
    variance: float


def _tool_counts(trace: PipelineTrace) -> Counter:
    return Counter(inv["tool"] for inv in trace.plan.get("invocations", []))


def tool_usage_stats(traces: Sequence[PipelineTrace]) -> tuple[dict[str, ToolStats], int]:
    """Per-tool (mean, population variance) of calls per sample, plus the
    number of distinct ordered tool sequences (the empty plan counts)."""
    n = len(traces)
    stats: dict[str, ToolStats] = {}
    for tool in TOOL_NAMES:
        counts = [_tool_counts(trace)[tool] for trace in traces]
        mean = sum(counts) / n if n else 0.0
        variance = sum((c - mean) ** 2 for c in counts) / n if n else 0.0
        stats[tool] = ToolStats(mean=mean, variance=variance)
    combinations = {
        tuple(inv["tool"] for inv in trace.plan.get("invocations", []))
        for trace in traces
    }
    return stats, len(combinations)


@dataclass
class EvalReport:
    n_samples: int
    recall_at_k: dict[int, float]
    recall_at_k_direct: dict[int, float]
    vqa_accuracy: float | None
    token_f1_mean: float | None
    tool_stats: dict[str, ToolStats]
    combinations: int
    stage_latency: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "recall_at_k": {str(k): v for k, v in self.recall_at_k.items()},
            "recall_at_k_direct": {str(k): v for k, v in self.recall_at_k_direct.items()},
            "vqa_accuracy": self.vqa_accuracy,
            "token_f1_mean": self.token_f1_mean,
            "tool_stats": {
                name: {"mean": s.mean, "variance": s.variance}
                for name, s in self.tool_stats.items()
            },
            "combinations": self.combinations,
            "stage_latency": self.stage_latency,
        }


def build_report(traces: Sequence[PipelineTrace], ks: Sequence[int] = (1, 5, 10)) -> EvalReport:
    have_articles = all(t.gt_article_id for t in traces)
    have_answers = all(t.gt_answer is not None for t in traces)
    recall = {k: recall_at_k(traces, k) for k in ks} if have_articles else {}
    recall_direct = {k: recall_at_k(traces, k, include_tools=False) for k in ks} \
        if have_articles else {}
    accuracy = vqa_accuracy(traces) if have_answers else None
    f1 = sum(token_f1(t.answer, t.gt_answer) for t in traces) / len(traces) \
        if have_answers and traces else None
    stats, combinations = tool_usage_stats(traces)
    latency: dict[str, float] = {}
    stages = ("processing", "retrieval", "filtering", "answering")
    for stage in stages:
        values = [t.stage_seconds.get(stage) for t in traces]
        values = [v for v in values if v is not None]
        if values:
            latency[stage] = sum(values) / len(values)
    return EvalReport(
        n_samples=len(traces),
        recall_at_k=recall,
        recall_at_k_direct=recall_direct,
        vqa_accuracy=accuracy,
        token_f1_mean=f1,
        tool_stats=stats,
        combinations=combinations,
        stage_latency=latency,
    )


def report_text(report: EvalReport) -> str:
    """Fixed-width text rendering: recall table, tool usage, latencies."""
    lines = [f"samples: {report.n_samples}", ""]
    if report.recall_at_k:
        lines.append("recall of retrieved articles (%)")
        lines.append(f"{'k':>4}  {'images':>10}  {'images + tools':>16}")
        for k in sorted(report.recall_at_k):
            lines.append(
                f"{k:>4}  {report.recall_at_k_direct[k]:>10.2f}  {report.recall_at_k[k]:>16.2f}"
            )
        lines.append("")
    if report.vqa_accuracy is not None:
        lines.append(f"vqa accuracy: {report.vqa_accuracy:.2f}")
        lines.append(f"token f1 (mean): {report.token_f1_mean:.4f}")
        lines.append("")
    lines.append("tool usage (mean / variance)")
    header = f"{'combinations':>12}"
    row = f"{report.combinations:>12}"
    for name in ("caption", "grounding", "flip"):
        label = {"caption": "captioning", "grounding": "grounding", "flip": "flipping"}[name]
        stat = report.tool_stats[name]
        header += f"  {label:>14}"
        row += f"  {f'{stat.mean:.2f} / {stat.variance:.2f}':>14}"
    lines.extend([header, row, ""])
    if report.stage_latency:
        lines.append("mean stage seconds")
        for stage, seconds in report.stage_latency.items():
            lines.append(f"  {stage:<11} {seconds:.4f}")
        total = sum(report.stage_latency.values())
        lines.append(f"  {'total':<11} {total:.4f}")
    return "\n".join(lines) + "\n"

"""Operator surface: ingest a knowledge base, run the pipeline over
sample files, evaluate trace directories, and check reward math on group
fixtures.

Configuration comes from one JSON file plus flag overrides (flags win).
Exit codes: 0 success (even with per-record diagnostics), 1 usage error,
2 environment or setup failure. ``PRF_LOG`` sets the log level.
"""

from __future__ import annotations

import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import click

from .embedder import EmbedderConfig, make_embedder
from .errors import PrfError
from .evaluation import build_report, report_text
from .index import VectorIndex
from .kb import KnowledgeBase, ingest as kb_ingest
from .model import RemoteModel, load_script
from .pipeline import Pipeline, PipelineTrace, RetrievalConfig, load_samples, step_clock
from .rl import WEIGHT_PRESETS, group_advantages, grpo_objective, load_group_fixtures

log = logging.getLogger("prfkit")

ARTICLE_INDEX_FILE = "articles.idx"
SECTION_INDEX_FILE = "sections.idx"


class SetupError(click.ClickException):
    exit_code = 2


@dataclass
class Config:
    kb_dir: str = "kb"
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    model_backend: str = "mock"
    script_path: str | None = None
    policy_endpoint: str | None = None
    tool_worker_endpoint: str | None = None
    model_timeout: float = 60.0
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    weights_preset: str = "paper"
    workers: int = 1
    out_dir: str = "traces"

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise SetupError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SetupError(f"config is not valid JSON: {exc}") from None
    try:
        model = raw.get("model", {})
        return Config(
            kb_dir=raw.get("kb_dir", "kb"),
            embedder=EmbedderConfig(**raw.get("embedder", {})),
            model_backend=model.get("backend", "mock"),
            script_path=model.get("script"),
            policy_endpoint=model.get("policy_endpoint"),
            tool_worker_endpoint=model.get("tool_endpoint"),
            model_timeout=model.get("timeout", 60.0),
            retrieval=RetrievalConfig(**raw.get("retrieval", {})),
            weights_preset=raw.get("weights", "paper"),
            workers=raw.get("workers", 1),
            out_dir=raw.get("out_dir", "traces"),
        )
    except (TypeError, ValueError) as exc:
        raise SetupError(f"bad config: {exc}") from None


def _require_path(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise SetupError(f"{what} not found: {path}")
    return path


@click.group()
def cli() -> None:
    """Knowledge-base VQA pipeline tools."""


@cli.command("ingest")
@click.argument("records", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), help="JSON config file.")
@click.option("--kb", "kb_dir", type=click.Path(), help="Output KB directory.")
def cmd_ingest(records: str, config_path: str | None, kb_dir: str | None) -> None:
    """Ingest line-delimited records and build the vector indexes."""
    config = load_config(config_path)
    if kb_dir:
        config.kb_dir = kb_dir
    records_path = _require_path(records, "records file")
    embedder = make_embedder(config.embedder)
    with open(records_path, encoding="utf-8") as fh:
        kb, report = kb_ingest(fh, embedder)
    out = Path(config.kb_dir)
    kb.save(out)
    if len(kb):
        VectorIndex.build(kb.image_pairs()).save(out / ARTICLE_INDEX_FILE)
    section_pairs = kb.section_pairs()
    if section_pairs:
        VectorIndex.build(section_pairs).save(out / SECTION_INDEX_FILE)
    click.echo(f"articles: {report.articles}")
    click.echo(f"sections: {report.sections}")
    click.echo(f"failures: {len(report.failures)}")
    for lineno, message in report.failures:
        click.echo(f"  line {lineno}: {message}")
    if not len(kb):
        raise SetupError("no articles ingested")


def _build_models(config: Config):
    if config.model_backend == "mock":
        if not config.script_path:
            raise SetupError("mock model backend needs a script file")
        script = load_script(_require_path(config.script_path, "script file"))
        return script, script
    if config.model_backend == "remote":
        if not config.policy_endpoint:
            raise SetupError("remote model backend needs a policy endpoint")
        policy = RemoteModel(config.policy_endpoint, timeout=config.model_timeout)
        tool_endpoint = config.tool_worker_endpoint or config.policy_endpoint
        worker = RemoteModel(tool_endpoint, timeout=config.model_timeout)
        return policy, worker
    raise SetupError(f"unknown model backend {config.model_backend!r}")


def _trace_filename(index: int, sample_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", sample_id) or "sample"
    return f"{index:05d}_{safe}.json"


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(), help="JSON config file.")
@click.option("--kb", "kb_dir", type=click.Path(), help="KB directory (built by ingest).")
@click.option("--samples", "samples_path", type=click.Path(), required=True,
              help="Line-delimited sample records.")
@click.option("--out", "out_dir", type=click.Path(), help="Trace output directory.")
@click.option("--workers", type=int, default=None, help="Concurrent samples.")
@click.option("--k-articles", type=int, default=None,
              help="Articles kept per tool query.")
@click.option("--k-sections", type=int, default=None,
              help="Sections kept per tool query.")
@click.option("--no-tools", is_flag=True, help="Skip tool planning and tool search.")
@click.option("--no-filter", is_flag=True,
              help="Pass retrieved text through unfiltered.")
@click.option("--script", "script_path", type=click.Path(),
              help="Scripted model responses (forces the mock model backend).")
def cmd_run(config_path, kb_dir, samples_path, out_dir, workers, k_articles,
            k_sections, no_tools, no_filter, script_path) -> None:
    """Run the pipeline over samples and write one trace file each."""
    config = load_config(config_path)
    if kb_dir:
        config.kb_dir = kb_dir
    if out_dir:
        config.out_dir = out_dir
    if workers is not None:
        config.workers = workers
    if script_path:
        config.model_backend = "mock"
        config.script_path = script_path
    overrides = {}
    if k_articles is not None:
        overrides["k_tool_articles"] = k_articles
    if k_sections is not None:
        overrides["k_sections"] = k_sections
    if overrides:
        config.retrieval = replace(config.retrieval, **overrides)

    kb_path = _require_path(config.kb_dir, "KB directory")
    try:
        kb = KnowledgeBase.load(kb_path)
        article_index = VectorIndex.load(kb_path / ARTICLE_INDEX_FILE)
        section_file = kb_path / SECTION_INDEX_FILE
        section_index = VectorIndex.load(section_file) if section_file.exists() else None
    except (PrfError, OSError, KeyError, ValueError) as exc:
        raise SetupError(f"cannot load KB artifacts: {exc}") from None
    policy, tool_worker = _build_models(config)
    embedder = make_embedder(config.embedder)
    deterministic = config.model_backend == "mock" and config.embedder.backend == "mock"
    pipeline = Pipeline(
        kb, article_index, section_index, embedder, policy, tool_worker,
        config.retrieval,
        use_tools=not no_tools,
        use_filter=not no_filter,
        clock_factory=step_clock if deterministic else None,
    )
    samples = load_samples(_require_path(samples_path, "samples file"))
    traces = pipeline.run_batch(samples, workers=config.workers)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, trace in enumerate(traces):
        (out / _trace_filename(i, trace.sample_id)).write_text(trace.to_json(), "utf-8")
    errors = sum(1 for t in traces if t.error)
    click.echo(f"samples: {len(traces)}  errors: {errors}  out: {out}")
    stages = ("processing", "retrieval", "filtering", "answering")
    means = []
    for stage in stages:
        values = [t.stage_seconds[stage] for t in traces if stage in t.stage_seconds]
        means.append(sum(values) / len(values) if values else 0.0)
    click.echo(
        "mean stage seconds: processing+retrieval {:.4f}  filtering {:.4f}  "
        "answering {:.4f}  total {:.4f}".format(
            means[0] + means[1], means[2], means[3], sum(means)
        )
    )


def _load_traces(traces_dir: Path) -> list[PipelineTrace]:
    files = sorted(traces_dir.glob("*.json"))
    if not files:
        raise SetupError(f"no trace files in {traces_dir}")
    return [PipelineTrace.from_json(f.read_text("utf-8")) for f in files]


@cli.command("eval")
@click.argument("traces_dir", type=click.Path())
@click.option("--gt", "gt_path", type=click.Path(),
              help="Line-delimited {id, gt_answer?, gt_article_id?} records.")
@click.option("--ks", default="1,5,10", show_default=True,
              help="Comma-separated k values for recall.")
@click.option("--json", "json_out", type=click.Path(), help="Also write the report as JSON.")
def cmd_eval(traces_dir, gt_path, ks, json_out) -> None:
    """Score a directory of traces against ground truth."""
    traces = _load_traces(_require_path(traces_dir, "traces directory"))
    if gt_path:
        joined: dict[str, dict] = {}
        for line in _require_path(gt_path, "gt file").read_text("utf-8").splitlines():
            if line.strip():
                record = json.loads(line)
                joined[str(record["id"])] = record
        for trace in traces:
            record = joined.get(trace.sample_id)
            if record:
                trace.gt_answer = record.get("gt_answer", trace.gt_answer)
                trace.gt_article_id = record.get("gt_article_id", trace.gt_article_id)
    try:
        k_values = [int(v) for v in ks.split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"bad --ks value {ks!r}") from None
    if not k_values or min(k_values) < 1:
        raise click.UsageError(f"bad --ks value {ks!r}")
    report = build_report(traces, ks=k_values)
    click.echo(report_text(report), nl=False)
    if json_out:
        Path(json_out).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", "utf-8"
        )


@cli.command("reward-check")
@click.argument("fixture", type=click.Path())
@click.option("--weights", "preset", type=click.Choice(sorted(WEIGHT_PRESETS)),
              default="paper", show_default=True, help="Reward weight preset.")
@click.option("--eps-clip", type=float, default=0.2, show_default=True,
              help="Clipping half-width for the surrogate objective.")
def cmd_reward_check(fixture, preset, eps_clip) -> None:
    """Print rewards, advantages, and the objective value for each group."""
    weights = WEIGHT_PRESETS[preset]
    try:
        groups = load_group_fixtures(_require_path(fixture, "fixture file"), weights=weights)
        for i, group in enumerate(groups, start=1):
            advantages = group_advantages(group.rewards)
            objective = grpo_objective(group, eps_clip=eps_clip)
            click.echo(f"group {i}: rewards {_fmt(group.rewards)}")
            click.echo(f"  advantages: {_fmt(advantages)}")
            click.echo(f"  objective (eps_clip={eps_clip:g}): {objective:.9g}")
    except (PrfError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise SetupError(f"bad fixture: {exc}") from None


def _fmt(values) -> str:
    return "[" + ", ".join(f"{v:.9g}" for v in values) + "]"


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("PRF_LOG", "WARNING").upper())
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except SetupError as exc:
        click.echo(f"setup error: {exc.format_message()}", err=True)
        return 2
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())

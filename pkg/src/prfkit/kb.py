"""Knowledge base: articles with title-stripped sections and one image
embedding each, plus line-delimited ingestion and directory persistence.

Section embeddings are computed from the body alone; headings survive only
as metadata. Articles whose text yields no non-empty section are kept but
excluded from section search.

Record format, one JSON object per line:

    article_id   string, unique, must not contain U+001F
    title        string
    text         string (split on heading lines), or
    sections     array of {"heading": str, "body": str}
    image_ppm_base64  base64 P6 PPM bytes, or
    image_embedding   array of d numbers
    exactly one of the two image fields must be present.

Persistence layout: ``manifest.json`` (format version, dimension, counts),
``articles.jsonl`` (ids, titles, section texts), and two float32 matrices,
``image_embeddings.npy`` and ``section_embeddings.npy``, in article line
order and (article, section index) order respectively.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .embedder import l2_normalize
from .errors import DimensionMismatchError, NotFoundError
from .imaging import decode_ppm

__all__ = ["Article", "Section", "KnowledgeBase", "IngestReport", "split_sections",
           "ingest", "section_key", "split_section_key", "DEFAULT_HEADING_RULE"]

# Wiki-markup ("== History ==") and markdown ("# History") heading lines.
DEFAULT_HEADING_RULE = re.compile(r"^(?:==+[^=].*|==+|#+\s*.*)$")

SECTION_KEY_SEP = "\x1f"

KB_FORMAT_VERSION = 1


def section_key(article_id: str, section_index: int) -> str:
    """Stable string id for a section, usable as a vector-index id."""
    return f"{article_id}{SECTION_KEY_SEP}{section_index}"


def split_section_key(key: str) -> tuple[str, int]:
    article_id, _, index = key.rpartition(SECTION_KEY_SEP)
    return article_id, int(index)


@dataclass(frozen=True)
class Section:
    article_id: str
    section_index: int
    heading: str
    body: str
    embedding: np.ndarray


@dataclass(frozen=True)
class Article:
    article_id: str
    title: str
    sections: tuple[Section, ...]
    image_embedding: np.ndarray


@dataclass
class IngestReport:
    articles: int = 0
    sections: int = 0
    empty_articles: int = 0
    failures: list[tuple[int, str]] = field(default_factory=list)


def _strip_heading_markup(line: str) -> str:
    return line.strip().strip("=#").strip()


def split_sections(text: str, heading_rule: re.Pattern[str] | None = None) -> list[tuple[str, str]]:
    """Split raw article text into (heading, body) pairs.

    Lines matching the heading rule start a new section; text before the
    first heading becomes a section with an empty heading. Headings are
    kept as metadata only, and sections whose body trims to nothing are
    dropped.
    """
    rule = heading_rule or DEFAULT_HEADING_RULE
    pairs: list[tuple[str, str]] = []
    heading = ""
    body_lines: list[str] = []

    def flush() -> None:
        body = "\n".join(body_lines).strip()
        if body:
            pairs.append((heading, body))

    for line in text.splitlines():
        if rule.match(line):
            flush()
            heading = _strip_heading_markup(line)
            body_lines = []
        else:
            body_lines.append(line)
    flush()
    return pairs


class KnowledgeBase:
    """Sealed article store; safe for unrestricted concurrent reads."""

    def __init__(self, dimension: int) -> None:
        self.dimension = dimension
        self._articles: dict[str, Article] = {}

    def __contains__(self, article_id: str) -> bool:
        return article_id in self._articles

    def __len__(self) -> int:
        return len(self._articles)

    @property
    def n_sections(self) -> int:
        return sum(len(a.sections) for a in self._articles.values())

    def add(self, article: Article) -> None:
        self._articles[article.article_id] = article

    def get_article(self, article_id: str) -> Article:
        try:
            return self._articles[article_id]
        except KeyError:
            raise NotFoundError(article_id) from None

    def get_section(self, article_id: str, section_index: int) -> Section:
        article = self.get_article(article_id)
        if not 0 <= section_index < len(article.sections):
            raise NotFoundError(f"{article_id} section {section_index}")
        return article.sections[section_index]

    def articles(self) -> Iterable[Article]:
        return self._articles.values()

    def image_pairs(self) -> list[tuple[str, np.ndarray]]:
        """(article_id, image embedding) pairs for the article-image index."""
        return [(a.article_id, a.image_embedding) for a in self._articles.values()]

    def section_pairs(self) -> list[tuple[str, np.ndarray]]:
        """(section key, embedding) pairs for the section index."""
        return [
            (section_key(a.article_id, s.section_index), s.embedding)
            for a in self._articles.values()
            for s in a.sections
        ]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        order = list(self._articles.values())
        manifest = {
            "format_version": KB_FORMAT_VERSION,
            "dimension": self.dimension,
            "articles": len(order),
            "sections": self.n_sections,
        }
        (directory / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", "utf-8"
        )
        with open(directory / "articles.jsonl", "w", encoding="utf-8") as fh:
            for article in order:
                fh.write(json.dumps({
                    "article_id": article.article_id,
                    "title": article.title,
                    "sections": [
                        {"heading": s.heading, "body": s.body} for s in article.sections
                    ],
                }, sort_keys=True) + "\n")
        image_rows = np.stack([a.image_embedding for a in order]) if order else \
            np.zeros((0, self.dimension), dtype=np.float32)
        section_rows = [s.embedding for a in order for s in a.sections]
        section_matrix = np.stack(section_rows) if section_rows else \
            np.zeros((0, self.dimension), dtype=np.float32)
        np.save(directory / "image_embeddings.npy", image_rows.astype(np.float32))
        np.save(directory / "section_embeddings.npy", section_matrix.astype(np.float32))

    @classmethod
    def load(cls, directory: str | Path) -> "KnowledgeBase":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text("utf-8"))
        kb = cls(dimension=int(manifest["dimension"]))
        image_rows = np.load(directory / "image_embeddings.npy")
        section_rows = np.load(directory / "section_embeddings.npy")
        cursor = 0
        with open(directory / "articles.jsonl", encoding="utf-8") as fh:
            for row, line in enumerate(fh):
                record = json.loads(line)
                sections = []
                for j, sec in enumerate(record["sections"]):
                    sections.append(Section(
                        article_id=record["article_id"],
                        section_index=j,
                        heading=sec["heading"],
                        body=sec["body"],
                        embedding=section_rows[cursor],
                    ))
                    cursor += 1
                kb.add(Article(
                    article_id=record["article_id"],
                    title=record["title"],
                    sections=tuple(sections),
                    image_embedding=image_rows[row],
                ))
        return kb


def _article_from_record(record: dict, embedder) -> Article:
    article_id = record.get("article_id")
    if not isinstance(article_id, str) or not article_id:
        raise ValueError("missing or empty article_id")
    if SECTION_KEY_SEP in article_id:
        raise ValueError("article_id contains a reserved separator character")
    title = record.get("title")
    if not isinstance(title, str):
        raise ValueError("missing title")

    if ("text" in record) == ("sections" in record):
        raise ValueError("record needs exactly one of 'text' or 'sections'")
    if "text" in record:
        raw_pairs = split_sections(record["text"])
    else:
        raw_pairs = [(sec.get("heading", ""), sec.get("body", "")) for sec in record["sections"]]
        raw_pairs = [(h, b.strip()) for h, b in raw_pairs if b and b.strip()]

    has_image = "image_ppm_base64" in record
    has_vector = "image_embedding" in record
    if has_image == has_vector:
        raise ValueError("record needs exactly one of 'image_ppm_base64' or 'image_embedding'")
    if has_image:
        image = decode_ppm(base64.b64decode(record["image_ppm_base64"]))
        image_embedding = embedder.embed_image(image)
    else:
        vector = record["image_embedding"]
        if len(vector) != embedder.dimension:
            raise DimensionMismatchError(
                f"embedding has {len(vector)} dims, expected {embedder.dimension}"
            )
        image_embedding = l2_normalize(np.array(vector, dtype=np.float64))

    sections = tuple(
        Section(
            article_id=article_id,
            section_index=j,
            heading=heading,
            body=body,
            embedding=embedder.embed_text(body),
        )
        for j, (heading, body) in enumerate(raw_pairs)
    )
    return Article(
        article_id=article_id,
        title=title,
        sections=sections,
        image_embedding=image_embedding,
    )


def ingest(lines: Iterable[str], embedder) -> tuple[KnowledgeBase, IngestReport]:
    """Build a KnowledgeBase from line-delimited JSON records.

    Bad records are skipped and reported with their 1-based line number;
    repeated article ids keep the first occurrence (restart-friendly) and
    report the rest as DuplicateId failures.
    """
    kb = KnowledgeBase(dimension=embedder.dimension)
    report = IngestReport()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            report.failures.append((lineno, f"BadRecord: invalid JSON ({exc.msg})"))
            continue
        try:
            article = _article_from_record(record, embedder)
        except DimensionMismatchError as exc:
            report.failures.append((lineno, f"DimensionMismatch: {exc}"))
            continue
        except Exception as exc:
            report.failures.append((lineno, f"BadRecord: {exc}"))
            continue
        if article.article_id in kb:
            report.failures.append((lineno, f"DuplicateId: {article.article_id!r}"))
            continue
        kb.add(article)
        report.articles += 1
        report.sections += len(article.sections)
        if not article.sections:
            report.empty_articles += 1
    return kb, report

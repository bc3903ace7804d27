"""Shared fixtures: tiny images, a scripted end-to-end scenario, and the
planted-relevance synthetic KB used by the retrieval and CLI tests.

The planted KB encodes relevance directly in precomputed image-embedding
vectors: for "rescued" samples the ground-truth article's image embedding
equals the mock text embedding of that sample's scripted caption query,
while a distractor article sits close (but not equal) to the reference
image embedding. Direct retrieval then picks the distractor and only the
caption-driven tool search surfaces the ground truth.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from prfkit.embedder import MockEmbedder, l2_normalize
from prfkit.imaging import Image, decode_ppm, encode_ppm

DIMENSION = 64

N_SAMPLES = 20
N_RESCUED = 8  # samples whose ground truth only tool search can reach
N_FILLERS = 72

RESCUED = range(N_SAMPLES - N_RESCUED, N_SAMPLES)


def tiny_image(seed: int, width: int = 2, height: int = 2) -> Image:
    pixels = bytes((seed * 31 + t * 7) % 256 for t in range(width * height * 3))
    return Image(width=width, height=height, pixels=pixels)


def ppm_base64(image: Image) -> str:
    return base64.b64encode(encode_ppm(image)).decode("ascii")


@pytest.fixture
def announce(capsys):
    def _announce(line: str) -> None:
        with capsys.disabled():
            print(line)

    return _announce


def _caption_query(j: int) -> str:
    return f"A stone monument with a carved plaque, scene {j:02d} landmark view."


def _article_record(article_id: str, title: str, year: int, vector: np.ndarray) -> dict:
    text = (
        f"{title} is a notable landmark visited by many travelers every year.\n"
        f"== History ==\n"
        f"Construction finished in {year}, and a bronze statue was added at the "
        f"entrance a decade later to honor the founders.\n"
        f"== Architecture ==\n"
        f"The structure combines granite walls with a copper roof and houses a "
        f"small museum about the region."
    )
    return {
        "article_id": article_id,
        "title": title,
        "text": text,
        "image_embedding": [float(v) for v in vector],
    }


@dataclass
class PlantedFixture:
    root: Path
    records_path: Path
    script_path: Path
    samples_path: Path
    config_path: Path
    kb_dir: Path
    gt_path: Path


def build_planted_fixture(root: Path) -> PlantedFixture:
    """Write records/script/samples/config files for the synthetic KB."""
    embedder = MockEmbedder(dimension=DIMENSION, seed=0)
    records: list[dict] = []
    rules: list[dict] = []
    samples: list[dict] = []
    gt_lines: list[dict] = []

    for j in range(N_SAMPLES):
        image = tiny_image(j)
        gt_id = f"a{j:02d}"
        question = f"What material is the monument in scene {j:02d} made of?"
        answer = "bronze" if j % 2 == 0 else "granite"
        if j in RESCUED:
            # Ground truth reachable only through the caption query.
            gt_vector = embedder.embed_text(_caption_query(j))
            noise = embedder.embed_text(f"distractor noise {j:02d}")
            near = l2_normalize(
                0.97 * embedder.embed_image(image).astype(np.float64)
                + 0.03 * noise.astype(np.float64)
            )
            records.append(_article_record(f"z{j:02d}", f"Decoy hall {j:02d}", 1800 + j, near))
            rules.append({
                "stage": "tool_plan",
                "contains": f"scene {j:02d}",
                "response": (
                    "<think>The reference image is dominated by the wrong building; "
                    "a caption query should recover the monument.</think>"
                    f"<tool>\n1. caption: monument close-up {j:02d}\n</tool>"
                ),
            })
            rules.append({
                "stage": "caption",
                "contains": f"monument close-up {j:02d}",
                "response": _caption_query(j),
            })
        else:
            gt_vector = embedder.embed_image(image)
        records.append(_article_record(gt_id, f"Monument {j:02d}", 1900 + j, gt_vector))
        if j < 10:
            rules.append({
                "stage": "answer",
                "contains": f"scene {j:02d}",
                "response": answer.capitalize() + ".",
            })
        samples.append({
            "id": f"s{j:02d}",
            "question": question,
            "image_ppm_base64": ppm_base64(image),
            "gt_answer": answer,
            "gt_article_id": gt_id,
        })
        gt_lines.append({"id": f"s{j:02d}", "gt_answer": answer, "gt_article_id": gt_id})

    for i in range(N_FILLERS):
        vector = embedder.embed_text(f"filler topic {i:02d}")
        records.append(_article_record(f"f{i:02d}", f"Filler place {i:02d}", 1700 + i, vector))

    rules.append({
        "stage": "tool_plan",
        "contains": "",
        "response": "<think>The image alone should retrieve the right article.</think><tool></tool>",
    })
    rules.append({
        "stage": "filter",
        "contains": "",
        "response": (
            "<think>Keeping only the lines about construction and materials.</think>"
            "<answer>The monument entrance has a bronze statue; walls are granite.</answer>"
        ),
    })
    rules.append({"stage": "answer", "contains": "", "response": "unknown"})

    records_path = root / "records.jsonl"
    records_path.write_text("".join(json.dumps(r) + "\n" for r in records), "utf-8")
    script_path = root / "script.jsonl"
    script_path.write_text("".join(json.dumps(r) + "\n" for r in rules), "utf-8")
    samples_path = root / "samples.jsonl"
    samples_path.write_text("".join(json.dumps(s) + "\n" for s in samples), "utf-8")
    gt_path = root / "gt.jsonl"
    gt_path.write_text("".join(json.dumps(g) + "\n" for g in gt_lines), "utf-8")
    kb_dir = root / "kb"
    config_path = root / "config.json"
    config_path.write_text(json.dumps({
        "kb_dir": str(kb_dir),
        "embedder": {"backend": "mock", "dimension": DIMENSION, "seed": 0},
        "model": {"backend": "mock", "script": str(script_path)},
        "retrieval": {"k_direct_articles": 1, "k_tool_articles": 5, "k_sections": 3},
        "workers": 1,
    }, indent=2), "utf-8")
    return PlantedFixture(
        root=root,
        records_path=records_path,
        script_path=script_path,
        samples_path=samples_path,
        config_path=config_path,
        kb_dir=kb_dir,
        gt_path=gt_path,
    )


@pytest.fixture(scope="session")
def planted(tmp_path_factory) -> PlantedFixture:
    """Planted-relevance fixture with its KB already ingested."""
    from prfkit.cli import main

    fixture = build_planted_fixture(tmp_path_factory.mktemp("planted"))
    code = main(["ingest", str(fixture.records_path), "--config", str(fixture.config_path)])
    assert code == 0
    return fixture


@pytest.fixture(scope="session")
def planted_traces(planted, tmp_path_factory):
    """Traces from one pipeline run over the planted fixture."""
    from prfkit.cli import main
    from prfkit.pipeline import PipelineTrace

    out = tmp_path_factory.mktemp("planted-traces")
    code = main([
        "run", "--config", str(planted.config_path),
        "--samples", str(planted.samples_path), "--out", str(out),
    ])
    assert code == 0
    return [
        PipelineTrace.from_json(path.read_text("utf-8"))
        for path in sorted(out.glob("*.json"))
    ]


def sample_ppm_bytes() -> bytes:
    return encode_ppm(tiny_image(3, 4, 4))


def decode(data: bytes) -> Image:
    return decode_ppm(data)


GOLDEN_QUESTION = "What is that statue made of?"

GOLDEN_RULES = [
    {
        "stage": "tool_plan",
        "contains": "statue",
        "response": (
            "<think>The statue is a small part of the scene; flip the image, "
            "ground the statue, then caption it.</think>"
            "<tool>\n1. Flip: Flip left.\n2. grounding: the statue\n"
            "3. caption: A bell tower with a statue.\n</tool>"
        ),
    },
    {"stage": "grounding", "contains": "the statue",
     "response": '{"bbox_2d": [1, 1, 3, 3]}'},
    {"stage": "caption", "contains": "A bell tower with a statue.",
     "response": "A stone bell tower with a bronze statue at its base."},
    {
        "stage": "filter",
        "contains": "statue",
        "response": (
            "<think>Only the history section mentions the statue's material; "
            "the rest is noise.</think>"
            "<answer>Built in 1900; the statue at the entrance is bronze.</answer>"
        ),
    },
    {"stage": "answer", "contains": "statue", "response": "Bronze."},
]


def golden_kb_records(embedder: MockEmbedder, image: Image) -> list[str]:
    def art(article_id, title, text, vector):
        return json.dumps({
            "article_id": article_id,
            "title": title,
            "text": text,
            "image_embedding": [float(v) for v in vector],
        })

    tower_text = (
        "The old town bell tower overlooks the central square and is a common "
        "meeting point for guided walks through the historic district.\n"
        "== History ==\n"
        "Built in 1900 after the great fire, the tower replaced a wooden "
        "belfry. A bronze statue of the town founder was placed by the "
        "entrance during the anniversary celebrations, and the bells were "
        "recast twice in the following decades.\n"
        "== Visiting ==\n"
        "The gallery at the top is open in summer months and offers a wide "
        "view over the rooftops, the harbor, and the distant orchard hills."
    )
    garden_text = (
        "The botanical garden holds several glasshouses.\n"
        "== Collections ==\n"
        "Orchids and alpine plants dominate the collection, with seasonal "
        "exhibitions of succulents near the southern gate."
    )
    harbor_text = (
        "The harbor serves small fishing boats.\n"
        "== Trade ==\n"
        "Salted fish was the main export for a century, later replaced by "
        "tourism and ferry traffic to the outer islands."
    )
    return [
        art("belltower", "Old Town Bell Tower", tower_text, embedder.embed_image(image)),
        art("garden", "Botanical Garden", garden_text, embedder.embed_text("Botanical Garden")),
        art("harbor", "Fishing Harbor", harbor_text, embedder.embed_text("Fishing Harbor")),
    ]


def build_golden_pipeline(model=None, **pipeline_kwargs):
    """Scripted flip+grounding+caption scenario over a 3-article KB."""
    from prfkit.index import VectorIndex
    from prfkit.kb import ingest
    from prfkit.model import ScriptedModel, ScriptRule
    from prfkit.pipeline import Pipeline, RetrievalConfig, Sample, step_clock

    embedder = MockEmbedder(dimension=DIMENSION, seed=0)
    image = tiny_image(42, 4, 4)
    kb, report = ingest(golden_kb_records(embedder, image), embedder)
    assert not report.failures
    if model is None:
        model = ScriptedModel([ScriptRule(**r) for r in GOLDEN_RULES])
    pipeline = Pipeline(
        kb,
        VectorIndex.build(kb.image_pairs()),
        VectorIndex.build(kb.section_pairs()),
        embedder,
        model,
        model,
        RetrievalConfig(k_direct_articles=1, k_tool_articles=2, k_sections=2),
        clock_factory=pipeline_kwargs.pop("clock_factory", step_clock),
        **pipeline_kwargs,
    )
    sample = Sample(
        id="golden",
        image=image,
        question=GOLDEN_QUESTION,
        gt_answer="bronze",
        gt_article_id="belltower",
    )
    return pipeline, sample

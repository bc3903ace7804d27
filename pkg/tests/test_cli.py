import json
from pathlib import Path

import pytest

from prfkit.cli import main
from prfkit.pipeline import PipelineTrace

from conftest import build_planted_fixture


def read_dir_bytes(directory: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


class TestIngest:
    def test_counts_reported(self, planted, capsys):
        # The session fixture already ran ingest; run again into a fresh dir.
        code = main(["ingest", str(planted.records_path),
                     "--config", str(planted.config_path),
                     "--kb", str(planted.root / "kb-again")])
        out = capsys.readouterr().out
        assert code == 0
        assert "articles: 100" in out
        assert "failures: 0" in out

    def test_idempotent_persisted_bytes(self, planted):
        kb_a = planted.root / "kb-idem-a"
        kb_b = planted.root / "kb-idem-b"
        for target in (kb_a, kb_b):
            assert main(["ingest", str(planted.records_path),
                         "--config", str(planted.config_path), "--kb", str(target)]) == 0
        assert read_dir_bytes(kb_a) == read_dir_bytes(kb_b)

    def test_bad_line_is_diagnostic_not_fatal(self, planted, tmp_path, capsys):
        records = planted.records_path.read_text("utf-8").splitlines()
        records.insert(1, "{broken json")
        bad_path = tmp_path / "records.jsonl"
        bad_path.write_text("\n".join(records) + "\n", "utf-8")
        code = main(["ingest", str(bad_path), "--config", str(planted.config_path),
                     "--kb", str(tmp_path / "kb")])
        out = capsys.readouterr().out
        assert code == 0
        assert "failures: 1" in out
        assert "line 2" in out

    def test_missing_records_is_setup_failure(self, planted, capsys):
        code = main(["ingest", "/nonexistent/records.jsonl",
                     "--config", str(planted.config_path)])
        assert code == 2


class TestRun:
    def test_writes_one_trace_per_sample(self, planted, tmp_path, capsys):
        out = tmp_path / "traces"
        code = main(["run", "--config", str(planted.config_path),
                     "--samples", str(planted.samples_path), "--out", str(out)])
        stdout = capsys.readouterr().out
        assert code == 0
        assert len(list(out.glob("*.json"))) == 20
        assert "samples: 20  errors: 0" in stdout
        assert "mean stage seconds" in stdout

    def test_rerun_byte_identical(self, planted, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["run", "--config", str(planted.config_path),
                         "--samples", str(planted.samples_path), "--out", str(out)]) == 0
        assert read_dir_bytes(out_a) == read_dir_bytes(out_b)

    def test_no_tools_ablation(self, planted, tmp_path):
        out = tmp_path / "ablated"
        assert main(["run", "--config", str(planted.config_path),
                     "--samples", str(planted.samples_path), "--out", str(out),
                     "--no-tools"]) == 0
        traces = [PipelineTrace.from_json(p.read_text("utf-8"))
                  for p in sorted(out.glob("*.json"))]
        assert all(t.tools_disabled for t in traces)
        assert all(t.s_search == "" for t in traces)
        assert all(t.tool_queries == [] for t in traces)
        assert all(t.direct_hits for t in traces)

    def test_no_filter_ablation(self, planted, tmp_path):
        out = tmp_path / "nofilter"
        assert main(["run", "--config", str(planted.config_path),
                     "--samples", str(planted.samples_path), "--out", str(out),
                     "--no-filter"]) == 0
        traces = [PipelineTrace.from_json(p.read_text("utf-8"))
                  for p in sorted(out.glob("*.json"))]
        assert all(t.filter_disabled for t in traces)
        assert all(t.document_text in t.filtered_knowledge for t in traces)

    def test_k_flags_override(self, planted, tmp_path):
        out = tmp_path / "k1"
        assert main(["run", "--config", str(planted.config_path),
                     "--samples", str(planted.samples_path), "--out", str(out),
                     "--k-articles", "1", "--k-sections", "1"]) == 0
        traces = [PipelineTrace.from_json(p.read_text("utf-8"))
                  for p in sorted(out.glob("*.json"))]
        with_tools = [t for t in traces if t.tool_queries]
        assert with_tools
        for t in with_tools:
            for q in t.tool_queries:
                assert len(q["article_hits"]) <= 1
                assert len(q["section_hits"]) <= 1

    def test_missing_kb_is_setup_failure(self, planted, tmp_path, capsys):
        code = main(["run", "--config", str(planted.config_path),
                     "--samples", str(planted.samples_path),
                     "--kb", str(tmp_path / "nope"), "--out", str(tmp_path / "t")])
        assert code == 2

    def test_missing_samples_flag_is_usage_error(self, planted, capsys):
        assert main(["run", "--config", str(planted.config_path)]) == 1


class TestEval:
    @pytest.fixture(scope="class")
    def traces_dir(self, planted, tmp_path_factory):
        out = tmp_path_factory.mktemp("eval-traces")
        assert main(["run", "--config", str(planted.config_path),
                     "--samples", str(planted.samples_path), "--out", str(out)]) == 0
        return out

    def test_report_values_on_planted_fixture(self, planted, traces_dir, capsys):
        code = main(["eval", str(traces_dir), "--ks", "1,5"])
        out = capsys.readouterr().out
        assert code == 0
        # 12 of 20 samples are direct hits; tools recover the rest.
        assert "   1       60.00            100.00" in out
        # Scripted answers are correct for the first 10 samples only.
        assert "vqa accuracy: 50.00" in out

    def test_k_sweep_monotone(self, planted, traces_dir, capsys):
        code = main(["eval", str(traces_dir), "--ks", "1,2,3,5,10"])
        out = capsys.readouterr().out
        assert code == 0
        rows = []
        for line in out.splitlines():
            fields = line.split()
            if len(fields) == 3 and fields[0].isdigit():
                rows.append([float(v) for v in fields])
        assert len(rows) == 5
        tools_column = [row[2] for row in rows]
        assert tools_column == sorted(tools_column)

    def test_gt_join_overrides(self, planted, traces_dir, tmp_path, capsys):
        gt = tmp_path / "gt.jsonl"
        lines = [json.loads(line) for line in planted.gt_path.read_text("utf-8").splitlines()]
        for record in lines:
            record["gt_answer"] = "never matches"
        gt.write_text("".join(json.dumps(r) + "\n" for r in lines), "utf-8")
        code = main(["eval", str(traces_dir), "--gt", str(gt), "--ks", "1"])
        out = capsys.readouterr().out
        assert code == 0
        assert "vqa accuracy: 0.00" in out

    def test_empty_dir_is_error(self, tmp_path, capsys):
        assert main(["eval", str(tmp_path)]) == 2

    def test_bad_ks_is_usage_error(self, traces_dir, capsys):
        assert main(["eval", str(traces_dir), "--ks", "zero"]) == 1

    def test_json_report_written(self, traces_dir, tmp_path, capsys):
        out_json = tmp_path / "report.json"
        assert main(["eval", str(traces_dir), "--ks", "1", "--json", str(out_json)]) == 0
        report = json.loads(out_json.read_text("utf-8"))
        assert report["n_samples"] == 20
        assert report["recall_at_k"]["1"] == 100.0


GROUP_FIXTURE = (
    '{"rewards": [2, 1, 0], "responses": ['
    '{"old_logprobs": [-1.0], "new_logprobs": [-1.0]},'
    '{"old_logprobs": [-0.5], "new_logprobs": [-0.5]},'
    '{"old_logprobs": [-2.0], "new_logprobs": [-2.0]}]}\n'
)

COMPONENT_FIXTURE = (
    '{"responses": ['
    '{"components": {"em": 1, "tool_ok": true, "filter_ok": true},'
    ' "old_logprobs": [-1.0], "new_logprobs": [-1.0]},'
    '{"components": {"em": 0, "tool_ok": false, "filter_ok": false},'
    ' "old_logprobs": [-1.0], "new_logprobs": [-1.0]}]}\n'
)


class TestRewardCheck:
    def test_ratio_one_objective_near_zero(self, tmp_path, capsys):
        fixture = tmp_path / "groups.jsonl"
        fixture.write_text(GROUP_FIXTURE, "utf-8")
        assert main(["reward-check", str(fixture)]) == 0
        out = capsys.readouterr().out
        assert "rewards [2, 1, 0]" in out
        assert "objective (eps_clip=0.2): 0" in out

    def test_advantages_match_oracle(self, tmp_path, capsys):
        import statistics

        fixture = tmp_path / "groups.jsonl"
        fixture.write_text(GROUP_FIXTURE, "utf-8")
        main(["reward-check", str(fixture)])
        out = capsys.readouterr().out
        # Independent arithmetic with the default standardization eps.
        expected = (2 - 1) / (statistics.pstdev([2, 1, 0]) + 1e-8)
        assert f"{expected:.9g}" in out and f"{-expected:.9g}" in out

    def test_preset_changes_composed_rewards(self, tmp_path, capsys):
        fixture = tmp_path / "groups.jsonl"
        fixture.write_text(COMPONENT_FIXTURE, "utf-8")
        main(["reward-check", str(fixture), "--weights", "paper"])
        out_paper = capsys.readouterr().out
        assert "rewards [2, 0]" in out_paper
        main(["reward-check", str(fixture), "--weights", "appendix-equal"])
        out_equal = capsys.readouterr().out
        assert "rewards [4, 0]" in out_equal

    def test_malformed_fixture(self, tmp_path, capsys):
        fixture = tmp_path / "groups.jsonl"
        fixture.write_text('{"responses": []}\n', "utf-8")
        assert main(["reward-check", str(fixture)]) == 2

    def test_unknown_preset_is_usage_error(self, tmp_path, capsys):
        fixture = tmp_path / "groups.jsonl"
        fixture.write_text(GROUP_FIXTURE, "utf-8")
        assert main(["reward-check", str(fixture), "--weights", "bogus"]) == 1


class TestEntryPoint:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "ingest" in capsys.readouterr().out

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1


def test_workers_parallel_run_matches_serial(planted, tmp_path):
    out_serial = tmp_path / "serial"
    out_parallel = tmp_path / "parallel"
    assert main(["run", "--config", str(planted.config_path),
                 "--samples", str(planted.samples_path), "--out", str(out_serial),
                 "--workers", "1"]) == 0
    assert main(["run", "--config", str(planted.config_path),
                 "--samples", str(planted.samples_path), "--out", str(out_parallel),
                 "--workers", "4"]) == 0
    assert read_dir_bytes(out_serial) == read_dir_bytes(out_parallel)

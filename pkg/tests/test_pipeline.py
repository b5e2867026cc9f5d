"""End-to-end pipeline tests against the recorded fixture run."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from rvsyn import cli, pipeline, verifier
from rvsyn.pipeline import PipelineConfig, parse_backtranslation
from rvsyn.provider import TagMissing
from rvsyn.records import Verdict, read_jsonl

E2E = Path(__file__).resolve().parent / "fixtures" / "e2e"
EXPECTED = json.loads((E2E / "expected.json").read_text(encoding="utf-8"))


def fixture_config(tmp_path: Path, name: str = "run", concurrency: int | None = None) -> PipelineConfig:
    config = PipelineConfig.from_file(E2E / "config.json")
    config.output_dir = str(tmp_path / name)
    if concurrency is not None:
        config.concurrency = concurrency
    return config


class TestParseBacktranslation:
    def test_takes_final_problem_tag(self):
        text = "<analysis>a</analysis><problem>long</problem><final problem>Q</final problem>"
        assert parse_backtranslation(text) == "Q"

    def test_missing_tag(self):
        with pytest.raises(TagMissing):
            parse_backtranslation("<problem>only this</problem>")

    def test_last_wellformed_pair_wins(self):
        text = "<final problem>first</final problem> junk <final problem>second</final problem>"
        assert parse_backtranslation(text) == "second"


class TestStages:
    def test_decompose_counts(self, tmp_path):
        config = fixture_config(tmp_path)
        manifest = pipeline.run_decompose(config)
        assert manifest["input_count"] == EXPECTED["decompose"]["input"]
        assert manifest["output_count"] == EXPECTED["decompose"]["output"]
        assert manifest["filtered"] == EXPECTED["decompose"]["filtered"]

    def test_decompose_conservation(self, tmp_path):
        config = fixture_config(tmp_path)
        manifest = pipeline.run_decompose(config)
        assert manifest["input_count"] == manifest["output_count"] + sum(manifest["filtered"].values())
        rejections = read_jsonl(Path(config.output_dir) / "decompose" / "rejections.jsonl")
        assert len(rejections) == sum(manifest["filtered"].values())

    def test_label_merge_counts(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_decompose(config)
        manifest = pipeline.run_label_and_merge(config)
        exp = EXPECTED["label_merge"]
        assert manifest["input_count"] == exp["input"]
        assert manifest["output_count"] == exp["output"]
        assert manifest["filtered"] == exp["filtered"]
        assert manifest["merge"]["nodes_after"] == exp["nodes"]
        assert manifest["merge"]["merge_rate"] == pytest.approx(exp["merge_rate"])
        assert manifest["merge"]["structural_only_rate"] == pytest.approx(exp["structural_only_rate"])
        assert manifest["merge"]["semantic_only_rate"] == pytest.approx(exp["semantic_only_rate"])

    def test_duplicate_function_keeps_both_origins(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_decompose(config)
        pipeline.run_label_and_merge(config)
        nodes = read_jsonl(Path(config.output_dir) / "label_merge" / "nodes.jsonl")
        multi_origin = [
            fn for node in nodes for fn in node["members"] if len(fn["origin_graph_ids"]) > 1
        ]
        assert multi_origin, "shared functions should accumulate origin graph ids"

    def test_library_stats_match_expectation(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_decompose(config)
        pipeline.run_label_and_merge(config)
        manifest = pipeline.run_build_library(config)
        assert manifest["output_count"] == EXPECTED["library"]["nodes"]
        assert manifest["edge_count"] == EXPECTED["library"]["edges"]
        assert manifest["stats"] == EXPECTED["library"]["stats"]

    def test_finetune_corpus_records(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_decompose(config)
        manifest = pipeline.run_export_finetune(config)
        assert manifest["output_count"] == EXPECTED["decompose"]["output"]
        records = read_jsonl(Path(config.output_dir) / "finetune" / "corpus.jsonl")
        assert all(set(r) == {"input", "target"} for r in records)
        assert all(r["target"].startswith("def main") for r in records)


@pytest.fixture(scope="module")
def completed(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("runall")
    config = fixture_config(tmp)
    report = pipeline.run_all(config)
    return config, report


class TestRunAll:
    def test_artifacts_exist(self, completed):
        config, _ = completed
        out = Path(config.output_dir)
        for rel in (
            "decompose/graphs.jsonl",
            "label_merge/nodes.jsonl",
            "library/library.json",
            "library/stats.json",
            "library/stats.txt",
            "finetune/corpus.jsonl",
            "synthesize/dataset.jsonl",
            "report/funnel.json",
            "report/funnel.txt",
        ):
            assert (out / rel).exists(), rel

    def test_funnel_matches_expectation(self, completed):
        _, report = completed
        exp = EXPECTED["synthesize"]
        funnel = report["synthesis_funnel"]
        for key in ("attempts", "exec_failures", "mismatches", "emitted", "exec_failure_rate", "cot_mismatch_rate"):
            assert funnel[key] == exp[key], key

    def test_stage_conservation(self, completed):
        _, report = completed
        for stage, row in report["stages"].items():
            assert row["input"] == row["output"] + sum(row["filtered"].values()), stage

    def test_emission_soundness(self, completed):
        config, _ = completed
        records = read_jsonl(Path(config.output_dir) / "synthesize" / "dataset.jsonl")
        assert len(records) == EXPECTED["synthesize"]["emitted"]
        for record in records:
            outcome = verifier.verify_pair(record["answer"], record["solution"], item_id=record["id"])
            assert outcome.verdict == Verdict.VERIFIED, record["id"]

    def test_dataset_schema(self, completed):
        config, _ = completed
        records = read_jsonl(Path(config.output_dir) / "synthesize" / "dataset.jsonl")
        for record in records:
            assert set(record) == {"id", "problem", "solution", "answer", "meta"}
            assert record["meta"]["node_count"] == len(record["meta"]["node_ids"])
            assert record["meta"]["strategy"] in ("CoOccurrence", "Topic", "Edgeless")
            assert record["meta"]["call_count"] >= 1

    def test_full_items_provenance(self, completed):
        config, _ = completed
        items = read_jsonl(Path(config.output_dir) / "synthesize" / "items_full.jsonl")
        for item in items:
            assert len(item["function_ids"]) == len(item["node_ids"])
            assert item["verification"]["verdict"] == "Verified"


class TestDeterminism:
    def test_byte_identical_runs_across_concurrency(self, tmp_path):
        config_a = fixture_config(tmp_path, "a", concurrency=1)
        config_b = fixture_config(tmp_path, "b", concurrency=4)
        pipeline.run_all(config_a)
        pipeline.run_all(config_b)
        for rel in (
            "decompose/graphs.jsonl",
            "decompose/rejections.jsonl",
            "label_merge/nodes.jsonl",
            "library/library.json",
            "library/stats.json",
            "finetune/corpus.jsonl",
            "synthesize/dataset.jsonl",
            "synthesize/items_full.jsonl",
            "report/funnel.json",
        ):
            a = (Path(config_a.output_dir) / rel).read_bytes()
            b = (Path(config_b.output_dir) / rel).read_bytes()
            assert a == b, f"{rel} differs between runs"


class TestResume:
    def test_completed_stage_is_not_recomputed(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_all(config)
        graphs = Path(config.output_dir) / "decompose" / "graphs.jsonl"
        before = graphs.stat().st_mtime_ns
        pipeline.run_decompose(config)
        assert graphs.stat().st_mtime_ns == before

    def test_resume_after_partial_run(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_decompose(config)
        pipeline.run_label_and_merge(config)
        decompose_mtime = (Path(config.output_dir) / "decompose" / "graphs.jsonl").stat().st_mtime_ns
        pipeline.run_all(config)
        assert (Path(config.output_dir) / "decompose" / "graphs.jsonl").stat().st_mtime_ns == decompose_mtime
        dataset = read_jsonl(Path(config.output_dir) / "synthesize" / "dataset.jsonl")
        assert len(dataset) == EXPECTED["synthesize"]["emitted"]

    def test_empty_seed_file(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        config = fixture_config(tmp_path)
        config.seed_path = str(empty)
        manifest = pipeline.run_decompose(config)
        assert manifest["input_count"] == 0
        assert manifest["output_count"] == 0

    def test_unreadable_seed_path_aborts(self, tmp_path):
        config = fixture_config(tmp_path)
        config.seed_path = str(tmp_path / "missing.jsonl")
        with pytest.raises(OSError):
            pipeline.run_decompose(config)
        assert not (Path(config.output_dir) / "decompose" / "manifest.json").exists()


class TestConfigFeatures:
    def test_stage_toggles_limit_run_all(self, tmp_path):
        config = fixture_config(tmp_path)
        config.stages = ["decompose", "label_merge"]
        pipeline.run_all(config)
        out = Path(config.output_dir)
        assert (out / "decompose" / "manifest.json").exists()
        assert (out / "label_merge" / "manifest.json").exists()
        assert not (out / "synthesize").exists()

    def test_synthesize_count_zero_succeeds_with_empty_dataset(self, tmp_path):
        config = fixture_config(tmp_path)
        pipeline.run_decompose(config)
        pipeline.run_label_and_merge(config)
        pipeline.run_build_library(config)
        manifest = pipeline.run_synthesize(config, count=0)
        assert manifest["output_count"] == 0
        assert read_jsonl(Path(config.output_dir) / "synthesize" / "dataset.jsonl") == []

    def test_unknown_stage_rejected(self):
        base = json.loads((E2E / "config.json").read_text(encoding="utf-8"))
        base["stages"] = ["decompose", "no-such-stage"]
        with pytest.raises(ValueError):
            PipelineConfig.from_dict(base)

    def test_reprompt_on_format_error(self, tmp_path):
        from rvsyn.provider import CompletionResult

        well_formed = next(
            text
            for p in sorted((E2E / "completions").glob("*.txt"))
            if "def total_items" in (text := p.read_text(encoding="utf-8")) and "def main" in text
        )

        class FlakyProvider:
            def __init__(self):
                self.calls = 0

            def complete(self, request):
                self.calls += 1
                text = "no code, sorry" if self.calls == 1 else well_formed
                return CompletionResult(text=text, provider_tag="flaky")

        class FlakyConfig(PipelineConfig):
            def provider_for(self, template):
                return self.flaky

        seeds = tmp_path / "one-seed.jsonl"
        seeds.write_text(
            json.dumps({"id": "s1", "problem": "p", "solution": "", "answer": "-1"}) + "\n",
            encoding="utf-8",
        )
        config = FlakyConfig.from_file(E2E / "config.json")
        config.seed_path = str(seeds)
        config.output_dir = str(tmp_path / "flaky-run")
        config.reprompt_on_format_error = True
        config.flaky = FlakyProvider()
        manifest = pipeline.run_decompose(config)
        assert config.flaky.calls == 2
        # second completion parsed; whether it validates depends on the answer,
        # so only the FormatError path matters here
        assert manifest["filtered"].get("FormatError", 0) == 0


class TestCli:
    def test_run_all_and_stats(self, tmp_path, capsys):
        run_dir = tmp_path / "cli-run"
        config_path = tmp_path / "config.json"
        base = json.loads((E2E / "config.json").read_text(encoding="utf-8"))
        base["seed_path"] = str(E2E / "seeds.jsonl")
        base["provider"]["fixtures_dir"] = str(E2E / "completions")
        base["executor"]["results_path"] = str(E2E / "exec_results.jsonl")
        base["output_dir"] = str(run_dir)
        config_path.write_text(json.dumps(base), encoding="utf-8")

        assert cli.main(["--config", str(config_path), "run-all"]) == 0
        out = capsys.readouterr().out
        assert "decompose: in=50 out=46" in out

        assert cli.main(["--config", str(config_path), "stats"]) == 0
        out = capsys.readouterr().out
        assert "CB Connected Components Number" in out
        assert "TB Average Degree per Node" in out

        assert cli.main(["--config", str(config_path), "audit"]) == 0
        out = capsys.readouterr().out
        report = json.loads(out.strip().splitlines()[-1])
        assert report["Problem Error Rate (%)"] == 0.0
        assert report["sample_size"] == EXPECTED["synthesize"]["emitted"]

    def test_synthesize_budget_exhaustion_exit_code(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        base = json.loads((E2E / "config.json").read_text(encoding="utf-8"))
        base["seed_path"] = str(E2E / "seeds.jsonl")
        base["provider"]["fixtures_dir"] = str(E2E / "completions")
        base["executor"]["results_path"] = str(E2E / "exec_results.jsonl")
        base["output_dir"] = str(tmp_path / "run2")
        base["attempt_budget_factor"] = 1
        config_path.write_text(json.dumps(base), encoding="utf-8")
        # run earlier stages first so synthesize is reachable
        assert cli.main(["--config", str(config_path), "decompose"]) == 0
        assert cli.main(["--config", str(config_path), "label-merge"]) == 0
        assert cli.main(["--config", str(config_path), "build-library"]) == 0
        capsys.readouterr()
        # only the first 10 attempts have recorded fixtures; a target of 50
        # therefore exhausts its budget and must exit nonzero
        rc = cli.main(["--config", str(config_path), "synthesize", "--count", "50"])
        assert rc == 1

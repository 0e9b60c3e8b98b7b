"""Resumable pipeline runs: stage scoping, determinism, locking, remediation."""

import json
import shutil

import numpy as np
import pytest

from conftest import TopicProvider, make_document
from gdp.config import PipelineConfig
from gdp.errors import BackendError, GenerationAbortedError, PipelineError
from gdp.generation import MockLlmBackend
from gdp.graph import NodeEmbeddings
from gdp.pipeline import (
    LOCK_FILENAME,
    MANIFEST_FILENAME,
    STAGES,
    _load_pair_scores,
    _save_pair_scores,
    build_backend,
    build_classifier,
    file_sha256,
    plan_with_remediation,
    resolve_cache_dir,
    run_pipeline,
)


def pipeline_config(work_dir, **scalars):
    data = {
        "alpha": 0.7,
        "k": 3,
        "gnn": {"hidden": 16, "out": 8, "epochs": 25},
        "llm": {"backend": "mock"},
        "paths": {"work_dir": str(work_dir)},
    }
    data.update(scalars)
    return PipelineConfig.from_dict(data)


class FlakyBackend:
    """Produces one good slide, then dies."""

    name = "flaky"

    def __init__(self, fail_at=2):
        self.calls = 0
        self.fail_at = fail_at

    def complete(self, prompt, temperature=0.7, top_p=0.95):
        self.calls += 1
        if self.calls >= self.fail_at:
            raise BackendError("backend went away")
        return f"Slide Title: T{self.calls}\nBullet Points:\n- point"


class TestFullRun:
    def test_all_stages_execute_and_cluster_by_topic(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work")
        result = run_pipeline(topic_doc_path, config, provider=TopicProvider())
        assert result.executed == list(STAGES)
        assert result.skipped == []
        assert result.plan.clusters == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9, 10, 11]]
        assert len(result.presentation.slides) == 3
        for stage in STAGES:
            assert result.artifact(stage).exists()

        manifest = json.loads(
            (result.work_dir / MANIFEST_FILENAME).read_text()
        )
        assert set(manifest["stages"]) == set(STAGES)
        for stage, entry in manifest["stages"].items():
            assert file_sha256(result.artifact(stage)) == entry["sha256"]

    def test_attributions_partition_plan(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work")
        result = run_pipeline(topic_doc_path, config, provider=TopicProvider())
        attributed = [i for s in result.presentation.slides for i in s.attribution]
        assert sorted(attributed) == sorted(result.plan.paragraph_ids())
        assert len(attributed) == len(set(attributed))

    def test_rerun_skips_every_stage(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work")
        run_pipeline(topic_doc_path, config, provider=TopicProvider())
        again = run_pipeline(topic_doc_path, config, provider=TopicProvider())
        assert again.executed == []
        assert again.skipped == list(STAGES)

    def test_fresh_runs_are_byte_identical(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work")
        first = run_pipeline(topic_doc_path, config, provider=TopicProvider())
        first_bytes = first.artifact("generate").read_bytes()
        shutil.rmtree(tmp_path / "work")
        second = run_pipeline(topic_doc_path, config, provider=TopicProvider())
        assert second.artifact("generate").read_bytes() == first_bytes

    def test_until_stops_after_named_stage(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work")
        result = run_pipeline(
            topic_doc_path, config, provider=TopicProvider(), until="cluster"
        )
        assert result.plan is not None
        assert result.presentation is None
        assert "generate" not in result.executed
        assert not result.artifact("generate").exists()

    def test_unknown_until_rejected(self, tmp_path, topic_doc_path):
        with pytest.raises(ValueError, match="unknown stage"):
            run_pipeline(topic_doc_path, pipeline_config(tmp_path), until="polish")


class TestStageScoping:
    def test_alpha_change_reruns_graph_onward(self, tmp_path, topic_doc_path):
        work = tmp_path / "work"
        run_pipeline(topic_doc_path, pipeline_config(work), provider=TopicProvider())
        result = run_pipeline(
            topic_doc_path, pipeline_config(work, alpha=0.75),
            provider=TopicProvider(),
        )
        assert result.skipped == ["ingest", "score_pairs"]
        assert result.executed == ["graph", "gnn", "cluster", "generate"]

    def test_seed_change_reruns_cluster_onward(self, tmp_path, topic_doc_path):
        work = tmp_path / "work"
        run_pipeline(topic_doc_path, pipeline_config(work), provider=TopicProvider())
        result = run_pipeline(
            topic_doc_path, pipeline_config(work, seed=5),
            provider=TopicProvider(),
        )
        assert result.skipped == ["ingest", "score_pairs", "graph", "gnn"]
        assert result.executed == ["cluster", "generate"]


class TestFailureModes:
    def test_lock_blocks_concurrent_runs(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work")
        doc_dir = tmp_path / "work" / "topics"
        doc_dir.mkdir(parents=True)
        lock = doc_dir / LOCK_FILENAME
        lock.write_text("12345\n")
        with pytest.raises(PipelineError, match="locked"):
            run_pipeline(topic_doc_path, config, provider=TopicProvider())
        lock.unlink()
        result = run_pipeline(topic_doc_path, config, provider=TopicProvider())
        assert result.presentation is not None
        assert not lock.exists()  # released on success

    def test_paragraph_cap_enforced(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work", paragraph_cap=5)
        with pytest.raises(PipelineError, match="above the cap"):
            run_pipeline(topic_doc_path, config, provider=TopicProvider())

    def test_stage_errors_name_the_stage(self, tmp_path, topic_doc_path):
        config = pipeline_config(tmp_path / "work", alpha=0.9999)
        with pytest.raises(PipelineError, match="stage graph"):
            run_pipeline(topic_doc_path, config, provider=TopicProvider())

    def test_aborted_generation_keeps_partial_then_resumes(
        self, tmp_path, topic_doc_path
    ):
        config = pipeline_config(tmp_path / "work")
        with pytest.raises(PipelineError) as info:
            run_pipeline(
                topic_doc_path, config,
                provider=TopicProvider(), backend=FlakyBackend(fail_at=2),
            )
        assert isinstance(info.value.__cause__, GenerationAbortedError)

        work_dir = tmp_path / "work" / "topics"
        partial = json.loads((work_dir / "presentation.json").read_text())
        assert len(partial["slides"]) == 1
        assert partial["metadata"]["aborted_at_slide"] == 1

        manifest = json.loads((work_dir / MANIFEST_FILENAME).read_text())
        assert "generate" not in manifest["stages"]

        result = run_pipeline(
            topic_doc_path, config,
            provider=TopicProvider(), backend=MockLlmBackend(),
        )
        assert result.executed == ["generate"]
        assert len(result.presentation.slides) == 3
        assert "aborted_at_slide" not in result.presentation.metadata


class TestPairScoreArtifact:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        upper = np.triu(rng.random((6, 6)), k=1)
        matrix = upper + upper.T
        path = tmp_path / "pair_scores.json"
        _save_pair_scores("d", matrix, path)
        assert np.array_equal(_load_pair_scores(path), matrix)


class TestRemediation:
    def test_pruned_paragraphs_return_as_singletons(self):
        doc = make_document("d", [f"p{i}" for i in range(12)])
        embeddings = NodeEmbeddings(Z=np.eye(4), node_ids=[0, 1, 2, 3])
        matrix = np.full((12, 12), 0.1)
        matrix[5, 0] = matrix[0, 5] = 0.9
        matrix[7, 0] = matrix[0, 7] = 0.8
        plan = plan_with_remediation(doc, [0, 1, 2, 3], embeddings, matrix,
                                     k=6, seed=0)
        assert plan.k == 6
        assert plan.clusters == [[0], [1], [2], [3], [5], [7]]

    def test_k_beyond_paragraphs_warns_and_shrinks(self):
        doc = make_document("d", ["p0", "p1", "p2"])
        embeddings = NodeEmbeddings(Z=np.eye(2), node_ids=[0, 1])
        matrix = np.zeros((3, 3))
        with pytest.warns(UserWarning, match="exceeds the paragraph count"):
            plan = plan_with_remediation(doc, [0, 1], embeddings, matrix,
                                         k=5, seed=0)
        assert plan.k == 3
        assert plan.clusters == [[0], [1], [2]]

    def test_k_within_node_count_clusters_directly(self):
        doc = make_document("d", [f"p{i}" for i in range(4)])
        Z = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.01, 1.0]])
        embeddings = NodeEmbeddings(Z=Z, node_ids=[0, 1, 2, 3])
        plan = plan_with_remediation(doc, [0, 1, 2, 3], embeddings,
                                     np.zeros((4, 4)), k=2, seed=0)
        assert plan.clusters == [[0, 1], [2, 3]]


class TestComponentBuilders:
    def test_transformer_without_checkpoint_rejected(self):
        config = PipelineConfig.from_dict({"classifier": {"backend": "transformer"}})
        with pytest.raises(PipelineError, match="checkpoint"):
            build_classifier(config, TopicProvider())

    def test_cache_dir_default_and_override(self, tmp_path):
        config = pipeline_config(tmp_path / "work")
        assert resolve_cache_dir(config) == tmp_path / "work" / "cache"
        override = PipelineConfig.from_dict(
            {"embeddings": {"cache_dir": str(tmp_path / "elsewhere")}}
        )
        assert resolve_cache_dir(override) == tmp_path / "elsewhere"

    def test_backend_selection(self):
        assert isinstance(build_backend(PipelineConfig()), MockLlmBackend)
        http = build_backend(
            PipelineConfig.from_dict(
                {"llm": {"backend": "http-chat", "model": "m"}}
            )
        )
        assert http.name == "http-chat:m"

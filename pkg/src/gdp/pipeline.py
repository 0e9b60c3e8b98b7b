"""End-to-end orchestration with persisted, resumable stage artifacts.

Every stage writes its artifact under ``work_dir/<doc_id>/`` and records it
in ``manifest.json`` together with the hashes of the inputs and the
configuration slice it consumed.  On a rerun, a stage whose recorded hashes
all still match is skipped, so changing one knob (say ``alpha``) re-executes
only that stage and everything downstream.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .classifier import EmbeddingSimilarityClassifier, load_classifier, provider_from_name
from .clustering import (
    SlidePlan,
    load_plan,
    order_clusters,
    save_plan,
    spectral_cluster,
)
from .config import PipelineConfig, config_hash, stage_config_slices
from .documents import Document, load_document, save_document
from .embeddings import EmbeddingProvider
from .errors import GdpError, GenerationAbortedError, PipelineError
from .generation import (
    GeneratedPresentation,
    HttpChatBackend,
    MockLlmBackend,
    generate_presentation,
    load_presentation,
    save_presentation,
)
from .graph import (
    GcnLinkEncoder,
    build_graph,
    graph_from_artifact,
    load_embeddings_artifact,
    load_graph_artifact,
    save_embeddings_artifact,
    save_graph_artifact,
)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "score_pairs", "graph", "gnn", "cluster", "generate")

ARTIFACTS = {
    "ingest": "document.json",
    "score_pairs": "pair_scores.json",
    "graph": "graph.json",
    "gnn": "embeddings.json",
    "cluster": "plan.json",
    "generate": "presentation.json",
}

MANIFEST_FILENAME = "manifest.json"
LOCK_FILENAME = ".lock"


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class PipelineResult:
    """What a run did and where it put things."""

    doc_id: str
    work_dir: Path
    executed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    plan: SlidePlan | None = None
    presentation: GeneratedPresentation | None = None

    def artifact(self, stage: str) -> Path:
        return self.work_dir / ARTIFACTS[stage]


# -- component builders --------------------------------------------------

def build_provider(config: PipelineConfig) -> EmbeddingProvider:
    return provider_from_name(config.embeddings.provider)


def build_backend(config: PipelineConfig):
    llm = config.llm
    if llm.backend == "mock":
        return MockLlmBackend()
    return HttpChatBackend(llm.base_url, llm.model, max_retries=llm.max_retries)


def build_classifier(config: PipelineConfig, provider: EmbeddingProvider,
                     cache_dir=None):
    section = config.classifier
    if section.checkpoint:
        return load_classifier(section.checkpoint, provider=provider,
                               cache_dir=cache_dir)
    if section.backend == "similarity":
        return EmbeddingSimilarityClassifier(provider, cache_dir=cache_dir)
    raise PipelineError(
        "classifier.backend 'transformer' needs a trained checkpoint; "
        "set classifier.checkpoint or train one first"
    )


def resolve_cache_dir(config: PipelineConfig) -> Path:
    if config.embeddings.cache_dir:
        return Path(config.embeddings.cache_dir)
    return Path(config.paths.work_dir) / "cache"


# -- pair score artifact -------------------------------------------------

def _save_pair_scores(doc_id: str, matrix: np.ndarray, path) -> None:
    n = matrix.shape[0]
    upper = [float(matrix[i, j]) for i in range(n) for j in range(i + 1, n)]
    payload = {"doc_id": doc_id, "n": n, "upper": upper}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _load_pair_scores(path) -> np.ndarray:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    n = int(data["n"])
    matrix = np.zeros((n, n), dtype=np.float64)
    values = iter(data["upper"])
    for i in range(n):
        for j in range(i + 1, n):
            value = float(next(values))
            matrix[i, j] = matrix[j, i] = value
    return matrix


# -- K > |V| remediation -------------------------------------------------

def plan_with_remediation(doc: Document, node_ids: list[int], embeddings,
                          matrix: np.ndarray, k: int, seed: int) -> SlidePlan:
    """Build the slide plan, re-admitting pruned paragraphs when K > |V|.

    Pruned paragraphs come back as singleton clusters, most promising first
    (highest maximum pair probability, lowest index on ties); if even that
    cannot reach K, K is reduced with a warning.
    """
    n_nodes = len(node_ids)
    if k <= n_nodes:
        labels = spectral_cluster(embeddings.Z, k, seed=seed)
        clusters = order_clusters(labels, embeddings.node_ids)
        return SlidePlan(doc_id=doc.doc_id, clusters=clusters)

    in_graph = set(node_ids)
    pruned = [i for i in range(len(doc)) if i not in in_graph]
    pruned.sort(key=lambda i: (-float(matrix[i].max()), i))
    needed = k - n_nodes
    singletons = pruned[:needed]
    if len(singletons) < needed:
        warnings.warn(
            f"k={k} exceeds the paragraph count; producing "
            f"{n_nodes + len(singletons)} slides instead"
        )
    labels = spectral_cluster(embeddings.Z, n_nodes, seed=seed)
    clusters = order_clusters(labels, embeddings.node_ids)
    clusters.extend([i] for i in singletons)
    clusters.sort(key=lambda members: members[0])
    return SlidePlan(doc_id=doc.doc_id, clusters=clusters)


# -- the run itself ------------------------------------------------------

class _Run:
    def __init__(self, doc_path, config: PipelineConfig, provider=None,
                 classifier=None, backend=None):
        self.doc_path = Path(doc_path)
        self.config = config
        self.provider = provider or build_provider(config)
        self._classifier = classifier
        self._backend = backend
        self.cache_dir = resolve_cache_dir(config)
        self.slices = stage_config_slices(config)
        self.doc = load_document(doc_path)
        self.doc_dir = Path(config.paths.work_dir) / self.doc.doc_id
        self.doc_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = self._load_manifest()
        self.result = PipelineResult(doc_id=self.doc.doc_id, work_dir=self.doc_dir)

    # lazy so a fully-skipped run never constructs them
    def classifier(self):
        if self._classifier is None:
            self._classifier = build_classifier(self.config, self.provider,
                                                cache_dir=self.cache_dir)
        return self._classifier

    def backend(self):
        if self._backend is None:
            self._backend = build_backend(self.config)
        return self._backend

    def _load_manifest(self) -> dict:
        path = self.doc_dir / MANIFEST_FILENAME
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return {"doc_id": self.doc.doc_id, "stages": {}}

    def _write_manifest(self) -> None:
        self.manifest["config_hash"] = config_hash(self.config)
        path = self.doc_dir / MANIFEST_FILENAME
        path.write_text(json.dumps(self.manifest, indent=2) + "\n",
                        encoding="utf-8")

    def _stage(self, name: str, inputs: dict[str, str], runner) -> Path:
        artifact = self.doc_dir / ARTIFACTS[name]
        entry = self.manifest["stages"].get(name)
        if (
            entry is not None
            and entry.get("config") == self.slices[name]
            and entry.get("inputs") == inputs
            and artifact.exists()
            and file_sha256(artifact) == entry.get("sha256")
        ):
            logger.info("stage %s: up to date, skipping", name)
            self.result.skipped.append(name)
            return artifact
        try:
            runner(artifact)
        except PipelineError:
            raise
        except GdpError as exc:
            raise PipelineError(f"stage {name}: {exc}") from exc
        self.manifest["stages"][name] = {
            "artifact": ARTIFACTS[name],
            "sha256": file_sha256(artifact),
            "config": self.slices[name],
            "inputs": inputs,
            "completed_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        self._write_manifest()
        self.result.executed.append(name)
        logger.info("stage %s: done -> %s", name, artifact.name)
        return artifact

    def run(self, until: str) -> PipelineResult:
        upto = STAGES.index(until)

        doc_artifact = self._stage(
            "ingest", {"source": file_sha256(self.doc_path)},
            lambda out: save_document(self.doc, out),
        )
        doc = load_document(doc_artifact)
        if upto < 1:
            return self.result

        def run_scores(out):
            if len(doc) > self.config.paragraph_cap:
                raise PipelineError(
                    f"stage score_pairs: document has {len(doc)} paragraphs, "
                    f"above the cap of {self.config.paragraph_cap}; raise "
                    f"paragraph_cap if the O(n^2) cost is acceptable"
                )
            matrix = self.classifier().pairwise_probabilities(doc.texts())
            _save_pair_scores(doc.doc_id, matrix, out)

        scores_artifact = self._stage(
            "score_pairs", {"document": file_sha256(doc_artifact)}, run_scores,
        )
        if upto < 2:
            return self.result
        matrix = _load_pair_scores(scores_artifact)

        def run_graph(out):
            graph = build_graph(doc, matrix, self.config.alpha, self.provider,
                                cache_dir=self.cache_dir)
            save_graph_artifact(graph, out)

        graph_artifact = self._stage(
            "graph", {"pair_scores": file_sha256(scores_artifact)}, run_graph,
        )
        if upto < 3:
            return self.result
        graph_data = load_graph_artifact(graph_artifact)

        def run_gnn(out):
            graph = graph_from_artifact(graph_data, doc, self.provider,
                                        cache_dir=self.cache_dir)
            gnn = self.config.gnn
            encoder = GcnLinkEncoder(hidden_dim=gnn.hidden, out_dim=gnn.out,
                                     epochs=gnn.epochs, learning_rate=gnn.lr,
                                     seed=gnn.seed)
            save_embeddings_artifact(encoder.fit(graph).embedding_, out)

        gnn_artifact = self._stage(
            "gnn",
            {"graph": file_sha256(graph_artifact),
             "document": file_sha256(doc_artifact)},
            run_gnn,
        )
        if upto < 4:
            return self.result
        embeddings = load_embeddings_artifact(gnn_artifact)

        def run_cluster(out):
            plan = plan_with_remediation(
                doc, [int(i) for i in graph_data["node_ids"]], embeddings,
                matrix, self.config.k, self.config.seed,
            )
            sizes = [len(members) for members in plan.clusters]
            logger.info("plan: %d clusters, sizes %s (variance %.2f)",
                        plan.k, sizes, float(np.var(sizes)))
            save_plan(plan, out)

        plan_artifact = self._stage(
            "cluster",
            {"embeddings": file_sha256(gnn_artifact),
             "pair_scores": file_sha256(scores_artifact)},
            run_cluster,
        )
        self.result.plan = load_plan(plan_artifact)
        if upto < 5:
            return self.result

        def run_generate(out):
            llm = self.config.llm
            stamp = {"config_hash": config_hash(self.config),
                     "seed": self.config.seed}
            try:
                presentation = generate_presentation(
                    doc, self.result.plan, self.backend(),
                    temperature=llm.temperature, top_p=llm.top_p,
                    max_retries=llm.max_retries,
                )
            except GenerationAbortedError as exc:
                # Keep what we have, marked, but leave the stage incomplete.
                exc.partial.metadata.update(stamp)
                save_presentation(exc.partial, out)
                raise
            presentation.metadata.update(stamp)
            save_presentation(presentation, out)

        pres_artifact = self._stage(
            "generate",
            {"plan": file_sha256(plan_artifact),
             "document": file_sha256(doc_artifact)},
            run_generate,
        )
        self.result.presentation = load_presentation(pres_artifact)
        return self.result


def run_pipeline(
    doc_path,
    config: PipelineConfig,
    provider: EmbeddingProvider | None = None,
    classifier=None,
    backend=None,
    until: str = "generate",
) -> PipelineResult:
    """Run the pipeline on one document, resuming from existing artifacts.

    ``provider``, ``classifier`` and ``backend`` override the config-built
    components (used by tests and by callers that already hold instances).
    ``until`` stops after the named stage.

    Raises:
        PipelineError: a stage failed (the message names it), or another
            run holds the document lock.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}; expected one of {STAGES}")
    run = _Run(doc_path, config, provider=provider, classifier=classifier,
               backend=backend)
    lock_path = run.doc_dir / LOCK_FILENAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(
            f"{run.doc_dir} is locked by another run; remove {lock_path} "
            f"if that run is dead"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        return run.run(until)
    finally:
        try:
            os.unlink(lock_path)
        except OSError:
            pass

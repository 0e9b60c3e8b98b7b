"""Graph-driven document-to-presentation pipeline.

The flow: a pair classifier scores every paragraph pair of a document, the
scores become a thresholded paragraph graph, a small graph-convolution
encoder learns node embeddings against a link-prediction objective, spectral
clustering groups paragraphs into slide-sized clusters, and an LLM backend
writes one slide per cluster with explicit source attribution.  A metric
suite (ROUGE-1, coverage, non-linearity, perplexity, LLM judge) scores the
result.
"""

from .classifier import (
    EmbeddingSimilarityClassifier,
    PairClassifier,
    TrainConfig,
    TransformerPairClassifier,
    classification_metrics,
    grid_search,
    load_classifier,
    save_classifier,
    train_classifier,
)
from .clustering import (
    CosineSpectralClustering,
    SlidePlan,
    order_clusters,
    spectral_cluster,
)
from .config import PipelineConfig, config_hash, parse_config, save_config
from .documents import (
    Document,
    Paragraph,
    ReferencePresentation,
    ReferenceSlide,
    load_document,
    load_reference_presentation,
    save_document,
    save_reference_presentation,
)
from .embeddings import (
    EmbeddingProvider,
    HashEmbeddingProvider,
    SentenceTransformerProvider,
    cosine,
    embed_texts,
)
from .errors import GdpError
from .evaluation import (
    MetricReport,
    coverage,
    evaluate_presentation,
    geval_score,
    nonlinearity,
    perplexity,
    rouge1,
    save_report,
)
from .generation import (
    GeneratedPresentation,
    GeneratedSlide,
    HttpChatBackend,
    LlmBackend,
    MockLlmBackend,
    generate_presentation,
    load_presentation,
    save_presentation,
)
from .graph import (
    GcnLinkEncoder,
    NodeEmbeddings,
    ParagraphGraph,
    build_graph,
    gcn_forward,
    link_loss,
    normalize_adjacency,
    sample_negative_edges,
    train_gnn,
)
from .pipeline import PipelineResult, run_pipeline
from .synthesis import (
    PairDataset,
    PairExample,
    build_pair_dataset,
    load_pair_dataset,
    save_pair_dataset,
    selection_threshold,
    select_source_paragraphs,
)

__version__ = "0.1.0"

__all__ = [
    "CosineSpectralClustering",
    "Document",
    "EmbeddingProvider",
    "EmbeddingSimilarityClassifier",
    "GcnLinkEncoder",
    "GdpError",
    "GeneratedPresentation",
    "GeneratedSlide",
    "HashEmbeddingProvider",
    "HttpChatBackend",
    "LlmBackend",
    "MetricReport",
    "MockLlmBackend",
    "NodeEmbeddings",
    "PairClassifier",
    "PairDataset",
    "PairExample",
    "Paragraph",
    "ParagraphGraph",
    "PipelineConfig",
    "PipelineResult",
    "ReferencePresentation",
    "ReferenceSlide",
    "SentenceTransformerProvider",
    "SlidePlan",
    "TrainConfig",
    "TransformerPairClassifier",
    "build_graph",
    "build_pair_dataset",
    "classification_metrics",
    "config_hash",
    "cosine",
    "coverage",
    "embed_texts",
    "evaluate_presentation",
    "gcn_forward",
    "generate_presentation",
    "geval_score",
    "grid_search",
    "link_loss",
    "load_classifier",
    "load_document",
    "load_pair_dataset",
    "load_presentation",
    "load_reference_presentation",
    "nonlinearity",
    "normalize_adjacency",
    "order_clusters",
    "parse_config",
    "perplexity",
    "rouge1",
    "run_pipeline",
    "sample_negative_edges",
    "save_classifier",
    "save_config",
    "save_document",
    "save_pair_dataset",
    "save_presentation",
    "save_reference_presentation",
    "save_report",
    "select_source_paragraphs",
    "selection_threshold",
    "spectral_cluster",
    "train_classifier",
    "train_gnn",
]

"""Paragraph graph construction and the unsupervised graph-convolution encoder.

A document becomes an undirected, unweighted graph: one node per paragraph,
an edge wherever the pair classifier says P(i, j) > alpha, isolated nodes
pruned.  Node features are the paragraph embeddings.  A 2-layer graph
convolution encoder

    Z = relu(A_hat @ relu(A_hat @ X @ W0) @ W1)

with A_hat the symmetrically normalized self-looped adjacency is trained
against a link-prediction objective: binary cross-entropy of sigmoid(z_i.z_j)
on true edges versus per-epoch resampled non-edges.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .documents import Document
from .embeddings import EmbeddingProvider, embed_texts
from .errors import (
    CompleteGraphError,
    DimensionMismatchError,
    EmptyGraphError,
    GdpError,
)
from .validation import as_float_matrix, check_square

logger = logging.getLogger(__name__)

# Sigmoid inputs are clamped here before the log; keeps the loss finite
# without disturbing values anywhere near the tested tolerances.
DOT_CLAMP = 30.0


@dataclass
class ParagraphGraph:
    """Undirected graph over surviving paragraphs.

    ``node_ids`` are original paragraph indices, strictly increasing; edges
    are unordered node-id pairs stored (i, j) with i < j; ``features`` rows
    align with ``node_ids``.
    """

    node_ids: list[int]
    edges: set[tuple[int, int]]
    features: np.ndarray
    alpha: float

    def __post_init__(self):
        ids = list(self.node_ids)
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise GdpError("node_ids must be strictly increasing")
        id_set = set(ids)
        degree = {i: 0 for i in ids}
        for i, j in self.edges:
            if i == j:
                raise GdpError(f"self-loop on node {i}")
            if i > j:
                raise GdpError(f"edge ({i}, {j}) not stored with i < j")
            if i not in id_set or j not in id_set:
                raise GdpError(f"edge ({i}, {j}) references a pruned node")
            degree[i] += 1
            degree[j] += 1
        isolated = [i for i, d in degree.items() if d == 0]
        if isolated:
            raise GdpError(f"isolated nodes present: {isolated}")
        self.features = as_float_matrix(self.features, "features")
        if self.features.shape[0] != len(ids):
            raise DimensionMismatchError(
                f"{self.features.shape[0]} feature rows for {len(ids)} nodes"
            )

    def __len__(self) -> int:
        return len(self.node_ids)

    def positions(self) -> dict[int, int]:
        return {node: row for row, node in enumerate(self.node_ids)}

    def adjacency(self) -> np.ndarray:
        """Binary |V| x |V| adjacency in node_ids order."""
        pos = self.positions()
        matrix = np.zeros((len(self), len(self)), dtype=np.float64)
        for i, j in self.edges:
            matrix[pos[i], pos[j]] = matrix[pos[j], pos[i]] = 1.0
        return matrix


@dataclass
class GnnWeights:
    """Trainable parameters of the 2-layer encoder."""

    W0: np.ndarray  # F x H
    W1: np.ndarray  # H x F'

    def __post_init__(self):
        self.W0 = as_float_matrix(self.W0, "W0")
        self.W1 = as_float_matrix(self.W1, "W1")
        if self.W0.shape[1] != self.W1.shape[0]:
            raise DimensionMismatchError(
                f"W0 {self.W0.shape} does not chain with W1 {self.W1.shape}"
            )


@dataclass
class NodeEmbeddings:
    """Learned embedding matrix, one row per surviving paragraph."""

    Z: np.ndarray
    node_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.Z = as_float_matrix(self.Z, "Z")
        if self.node_ids and len(self.node_ids) != self.Z.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.node_ids)} node_ids for {self.Z.shape[0]} embedding rows"
            )


def build_graph(
    doc: Document,
    prob,
    alpha: float,
    provider: EmbeddingProvider,
    cache_dir=None,
) -> ParagraphGraph:
    """Build the thresholded paragraph graph with provider features.

    ``prob`` may be a fitted pair classifier, a callable on two paragraphs,
    or a precomputed symmetric n x n probability matrix.

    Raises:
        EmptyGraphError: no pair clears alpha; alpha is too high for this doc.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    n = len(doc)
    if n < 2:
        raise ValueError("document must have at least two paragraphs")

    if hasattr(prob, "pairwise_probabilities"):
        matrix = prob.pairwise_probabilities(doc.texts())
    elif callable(prob):
        matrix = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                matrix[i, j] = matrix[j, i] = float(
                    prob(doc.paragraphs[i], doc.paragraphs[j])
                )
    else:
        matrix = check_square(prob, "probability matrix")
        if matrix.shape[0] != n:
            raise DimensionMismatchError(
                f"probability matrix is {matrix.shape[0]}x{matrix.shape[0]} "
                f"for a {n}-paragraph document"
            )

    edges = {
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if matrix[i, j] > alpha
    }
    if not edges:
        raise EmptyGraphError(
            f"no pair probability exceeds alpha={alpha}; try a lower alpha"
        )
    surviving = sorted({i for e in edges for i in e})
    texts = [doc.paragraphs[i].text for i in surviving]
    features = np.stack(embed_texts(provider, texts, cache_dir=cache_dir))
    return ParagraphGraph(node_ids=surviving, edges=edges, features=features, alpha=alpha)


def normalize_adjacency(graph) -> np.ndarray:
    """Symmetrically normalized self-looped adjacency.

    A_hat[i, j] = (A + I)[i, j] / sqrt(d_i * d_j) where d is the self-looped
    degree.  Accepts a ParagraphGraph or a raw binary adjacency matrix.
    """
    adjacency = graph.adjacency() if isinstance(graph, ParagraphGraph) else check_square(graph)
    tilde = adjacency + np.eye(adjacency.shape[0])
    degrees = tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    return tilde * np.outer(inv_sqrt, inv_sqrt)


def glorot_init(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot-style init, U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_weights(n_features: int, hidden_dim: int, out_dim: int, seed: int) -> GnnWeights:
    rng = np.random.default_rng(seed)
    return GnnWeights(
        W0=glorot_init(n_features, hidden_dim, rng),
        W1=glorot_init(hidden_dim, out_dim, rng),
    )


def gcn_forward(features, a_hat, weights: GnnWeights) -> np.ndarray:
    """Z = relu(A_hat @ relu(A_hat @ X @ W0) @ W1); every entry >= 0."""
    X = as_float_matrix(features, "features")
    A = check_square(a_hat, "A_hat")
    if A.shape[0] != X.shape[0]:
        raise DimensionMismatchError(
            f"A_hat is {A.shape} but features have {X.shape[0]} rows"
        )
    if X.shape[1] != weights.W0.shape[0]:
        raise DimensionMismatchError(
            f"features have {X.shape[1]} columns but W0 expects {weights.W0.shape[0]}"
        )
    hidden = np.maximum(A @ X @ weights.W0, 0.0)
    return np.maximum(A @ hidden @ weights.W1, 0.0)


def sample_negative_edges(graph: ParagraphGraph, seed) -> set[tuple[int, int]]:
    """Sample |E| non-edges (fewer if that many do not exist), no self-loops.

    Deterministic in ``seed``: candidate non-edges are enumerated in sorted
    order and drawn without replacement.

    Raises:
        CompleteGraphError: the graph has no non-edge at all.
    """
    ids = graph.node_ids
    candidates = [
        (ids[a], ids[b])
        for a in range(len(ids))
        for b in range(a + 1, len(ids))
        if (ids[a], ids[b]) not in graph.edges
    ]
    if not candidates:
        raise CompleteGraphError("complete graph: no non-edges to sample")
    count = min(len(graph.edges), len(candidates))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(candidates), size=count, replace=False)
    return {candidates[k] for k in picked}


def _pair_rows(Z, edge_set):
    """Resolve edge endpoint pairs to row index arrays of Z."""
    if isinstance(Z, NodeEmbeddings):
        pos = {node: row for row, node in enumerate(Z.node_ids)}
        pairs = [(pos[i], pos[j]) for i, j in edge_set]
        matrix = Z.Z
    else:
        pairs = [(int(i), int(j)) for i, j in edge_set]
        matrix = as_float_matrix(Z, "Z")
    if pairs:
        rows_i, rows_j = map(np.asarray, zip(*pairs))
    else:
        rows_i = rows_j = np.asarray([], dtype=int)
    return matrix, rows_i, rows_j


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable log(sigmoid(x)); x is already clamped to +-DOT_CLAMP.
    return -np.log1p(np.exp(-x))


def link_loss(Z, edges, neg_edges) -> float:
    """Binary cross-entropy over positive edges and sampled non-edges.

    ``Z`` is a NodeEmbeddings (edges given as node-id pairs) or a raw matrix
    (edges given as row-index pairs).  Dot products are clamped to
    +-30 before the log so the loss stays finite.
    """
    matrix, pi, pj = _pair_rows(Z, edges)
    _, ni, nj = _pair_rows(Z, neg_edges)
    loss = 0.0
    if len(pi):
        dots = np.clip(np.einsum("ij,ij->i", matrix[pi], matrix[pj]), -DOT_CLAMP, DOT_CLAMP)
        loss -= _log_sigmoid(dots).sum()
    if len(ni):
        dots = np.clip(np.einsum("ij,ij->i", matrix[ni], matrix[nj]), -DOT_CLAMP, DOT_CLAMP)
        loss -= _log_sigmoid(-dots).sum()  # log(1 - sigmoid(x)) = log_sigmoid(-x)
    return float(loss)


def link_loss_gradient(Z, edges, neg_edges) -> np.ndarray:
    """Analytic gradient of :func:`link_loss` with respect to Z.

    For a positive edge (i, j) with x = z_i . z_j the contribution is
    (sigmoid(x) - 1) * z_j to row i (and symmetrically to row j); for a
    sampled non-edge it is sigmoid(x) * z_j.
    """
    matrix, _, _ = _pair_rows(Z, set())
    grad = np.zeros_like(matrix)

    def accumulate(edge_set, positive: bool):
        m, ri, rj = _pair_rows(Z, edge_set)
        for i, j in zip(ri, rj):
            x = float(np.clip(np.dot(m[i], m[j]), -DOT_CLAMP, DOT_CLAMP))
            sig = 1.0 / (1.0 + np.exp(-x))
            coeff = (sig - 1.0) if positive else sig
            grad[i] += coeff * m[j]
            grad[j] += coeff * m[i]

    accumulate(edges, positive=True)
    accumulate(neg_edges, positive=False)
    return grad


class GcnLinkEncoder(BaseEstimator):
    """Transductive node embedder trained with the link-prediction loss.

    Parameters follow the usual estimator conventions; ``fit`` takes a
    :class:`ParagraphGraph` and stores the learned matrix in ``embedding_``
    with the per-epoch loss trace in ``loss_trace_``.  Negative edges are
    resampled every epoch from a seed derived as (seed, epoch).  All
    computation is float64 on CPU, deterministic for a fixed seed.
    """

    def __init__(self, hidden_dim: int = 128, out_dim: int = 64,
                 epochs: int = 200, learning_rate: float = 0.01, seed: int = 0):
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, graph: ParagraphGraph):
        import torch

        a_hat = torch.from_numpy(normalize_adjacency(graph))
        X = torch.from_numpy(graph.features)
        init = init_weights(graph.features.shape[1], self.hidden_dim,
                            self.out_dim, self.seed)
        W0 = torch.nn.Parameter(torch.from_numpy(init.W0.copy()))
        W1 = torch.nn.Parameter(torch.from_numpy(init.W1.copy()))
        optimizer = torch.optim.Adam([W0, W1], lr=self.learning_rate)

        pos = graph.positions()
        pos_i = torch.tensor([pos[i] for i, _ in sorted(graph.edges)])
        pos_j = torch.tensor([pos[j] for _, j in sorted(graph.edges)])

        def forward():
            hidden = torch.relu(a_hat @ X @ W0)
            return torch.relu(a_hat @ hidden @ W1)

        trace: list[float] = []
        for epoch in range(self.epochs):
            try:
                negatives = sample_negative_edges(graph, [self.seed, epoch])
            except CompleteGraphError:
                negatives = set()
            Z = forward()
            dots = (Z[pos_i] * Z[pos_j]).sum(dim=1).clamp(-DOT_CLAMP, DOT_CLAMP)
            loss = -torch.nn.functional.logsigmoid(dots).sum()
            if negatives:
                neg_i = torch.tensor([pos[i] for i, _ in sorted(negatives)])
                neg_j = torch.tensor([pos[j] for _, j in sorted(negatives)])
                neg_dots = (Z[neg_i] * Z[neg_j]).sum(dim=1).clamp(-DOT_CLAMP, DOT_CLAMP)
                loss = loss - torch.nn.functional.logsigmoid(-neg_dots).sum()
            trace.append(loss.detach().item())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        with torch.no_grad():
            Z_final = forward().numpy().copy()
        self.weights_ = GnnWeights(W0=W0.detach().numpy().copy(),
                                   W1=W1.detach().numpy().copy())
        self.embedding_ = NodeEmbeddings(Z=Z_final, node_ids=list(graph.node_ids))
        self.loss_trace_ = trace
        if trace:
            logger.info("gnn training: loss %.4f -> %.4f over %d epochs",
                        trace[0], trace[-1], len(trace))
        return self

    def fit_transform(self, graph: ParagraphGraph) -> np.ndarray:
        return self.fit(graph).embedding_.Z


def train_gnn(
    graph: ParagraphGraph,
    hidden_dim: int = 128,
    out_dim: int = 64,
    epochs: int = 200,
    learning_rate: float = 0.01,
    seed: int = 0,
) -> NodeEmbeddings:
    """Train the encoder on one document graph and return its node embeddings."""
    encoder = GcnLinkEncoder(hidden_dim=hidden_dim, out_dim=out_dim,
                             epochs=epochs, learning_rate=learning_rate, seed=seed)
    return encoder.fit(graph).embedding_


# -- artifacts -----------------------------------------------------------

def save_graph_artifact(graph: ParagraphGraph, path) -> None:
    payload = {
        "node_ids": list(graph.node_ids),
        "edges": [list(e) for e in sorted(graph.edges)],
        "alpha": graph.alpha,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_graph_artifact(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def graph_from_artifact(
    artifact: dict, doc: Document, provider: EmbeddingProvider, cache_dir=None
) -> ParagraphGraph:
    """Rebuild a full graph from the structure-only artifact.

    Features are not stored in the artifact; they are re-derived from the
    provider (served from cache when available).
    """
    node_ids = [int(i) for i in artifact["node_ids"]]
    texts = [doc.paragraphs[i].text for i in node_ids]
    features = np.stack(embed_texts(provider, texts, cache_dir=cache_dir))
    return ParagraphGraph(
        node_ids=node_ids,
        edges={(int(i), int(j)) for i, j in artifact["edges"]},
        features=features,
        alpha=float(artifact["alpha"]),
    )


def save_embeddings_artifact(embeddings: NodeEmbeddings, path) -> None:
    payload = {
        "node_ids": list(embeddings.node_ids),
        "dim": int(embeddings.Z.shape[1]),
        "values": embeddings.Z.reshape(-1).tolist(),  # row-major
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_embeddings_artifact(path) -> NodeEmbeddings:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    node_ids = [int(i) for i in data["node_ids"]]
    dim = int(data["dim"])
    Z = np.asarray(data["values"], dtype=np.float64).reshape(len(node_ids), dim)
    return NodeEmbeddings(Z=Z, node_ids=node_ids)

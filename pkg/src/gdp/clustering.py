"""Spectral grouping of paragraph embeddings into slide-sized clusters.

Follows the normalized spectral clustering recipe on a cosine affinity:
S_ij = max(0, cos(z_i, z_j)) with unit self-affinity, symmetric normalized
Laplacian, the K eigenvectors of the smallest eigenvalues, row
normalization, then seeded k-means.  Clusters become slides; slide order is
by each cluster's smallest paragraph index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.cluster import KMeans

from .errors import (
    EmptyClusterError,
    OverlappingClustersError,
    TooFewNodesError,
)
from .validation import as_float_matrix


def cosine_affinity(Z) -> np.ndarray:
    """Clipped-cosine affinity matrix with S_ii = 1.

    Zero-norm rows get zero affinity to everything else; the unit diagonal
    is set unconditionally so the Laplacian degree never vanishes.
    """
    Z = as_float_matrix(Z, "Z")
    norms = np.linalg.norm(Z, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = Z / safe[:, None]
    S = np.maximum(unit @ unit.T, 0.0)
    S[norms == 0, :] = 0.0
    S[:, norms == 0] = 0.0
    np.fill_diagonal(S, 1.0)
    return S


def spectral_embedding(S: np.ndarray, k: int) -> np.ndarray:
    """Row-normalized matrix of the K bottom eigenvectors of L_sym.

    L_sym = I - D^(-1/2) S D^(-1/2); its bottom eigenvectors are the top
    eigenvectors of the normalized affinity, which is what gets computed.
    """
    degrees = S.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    normalized = S * np.outer(inv_sqrt, inv_sqrt)
    # eigh returns eigenvalues ascending; take the trailing k columns.
    _, vectors = np.linalg.eigh(normalized)
    U = vectors[:, -k:]
    row_norms = np.linalg.norm(U, axis=1)
    row_norms = np.where(row_norms > 0, row_norms, 1.0)
    return U / row_norms[:, None]


def _repair_empty_clusters(labels: np.ndarray, points: np.ndarray, k: int) -> np.ndarray:
    """Ensure every cluster index in 0..k-1 has at least one member.

    k-means with k <= n rarely leaves a cluster empty, but the plan format
    requires exactly K non-empty groups.  Each empty index is filled by
    moving, from the currently largest cluster, the member farthest from
    that cluster's mean (lowest index on ties).
    """
    labels = labels.copy()
    for empty in range(k):
        if np.any(labels == empty):
            continue
        sizes = np.bincount(labels, minlength=k)
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(labels == donor)
        center = points[members].mean(axis=0)
        distances = np.linalg.norm(points[members] - center, axis=1)
        mover = members[int(np.argmax(distances))]
        labels[mover] = empty
    return labels


class CosineSpectralClustering(BaseEstimator, ClusterMixin):
    """Normalized spectral clustering on clipped-cosine affinities.

    Deterministic for a fixed ``seed``; k-means runs ``n_init`` restarts and
    keeps the best inertia.  ``fit`` stores ``labels_`` aligned with the
    input rows, with every label in 0..n_clusters-1 occupied.
    """

    def __init__(self, n_clusters: int = 5, seed: int = 0, n_init: int = 10):
        self.n_clusters = n_clusters
        self.seed = seed
        self.n_init = n_init

    def fit(self, Z, y=None):
        Z = as_float_matrix(Z, "Z")
        k = self.n_clusters
        if k < 1:
            raise ValueError("n_clusters must be positive")
        if Z.shape[0] < k:
            raise TooFewNodesError(
                f"cannot split {Z.shape[0]} embeddings into {k} clusters"
            )
        self.affinity_matrix_ = cosine_affinity(Z)
        U = spectral_embedding(self.affinity_matrix_, k)
        km = KMeans(n_clusters=k, n_init=self.n_init, random_state=self.seed)
        labels = km.fit_predict(U)
        self.labels_ = _repair_empty_clusters(labels, U, k)
        return self

    def fit_predict(self, Z, y=None):
        return self.fit(Z).labels_


def spectral_cluster(Z, k: int, seed: int = 0) -> np.ndarray:
    """Cluster embedding rows into k groups; returns labels in 0..k-1."""
    return CosineSpectralClustering(n_clusters=k, seed=seed).fit_predict(Z)


def order_clusters(labels, node_ids) -> list[list[int]]:
    """Group node ids by label and order groups by their minimum id.

    Each group's ids are ascending; the ordering key makes the slide
    sequence start where the cluster first touches the document.
    """
    labels = np.asarray(labels)
    node_ids = list(node_ids)
    if labels.shape[0] != len(node_ids):
        raise ValueError(
            f"{labels.shape[0]} labels for {len(node_ids)} node ids"
        )
    groups: dict[int, list[int]] = {}
    for label, node in zip(labels, node_ids):
        groups.setdefault(int(label), []).append(int(node))
    clusters = [sorted(members) for members in groups.values()]
    return sorted(clusters, key=lambda members: members[0])


@dataclass
class SlidePlan:
    """Ordered paragraph groups for one document, one group per slide."""

    doc_id: str
    clusters: list[list[int]]

    def __post_init__(self):
        if not self.clusters:
            raise EmptyClusterError("plan has no clusters")
        seen: set[int] = set()
        for members in self.clusters:
            if not members:
                raise EmptyClusterError("plan contains an empty cluster")
            if sorted(members) != list(members):
                raise ValueError(f"cluster {members} is not ascending")
            overlap = seen.intersection(members)
            if overlap:
                raise OverlappingClustersError(
                    f"paragraphs {sorted(overlap)} appear in more than one cluster"
                )
            seen.update(members)
        minima = [members[0] for members in self.clusters]
        if minima != sorted(minima):
            raise ValueError("clusters are not ordered by minimum paragraph index")

    @property
    def k(self) -> int:
        return len(self.clusters)

    def paragraph_ids(self) -> set[int]:
        return {i for members in self.clusters for i in members}


def plan_from_embeddings(doc_id: str, embeddings, k: int, seed: int = 0) -> SlidePlan:
    """Cluster node embeddings and wrap the ordered groups in a plan."""
    labels = spectral_cluster(embeddings.Z, k, seed=seed)
    return SlidePlan(doc_id=doc_id, clusters=order_clusters(labels, embeddings.node_ids))


def save_plan(plan: SlidePlan, path) -> None:
    payload = {"doc_id": plan.doc_id, "K": plan.k, "clusters": plan.clusters}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_plan(path) -> SlidePlan:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    plan = SlidePlan(
        doc_id=data["doc_id"],
        clusters=[[int(i) for i in members] for members in data["clusters"]],
    )
    if "K" in data and int(data["K"]) != plan.k:
        raise ValueError(
            f"plan file says K={data['K']} but lists {plan.k} clusters"
        )
    return plan

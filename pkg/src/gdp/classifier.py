"""Binary classifiers over paragraph pairs: P(same slide).

Two backends.  :class:`TransformerPairClassifier` fine-tunes a pretrained
sequence-pair encoder with a single-logit sigmoid head and weighted binary
cross-entropy, and is the production choice.
:class:`EmbeddingSimilarityClassifier` is training-free at the probability
level, ``p = (cosine(e_a, e_b) + 1) / 2`` over provider embeddings; fitting it
only calibrates the decision threshold.  It keeps the downstream graph
pipeline runnable without GPU fine-tuning.

Served probabilities are symmetrized: the mean of the backend's score on
(a, b) and (b, a), so the induced edge rule is well defined.
"""

from __future__ import annotations

import hashlib
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .documents import Document
from .embeddings import (
    EmbeddingProvider,
    HashEmbeddingProvider,
    SentenceTransformerProvider,
    embed_texts,
)
from .errors import BackendError, InsufficientDataError, SchemaError

logger = logging.getLogger(__name__)

# Probabilities are clamped strictly inside (0, 1).
PROB_EPS = 1e-6

# Validation-split search space mirroring the documented tuning procedure.
DEFAULT_GRID = {
    "learning_rate": [1e-5, 2e-5, 5e-5],
    "dropout": [0.1, 0.4],
    "batch_size": [12],
}


@dataclass
class TrainConfig:
    batch_size: int = 12
    learning_rate: float = 1e-5
    dropout: float = 0.4
    epochs: int = 3
    class_weights: tuple[float, float] | None = None  # (neg, pos); derived if None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


def _text_of(item) -> str:
    return item.text if hasattr(item, "text") else str(item)


def resolve_pairs(dataset, documents: Mapping[str, Document]):
    """Turn index-based pair examples into (texts_a, texts_b, labels)."""
    texts_a, texts_b, labels = [], [], []
    for ex in dataset.examples:
        doc = documents.get(ex.doc_id)
        if doc is None:
            raise SchemaError(f"dataset references unknown doc_id {ex.doc_id!r}")
        if ex.j >= len(doc):
            raise SchemaError(f"pair ({ex.i}, {ex.j}) out of range for {ex.doc_id!r}")
        texts_a.append(doc.paragraphs[ex.i].text)
        texts_b.append(doc.paragraphs[ex.j].text)
        labels.append(1 if ex.label == "pos" else 0)
    return texts_a, texts_b, np.asarray(labels, dtype=np.int64)


def derive_class_weights(labels: np.ndarray) -> tuple[float, float]:
    """Per-class weights inversely proportional to class frequency, mean 1."""
    n = len(labels)
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InsufficientDataError("training data must contain both classes")
    return (n / (2.0 * n_neg), n / (2.0 * n_pos))


class PairClassifier(ABC):
    """Interface: probability that two paragraphs belong on the same slide."""

    name: str = "pair-classifier"
    decision_threshold: float = 0.5

    @abstractmethod
    def _directed_probability(self, text_a: str, text_b: str) -> float:
        """Backend score for the ordered pair, already in (0, 1)."""

    @abstractmethod
    def fit(self, dataset, documents: Mapping[str, Document], config: TrainConfig):
        """Fit on a pair dataset; returns self."""

    def pair_probability(self, a, b) -> float:
        """Symmetrized probability, strictly inside (0, 1)."""
        ta, tb = _text_of(a), _text_of(b)
        score = 0.5 * (self._directed_probability(ta, tb)
                       + self._directed_probability(tb, ta))
        return float(np.clip(score, PROB_EPS, 1.0 - PROB_EPS))

    def classify(self, a, b) -> bool:
        return self.pair_probability(a, b) >= self.decision_threshold

    def pairwise_probabilities(self, texts: list[str]) -> np.ndarray:
        """Symmetric n x n matrix of pair probabilities; diagonal fixed at 0."""
        n = len(texts)
        matrix = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                matrix[i, j] = matrix[j, i] = self.pair_probability(texts[i], texts[j])
        return matrix


class EmbeddingSimilarityClassifier(PairClassifier):
    """Training-free fallback: p = (cosine + 1) / 2 over provider embeddings."""

    name = "similarity"

    def __init__(self, provider: EmbeddingProvider, cache_dir=None):
        self.provider = provider
        self.cache_dir = cache_dir
        self.decision_threshold = 0.5
        self.train_meta: dict | None = None

    def _embed(self, texts: list[str]) -> np.ndarray:
        return np.stack(embed_texts(self.provider, texts, cache_dir=self.cache_dir))

    def _directed_probability(self, text_a: str, text_b: str) -> float:
        va, vb = self._embed([text_a, text_b])
        cos = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
        return float(np.clip((cos + 1.0) / 2.0, PROB_EPS, 1.0 - PROB_EPS))

    def pairwise_probabilities(self, texts: list[str]) -> np.ndarray:
        matrix_e = self._embed(texts)
        norms = np.linalg.norm(matrix_e, axis=1, keepdims=True)
        unit = matrix_e / norms
        probs = np.clip((unit @ unit.T + 1.0) / 2.0, PROB_EPS, 1.0 - PROB_EPS)
        np.fill_diagonal(probs, 0.0)
        return (probs + probs.T) / 2.0

    def fit(self, dataset, documents, config: TrainConfig):
        """Calibrate the decision threshold on weighted accuracy.

        Candidate thresholds are midpoints between consecutive distinct
        probabilities; ties resolve to the lowest threshold.
        """
        texts_a, texts_b, labels = resolve_pairs(dataset, documents)
        weights = config.class_weights or derive_class_weights(labels)
        probs = np.array(
            [self.pair_probability(a, b) for a, b in zip(texts_a, texts_b)]
        )
        sample_w = np.where(labels == 1, weights[1], weights[0])

        distinct = np.unique(probs)
        candidates = [0.5]
        if len(distinct) > 1:
            candidates.extend(((distinct[:-1] + distinct[1:]) / 2.0).tolist())
        best_threshold, best_score = 0.5, -1.0
        for threshold in sorted(candidates):
            predicted = probs >= threshold
            score = float(np.sum(sample_w * (predicted == (labels == 1))))
            if score > best_score:
                best_threshold, best_score = threshold, score
        self.decision_threshold = float(best_threshold)
        self.train_meta = {
            "examples": len(labels),
            "class_weights": list(weights),
            "decision_threshold": self.decision_threshold,
        }
        return self


class TransformerPairClassifier(PairClassifier):
    """Fine-tuned sequence-pair encoder with a single-logit sigmoid head.

    Pair serialization: each side is truncated to half the encoder's token
    budget, then joined with the tokenizer's own pair special-token layout.
    A (model, tokenizer) pair can be injected directly, which is how the
    training loop is exercised without downloading pretrained weights.
    """

    name = "transformer"

    def __init__(
        self,
        model_name: str = "roberta-base",
        model=None,
        tokenizer=None,
        max_length: int = 512,
        device: str = "cpu",
        dropout: float = 0.4,
    ):
        self.model_name = model_name
        self.max_length = max_length
        self.device = device
        self.dropout = dropout
        self._model = model
        self._tokenizer = tokenizer
        self.train_meta: dict | None = None

    # -- model plumbing -------------------------------------------------

    def _ensure_model(self):
        if self._model is None or self._tokenizer is None:
            try:
                from transformers import AutoModelForSequenceClassification, AutoTokenizer
            except ImportError as exc:
                raise BackendError(
                    "transformers is not installed; install the 'models' extra "
                    "or inject (model, tokenizer)"
                ) from exc
            self._tokenizer = AutoTokenizer.from_pretrained(self.model_name)
            self._model = AutoModelForSequenceClassification.from_pretrained(
                self.model_name, num_labels=1
            )
            for attr in ("hidden_dropout_prob", "attention_probs_dropout_prob"):
                if hasattr(self._model.config, attr):
                    setattr(self._model.config, attr, self.dropout)
        return self._model, self._tokenizer

    def _encode_pair(self, text_a: str, text_b: str) -> list[int]:
        _, tokenizer = self._ensure_model()
        specials = tokenizer.num_special_tokens_to_add(pair=True)
        half = max(1, (self.max_length - specials) // 2)
        ids_a = tokenizer(text_a, add_special_tokens=False)["input_ids"][:half]
        ids_b = tokenizer(text_b, add_special_tokens=False)["input_ids"][:half]
        return tokenizer.build_inputs_with_special_tokens(ids_a, ids_b)

    def _batch_logits(self, id_lists: list[list[int]], train: bool = False):
        import torch

        model, tokenizer = self._ensure_model()
        pad_id = getattr(tokenizer, "pad_token_id", 0) or 0
        width = max(len(ids) for ids in id_lists)
        input_ids = torch.full((len(id_lists), width), pad_id, dtype=torch.long)
        attention = torch.zeros((len(id_lists), width), dtype=torch.long)
        for row, ids in enumerate(id_lists):
            input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            attention[row, : len(ids)] = 1
        model.train(train)
        output = model(
            input_ids=input_ids.to(self.device),
            attention_mask=attention.to(self.device),
        )
        logits = output.logits if hasattr(output, "logits") else output
        return logits.reshape(len(id_lists))

    def _directed_probability(self, text_a: str, text_b: str) -> float:
        import torch

        with torch.no_grad():
            logit = self._batch_logits([self._encode_pair(text_a, text_b)])[0]
        prob = float(torch.sigmoid(logit))
        return float(np.clip(prob, PROB_EPS, 1.0 - PROB_EPS))

    def pairwise_probabilities(self, texts: list[str]) -> np.ndarray:
        import torch

        n = len(texts)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        matrix = np.zeros((n, n), dtype=np.float64)
        batch = 32
        with torch.no_grad():
            for start in range(0, len(pairs), batch):
                chunk = pairs[start : start + batch]
                forward = [self._encode_pair(texts[i], texts[j]) for i, j in chunk]
                backward = [self._encode_pair(texts[j], texts[i]) for i, j in chunk]
                logits_f = self._batch_logits(forward)
                logits_b = self._batch_logits(backward)
                probs = (torch.sigmoid(logits_f) + torch.sigmoid(logits_b)) / 2.0
                for (i, j), p in zip(chunk, probs.tolist()):
                    matrix[i, j] = matrix[j, i] = float(
                        np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
                    )
        return matrix

    # -- training -------------------------------------------------------

    def fit(self, dataset, documents, config: TrainConfig):
        """Fine-tune with weighted binary cross-entropy on the pair dataset."""
        import torch
        import torch.nn.functional as F

        texts_a, texts_b, labels = resolve_pairs(dataset, documents)
        weights = config.class_weights or derive_class_weights(labels)
        model, _ = self._ensure_model()

        torch.manual_seed(config.seed)
        encoded = [self._encode_pair(a, b) for a, b in zip(texts_a, texts_b)]
        targets = torch.tensor(labels, dtype=torch.float64)
        sample_w = torch.where(
            targets == 1.0,
            torch.tensor(weights[1], dtype=torch.float64),
            torch.tensor(weights[0], dtype=torch.float64),
        )
        optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
        order_rng = np.random.default_rng(config.seed)

        model.to(self.device)
        for epoch in range(config.epochs):
            order = order_rng.permutation(len(encoded))
            epoch_loss = 0.0
            for start in range(0, len(order), config.batch_size):
                rows = order[start : start + config.batch_size]
                logits = self._batch_logits([encoded[r] for r in rows], train=True)
                loss_terms = F.binary_cross_entropy_with_logits(
                    logits.double(), targets[rows], reduction="none"
                )
                loss = (sample_w[rows] * loss_terms).mean()
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += loss.detach().item() * len(rows)
            logger.info("epoch %d: weighted loss %.4f", epoch, epoch_loss / len(encoded))
        model.eval()
        self.train_meta = {
            "examples": len(labels),
            "class_weights": list(weights),
            "config": asdict(config),
        }
        return self


def train_classifier(
    dataset,
    documents: Mapping[str, Document],
    config: TrainConfig,
    classifier: PairClassifier,
) -> PairClassifier:
    """Validate the dataset and fit the given backend.

    Raises:
        InsufficientDataError: one of the two classes is absent.
    """
    labels = [ex.label for ex in dataset.examples]
    if "pos" not in labels or "neg" not in labels:
        raise InsufficientDataError("training data must contain both classes")
    return classifier.fit(dataset, documents, config)


def classification_metrics(
    classifier: PairClassifier,
    dataset,
    documents: Mapping[str, Document],
) -> dict[str, float]:
    """Accuracy / precision / recall / F1 at the classifier's threshold."""
    texts_a, texts_b, labels = resolve_pairs(dataset, documents)
    predicted = np.array(
        [
            classifier.pair_probability(a, b) >= classifier.decision_threshold
            for a, b in zip(texts_a, texts_b)
        ]
    )
    actual = labels == 1
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": float(np.mean(predicted == actual)),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def grid_search(
    make_classifier,
    train_dataset,
    validation_dataset,
    documents: Mapping[str, Document],
    base_config: TrainConfig,
    grid: dict[str, list] | None = None,
) -> tuple[PairClassifier, TrainConfig, float]:
    """Pick the config with the best validation accuracy over a small grid."""
    grid = grid or DEFAULT_GRID
    keys = sorted(grid)
    best = (None, base_config, -1.0)

    def expand(pos: int, config: TrainConfig):
        nonlocal best
        if pos == len(keys):
            clf = train_classifier(train_dataset, documents, config, make_classifier())
            score = classification_metrics(clf, validation_dataset, documents)["accuracy"]
            logger.info("grid point %s -> val accuracy %.4f", asdict(config), score)
            if score > best[2]:
                best = (clf, config, score)
            return
        for value in grid[keys[pos]]:
            expand(pos + 1, replace(config, **{keys[pos]: value}))

    expand(0, base_config)
    return best


# -- checkpoints ---------------------------------------------------------

META_FILENAME = "classifier.meta"
WEIGHTS_FILENAME = "weights.pt"

PAIR_SERIALIZATION = (
    "each side truncated to half the token budget, joined with the "
    "tokenizer's pair special-token layout; served score is the mean over "
    "both orders"
)


def dataset_fingerprint(dataset) -> str:
    payload = "\n".join(
        f"{ex.doc_id}\t{ex.i}\t{ex.j}\t{ex.label}" for ex in dataset.examples
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def save_classifier(classifier: PairClassifier, directory, dataset=None) -> None:
    """Persist a checkpoint directory with a classifier.meta descriptor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "backend": classifier.name,
        "version": 1,
        "decision_threshold": classifier.decision_threshold,
        "pair_serialization": PAIR_SERIALIZATION,
        "training": getattr(classifier, "train_meta", None),
        "dataset_sha256": dataset_fingerprint(dataset) if dataset is not None else None,
    }
    if isinstance(classifier, EmbeddingSimilarityClassifier):
        meta["provider"] = classifier.provider.name
    elif isinstance(classifier, TransformerPairClassifier):
        import torch

        meta["model_name"] = classifier.model_name
        meta["max_length"] = classifier.max_length
        model, _ = classifier._ensure_model()
        torch.save(model.state_dict(), directory / WEIGHTS_FILENAME)
    (directory / META_FILENAME).write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8"
    )


def load_classifier(directory, provider: EmbeddingProvider | None = None,
                    cache_dir=None) -> PairClassifier:
    directory = Path(directory)
    meta = json.loads((directory / META_FILENAME).read_text(encoding="utf-8"))
    backend = meta.get("backend")
    if backend == "similarity":
        if provider is None:
            provider = provider_from_name(meta.get("provider", "hash-64"))
        clf: PairClassifier = EmbeddingSimilarityClassifier(provider, cache_dir=cache_dir)
    elif backend == "transformer":
        import torch

        clf = TransformerPairClassifier(
            model_name=meta["model_name"], max_length=meta.get("max_length", 512)
        )
        model, _ = clf._ensure_model()
        model.load_state_dict(torch.load(directory / WEIGHTS_FILENAME,
                                         weights_only=True))
        model.eval()
    else:
        raise SchemaError(f"unknown classifier backend {backend!r}")
    clf.decision_threshold = float(meta.get("decision_threshold", 0.5))
    return clf


def provider_from_name(name: str) -> EmbeddingProvider:
    if name.startswith("hash-"):
        return HashEmbeddingProvider(int(name.split("-", 1)[1]))
    return SentenceTransformerProvider(name)

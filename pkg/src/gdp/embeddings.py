"""Embedding providers, cosine similarity, and the on-disk vector cache.

Two providers ship.  :class:`SentenceTransformerProvider` wraps a sentence
transformer model and is the production choice.  :class:`HashEmbeddingProvider`
is a deterministic stand-in for tests and offline runs: the vector for a text
is drawn from a RNG seeded with the SHA-256 of the text's UTF-8 bytes, so it is
a pure function of the text and needs no model weights.

The cache is content-addressed: one file per ``sha256(provider_name + "\\0" +
text)`` holding the raw float64 vector bytes.  Writes are atomic renames, so
concurrent writers of the same key are harmless.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, EmptyInputError, ProviderError, ZeroVectorError

# Annotation alias; vectors are plain 1-D float64 arrays.
EmbeddingVector = np.ndarray


class EmbeddingProvider(ABC):
    """Maps batches of texts to fixed-dimension vectors, deterministically."""

    name: str
    dimension: int

    @abstractmethod
    def embed(self, texts: list[str]) -> np.ndarray:
        """Return an array of shape (len(texts), dimension), order-aligned."""


class HashEmbeddingProvider(EmbeddingProvider):
    """Seeded-hash mock provider, dimension 64.

    Rule: seed a ``numpy.random.default_rng`` with the first 8 bytes
    (big-endian) of ``sha256(text.encode("utf-8"))`` and draw
    ``standard_normal(64)``.
    """

    def __init__(self, dimension: int = 64):
        self.name = f"hash-{dimension}"
        self.dimension = dimension

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "big")
            out[row] = np.random.default_rng(seed).standard_normal(self.dimension)
        return out


class SentenceTransformerProvider(EmbeddingProvider):
    """Production provider backed by a sentence transformer model.

    The model is loaded lazily on first use; ``sentence-transformers`` is an
    optional dependency (the ``models`` extra).
    """

    def __init__(self, model_name: str = "all-mpnet-base-v2"):
        self.name = model_name
        self._model = None
        self.dimension = 0  # resolved on first embed

    def _load(self):
        if self._model is None:
            try:
                from sentence_transformers import SentenceTransformer
            except ImportError as exc:
                raise ProviderError(
                    "sentence-transformers is not installed; "
                    "install the 'models' extra or use the hash provider"
                ) from exc
            self._model = SentenceTransformer(self.name)
            self.dimension = int(self._model.get_sentence_embedding_dimension())
        return self._model

    def embed(self, texts: list[str]) -> np.ndarray:
        model = self._load()
        vectors = model.encode(texts, convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(vectors, dtype=np.float64)


def cache_key(provider_name: str, text: str) -> str:
    payload = provider_name.encode("utf-8") + b"\0" + text.encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def _cache_read(path: Path) -> np.ndarray | None:
    try:
        return np.frombuffer(path.read_bytes(), dtype="<f8").copy()
    except OSError:
        return None


def _cache_write(path: Path, vector: np.ndarray) -> None:
    # Atomic rename keeps concurrent writers of the same key idempotent.
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(np.ascontiguousarray(vector, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def embed_texts(
    provider: EmbeddingProvider,
    texts: list[str],
    cache_dir: str | os.PathLike | None = None,
    max_retries: int = 3,
) -> list[EmbeddingVector]:
    """Embed texts through the provider, one vector per input, order-aligned.

    Cache hits never touch the provider.  Misses are embedded in a single
    batch; provider failures are retried ``max_retries`` times before raising
    :class:`ProviderError`.

    Raises:
        EmptyInputError: no texts, or a text that is empty/whitespace-only.
        ProviderError: the backend kept failing.
    """
    if not texts:
        raise EmptyInputError("no texts to embed")
    for text in texts:
        if not isinstance(text, str) or not text.strip():
            raise EmptyInputError("texts must be non-empty strings")

    results: list[EmbeddingVector | None] = [None] * len(texts)
    misses: list[int] = []
    cache = Path(cache_dir) if cache_dir is not None else None

    if cache is not None:
        for pos, text in enumerate(texts):
            vector = _cache_read(cache / cache_key(provider.name, text))
            if vector is not None:
                results[pos] = vector
            else:
                misses.append(pos)
    else:
        misses = list(range(len(texts)))

    if misses:
        batch = [texts[pos] for pos in misses]
        last_error: Exception | None = None
        matrix = None
        for _ in range(max(1, max_retries)):
            try:
                matrix = np.asarray(provider.embed(batch), dtype=np.float64)
                break
            except Exception as exc:  # backend failure; retry bounded
                last_error = exc
        if matrix is None:
            raise ProviderError(f"provider {provider.name!r} failed") from last_error
        if matrix.shape != (len(batch), provider.dimension) and provider.dimension:
            raise ProviderError(
                f"provider {provider.name!r} returned shape {matrix.shape}, "
                f"expected ({len(batch)}, {provider.dimension})"
            )
        for row, pos in enumerate(misses):
            vector = matrix[row]
            results[pos] = vector
            if cache is not None:
                _cache_write(cache / cache_key(provider.name, texts[pos]), vector)

    return results  # type: ignore[return-value]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, in [-1, 1].

    Raises:
        DimensionMismatchError: different lengths.
        ZeroVectorError: either vector has zero norm.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"shapes {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine is undefined for an all-zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))

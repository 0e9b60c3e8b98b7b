import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gdp.embeddings import (
    HashEmbeddingProvider,
    cache_key,
    cosine,
    embed_texts,
)
from gdp.errors import (
    DimensionMismatchError,
    EmptyInputError,
    ProviderError,
    ZeroVectorError,
)

from conftest import StaticProvider


class FlakyProvider(StaticProvider):
    """Fails the first n embed calls, then behaves."""

    def __init__(self, mapping, failures):
        super().__init__(mapping)
        self.failures = failures

    def embed(self, texts):
        if self.failures > 0:
            self.failures -= 1
            self.calls += 1
            raise RuntimeError("transient backend failure")
        return super().embed(texts)


def test_hash_provider_documented_rule():
    provider = HashEmbeddingProvider(64)
    text = "some paragraph"
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
    expected = np.random.default_rng(seed).standard_normal(64)
    got = provider.embed([text])[0]
    assert np.array_equal(got, expected)
    assert provider.name == "hash-64"


def test_hash_provider_deterministic_and_text_sensitive():
    provider = HashEmbeddingProvider(16)
    a1, b = provider.embed(["a", "b"])
    a2 = provider.embed(["a"])[0]
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_cosine_known_value():
    # cos((1,2,3), (4,5,6)) = 32 / (sqrt(14) * sqrt(77))
    value = cosine(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
    assert value == pytest.approx(0.9746318461970762, abs=1e-12)


def test_cosine_errors():
    with pytest.raises(DimensionMismatchError):
        cosine(np.ones(3), np.ones(4))
    with pytest.raises(ZeroVectorError):
        cosine(np.zeros(3), np.ones(3))


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8),
       st.floats(0.1, 50.0))
def test_cosine_scale_invariant_and_bounded(values, scale):
    u = np.asarray(values)
    if np.linalg.norm(u) == 0:
        return
    assert -1.0 <= cosine(u, u * scale) <= 1.0
    assert cosine(u, u * scale) == pytest.approx(1.0, abs=1e-9)


def test_cache_key_shape():
    key = cache_key("prov", "text")
    assert key == hashlib.sha256(b"prov\0text").hexdigest()
    assert cache_key("prov", "other") != key


def test_embed_texts_rejects_empty():
    provider = StaticProvider({"a": [1.0, 0.0]})
    with pytest.raises(EmptyInputError):
        embed_texts(provider, [])
    with pytest.raises(EmptyInputError):
        embed_texts(provider, ["a", "   "])


def test_embed_texts_order_aligned():
    provider = StaticProvider({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    vectors = embed_texts(provider, ["b", "a", "b"])
    assert np.array_equal(vectors[0], [0.0, 1.0])
    assert np.array_equal(vectors[1], [1.0, 0.0])
    assert np.array_equal(vectors[2], [0.0, 1.0])


def test_cache_serves_hits_without_provider(tmp_path):
    mapping = {"a": [1.0, 2.0], "b": [3.0, 4.0]}
    first = StaticProvider(mapping)
    cache = tmp_path / "cache"
    out1 = embed_texts(first, ["a", "b"], cache_dir=cache)
    assert first.calls == 1

    second = StaticProvider(mapping)
    out2 = embed_texts(second, ["a", "b"], cache_dir=cache)
    assert second.calls == 0  # everything came from disk
    for v1, v2 in zip(out1, out2):
        assert np.array_equal(v1, v2)


def test_cache_partial_hit_embeds_only_misses(tmp_path):
    cache = tmp_path / "cache"
    embed_texts(StaticProvider({"a": [1.0, 0.0]}), ["a"], cache_dir=cache)

    class Recording(StaticProvider):
        def embed(self, texts):
            self.seen = list(texts)
            return super().embed(texts)

    provider = Recording({"a": [9.0, 9.0], "b": [0.0, 1.0]})
    vectors = embed_texts(provider, ["a", "b"], cache_dir=cache)
    assert provider.seen == ["b"]          # "a" was cached
    assert np.array_equal(vectors[0], [1.0, 0.0])  # cached value wins
    assert np.array_equal(vectors[1], [0.0, 1.0])


def test_retries_then_succeeds():
    provider = FlakyProvider({"a": [1.0, 0.0]}, failures=2)
    vectors = embed_texts(provider, ["a"], max_retries=3)
    assert np.array_equal(vectors[0], [1.0, 0.0])


def test_retries_exhausted_raises_provider_error():
    provider = FlakyProvider({"a": [1.0, 0.0]}, failures=5)
    with pytest.raises(ProviderError):
        embed_texts(provider, ["a"], max_retries=3)


def test_shape_mismatch_is_provider_error():
    class Wrong(StaticProvider):
        def embed(self, texts):
            return np.ones((len(texts), 7))

    provider = Wrong({"a": [1.0, 0.0]})  # claims dimension 2
    with pytest.raises(ProviderError):
        embed_texts(provider, ["a"])

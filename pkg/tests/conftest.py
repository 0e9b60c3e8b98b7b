"""Shared fixtures: deterministic providers and small corpus builders."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from gdp.documents import (
    Document,
    Paragraph,
    ReferencePresentation,
    ReferenceSlide,
)
from gdp.embeddings import EmbeddingProvider

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = Path(__file__).parent / "goldens"


class StaticProvider(EmbeddingProvider):
    """Maps exact texts to preassigned vectors; unknown text is a KeyError.

    Lets tests engineer precise cosines.  ``calls`` counts embed() batches,
    which the cache tests use to prove hits never reach the provider.
    """

    def __init__(self, mapping, name="static"):
        self.mapping = {
            text: np.asarray(vec, dtype=np.float64)
            for text, vec in mapping.items()
        }
        self.name = name
        self.dimension = len(next(iter(self.mapping.values())))
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return np.stack([self.mapping[t] for t in texts])


class TopicProvider(EmbeddingProvider):
    """Embeds by topic keyword with a little deterministic noise.

    Texts mentioning alpha/beta/gamma land near the matching axis, so topic
    paragraphs form tight cosine groups.  Noise is seeded from the text's
    own SHA-256, never from process state, so vectors are stable across
    runs and processes.
    """

    name = "topic-8"
    dimension = 8

    def embed(self, texts):
        rows = []
        for text in texts:
            vec = np.zeros(8)
            for axis, word in enumerate(("alpha", "beta", "gamma")):
                if word in text.lower():
                    vec[axis] = 3.0
            seed = int.from_bytes(
                hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
            rows.append(vec + 0.05 * np.random.default_rng(seed).standard_normal(8))
        return np.stack(rows)


def make_document(doc_id, texts, sections=None):
    paragraphs = [
        Paragraph(index=i, text=text,
                  section_title=sections[i] if sections else None)
        for i, text in enumerate(texts)
    ]
    return Document(doc_id=doc_id, paragraphs=paragraphs)


def make_reference(doc_id, slides):
    """slides: list of (title, bullet list) pairs."""
    return ReferencePresentation(
        doc_id=doc_id,
        slides=[
            ReferenceSlide(index=i, title=title, body_text="\n".join(bullets))
            for i, (title, bullets) in enumerate(slides)
        ],
    )


TOPIC_TEXTS = [
    f"Topic {word} paragraph number {i} discussing the {word} subsystem design at length."
    for i, word in enumerate(["alpha"] * 4 + ["beta"] * 4 + ["gamma"] * 4)
]


@pytest.fixture
def topic_doc():
    sections = ["alpha"] * 4 + ["beta"] * 4 + ["gamma"] * 4
    return make_document("topics", TOPIC_TEXTS, sections=sections)


@pytest.fixture
def topic_provider():
    return TopicProvider()


@pytest.fixture
def topic_doc_path(tmp_path, topic_doc):
    path = tmp_path / "topics.doc.json"
    payload = {
        "doc_id": topic_doc.doc_id,
        "paragraphs": [
            {"text": p.text, "section_title": p.section_title,
             "subsection_title": p.subsection_title}
            for p in topic_doc.paragraphs
        ],
    }
    path.write_text(json.dumps(payload, indent=2))
    return path

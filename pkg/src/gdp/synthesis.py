"""Paragraph-pair dataset synthesis from (document, reference deck) pairs.

For each reference slide we pick its likely source paragraphs by cosine
similarity between the slide embedding (title + "\\n" + body) and every
paragraph embedding.  The selection threshold is ``max(sims) - std(sims)/2``
(population std), with a hard floor of 0.8 and a cap of 10 paragraphs per
slide.  Paragraphs that land in the same source set become positive pairs;
negatives are sampled per paragraph from same-document paragraphs that never
co-occur with it in any source set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .documents import Document, ReferencePresentation, ReferenceSlide
from .embeddings import EmbeddingProvider, cosine, embed_texts
from .errors import EmptyInputError, SchemaError

SIMILARITY_FLOOR = 0.8
MAX_PARAGRAPHS_PER_SLIDE = 10


@dataclass
class SlideSourceSet:
    """Paragraph indices selected as sources for one reference slide."""

    doc_id: str
    slide_index: int
    paragraph_indices: set[int] = field(default_factory=set)


@dataclass(frozen=True, order=True)
class PairExample:
    """An unordered paragraph pair, stored with i < j."""

    doc_id: str
    i: int
    j: int
    label: str  # "pos" | "neg"

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pair endpoints must differ")
        if self.i > self.j:
            raise ValueError("pairs are stored with i < j")
        if self.label not in ("pos", "neg"):
            raise ValueError(f"unknown label {self.label!r}")


@dataclass
class PairDataset:
    split: str  # "train" | "validation" | "test"
    examples: list[PairExample] = field(default_factory=list)

    def doc_ids(self) -> set[str]:
        return {ex.doc_id for ex in self.examples}

    def counts(self) -> tuple[int, int]:
        pos = sum(1 for ex in self.examples if ex.label == "pos")
        return pos, len(self.examples) - pos


def selection_threshold(similarities: list[float]) -> float:
    """max(similarities) minus half their population standard deviation."""
    if len(similarities) == 0:
        raise EmptyInputError("similarity list is empty")
    sims = np.asarray(similarities, dtype=np.float64)
    return float(sims.max() - sims.std() / 2.0)


def select_source_paragraphs(
    slide: ReferenceSlide,
    doc: Document,
    provider: EmbeddingProvider,
    cache_dir=None,
) -> SlideSourceSet:
    """Pick the slide's source paragraphs by the threshold heuristic.

    A paragraph survives if its cosine to the slide is strictly above the
    document-level threshold and at least 0.8.  At most 10 survive: ties are
    broken toward the highest cosine, then the lowest index.  The set may be
    empty.
    """
    vectors = embed_texts(provider, [slide.text()] + doc.texts(), cache_dir=cache_dir)
    slide_vec = vectors[0]
    sims = [cosine(slide_vec, vec) for vec in vectors[1:]]
    theta = selection_threshold(sims)
    candidates = [
        idx
        for idx, sim in enumerate(sims)
        if sim > theta and sim >= SIMILARITY_FLOOR
    ]
    if len(candidates) > MAX_PARAGRAPHS_PER_SLIDE:
        candidates.sort(key=lambda idx: (-sims[idx], idx))
        candidates = candidates[:MAX_PARAGRAPHS_PER_SLIDE]
    return SlideSourceSet(
        doc_id=doc.doc_id,
        slide_index=slide.index,
        paragraph_indices=set(candidates),
    )


def document_source_sets(
    doc: Document,
    pres: ReferencePresentation,
    provider: EmbeddingProvider,
    cache_dir=None,
) -> list[SlideSourceSet]:
    return [
        select_source_paragraphs(slide, doc, provider, cache_dir=cache_dir)
        for slide in pres.slides
    ]


def _doc_rng(seed: int, doc_id: str) -> np.random.Generator:
    # Per-document stream: stable under corpus reordering and parallel maps.
    doc_word = int.from_bytes(hashlib.sha256(doc_id.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng([seed, doc_word])


def pairs_from_source_sets(source_sets: list[SlideSourceSet]) -> list[tuple[int, int]]:
    """All unordered pairs within each set, deduplicated, in slide order."""
    seen: set[tuple[int, int]] = set()
    ordered: list[tuple[int, int]] = []
    for source in sorted(source_sets, key=lambda s: s.slide_index):
        members = sorted(source.paragraph_indices)
        for a_pos, i in enumerate(members):
            for j in members[a_pos + 1:]:
                if (i, j) not in seen:
                    seen.add((i, j))
                    ordered.append((i, j))
    return ordered


def sample_negative_pairs(
    doc: Document,
    source_sets: list[SlideSourceSet],
    rng: np.random.Generator,
    negatives_per_paragraph: int = 10,
) -> list[tuple[int, int]]:
    """Negative pairs for every paragraph that appears in some positive pair.

    Sampler, exactly: for each such paragraph in ascending index order, the
    candidate partners are all same-document paragraphs that never co-occur
    with it in any source set, sorted ascending; the sample is the first
    ``negatives_per_paragraph`` entries of ``rng.permutation(candidates)``.
    Pairs are deduplicated keeping first occurrence.
    """
    co_occur: set[tuple[int, int]] = set()
    for source in source_sets:
        members = sorted(source.paragraph_indices)
        for a_pos, i in enumerate(members):
            for j in members[a_pos + 1:]:
                co_occur.add((i, j))
    participants = sorted({idx for pair in co_occur for idx in pair})

    seen: set[tuple[int, int]] = set()
    negatives: list[tuple[int, int]] = []
    all_indices = range(len(doc))
    for p in participants:
        candidates = [
            q for q in all_indices
            if q != p and (min(p, q), max(p, q)) not in co_occur
        ]
        if not candidates:
            continue
        picked = rng.permutation(candidates)[:negatives_per_paragraph]
        for q in picked:
            pair = (min(p, int(q)), max(p, int(q)))
            if pair not in seen:
                seen.add(pair)
                negatives.append(pair)
    return negatives


def build_pair_dataset(
    corpus: list[tuple[Document, ReferencePresentation]],
    provider: EmbeddingProvider,
    negatives_per_paragraph: int = 10,
    seed: int = 0,
    split: str = "train",
    cache_dir=None,
    max_examples: int | None = None,
) -> PairDataset:
    """Assemble the pair dataset for one split.

    Documents are processed in ascending doc_id order with an independent
    per-document RNG stream derived from (seed, doc_id), so the result does
    not depend on corpus ordering.  ``max_examples`` optionally subsamples the
    assembled dataset (seeded, order-preserving); default off.
    """
    if not corpus:
        raise EmptyInputError("corpus is empty")
    examples: list[PairExample] = []
    for doc, pres in sorted(corpus, key=lambda item: item[0].doc_id):
        if doc.doc_id != pres.doc_id:
            raise SchemaError(
                f"document {doc.doc_id!r} paired with presentation {pres.doc_id!r}"
            )
        source_sets = document_source_sets(doc, pres, provider, cache_dir=cache_dir)
        positives = pairs_from_source_sets(source_sets)
        if not positives:
            continue
        rng = _doc_rng(seed, doc.doc_id)
        negatives = sample_negative_pairs(
            doc, source_sets, rng, negatives_per_paragraph=negatives_per_paragraph
        )
        examples.extend(
            PairExample(doc.doc_id, i, j, "pos") for i, j in positives
        )
        examples.extend(
            PairExample(doc.doc_id, i, j, "neg") for i, j in negatives
        )
    if max_examples is not None and len(examples) > max_examples:
        rng = np.random.default_rng([seed, 0x5AB5])
        keep = np.sort(rng.choice(len(examples), size=max_examples, replace=False))
        examples = [examples[k] for k in keep]
    return PairDataset(split=split, examples=examples)


def assert_splits_disjoint(*datasets: PairDataset) -> None:
    """Raise SchemaError if any doc_id appears in more than one split."""
    seen: dict[str, str] = {}
    for dataset in datasets:
        for doc_id in dataset.doc_ids():
            if doc_id in seen and seen[doc_id] != dataset.split:
                raise SchemaError(
                    f"doc_id {doc_id!r} appears in splits "
                    f"{seen[doc_id]!r} and {dataset.split!r}"
                )
            seen[doc_id] = dataset.split


def save_pair_dataset(dataset: PairDataset, path) -> None:
    """Write newline-delimited records {"doc_id", "i", "j", "label"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(
                json.dumps(
                    {"doc_id": ex.doc_id, "i": ex.i, "j": ex.j, "label": ex.label}
                )
                + "\n"
            )


def load_pair_dataset(path, split: str = "train") -> PairDataset:
    examples = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            examples.append(
                PairExample(record["doc_id"], record["i"], record["j"], record["label"])
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SchemaError(f"{path}:{line_no + 1}: bad record: {exc}") from exc
    return PairDataset(split=split, examples=examples)

"""Document and reference-presentation ingestion.

Canonical inputs are structured UTF-8 JSON files, not PDFs; whatever extraction
service produced them is out of scope here.  Loading preserves reading order:
paragraph ``index`` is always the position in the file's array.

Document schema::

    {"doc_id": str,
     "paragraphs": [{"text": str,
                     "section_title": str | null,
                     "subsection_title": str | null}, ...]}

Presentation schema (also used for generated output, which adds per-slide
``attribution`` and a top-level ``metadata`` object)::

    {"doc_id": str, "slides": [{"title": str, "bullets": [str, ...]}, ...]}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaError

_WS_RUN = re.compile(r"\s+")
_SENTENCE_END = re.compile(r"[.?!]+\s+")


def normalize_whitespace(text: str) -> str:
    """Collapse internal whitespace runs to single spaces and trim the ends."""
    return _WS_RUN.sub(" ", text).strip()


def split_sentences(text: str) -> list[str]:
    """Split on sentence punctuation followed by whitespace; trims each piece.

    Deliberately simple: abbreviations like "e.g. " do split.  Empty pieces
    are dropped, so the result can be shorter than the punctuation count
    suggests.
    """
    return [s for s in (p.strip() for p in _SENTENCE_END.split(text)) if s]


@dataclass
class Paragraph:
    """One reading-order text unit of a document."""

    index: int
    text: str
    section_title: str | None = None
    subsection_title: str | None = None

    def __post_init__(self):
        if not normalize_whitespace(self.text):
            raise SchemaError(f"paragraph {self.index} has empty text")


@dataclass
class Document:
    """An ordered sequence of paragraphs with stable 0-based indices."""

    doc_id: str
    paragraphs: list[Paragraph]
    source_path: str | None = None

    def __post_init__(self):
        for pos, para in enumerate(self.paragraphs):
            if para.index != pos:
                raise SchemaError(
                    f"paragraph index {para.index} at position {pos} in {self.doc_id!r}"
                )

    def __len__(self) -> int:
        return len(self.paragraphs)

    def texts(self) -> list[str]:
        return [p.text for p in self.paragraphs]


@dataclass
class ReferenceSlide:
    """One slide of a human-made reference deck; empty titles are allowed."""

    index: int
    title: str
    body_text: str

    def text(self) -> str:
        """Title and body joined by a newline, the form used for embedding."""
        return self.title + "\n" + self.body_text


@dataclass
class ReferencePresentation:
    doc_id: str
    slides: list[ReferenceSlide] = field(default_factory=list)

    def __post_init__(self):
        for pos, slide in enumerate(self.slides):
            if slide.index != pos:
                raise SchemaError(
                    f"slide index {slide.index} at position {pos} in {self.doc_id!r}"
                )


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: top level must be an object")
    return data


def _require(data: dict, key: str, kind: type, path) :
    if key not in data:
        raise SchemaError(f"{path}: missing required key {key!r}")
    value = data[key]
    if not isinstance(value, kind):
        raise SchemaError(f"{path}: key {key!r} must be {kind.__name__}")
    return value


def _optional_str(data: dict, key: str, path) -> str | None:
    value = data.get(key)
    if value is not None and not isinstance(value, str):
        raise SchemaError(f"{path}: key {key!r} must be a string or null")
    return value


def load_document(path) -> Document:
    """Load a document file, assigning paragraph indices in file order.

    Raises:
        SchemaError: missing keys, empty paragraph list, or a paragraph whose
            text is empty after whitespace normalization.
        OSError: the file cannot be read.
    """
    data = _load_json(path)
    doc_id = _require(data, "doc_id", str, path)
    raw_paragraphs = _require(data, "paragraphs", list, path)
    if not raw_paragraphs:
        raise SchemaError(f"{path}: document has no paragraphs")
    paragraphs = []
    for pos, item in enumerate(raw_paragraphs):
        if not isinstance(item, dict):
            raise SchemaError(f"{path}: paragraph {pos} must be an object")
        text = normalize_whitespace(_require(item, "text", str, path))
        if not text:
            raise SchemaError(f"{path}: paragraph {pos} is empty after normalization")
        paragraphs.append(
            Paragraph(
                index=pos,
                text=text,
                section_title=_optional_str(item, "section_title", path),
                subsection_title=_optional_str(item, "subsection_title", path),
            )
        )
    return Document(doc_id=doc_id, paragraphs=paragraphs, source_path=str(path))


def save_document(doc: Document, path) -> None:
    payload = {
        "doc_id": doc.doc_id,
        "paragraphs": [
            {
                "text": p.text,
                "section_title": p.section_title,
                "subsection_title": p.subsection_title,
            }
            for p in doc.paragraphs
        ],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_reference_presentation(path) -> ReferencePresentation:
    """Load a reference deck; a slide's body is its bullet lines joined by newlines.

    A slide whose title and bullets are all empty carries no text to embed and
    is rejected.
    """
    data = _load_json(path)
    doc_id = _require(data, "doc_id", str, path)
    raw_slides = _require(data, "slides", list, path)
    slides = []
    for pos, item in enumerate(raw_slides):
        if not isinstance(item, dict):
            raise SchemaError(f"{path}: slide {pos} must be an object")
        title = normalize_whitespace(_require(item, "title", str, path))
        bullets = _require(item, "bullets", list, path)
        lines = []
        for bullet in bullets:
            if not isinstance(bullet, str):
                raise SchemaError(f"{path}: slide {pos} bullets must be strings")
            line = normalize_whitespace(bullet)
            if line:
                lines.append(line)
        if not title and not lines:
            raise SchemaError(f"{path}: slide {pos} has no text at all")
        slides.append(ReferenceSlide(index=pos, title=title, body_text="\n".join(lines)))
    return ReferencePresentation(doc_id=doc_id, slides=slides)


def save_reference_presentation(pres: ReferencePresentation, path) -> None:
    payload = {
        "doc_id": pres.doc_id,
        "slides": [
            {
                "title": s.title,
                "bullets": s.body_text.split("\n") if s.body_text else [],
            }
            for s in pres.slides
        ],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

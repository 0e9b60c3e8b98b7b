"""Slide generation: prompt assembly, backend calls, and output parsing.

Slides are produced sequentially, one per paragraph cluster, with the titles
of already-generated slides fed back into the prompt so the model can keep
the deck coherent.  A backend is anything implementing :class:`LlmBackend`;
an HTTP chat-completions client and a deterministic offline mock are
provided.
"""

from __future__ import annotations

import abc
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .clustering import SlidePlan
from .documents import Document, split_sentences
from .errors import (
    BackendError,
    GenerationAbortedError,
    MalformedOutputError,
)

logger = logging.getLogger(__name__)

SLIDE_PROMPT_TEMPLATE = """You are an AI assistant tasked with creating a presentation. You will be given some paragraphs for which you must create a slide for the presentation. Following are the detailed instructions on creating the slide, follow them while creating the slide.
1. Read these paragraphs, combine them to form a slide.
2. The slide will contain a short title and bullet points.
3. The slide should have AT MAX 7 bullet points. Each bullet point should have around 15 words.
4. If you're given a title for the previous slide, ensure that the flow between the slides is maintained.
5. Please follow the following structure in the output.
    Slide Title: The slide title
    Bullet Points:
Previous Slides:
##previous_slides##

Text:
##Combined_paragraphs##

Slide:"""

MAX_BULLETS = 7

_TITLE_RE = re.compile(r"^[\s#*>\-]*slide\s+title\s*:?\s*(.*)$", re.IGNORECASE)
_BULLETS_HEADING_RE = re.compile(r"^[\s#*>\-]*bullet\s+points\s*:?[\s*_]*$", re.IGNORECASE)
_BULLET_GLYPH_RE = re.compile(r"^\s*(?:[-*•◦‣+]+|\d+[.)])\s*")


def render_slide_prompt(paragraphs, previous_titles) -> str:
    """Fill the slide prompt template.

    Previous titles are listed one per line, or the literal ``None`` for the
    first slide; paragraphs are joined with blank lines in the order given
    (callers pass them in ascending index order).
    """
    previous = "\n".join(previous_titles) if previous_titles else "None"
    combined = "\n\n".join(paragraphs)
    return (
        SLIDE_PROMPT_TEMPLATE
        .replace("##previous_slides##", previous)
        .replace("##Combined_paragraphs##", combined)
    )


def parse_slide_output(text: str) -> tuple[str, list[str]]:
    """Extract (title, bullets) from model output.

    Tolerates markdown decoration around the expected headings.  At most
    :data:`MAX_BULLETS` bullets are kept.

    Raises:
        MalformedOutputError: no title line, or no bullets at all.
    """
    title = None
    bullets: list[str] = []
    in_bullets = False
    for line in text.splitlines():
        if title is None:
            match = _TITLE_RE.match(line)
            if match:
                title = match.group(1).strip().strip("*_").strip()
                continue
        if _BULLETS_HEADING_RE.match(line):
            in_bullets = True
            continue
        if in_bullets:
            stripped = _BULLET_GLYPH_RE.sub("", line).strip()
            if stripped:
                bullets.append(stripped)
    if not title:
        raise MalformedOutputError("no 'Slide Title:' line in model output")
    if not bullets:
        raise MalformedOutputError("no bullet points in model output")
    return title, bullets[:MAX_BULLETS]


def generate_slide(backend, prompt: str, max_retries: int = 3,
                   temperature: float = 0.7, top_p: float = 0.95) -> tuple[str, list[str]]:
    """Call the backend until its output parses; returns (title, bullets).

    ``max_retries`` is the total attempt budget.  Backend transport errors
    propagate immediately (the HTTP backend retries those itself).

    Raises:
        MalformedOutputError: every attempt came back unparseable.
    """
    last_error = None
    for attempt in range(max_retries):
        raw = backend.complete(prompt, temperature=temperature, top_p=top_p)
        try:
            return parse_slide_output(raw)
        except MalformedOutputError as exc:
            last_error = exc
            logger.warning("unparseable slide output (attempt %d/%d): %s",
                           attempt + 1, max_retries, exc)
    raise MalformedOutputError(
        f"backend produced no parseable slide in {max_retries} attempts"
    ) from last_error


@dataclass
class GeneratedSlide:
    """One produced slide plus the paragraph indices that fed it."""

    index: int
    title: str
    bullets: list[str]
    attribution: list[int]

    def __post_init__(self):
        if not self.title.strip():
            raise ValueError(f"slide {self.index} has an empty title")
        if not self.bullets:
            raise ValueError(f"slide {self.index} has no bullets")
        if sorted(self.attribution) != list(self.attribution):
            raise ValueError(f"slide {self.index} attribution is not ascending")


@dataclass
class GeneratedPresentation:
    doc_id: str
    slides: list[GeneratedSlide]
    metadata: dict = field(default_factory=dict)


def _first_sentence(text: str) -> str:
    sentences = split_sentences(text)
    return sentences[0] if sentences else text.strip()


def _fallback_slide(index: int, paragraphs, attribution) -> GeneratedSlide:
    """Extractive stand-in when the backend never produces parseable output.

    Title is the first sentence of the lowest-index paragraph, capped at 10
    words; each paragraph contributes its first sentence as a bullet, at
    most :data:`MAX_BULLETS` of them.
    """
    title = " ".join(_first_sentence(paragraphs[0]).split()[:10])
    bullets = [_first_sentence(p) for p in paragraphs[:MAX_BULLETS]]
    return GeneratedSlide(index=index, title=title, bullets=bullets,
                          attribution=list(attribution))


class _CountingBackend:
    """Pass-through wrapper so metadata can report how many calls were made."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def complete(self, prompt, **kwargs):
        self.calls += 1
        return self.inner.complete(prompt, **kwargs)


def generate_presentation(
    doc: Document,
    plan: SlidePlan,
    backend,
    temperature: float = 0.7,
    top_p: float = 0.95,
    max_retries: int = 3,
) -> GeneratedPresentation:
    """Generate one slide per planned cluster, carrying titles forward.

    Strictly sequential: slide k's prompt lists the titles of slides
    1..k-1.  Clusters whose output never parses fall back to an extractive
    slide, recorded in ``metadata["fallback_slides"]``.  A backend
    transport failure aborts the run; the raised error carries the slides
    finished so far in ``.partial``, with the failing slide position under
    ``metadata["aborted_at_slide"]``.
    """
    if plan.doc_id != doc.doc_id:
        raise ValueError(
            f"plan is for {plan.doc_id!r} but document is {doc.doc_id!r}"
        )
    counting = _CountingBackend(backend)
    slides: list[GeneratedSlide] = []
    fallbacks: list[int] = []
    titles: list[str] = []
    for position, members in enumerate(plan.clusters):
        paragraphs = [doc.paragraphs[i].text for i in members]
        prompt = render_slide_prompt(paragraphs, titles)
        try:
            title, bullets = generate_slide(
                counting, prompt, max_retries=max_retries,
                temperature=temperature, top_p=top_p,
            )
            slide = GeneratedSlide(index=position, title=title, bullets=bullets,
                                   attribution=list(members))
        except MalformedOutputError:
            logger.warning("falling back to extractive slide %d", position)
            slide = _fallback_slide(position, paragraphs, members)
            fallbacks.append(position)
        except BackendError as exc:
            meta = _generation_metadata(backend, temperature, top_p,
                                        fallbacks, counting.calls)
            meta["aborted_at_slide"] = position
            partial = GeneratedPresentation(doc_id=doc.doc_id, slides=slides,
                                            metadata=meta)
            raise GenerationAbortedError(
                f"backend failed at slide {position}: {exc}", partial=partial
            ) from exc
        slides.append(slide)
        titles.append(slide.title)
    return GeneratedPresentation(
        doc_id=doc.doc_id, slides=slides,
        metadata=_generation_metadata(backend, temperature, top_p,
                                      fallbacks, counting.calls),
    )


def _generation_metadata(backend, temperature, top_p, fallbacks, calls) -> dict:
    return {
        "backend": getattr(backend, "name", type(backend).__name__),
        "temperature": temperature,
        "top_p": top_p,
        "backend_calls": calls,
        "fallback_slides": list(fallbacks),
    }


# -- backends ------------------------------------------------------------

API_KEY_ENV_VAR = "GDP_LLM_API_KEY"


class LlmBackend(abc.ABC):
    """Text-completion interface: prompt in, response text (or error) out."""

    name: str = "backend"

    @abc.abstractmethod
    def complete(self, prompt: str, temperature: float = 0.7,
                 top_p: float = 0.95) -> str:
        """Return the model's response for one prompt."""


class HttpChatBackend(LlmBackend):
    """OpenAI-style chat-completions client over plain HTTP.

    The key comes from the constructor or the ``GDP_LLM_API_KEY``
    environment variable.  Transient failures (connection errors, 429, 5xx)
    are retried with exponential backoff before giving up.
    """

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 session=None, timeout: float = 60.0, max_retries: int = 3,
                 backoff: float = 1.0):
        if session is None:
            import requests
            session = requests.Session()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.session = session
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.name = f"http-chat:{model}"

    def _resolve_key(self) -> str:
        key = self.api_key or os.environ.get(API_KEY_ENV_VAR)
        if not key:
            raise BackendError(
                f"no API key: pass api_key or set {API_KEY_ENV_VAR}"
            )
        return key

    def complete(self, prompt: str, temperature: float = 0.7,
                 top_p: float = 0.95) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "top_p": top_p,
        }
        headers = {"Authorization": f"Bearer {self._resolve_key()}"}
        url = f"{self.base_url}/chat/completions"
        last = None
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = self.session.post(url, json=payload, headers=headers,
                                             timeout=self.timeout)
            except Exception as exc:  # requests transport errors
                last = f"transport error: {exc}"
                logger.warning("backend request failed (attempt %d): %s",
                               attempt + 1, exc)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last = f"HTTP {response.status_code}"
                logger.warning("backend returned %s (attempt %d)",
                               response.status_code, attempt + 1)
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"HTTP {response.status_code} from {url}: {response.text[:200]}"
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise BackendError(f"unexpected response shape: {exc}") from exc
        raise BackendError(
            f"backend unreachable after {self.max_retries} attempts ({last})"
        )


class MockLlmBackend(LlmBackend):
    """Deterministic offline backend; output is a pure function of the prompt.

    Slide prompts get a title built from the first 8 words of the cluster's
    first paragraph, prefixed "Slide k:" with k inferred from the number of
    previous titles, plus one 15-word bullet per paragraph.  Scoring prompts
    (recognized by their "On a scale of 0-10" opening) get an integer
    derived from the presentation's non-empty line count: 5 + lines mod 4.
    """

    name = "mock"

    def __init__(self):
        self.calls = 0

    def complete(self, prompt: str, temperature: float = 0.7,
                 top_p: float = 0.95) -> str:
        self.calls += 1
        if prompt.startswith("On a scale of 0-10"):
            return str(self._score(prompt))
        return self._slide(prompt)

    @staticmethod
    def _score(prompt: str) -> int:
        body = prompt.split("Presentation:", 1)[-1]
        lines = [ln for ln in body.splitlines() if ln.strip()]
        return 5 + len(lines) % 4

    @staticmethod
    def _slide(prompt: str) -> str:
        previous, _, rest = prompt.partition("Previous Slides:\n")[2].partition("\n\nText:\n")
        body = rest.rsplit("\n\nSlide:", 1)[0]
        n_previous = 0 if previous.strip() == "None" else len(previous.splitlines())
        paragraphs = [p for p in body.split("\n\n") if p.strip()]
        head = " ".join(paragraphs[0].split()[:8]) if paragraphs else "Overview"
        lines = [f"Slide Title: Slide {n_previous + 1}: {head}", "Bullet Points:"]
        for paragraph in paragraphs[:MAX_BULLETS]:
            lines.append("- " + " ".join(paragraph.split()[:15]))
        return "\n".join(lines)


# -- presentation files --------------------------------------------------

def save_presentation(presentation: GeneratedPresentation, path) -> None:
    """Write the deck as JSON.  Contains nothing run-specific, so repeated
    runs with identical inputs produce byte-identical files."""
    payload = {
        "doc_id": presentation.doc_id,
        "slides": [
            {"title": s.title, "bullets": s.bullets, "attribution": s.attribution}
            for s in presentation.slides
        ],
        "metadata": presentation.metadata,
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_presentation(path) -> GeneratedPresentation:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    slides = [
        GeneratedSlide(
            index=pos,
            title=s["title"],
            bullets=list(s["bullets"]),
            attribution=[int(i) for i in s.get("attribution", [])],
        )
        for pos, s in enumerate(data["slides"])
    ]
    return GeneratedPresentation(
        doc_id=data["doc_id"], slides=slides, metadata=data.get("metadata", {})
    )

"""Automated deck metrics: ROUGE-1, coverage, non-linearity, PPL, judge score.

All metrics are pure functions of their inputs given fixed providers and
backends.  Optional metrics (perplexity, judge score) are reported absent
rather than zero when their dependency is missing.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .documents import Document, ReferencePresentation, split_sentences
from .embeddings import EmbeddingProvider, embed_texts
from .errors import (
    AllSamplesUnparseableError,
    DuplicateIndicesError,
    EmptyTextError,
    EmptyUnitsError,
    ScorerUnavailableError,
    SequenceTooShortError,
    ZeroVectorError,
)
from .generation import GeneratedPresentation

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; no stemming."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Rouge1:
    """Unigram-overlap scores, all in percent."""

    recall: float
    precision: float
    f1: float


def rouge1(generated_text: str, reference_text: str) -> Rouge1:
    """ROUGE-1 with clipped counts: each unigram's overlap is capped by its
    count on either side.

    Raises:
        EmptyTextError: either text has no tokens.
    """
    gen = tokenize(generated_text)
    ref = tokenize(reference_text)
    if not gen or not ref:
        raise EmptyTextError("both texts must contain at least one token")
    gen_counts = Counter(gen)
    ref_counts = Counter(ref)
    overlap = sum(min(c, ref_counts[w]) for w, c in gen_counts.items())
    precision = 100.0 * overlap / len(gen)
    recall = 100.0 * overlap / len(ref)
    f1 = (2 * precision * recall / (precision + recall)) if overlap else 0.0
    return Rouge1(recall=recall, precision=precision, f1=f1)


def coverage(doc_units, pres_units, provider: EmbeddingProvider,
             cache_dir=None) -> float:
    """Mean cosine between every (document unit, presentation unit) pair, x100.

    Raises:
        EmptyUnitsError: either unit list is empty.
        ZeroVectorError: the provider embedded some unit to the zero vector.
    """
    doc_units = list(doc_units)
    pres_units = list(pres_units)
    if not doc_units or not pres_units:
        raise EmptyUnitsError("coverage needs at least one unit on each side")
    vectors = np.stack(embed_texts(provider, doc_units + pres_units,
                                   cache_dir=cache_dir))
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise ZeroVectorError("a unit embedded to the zero vector")
    unit_rows = vectors / norms[:, None]
    d = unit_rows[: len(doc_units)]
    p = unit_rows[len(doc_units):]
    return float(100.0 * np.mean(d @ p.T))


def count_inversions(values) -> int:
    """Number of index pairs a < b with values[a] > values[b] (mergesort)."""

    def rec(arr):
        if len(arr) <= 1:
            return arr, 0
        mid = len(arr) // 2
        left, inv_l = rec(arr[:mid])
        right, inv_r = rec(arr[mid:])
        merged = []
        inversions = inv_l + inv_r
        i = j = 0
        while i < len(left) and j < len(right):
            if left[i] <= right[j]:
                merged.append(left[i])
                i += 1
            else:
                merged.append(right[j])
                j += 1
                inversions += len(left) - i
        merged.extend(left[i:])
        merged.extend(right[j:])
        return merged, inversions

    return rec(list(values))[1]


def nonlinearity(seq) -> float:
    """Percentage of value pairs whose natural order is inverted.

    100 x inversions / C(n, 2).  A sorted sequence scores 0, a reversed one
    100.

    Raises:
        SequenceTooShortError: fewer than two values.
        DuplicateIndicesError: repeated values (a paragraph on two slides).
    """
    values = [int(v) for v in seq]
    if len(values) < 2:
        raise SequenceTooShortError("need at least two values")
    if len(set(values)) != len(values):
        raise DuplicateIndicesError("sequence contains duplicate values")
    pairs = len(values) * (len(values) - 1) // 2
    return 100.0 * count_inversions(values) / pairs


def attribution_sequence(presentation: GeneratedPresentation) -> list[int]:
    """Slide attributions concatenated in slide order."""
    return [i for slide in presentation.slides for i in slide.attribution]


# -- deck text -----------------------------------------------------------

def slide_text(slide) -> str:
    """A slide's full text: title and bullet lines joined by newlines.

    Works for generated slides (``bullets``) and reference slides
    (``body_text``).
    """
    if hasattr(slide, "bullets"):
        return "\n".join([slide.title, *slide.bullets])
    return slide.text()


def presentation_text(presentation) -> str:
    """The whole deck as one stream, slides separated by blank lines."""
    return "\n\n".join(slide_text(s) for s in presentation.slides)


# -- perplexity ----------------------------------------------------------

def perplexity(text: str, scorer) -> float:
    """exp(-mean token log-likelihood) under the scorer's language model.

    ``scorer`` must expose ``token_logprobs(text) -> list of floats``.

    Raises:
        EmptyTextError: empty text, or a scorer returning no tokens.
        ScorerUnavailableError: propagated from the scorer.
    """
    if not text.strip():
        raise EmptyTextError("cannot score empty text")
    logprobs = scorer.token_logprobs(text)
    if not len(logprobs):
        raise EmptyTextError("scorer returned no token scores")
    return float(np.exp(-np.mean(logprobs)))


class CausalLmScorer:
    """Token log-likelihoods from a causal language model.

    By default loads a named model lazily; tests can inject
    (model, tokenizer) instead.  The first token has no conditional score
    under a causal model and is skipped.
    """

    def __init__(self, model_name: str = "gpt2", model=None, tokenizer=None,
                 device: str = "cpu", max_length: int = 1024):
        self.model_name = model_name
        self._model = model
        self._tokenizer = tokenizer
        self.device = device
        self.max_length = max_length

    def _ensure_loaded(self):
        if self._model is not None:
            return
        try:
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:
            raise ScorerUnavailableError(
                "transformers is not installed; perplexity unavailable"
            ) from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(self.model_name)
            self._model = AutoModelForCausalLM.from_pretrained(self.model_name)
        except Exception as exc:
            raise ScorerUnavailableError(
                f"could not load {self.model_name!r}: {exc}"
            ) from exc
        self._model.to(self.device)
        self._model.eval()

    def token_logprobs(self, text: str) -> list[float]:
        self._ensure_loaded()
        import torch

        ids = self._tokenizer(text, truncation=True,
                              max_length=self.max_length,
                              return_tensors="pt")["input_ids"].to(self.device)
        if ids.shape[1] < 2:
            return []
        with torch.no_grad():
            logits = self._model(ids).logits
        log_probs = torch.log_softmax(logits[:, :-1], dim=-1)
        picked = log_probs.gather(-1, ids[:, 1:].unsqueeze(-1)).squeeze(-1)
        return [float(v) for v in picked[0]]


# -- judge score ---------------------------------------------------------

GEVAL_PROMPT_TEMPLATE = """On a scale of 0-10, rate the effectiveness, clarity, and overall quality of the following text presentation, considering factors such as organization, coherence, and the ability to convey complex ideas to the audience. 0 is the lowest score, whereas 10 is the highest score.

Presentation:
##presentation##

Score (an integer between 0 and 10):"""

# "10" before any single digit, so "10" is not read as a 1.
_SCORE_RE = re.compile(r"10|[0-9]")


def render_judge_prompt(deck_text: str) -> str:
    return GEVAL_PROMPT_TEMPLATE.replace("##presentation##", deck_text)


def parse_judge_score(text: str) -> int | None:
    """First integer in 0..10 appearing in the response, or None."""
    match = _SCORE_RE.search(text)
    return int(match.group()) if match else None


@dataclass
class GevalScore:
    """Mean of the parsed judge samples, with how many actually parsed."""

    score: float
    parsed_count: int
    samples: int


def geval_score(presentation, backend, samples: int = 10,
                temperature: float = 0.7, top_p: float = 0.95) -> GevalScore:
    """Ask the judge backend ``samples`` times and average the parsed scores.

    Raises:
        AllSamplesUnparseableError: no sample contained an integer 0..10.
        BackendError: propagated from the backend.
    """
    prompt = render_judge_prompt(presentation_text(presentation))
    parsed: list[int] = []
    for _ in range(samples):
        response = backend.complete(prompt, temperature=temperature, top_p=top_p)
        score = parse_judge_score(response)
        if score is None:
            logger.warning("judge sample had no parseable score: %.60r", response)
        else:
            parsed.append(score)
    if not parsed:
        raise AllSamplesUnparseableError(
            f"none of {samples} judge samples contained a score"
        )
    return GevalScore(score=float(np.mean(parsed)), parsed_count=len(parsed),
                      samples=samples)


# -- the full report -----------------------------------------------------

@dataclass
class MetricReport:
    """All metrics for one presentation; optional ones may be None."""

    doc_id: str
    rouge1: Rouge1 | None
    coverage_paragraph: float
    coverage_sentence: float
    nonlinearity: float | None
    perplexity: float | None
    geval: GevalScore | None


def evaluate_presentation(
    presentation: GeneratedPresentation,
    doc: Document,
    provider: EmbeddingProvider,
    reference: ReferencePresentation | None = None,
    scorer=None,
    judge=None,
    geval_samples: int = 10,
    cache_dir=None,
) -> MetricReport:
    """Score one deck against its source document.

    ROUGE-1 needs a reference deck; perplexity needs a scorer; the judge
    score needs a backend.  Each is None when its input is missing or its
    dependency unavailable.  Non-linearity is None when the deck carries no
    attribution (e.g. a hand-written file).
    """
    deck_text = presentation_text(presentation)

    rouge = None
    if reference is not None:
        rouge = rouge1(deck_text, presentation_text(reference))

    cov_paragraph = coverage(
        doc.texts(),
        [slide_text(s) for s in presentation.slides],
        provider, cache_dir=cache_dir,
    )
    sentences = [s for p in doc.texts() for s in split_sentences(p)]
    bullets = [b for s in presentation.slides for b in s.bullets]
    cov_sentence = coverage(sentences, bullets, provider, cache_dir=cache_dir)

    nonlin = None
    seq = attribution_sequence(presentation)
    if len(seq) >= 2:
        nonlin = nonlinearity(seq)

    ppl = None
    if scorer is not None:
        try:
            ppl = perplexity(deck_text, scorer)
        except ScorerUnavailableError as exc:
            logger.warning("perplexity skipped: %s", exc)

    geval = None
    if judge is not None:
        geval = geval_score(presentation, judge, samples=geval_samples)

    return MetricReport(
        doc_id=presentation.doc_id,
        rouge1=rouge,
        coverage_paragraph=cov_paragraph,
        coverage_sentence=cov_sentence,
        nonlinearity=nonlin,
        perplexity=ppl,
        geval=geval,
    )


def report_payload(report: MetricReport) -> dict:
    """The report's file form; optional metrics become null, not zero."""
    return {
        "doc_id": report.doc_id,
        "rouge1": (
            {
                "recall": report.rouge1.recall,
                "precision": report.rouge1.precision,
                "f1": report.rouge1.f1,
            }
            if report.rouge1 is not None else None
        ),
        "coverage": {
            "paragraph": report.coverage_paragraph,
            "sentence": report.coverage_sentence,
        },
        "nonlinearity": report.nonlinearity,
        "ppl": report.perplexity,
        "geval": report.geval.score if report.geval is not None else None,
    }


def save_report(report: MetricReport, path) -> None:
    Path(path).write_text(
        json.dumps(report_payload(report), indent=2) + "\n", encoding="utf-8"
    )


def load_report(path) -> dict:
    """Read a report file back as plain JSON (the file drops sample counts,
    so round-tripping to a MetricReport would fabricate fields)."""
    return json.loads(Path(path).read_text(encoding="utf-8"))

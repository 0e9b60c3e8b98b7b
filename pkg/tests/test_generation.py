"""Prompt rendering, output parsing, sequential generation, and backends."""

import json
import types

import pytest

from conftest import GOLDEN_DIR, make_document
from gdp.clustering import SlidePlan
from gdp.errors import (
    BackendError,
    GenerationAbortedError,
    MalformedOutputError,
)
from gdp.generation import (
    API_KEY_ENV_VAR,
    MAX_BULLETS,
    SLIDE_PROMPT_TEMPLATE,
    GeneratedPresentation,
    GeneratedSlide,
    HttpChatBackend,
    MockLlmBackend,
    generate_presentation,
    generate_slide,
    load_presentation,
    parse_slide_output,
    render_slide_prompt,
    save_presentation,
)

VALID_OUTPUT = "Slide Title: A Title\nBullet Points:\n- first point\n- second point"


class ScriptedBackend:
    """Replays a fixed list of outputs; an Exception entry is raised."""

    name = "scripted"

    def __init__(self, outputs):
        self.outputs = list(outputs)
        self.prompts = []

    def complete(self, prompt, temperature=0.7, top_p=0.95):
        self.prompts.append(prompt)
        out = self.outputs.pop(0)
        if isinstance(out, Exception):
            raise out
        return out


class TestRenderSlidePrompt:
    def test_template_matches_golden(self):
        golden = (GOLDEN_DIR / "slide_prompt.golden.txt").read_text(encoding="utf-8")
        assert SLIDE_PROMPT_TEMPLATE == golden

    def test_first_slide_uses_none_marker(self):
        golden = (GOLDEN_DIR / "slide_prompt.golden.txt").read_text(encoding="utf-8")
        expected = golden.replace("##previous_slides##", "None").replace(
            "##Combined_paragraphs##", "para one\n\npara two"
        )
        assert render_slide_prompt(["para one", "para two"], []) == expected

    def test_previous_titles_one_per_line(self):
        prompt = render_slide_prompt(["body"], ["Intro", "Methods"])
        assert "Previous Slides:\nIntro\nMethods\n" in prompt
        assert "None" not in prompt

    def test_paragraphs_joined_with_blank_lines(self):
        prompt = render_slide_prompt(["a", "b", "c"], [])
        assert "Text:\na\n\nb\n\nc\n\nSlide:" in prompt


class TestParseSlideOutput:
    def test_canonical_format(self):
        title, bullets = parse_slide_output(VALID_OUTPUT)
        assert title == "A Title"
        assert bullets == ["first point", "second point"]

    def test_markdown_decorations_tolerated(self):
        text = (
            "## **Slide Title:** Results Overview\n"
            "**Bullet Points:**\n"
            "* point one\n"
            "• point two\n"
            "1. point three\n"
            "2) point four\n"
        )
        title, bullets = parse_slide_output(text)
        assert title == "Results Overview"
        assert bullets == ["point one", "point two", "point three", "point four"]

    def test_title_without_colon(self):
        title, _ = parse_slide_output(
            "Slide Title Findings\nBullet Points:\n- x"
        )
        assert title == "Findings"

    def test_bullets_capped(self):
        lines = ["Slide Title: T", "Bullet Points:"] + [f"- b{i}" for i in range(10)]
        _, bullets = parse_slide_output("\n".join(lines))
        assert len(bullets) == MAX_BULLETS
        assert bullets[0] == "b0"

    def test_text_before_heading_ignored(self):
        text = (
            "Sure, here is the slide.\n"
            "Slide Title: T\n"
            "some chatter\n"
            "Bullet Points:\n"
            "- real bullet\n"
        )
        _, bullets = parse_slide_output(text)
        assert bullets == ["real bullet"]

    def test_missing_title_rejected(self):
        with pytest.raises(MalformedOutputError, match="Slide Title"):
            parse_slide_output("Bullet Points:\n- a")

    def test_missing_bullets_rejected(self):
        with pytest.raises(MalformedOutputError, match="bullet"):
            parse_slide_output("Slide Title: T\nBullet Points:\n")


class TestGenerateSlide:
    def test_retries_until_parseable(self):
        backend = ScriptedBackend(["garbage", "still garbage", VALID_OUTPUT])
        title, bullets = generate_slide(backend, "prompt", max_retries=3)
        assert title == "A Title"
        assert len(backend.prompts) == 3

    def test_attempt_budget_exhausted(self):
        backend = ScriptedBackend(["garbage"] * 2)
        with pytest.raises(MalformedOutputError, match="2 attempts"):
            generate_slide(backend, "prompt", max_retries=2)
        assert len(backend.prompts) == 2

    def test_backend_error_propagates_immediately(self):
        backend = ScriptedBackend([BackendError("down")])
        with pytest.raises(BackendError):
            generate_slide(backend, "prompt", max_retries=3)
        assert len(backend.prompts) == 1


class TestGeneratedSlide:
    def test_validation(self):
        with pytest.raises(ValueError, match="empty title"):
            GeneratedSlide(0, "  ", ["b"], [0])
        with pytest.raises(ValueError, match="no bullets"):
            GeneratedSlide(0, "T", [], [0])
        with pytest.raises(ValueError, match="ascending"):
            GeneratedSlide(0, "T", ["b"], [3, 1])


@pytest.fixture
def small_doc():
    return make_document(
        "d",
        [
            "Alpha intro sentence with quite a few words in it. Extra detail.",
            "Alpha follow-up sentence here. More alpha.",
            "Beta intro sentence. Beta detail.",
            "Beta follow-up sentence. Extra beta.",
        ],
    )


@pytest.fixture
def small_plan():
    return SlidePlan("d", [[0, 1], [2, 3]])


class TestGeneratePresentation:
    def test_mock_backend_end_to_end(self, small_doc, small_plan):
        pres = generate_presentation(small_doc, small_plan, MockLlmBackend())
        assert pres.doc_id == "d"
        assert len(pres.slides) == 2
        assert [s.attribution for s in pres.slides] == [[0, 1], [2, 3]]
        assert pres.slides[0].title.startswith("Slide 1:")
        assert pres.slides[1].title.startswith("Slide 2:")
        assert pres.metadata["backend"] == "mock"
        assert pres.metadata["backend_calls"] == 2
        assert pres.metadata["fallback_slides"] == []

    def test_titles_thread_into_later_prompts(self, small_doc, small_plan):
        first = "Slide Title: Opening\nBullet Points:\n- a"
        second = "Slide Title: Closing\nBullet Points:\n- b"
        backend = ScriptedBackend([first, second])
        generate_presentation(small_doc, small_plan, backend)
        assert "Previous Slides:\nNone\n" in backend.prompts[0]
        assert "Previous Slides:\nOpening\n" in backend.prompts[1]

    def test_unparseable_cluster_falls_back_to_extractive(self, small_doc, small_plan):
        backend = ScriptedBackend([VALID_OUTPUT, "???", "???"])
        pres = generate_presentation(small_doc, small_plan, backend, max_retries=2)
        assert pres.metadata["fallback_slides"] == [1]
        fallback = pres.slides[1]
        assert fallback.title == "Beta intro sentence"
        assert fallback.bullets == ["Beta intro sentence", "Beta follow-up sentence"]
        assert fallback.attribution == [2, 3]

    def test_fallback_title_capped_at_ten_words(self, small_plan):
        doc = make_document(
            "d",
            ["word " * 30 + "end.", "second paragraph here.",
             "third paragraph text.", "fourth paragraph text."],
        )
        backend = ScriptedBackend(["???"] * 4)
        pres = generate_presentation(doc, small_plan, backend, max_retries=2)
        assert len(pres.slides[0].title.split()) == 10

    def test_backend_failure_aborts_with_partial(self, small_doc, small_plan):
        backend = ScriptedBackend([VALID_OUTPUT, BackendError("503")])
        with pytest.raises(GenerationAbortedError) as info:
            generate_presentation(small_doc, small_plan, backend)
        partial = info.value.partial
        assert len(partial.slides) == 1
        assert partial.metadata["aborted_at_slide"] == 1
        assert partial.slides[0].title == "A Title"

    def test_plan_document_mismatch(self, small_doc):
        plan = SlidePlan("other", [[0]])
        with pytest.raises(ValueError, match="plan is for"):
            generate_presentation(small_doc, plan, MockLlmBackend())


class TestMockBackend:
    def test_slide_rule(self):
        prompt = render_slide_prompt(
            ["one two three four five six seven eight nine ten", "short text"],
            ["Earlier"],
        )
        title, bullets = parse_slide_output(MockLlmBackend().complete(prompt))
        assert title == "Slide 2: one two three four five six seven eight"
        assert bullets[0].startswith("one two three")
        assert len(bullets) == 2

    def test_score_rule(self):
        prompt = "On a scale of 0-10, rate this.\nPresentation:\nalpha\nbeta\ngamma"
        assert MockLlmBackend().complete(prompt) == "8"  # 5 + 3 % 4

    def test_deterministic(self):
        prompt = render_slide_prompt(["text"], [])
        assert MockLlmBackend().complete(prompt) == MockLlmBackend().complete(prompt)


class FakeSession:
    """Returns scripted (status_code, payload) responses and records calls."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        status, payload = item
        return types.SimpleNamespace(
            status_code=status,
            json=lambda: payload,
            text=str(payload),
        )


def _chat_payload(content):
    return {"choices": [{"message": {"content": content}}]}


class TestHttpChatBackend:
    def _backend(self, session, **kwargs):
        kwargs.setdefault("api_key", "k")
        kwargs.setdefault("backoff", 0.0)
        return HttpChatBackend(
            "https://api.example.com/v1", "test-model", session=session, **kwargs
        )

    def test_success_posts_chat_payload(self):
        session = FakeSession([(200, _chat_payload("hello"))])
        backend = self._backend(session)
        assert backend.complete("prompt text", temperature=0.3, top_p=0.9) == "hello"
        call = session.calls[0]
        assert call["url"] == "https://api.example.com/v1/chat/completions"
        assert call["headers"]["Authorization"] == "Bearer k"
        assert call["json"]["model"] == "test-model"
        assert call["json"]["messages"] == [{"role": "user", "content": "prompt text"}]
        assert call["json"]["temperature"] == 0.3
        assert call["json"]["top_p"] == 0.9
        assert backend.name == "http-chat:test-model"

    @pytest.mark.parametrize("status", [429, 500, 503])
    def test_transient_status_retried(self, status):
        session = FakeSession([(status, {}), (200, _chat_payload("ok"))])
        assert self._backend(session).complete("p") == "ok"
        assert len(session.calls) == 2

    def test_transport_error_retried(self):
        session = FakeSession([RuntimeError("boom"), (200, _chat_payload("ok"))])
        assert self._backend(session).complete("p") == "ok"

    def test_gives_up_after_max_retries(self):
        session = FakeSession([(500, {})] * 3)
        with pytest.raises(BackendError, match="after 3 attempts"):
            self._backend(session, max_retries=3).complete("p")
        assert len(session.calls) == 3

    def test_client_error_fails_immediately(self):
        session = FakeSession([(400, {"error": "bad request"})])
        with pytest.raises(BackendError, match="HTTP 400"):
            self._backend(session).complete("p")
        assert len(session.calls) == 1

    def test_unexpected_shape_rejected(self):
        session = FakeSession([(200, {"choices": []})])
        with pytest.raises(BackendError, match="response shape"):
            self._backend(session).complete("p")

    def test_missing_key_rejected(self, monkeypatch):
        monkeypatch.delenv(API_KEY_ENV_VAR, raising=False)
        session = FakeSession([(200, _chat_payload("x"))])
        backend = HttpChatBackend(
            "https://api.example.com/v1", "m", session=session, backoff=0.0
        )
        with pytest.raises(BackendError, match=API_KEY_ENV_VAR):
            backend.complete("p")
        assert session.calls == []

    def test_key_from_environment(self, monkeypatch):
        monkeypatch.setenv(API_KEY_ENV_VAR, "env-key")
        session = FakeSession([(200, _chat_payload("x"))])
        backend = HttpChatBackend(
            "https://api.example.com/v1", "m", session=session, backoff=0.0
        )
        backend.complete("p")
        assert session.calls[0]["headers"]["Authorization"] == "Bearer env-key"


class TestPresentationIo:
    def _pres(self):
        return GeneratedPresentation(
            doc_id="d",
            slides=[
                GeneratedSlide(0, "Café Title", ["first", "second"], [0, 2]),
                GeneratedSlide(1, "Other", ["third"], [3]),
            ],
            metadata={"backend": "mock", "backend_calls": 2},
        )

    def test_round_trip(self, tmp_path):
        path = tmp_path / "pres.json"
        original = self._pres()
        save_presentation(original, path)
        loaded = load_presentation(path)
        assert loaded.doc_id == "d"
        assert loaded.slides == original.slides
        assert loaded.metadata == original.metadata

    def test_byte_stable_and_readable(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_presentation(self._pres(), a)
        save_presentation(self._pres(), b)
        raw = a.read_bytes()
        assert raw == b.read_bytes()
        assert raw.endswith(b"\n")
        assert "Café".encode() in raw  # not ASCII-escaped
        assert json.loads(raw)["slides"][0]["attribution"] == [0, 2]

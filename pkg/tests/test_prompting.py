import pytest

from ocrforge.detect import TextBox
from ocrforge.pipeline import OcrDocument, OcrLine
from ocrforge.prompting import (
    DEFAULT_TEMPLATE,
    MissingOcrError,
    PromptSpec,
    PromptTemplate,
    build_prompt,
    render_messages,
    render_text,
)


def doc_with(texts, quads=None):
    quads = quads or [[[3, 7], [90, 7], [90, 20], [3, 20]]] * len(texts)
    lines = [
        OcrLine(text=t, box=TextBox(quad=q), confidence=0.9)
        for t, q in zip(texts, quads)
    ]
    return OcrDocument(image_id="img", lines=lines)


class TestBuildPrompt:
    def test_base_mode(self):
        spec = build_prompt("What is the sign?", "base")
        text = render_text(spec)
        assert text == "What is the sign?\n" + DEFAULT_TEMPLATE.answer_instruction
        assert spec.ocr_lines == ()

    def test_ocr_block_verbatim(self):
        spec = build_prompt("총액은?", "ocr", doc_with(["합계", "45,000원"]))
        text = render_text(spec)
        assert "합계\n45,000원" in text
        assert text.index("합계") < text.index("총액은?")

    def test_ocr_mode_requires_document(self):
        with pytest.raises(MissingOcrError):
            build_prompt("anything", "ocr")

    def test_empty_lines_skipped(self):
        spec = build_prompt("q", "ocr", doc_with(["a", "", "b"]))
        assert spec.ocr_lines == ("a", "b")

    def test_mode_case_insensitive(self):
        assert build_prompt("q", "Base").mode == "base"
        assert build_prompt("q", "OCR", doc_with(["x"])).mode == "ocr"

    def test_no_box_coordinates_leak_into_prompt(self):
        quads = [[[3, 7], [90, 7], [90, 20], [3, 20]], [[123, 456], [789, 456], [789, 500], [123, 500]]]
        spec = build_prompt("what is written?", "ocr", doc_with(["간판", "식당"], quads))
        text = render_text(spec)
        for coordinate in ("3", "7", "90", "20", "123", "456", "789", "500"):
            assert coordinate not in text

    def test_base_and_ocr_differ_only_by_block(self):
        base = render_text(build_prompt("q?", "base"))
        ocr = render_text(build_prompt("q?", "ocr", doc_with(["l1", "l2"])))
        assert ocr.endswith(base)
        block = ocr[: -len(base)]
        assert block == "Reference OCR tokens:\nl1\nl2\n\n"

    def test_each_line_appears_exactly_once(self):
        lines = ["sentinel-one", "sentinel-two", "sentinel-three"]
        text = render_text(build_prompt("unrelated?", "ocr", doc_with(lines)))
        for line in lines:
            assert text.count(line) == 1

    def test_custom_template(self):
        template = PromptTemplate(
            ocr_block_label="Detected text:",
            answer_instruction="Reply in one word.",
        )
        text = render_text(build_prompt("q", "ocr", doc_with(["x"]), template))
        assert text.startswith("Detected text:\nx")
        assert text.endswith("Reply in one word.")

    def test_base_mode_never_carries_lines(self):
        with pytest.raises(ValueError):
            PromptSpec(mode="base", question="q", ocr_lines=("x",))


class TestRenderMessages:
    def test_single_user_message_image_then_text(self):
        spec = build_prompt("q", "base")
        messages = render_messages(spec, {"png_base64": "AAAA"})
        assert len(messages) == 1
        msg = messages[0]
        assert msg["role"] == "user"
        assert msg["content"][0] == {"type": "image", "image": {"png_base64": "AAAA"}}
        assert msg["content"][1]["type"] == "text"

    def test_ocr_block_precedes_question(self):
        spec = build_prompt("질문?", "ocr", doc_with(["줄"]))
        text = render_messages(spec, "ref")[0]["content"][1]["text"]
        assert text.index("Reference OCR tokens:") < text.index("질문?")

    def test_rendering_is_deterministic(self):
        spec = build_prompt("q", "ocr", doc_with(["a", "b"]))
        one = render_messages(spec, {"png_base64": "Zm9v"})
        two = render_messages(spec, {"png_base64": "Zm9v"})
        assert one == two
        import json

        assert json.dumps(one, sort_keys=True) == json.dumps(two, sort_keys=True)

    def test_injective_on_mode_question_lines(self):
        rendered = set()
        cases = [
            ("base", "q1", []),
            ("base", "q2", []),
            ("ocr", "q1", ["a"]),
            ("ocr", "q1", ["a", "b"]),
            ("ocr", "q2", ["a"]),
        ]
        for mode, q, lines in cases:
            doc = doc_with(lines) if lines else None
            spec = build_prompt(q, mode, doc)
            rendered.add((spec.mode, render_text(spec)))
        assert len(rendered) == len(cases)

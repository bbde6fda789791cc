"""Prompt construction for the two evaluation modes.

base: the model sees only the image and the question.
ocr: the recognized line texts are prepended as additional context,
verbatim and in reading order. Box coordinates are never rendered into a
prompt; only the line texts travel.
"""

from __future__ import annotations

from dataclasses import dataclass

from .pipeline import OcrDocument

MODES = ("base", "ocr")


class MissingOcrError(ValueError):
    """OCR-mode prompt requested without a recognized document."""


@dataclass(frozen=True)
class PromptTemplate:
    ocr_block_label: str = "Reference OCR tokens:"
    answer_instruction: str = "Answer the question using a single word or phrase."
    line_separator: str = "\n"

    def to_dict(self) -> dict:
        return {
            "ocr_block_label": self.ocr_block_label,
            "answer_instruction": self.answer_instruction,
            "line_separator": self.line_separator,
        }


DEFAULT_TEMPLATE = PromptTemplate()


@dataclass(frozen=True)
class PromptSpec:
    mode: str
    question: str
    ocr_lines: tuple[str, ...] = ()
    answer_instruction: str = DEFAULT_TEMPLATE.answer_instruction
    ocr_block_label: str = DEFAULT_TEMPLATE.ocr_block_label
    line_separator: str = DEFAULT_TEMPLATE.line_separator

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "base" and self.ocr_lines:
            raise ValueError("base mode carries no OCR lines")


def build_prompt(
    question: str,
    mode: str,
    doc: OcrDocument | None = None,
    template: PromptTemplate = DEFAULT_TEMPLATE,
) -> PromptSpec:
    """Assemble the prompt spec for one sample. OCR mode takes the document's
    line texts verbatim, in order, skipping lines the recognizer left empty."""
    mode = mode.lower()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    lines: tuple[str, ...] = ()
    if mode == "ocr":
        if doc is None:
            raise MissingOcrError("ocr mode requires a recognized document")
        lines = tuple(t for t in doc.texts() if t)
    return PromptSpec(
        mode=mode,
        question=question,
        ocr_lines=lines,
        answer_instruction=template.answer_instruction,
        ocr_block_label=template.ocr_block_label,
        line_separator=template.line_separator,
    )


def render_text(spec: PromptSpec) -> str:
    """The full user-message text. Base and OCR prompts for the same
    question differ only by the leading OCR block."""
    tail = f"{spec.question}\n{spec.answer_instruction}"
    if spec.mode == "base" or not spec.ocr_lines:
        return tail
    block = spec.ocr_block_label + "\n" + spec.line_separator.join(spec.ocr_lines)
    return f"{block}\n\n{tail}"


def render_messages(spec: PromptSpec, image_ref) -> list[dict]:
    """One user message carrying the image attachment and the rendered text.

    image_ref is an opaque attachment handle (the toolkit uses
    {"png_base64": ...}); the VLM client adapts it to the wire format.
    Field order is fixed so renderings are byte-stable.
    """
    return [
        {
            "role": "user",
            "content": [
                {"type": "image", "image": image_ref},
                {"type": "text", "text": render_text(spec)},
            ],
        }
    ]

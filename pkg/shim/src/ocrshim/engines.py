"""Recognition engines behind the shim.

StubEngine needs nothing but numpy and exists so the protocol and the
clients of this shim can be exercised without model weights. TrocrEngine
hosts a pretrained vision-encoder / text-decoder checkpoint (TrOCR-style)
through transformers; torch is imported lazily so the test engine stays
lightweight."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image


class EngineStartupError(RuntimeError):
    """The configured model could not be loaded."""


@dataclass
class ShimConfig:
    model: str = "test"
    engine: str = "test"  # test | trocr
    device: str = "cpu"
    max_batch: int = 8
    max_new_tokens: int = 64
    name: str = "ocrshim"
    languages: tuple[str, ...] = ("ko", "en")

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.engine not in ("test", "trocr"):
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass
class Recognition:
    text: str
    confidence: float
    error: str | None = None


class StubEngine:
    """Deterministic stand-in: the text is derived from the crop pixels, so
    distinct crops give distinct texts and identical crops identical ones."""

    def __init__(self, config: ShimConfig):
        self.config = config

    def capability_extra(self) -> dict:
        return {"engine": "test"}

    def recognize_batch(self, crops: list[Image.Image]) -> list[Recognition]:
        out = []
        for crop in crops:
            arr = np.asarray(crop.convert("L"), dtype=np.float64)
            mean = int(round(float(arr.mean()))) if arr.size else 0
            out.append(Recognition(text=f"crop:{mean}", confidence=1.0))
        return out


class TrocrEngine:
    """Greedy decoding over a pretrained encoder-decoder checkpoint.

    Confidence is exp(mean generated-token log-probability), clamped to
    [0, 1]. Preprocessing follows the checkpoint's published processor and
    is reported in the capability descriptor."""

    def __init__(self, config: ShimConfig):
        self.config = config
        try:
            import torch
            from transformers import TrOCRProcessor, VisionEncoderDecoderModel
        except ImportError as e:
            raise EngineStartupError(f"trocr engine needs torch+transformers: {e}")
        try:
            self._processor = TrOCRProcessor.from_pretrained(config.model)
            self._model = VisionEncoderDecoderModel.from_pretrained(config.model)
        except Exception as e:
            raise EngineStartupError(f"cannot load checkpoint {config.model!r}: {e}")
        self._torch = torch
        self._model.to(config.device)
        self._model.eval()

    def capability_extra(self) -> dict:
        extra = {"engine": "trocr", "model": self.config.model}
        image_processor = getattr(self._processor, "image_processor", None)
        size = getattr(image_processor, "size", None)
        if size:
            extra["input_size"] = dict(size)
        return extra

    def recognize_batch(self, crops: list[Image.Image]) -> list[Recognition]:
        try:
            return self._decode([c.convert("RGB") for c in crops])
        except Exception:
            # isolate the failing item: decode one by one
            out = []
            for crop in crops:
                try:
                    out.extend(self._decode([crop.convert("RGB")]))
                except Exception as e:
                    out.append(Recognition(text="", confidence=0.0,
                                           error=f"decode failed: {e}"))
            return out

    def _decode(self, images) -> list[Recognition]:
        torch = self._torch
        inputs = self._processor(images=images, return_tensors="pt")
        pixel_values = inputs.pixel_values.to(self.config.device)
        with torch.no_grad():
            generated = self._model.generate(
                pixel_values,
                do_sample=False,
                num_beams=1,
                max_new_tokens=self.config.max_new_tokens,
                output_scores=True,
                return_dict_in_generate=True,
            )
        texts = self._processor.batch_decode(generated.sequences,
                                             skip_special_tokens=True)
        transition = self._model.compute_transition_scores(
            generated.sequences, generated.scores, normalize_logits=True
        )
        out = []
        for text, scores in zip(texts, transition):
            finite = scores[torch.isfinite(scores)]
            if len(finite):
                confidence = float(math.exp(float(finite.mean())))
            else:
                confidence = 0.0
            out.append(Recognition(text=text,
                                   confidence=min(max(confidence, 0.0), 1.0)))
        return out


def build_engine(config: ShimConfig):
    if config.engine == "test":
        return StubEngine(config)
    return TrocrEngine(config)

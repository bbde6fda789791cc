"""Crop detected regions, order them for reading, and run a recognizer
backend over the crops to assemble the OCR text for one image."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .detect import TextBox, signed_area


class DegenerateBoxError(ValueError):
    """Quad area below one square pixel; nothing sensible to crop."""


class BackendUnavailableError(RuntimeError):
    """Recognizer transport failed and retries were exhausted."""


class BackendProtocolError(RuntimeError):
    """Recognizer replied with something the wire contract forbids."""


@dataclass(frozen=True)
class BackendInfo:
    name: str
    languages: tuple[str, ...] = ("ko", "en")
    max_batch: int = 16


@dataclass(frozen=True)
class RecognizedText:
    text: str
    confidence: float


class RecognizerBackend(Protocol):
    """Crop-in, text-out contract. recognize() must return exactly one
    result per crop, in input order, deterministically for a fixed
    configuration."""

    def info(self) -> BackendInfo: ...

    def recognize(self, crops: Sequence[np.ndarray]) -> list[RecognizedText]: ...


@dataclass
class OcrLine:
    text: str
    box: TextBox
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class OcrDocument:
    """Recognized lines for one image, already in reading order. Only the
    line texts ever reach a prompt; boxes stay internal."""

    image_id: str
    lines: list[OcrLine] = field(default_factory=list)
    order_policy: str = "reading-order-v1"

    def texts(self) -> list[str]:
        return [line.text for line in self.lines]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "order_policy": self.order_policy,
            "lines": [
                {
                    "text": ln.text,
                    "confidence": ln.confidence,
                    "quad": ln.box.quad.tolist(),
                    "score": ln.box.score,
                }
                for ln in self.lines
            ],
        }


def _quad_area(quad: np.ndarray) -> float:
    return abs(signed_area(quad))


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map taking each src point to its dst point."""
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.asarray(rows, dtype=np.float64), np.asarray(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _bilinear(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample image at float pixel-center coordinates with bilinear
    interpolation; out-of-range coordinates replicate the border."""
    h, w = image.shape[:2]
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    wx = np.clip(xs - x0, 0.0, 1.0)
    wy = np.clip(ys - y0, 0.0, 1.0)
    if image.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def crop_region(image: np.ndarray, box: TextBox, mode: str = "rectify") -> np.ndarray:
    """Cut one text region out of an image.

    bbox: the axis-aligned bounding rectangle of the quad.
    rectify: warp the quad upright via the homography mapping its 4 corners
    to the output corners, bilinear sampling, output size = rounded quad
    side lengths (at least 1 px). For axis-aligned integer quads the two
    modes agree pixel for pixel.
    """
    quad = box.quad
    if _quad_area(quad) < 1.0:
        raise DegenerateBoxError(f"quad area {_quad_area(quad):.3g} px^2 is below 1")
    h, w = image.shape[:2]
    if mode == "bbox":
        x0 = int(np.clip(np.floor(quad[:, 0].min()), 0, w))
        x1 = int(np.clip(np.ceil(quad[:, 0].max()), x0 + 1, w))
        y0 = int(np.clip(np.floor(quad[:, 1].min()), 0, h))
        y1 = int(np.clip(np.ceil(quad[:, 1].max()), y0 + 1, h))
        return image[y0:y1, x0:x1].copy()
    if mode != "rectify":
        raise ValueError(f"unknown crop mode {mode!r}")

    top = np.linalg.norm(quad[1] - quad[0])
    bottom = np.linalg.norm(quad[2] - quad[3])
    left = np.linalg.norm(quad[3] - quad[0])
    right = np.linalg.norm(quad[2] - quad[1])
    out_w = max(1, int(round(max(top, bottom))))
    out_h = max(1, int(round(max(left, right))))

    dst = np.array([[0, 0], [out_w, 0], [out_w, out_h], [0, out_h]], dtype=np.float64)
    back = _homography(dst, quad)  # output grid coords -> source grid coords
    gx, gy = np.meshgrid(
        np.arange(out_w, dtype=np.float64) + 0.5,
        np.arange(out_h, dtype=np.float64) + 0.5,
    )
    ones = np.ones_like(gx)
    src = np.einsum("ij,jhw->ihw", back, np.stack([gx, gy, ones]))
    sx = src[0] / src[2] - 0.5  # grid -> pixel-center coordinates
    sy = src[1] / src[2] - 0.5
    out = _bilinear(image, sx, sy)
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(image.dtype)
    return out.astype(image.dtype)


def order_regions(boxes: Sequence[TextBox]) -> list[int]:
    """Reading order over boxes: group into lines (two boxes share a line
    when their vertical center distance is under half the pair's mean
    height), sort lines top to bottom, then left to right within a line.
    Returns a permutation of range(len(boxes))."""
    n = len(boxes)
    if n == 0:
        return []
    cy = np.array([b.quad[:, 1].mean() for b in boxes])
    heights = np.array([b.quad[:, 1].max() - b.quad[:, 1].min() for b in boxes])
    left = np.array([b.quad[:, 0].min() for b in boxes])

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(cy[i] - cy[j]) < 0.5 * (heights[i] + heights[j]) / 2.0:
                parent[find(i)] = find(j)

    lines: dict[int, list[int]] = {}
    for i in range(n):
        lines.setdefault(find(i), []).append(i)
    ordered_lines = sorted(
        lines.values(),
        key=lambda idx: (float(cy[idx].mean()), float(left[idx].min()), min(idx)),
    )
    order = []
    for idx in ordered_lines:
        order.extend(sorted(idx, key=lambda i: (left[i], cy[i], i)))
    return order


class StubRecognizer:
    """In-process backend for tests and dry runs: text comes from a
    caller-supplied function of the crop pixels, or from a fixed list
    consumed in crop order."""

    def __init__(self, fn: Callable[[np.ndarray], str] | None = None,
                 texts: Sequence[str] | None = None,
                 confidence: float = 1.0, max_batch: int = 16,
                 name: str = "stub"):
        if (fn is None) == (texts is None):
            raise ValueError("provide exactly one of fn or texts")
        self._fn = fn
        self._texts = list(texts) if texts is not None else None
        self._cursor = 0
        self._confidence = confidence
        self._info = BackendInfo(name=name, max_batch=max_batch)

    def reset(self):
        self._cursor = 0

    def info(self) -> BackendInfo:
        return self._info

    def recognize(self, crops: Sequence[np.ndarray]) -> list[RecognizedText]:
        out = []
        for crop in crops:
            if self._fn is not None:
                text = self._fn(crop)
            else:
                text = self._texts[self._cursor % len(self._texts)]
                self._cursor += 1
            out.append(RecognizedText(text=text, confidence=self._confidence))
        return out


def mean_pixel_stub(crop: np.ndarray) -> str:
    """Deterministic stub text derived from the crop pixels alone."""
    return f"crop:{int(round(float(np.asarray(crop, dtype=np.float64).mean())))}"


def run_ocr(
    image: np.ndarray,
    boxes: Sequence[TextBox],
    backend: RecognizerBackend,
    image_id: str = "",
    crop_mode: str = "rectify",
) -> OcrDocument:
    """Crop every box, recognize in reading order, and assemble the
    document. Batching up to the backend's max batch size is an internal
    optimization and never changes the result."""
    order = order_regions(boxes)
    crops = [crop_region(image, boxes[i], mode=crop_mode) for i in order]
    max_batch = max(1, backend.info().max_batch)

    results: list[RecognizedText] = []
    for start in range(0, len(crops), max_batch):
        chunk = crops[start : start + max_batch]
        replies = backend.recognize(chunk)
        if len(replies) != len(chunk):
            raise BackendProtocolError(
                f"backend returned {len(replies)} results for {len(chunk)} crops"
            )
        results.extend(replies)

    lines = [
        OcrLine(text=r.text, box=boxes[i], confidence=r.confidence)
        for i, r in zip(order, results)
    ]
    return OcrDocument(image_id=image_id, lines=lines)

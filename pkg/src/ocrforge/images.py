"""Raster image helpers shared by the pipeline, dataprep, and the wire
protocol. Images are numpy uint8 arrays, (H, W) grayscale or (H, W, 3) RGB."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class MissingImageError(FileNotFoundError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"image not found: {path}")


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im)
    except FileNotFoundError:
        raise MissingImageError(path) from None


def save_png(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def png_base64(image: np.ndarray) -> str:
    return base64.b64encode(png_bytes(image)).decode("ascii")


def decode_png_base64(data: str) -> np.ndarray:
    raw = base64.b64decode(data.encode("ascii"), validate=True)
    with Image.open(io.BytesIO(raw)) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im)


def file_png_base64(path) -> str:
    """Base64 of the PNG encoding of an image file (re-encoded so that the
    transport representation is format-independent)."""
    return png_base64(load_image(path))

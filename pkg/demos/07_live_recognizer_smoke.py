"""End-to-end metric computation against a live recognizer over the wire
protocol: crops in, text out, CER and word accuracy at the end.

By default this uses the bundled stub recognizer so it runs anywhere. To
smoke-test a real checkpoint (needs the ocrshim package with its [trocr]
extra and a local TrOCR-class checkpoint), set:

    OCRSHIM_CHECKPOINT=/path/to/checkpoint python demos/07_live_recognizer_smoke.py

Recognition quality depends entirely on the supplied checkpoint; this
script reports the numbers, it does not gate on them.
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ocrforge.detect import TextBox
from ocrforge.metrics import STR_BENCHMARK, corpus_cer, word_accuracy
from ocrforge.pipeline import run_ocr
from ocrforge.wire import WireBackend

checkpoint = os.environ.get("OCRSHIM_CHECKPOINT", "")
if checkpoint:
    cmd = [sys.executable, "-m", "ocrshim", "serve", "--engine", "trocr",
           "--model", checkpoint, "--transport", "stdio"]
    print(f"using ocrshim with checkpoint {checkpoint}")
else:
    cmd = [sys.executable, "-m", "ocrforge.wire", "--stub", "mean"]
    print("no OCRSHIM_CHECKPOINT set; using the bundled stub recognizer")

words = ["hello", "world", "receipt", "total"]
page = Image.new("L", (240, 40 * len(words) + 10), color=255)
draw = ImageDraw.Draw(page)
boxes = []
for i, word in enumerate(words):
    y = 5 + 40 * i
    draw.text((10, y + 8), word, fill=0)
    boxes.append(TextBox(quad=[[5, y], [235, y], [235, y + 36], [5, y + 36]]))
image = np.asarray(page.convert("RGB"))

with WireBackend(cmd=cmd) as backend:
    info = backend.info()
    print(f"connected to backend {info.name!r} (max batch {info.max_batch})")
    doc = run_ocr(image, boxes, backend, image_id="smoke-page")

pairs = list(zip(doc.texts(), words))
print("\nrecognized lines:")
for got, want in pairs:
    print(f"  {want!r:12} -> {got!r}")

print(f"\ncorpus CER      {corpus_cer(pairs, STR_BENCHMARK):.2%}")
print(f"word accuracy   {word_accuracy(pairs, STR_BENCHMARK):.2%}")
if not checkpoint:
    print("(the stub cannot read text; the point here is the wiring and the metrics)")

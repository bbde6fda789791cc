"""Base vs OCR prompts, and the replay store that makes runs offline and
bit-deterministic.

Run: python demos/04_prompting_and_replay.py
"""

import tempfile
from pathlib import Path

from ocrforge.detect import TextBox
from ocrforge.pipeline import OcrDocument, OcrLine
from ocrforge.prompting import build_prompt, render_messages, render_text
from ocrforge.vlm import (
    ModelEndpoint,
    RecordingTransport,
    ReplayTransport,
    VlmClient,
)

doc = OcrDocument(
    image_id="receipt-001",
    lines=[
        OcrLine("합계", TextBox(quad=[[10, 40], [60, 40], [60, 52], [10, 52]])),
        OcrLine("45,000원", TextBox(quad=[[70, 40], [140, 40], [140, 52], [70, 52]])),
    ],
)

print("== Base prompt ==")
print(render_text(build_prompt("총액은 얼마입니까?", "base")))
print()
print("== OCR prompt (line texts verbatim, no coordinates) ==")
print(render_text(build_prompt("총액은 얼마입니까?", "ocr", doc)))
print()

# A canned transport stands in for a live endpoint here; against a real
# server you would record once with HttpTransport and replay thereafter.
class CannedTransport:
    def send(self, payload, digest):
        return "45,000원", 42.0


endpoint = ModelEndpoint(base_url="http://localhost:8000/v1", model_id="demo-vlm")
messages = render_messages(build_prompt("총액은 얼마입니까?", "ocr", doc),
                           {"png_base64": "ZmFrZQ=="})

with tempfile.TemporaryDirectory() as tmp:
    store = Path(tmp) / "store.jsonl"
    recording = VlmClient(endpoint, transport=RecordingTransport(CannedTransport(), store))
    live = recording.complete(messages)
    print(f"recorded: {live.text!r} in {live.latency_ms:.0f} ms "
          f"(digest {live.request_digest[:12]}...)")

    replaying = VlmClient(endpoint, transport=ReplayTransport.from_path(store))
    replayed = replaying.complete(messages)
    print(f"replayed: {replayed.text!r}, same latency {replayed.latency_ms:.0f} ms,"
          f" attempts {replayed.attempts}")
    assert (replayed.text, replayed.latency_ms) == (live.text, live.latency_ms)
    print("replay is byte-identical; changing the question or the OCR block")
    print("changes the request digest and would be a ReplayMiss instead.")

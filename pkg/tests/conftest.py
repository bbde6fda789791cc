import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from ocrforge.images import save_png

TASK_CYCLE = ("recognition", "scene", "document", "kie")


def write_benchmark(root: Path, specs) -> Path:
    """Create tiny constant-value images plus a benchmark JSONL.

    specs: list of dicts with id, task, question, answers and an optional
    pixel value (the whole image is that gray level, which lets stub
    recognizers derive deterministic text from pixels alone)."""
    root.mkdir(parents=True, exist_ok=True)
    images = root / "images"
    images.mkdir(exist_ok=True)
    path = root / "benchmark.jsonl"
    with open(path, "w", encoding="utf-8") as f:
        for spec in specs:
            value = spec.get("value", 128)
            name = f"{spec['id']}.png"
            save_png(images / name, np.full((16, 24), value, dtype=np.uint8))
            f.write(
                json.dumps(
                    {
                        "id": spec["id"],
                        "image": f"images/{name}",
                        "task": spec["task"],
                        "question": spec["question"],
                        "answers": spec["answers"],
                        "lang": spec.get("lang", "ko"),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return path


def simple_specs(n=4):
    """One sample per task (cycling), pixel value 10*(i+1), with the gold
    answer derived from the pixel value the same way the mean-pixel stub
    recognizer derives its text."""
    specs = []
    for i in range(n):
        value = 10 * (i + 1)
        specs.append(
            {
                "id": f"s{i:03d}",
                "task": TASK_CYCLE[i % 4],
                "question": f"question {i}?",
                "answers": [f"crop:{value}"],
                "value": value,
            }
        )
    return specs


class PromptLookupTransport:
    """Answers with the configured string whenever its key appears in the
    prompt text; otherwise replies with the fallback."""

    def __init__(self, table: dict, fallback: str = "unknown"):
        self.table = table
        self.fallback = fallback

    def send(self, payload, digest):
        text = " ".join(
            part["text"]
            for msg in payload["messages"]
            for part in msg["content"]
            if part.get("type") == "text"
        )
        for key, answer in self.table.items():
            if key in text:
                return answer, 1.0
        return self.fallback, 1.0


class GoldFromPromptTransport:
    """Answers correctly iff a gold marker (crop:<n>) appears in the prompt
    text; models a VLM that can only read what the OCR context gives it."""

    def __init__(self, fallback: str = "cannot read it"):
        self.fallback = fallback

    def send(self, payload, digest):
        import re

        text = " ".join(
            part["text"]
            for msg in payload["messages"]
            for part in msg["content"]
            if part.get("type") == "text"
        )
        match = re.search(r"crop:\d+", text)
        if match:
            return match.group(0), 1.0
        return self.fallback, 1.0


@pytest.fixture
def bench_root(tmp_path):
    return tmp_path / "bench"

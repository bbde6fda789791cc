"""A complete offline benchmark run: synthesize a tiny dataset, record a
fake endpoint into a replay store, then drive `ocrforge eval-vqa` twice and
show the run directory is reproduced byte for byte.

Run: python demos/05_benchmark_replay_run.py
"""

import json
import re
import tempfile
from pathlib import Path

import numpy as np

from ocrforge.benchmark import load_benchmark, run_benchmark
from ocrforge.cli import dispatch
from ocrforge.images import save_png
from ocrforge.vlm import ModelEndpoint, RecordingTransport, VlmClient

TASKS = ("recognition", "scene", "document", "kie")


class GoldIfVisibleTransport:
    """Answers correctly only when the gold marker is inside the prompt."""

    def send(self, payload, digest):
        text = " ".join(p["text"] for m in payload["messages"]
                        for p in m["content"] if p.get("type") == "text")
        match = re.search(r"ans\d+", text)
        return (match.group(0) if match else "모르겠습니다"), 5.0


with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    images = root / "images"
    images.mkdir()

    # 8 samples, 2 per task; gold markers baked into the questions so the
    # fake endpoint can "see" them even in base mode for half the samples.
    bench_path = root / "benchmark.jsonl"
    with open(bench_path, "w", encoding="utf-8") as f:
        for i in range(8):
            save_png(images / f"s{i}.png", np.full((12, 18), 30 * i, dtype=np.uint8))
            visible = i % 2 == 0  # half the questions leak the answer
            question = f"say ans{i}?" if visible else f"what is written #{i}?"
            f.write(json.dumps({
                "id": f"s{i}", "image": f"images/s{i}.png",
                "task": TASKS[i % 4], "question": question,
                "answers": [f"ans{i}"], "lang": "mixed",
            }, ensure_ascii=False) + "\n")

    endpoint = ModelEndpoint(base_url="http://demo.invalid/v1", model_id="demo-vlm",
                             max_retries=0)
    store = root / "store.jsonl"
    client = VlmClient(endpoint, transport=RecordingTransport(GoldIfVisibleTransport(), store))
    run_benchmark(load_benchmark(bench_path), mode="base", client=client, workers=1)
    print(f"recorded {len(store.read_text().splitlines())} responses into the replay store")

    run_dir = root / "run"
    (root / "run.toml").write_text("\n".join([
        f'benchmark = "{bench_path}"',
        f'replay = "{store}"',
        f'run_dir = "{run_dir}"',
        'base_url = "http://demo.invalid/v1"',
        'model_id = "demo-vlm"',
        "max_retries = 0",
    ]) + "\n", encoding="utf-8")

    print("\n== first eval-vqa run ==")
    dispatch(["eval-vqa", "--config", str(root / "run.toml"), "--mode", "base"])
    snapshot = {p.name: p.read_bytes() for p in run_dir.iterdir() if p.is_file()}

    print("\n== second eval-vqa run (same config, same store) ==")
    dispatch(["eval-vqa", "--config", str(root / "run.toml"), "--mode", "base"])
    again = {p.name: p.read_bytes() for p in run_dir.iterdir() if p.is_file()}

    assert snapshot == again
    print(f"\nrun directory files {sorted(snapshot)} are byte-identical across runs")

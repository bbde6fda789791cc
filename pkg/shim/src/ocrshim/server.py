"""The protocol loop: read request lines, answer reply lines, never drop a
request. Per-item failures become error results; unparseable lines get an
error notice and the loop keeps serving."""

from __future__ import annotations

import base64
import io
import json
import socket
import sys

from PIL import Image

from .engines import Recognition, ShimConfig


def capability_line(config: ShimConfig, engine) -> str:
    cap = {
        "name": config.name,
        "languages": list(config.languages),
        "max_batch": config.max_batch,
    }
    cap.update(engine.capability_extra())
    return json.dumps({"capability": cap}, ensure_ascii=False)


def _decode_crop(item) -> Image.Image:
    raw = base64.b64decode(item["png_base64"].encode("ascii"), validate=True)
    img = Image.open(io.BytesIO(raw))
    img.load()
    return img


def handle_line(line: str, engine, config: ShimConfig) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return {"error": "malformed request line (not JSON)"}
    if not isinstance(obj, dict):
        return {"error": "request must be a JSON object"}
    rid = obj.get("id")
    crops_field = obj.get("crops")
    if not isinstance(rid, str):
        return {"error": "request must carry a string id"}
    if not isinstance(crops_field, list):
        return {"id": rid, "error": "request must carry a crops list"}

    decoded: list[Image.Image | None] = []
    notes: dict[int, str] = {}
    for i, item in enumerate(crops_field):
        try:
            decoded.append(_decode_crop(item))
        except Exception as e:
            decoded.append(None)
            notes[i] = f"crop decode failed: {e}"

    recognized: dict[int, Recognition] = {}
    valid = [(i, img) for i, img in enumerate(decoded) if img is not None]
    for start in range(0, len(valid), config.max_batch):
        chunk = valid[start : start + config.max_batch]
        results = engine.recognize_batch([img for _, img in chunk])
        for (i, _), rec in zip(chunk, results):
            recognized[i] = rec

    results = []
    for i in range(len(crops_field)):
        rec = recognized.get(i)
        if rec is None:
            results.append({"text": "", "confidence": 0.0,
                            "error": notes.get(i, "failed")})
        elif rec.error:
            results.append({"text": rec.text, "confidence": rec.confidence,
                            "error": rec.error})
        else:
            results.append({"text": rec.text, "confidence": rec.confidence})
    return {"id": rid, "results": results}


def serve_stdio(engine, config: ShimConfig) -> None:
    out = sys.stdout
    out.write(capability_line(config, engine) + "\n")
    out.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        out.write(json.dumps(handle_line(line, engine, config), ensure_ascii=False) + "\n")
        out.flush()


def serve_socket(engine, config: ShimConfig, port: int, host: str = "127.0.0.1",
                 max_connections: int | None = None) -> None:
    cap = capability_line(config, engine) + "\n"
    with socket.create_server((host, port)) as srv:
        print(json.dumps({"listening": {"host": host, "port": srv.getsockname()[1]}}),
              file=sys.stderr, flush=True)
        served = 0
        while max_connections is None or served < max_connections:
            conn, _ = srv.accept()
            served += 1
            with conn, conn.makefile("rw", encoding="utf-8") as stream:
                stream.write(cap)
                stream.flush()
                for line in stream:
                    line = line.strip()
                    if not line:
                        continue
                    reply = handle_line(line, engine, config)
                    stream.write(json.dumps(reply, ensure_ascii=False) + "\n")
                    stream.flush()

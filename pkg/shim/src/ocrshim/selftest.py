"""Canned wire-protocol transcripts, run against a freshly spawned copy of
this shim over stdio. The checks exercise contract shape, ordering, and
recovery from malformed input; they never assume a particular engine."""

from __future__ import annotations

import base64
import io
import json
import os
import select
import subprocess
import sys
from dataclasses import dataclass

import numpy as np
from PIL import Image

TIMEOUT = 15.0


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


class ShimProcess:
    def __init__(self, argv):
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self._buf = bytearray()

    def send_line(self, line: str) -> None:
        self.proc.stdin.write(line.encode("utf-8") + b"\n")
        self.proc.stdin.flush()

    def recv_line(self, timeout: float = TIMEOUT) -> str:
        fd = self.proc.stdout.fileno()
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode("utf-8")
                del self._buf[: nl + 1]
                return line
            ready, _, _ = select.select([fd], [], [], timeout)
            if not ready:
                raise TimeoutError("no reply from shim")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise EOFError("shim closed its stdout")
            self._buf.extend(chunk)

    def close(self) -> None:
        self.proc.stdin.close()
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


def _png_b64(value: int) -> str:
    img = Image.fromarray(np.full((8, 12), value, dtype=np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _request(rid: str, crops) -> str:
    return json.dumps({"id": rid, "crops": [{"png_base64": c} for c in crops]})


def _roundtrip(shim: ShimProcess, line: str, rid=None) -> dict:
    shim.send_line(line)
    while True:
        obj = json.loads(shim.recv_line())
        if rid is None or obj.get("id") == rid or "error" in obj:
            return obj


def run_selftest(serve_argv=None) -> list[CheckResult]:
    argv = serve_argv or [sys.executable, "-m", "ocrshim", "serve",
                          "--engine", "test", "--transport", "stdio"]
    results: list[CheckResult] = []
    shim = ShimProcess(argv)
    try:
        first = json.loads(shim.recv_line())
        cap = first.get("capability")
        cap_ok = isinstance(cap, dict) and "name" in cap and "max_batch" in cap
        results.append(CheckResult("capability-announce", cap_ok,
                                   "" if cap_ok else f"got {first}"))

        reply = _roundtrip(shim, _request("t-empty", []), "t-empty")
        ok = reply.get("id") == "t-empty" and reply.get("results") == []
        results.append(CheckResult("empty-batch", ok, "" if ok else f"got {reply}"))

        crops = [_png_b64(v) for v in (10, 100, 200)]
        batch = _roundtrip(shim, _request("t-batch", crops), "t-batch")
        shape_ok = (
            isinstance(batch.get("results"), list)
            and len(batch["results"]) == 3
            and all(isinstance(r.get("text"), str)
                    and 0.0 <= float(r.get("confidence", -1)) <= 1.0
                    for r in batch["results"])
        )
        results.append(CheckResult("ordered-batch-shape", shape_ok,
                                   "" if shape_ok else f"got {batch}"))
        if shape_ok:
            again = _roundtrip(shim, _request("t-again", crops), "t-again")
            det_ok = again.get("results") == batch["results"]
            results.append(CheckResult("ordered-batch-determinism", det_ok))
            rev = _roundtrip(shim, _request("t-rev", list(reversed(crops))), "t-rev")
            rev_ok = rev.get("results") == list(reversed(batch["results"]))
            results.append(CheckResult("ordered-batch-order", rev_ok,
                                       "" if rev_ok else "reversal not mirrored"))

        notice = _roundtrip(shim, "definitely not json {{{")
        notice_ok = "error" in notice
        results.append(CheckResult("malformed-line-notice", notice_ok,
                                   "" if notice_ok else f"got {notice}"))
        after = _roundtrip(shim, _request("t-after", []), "t-after")
        alive_ok = after.get("id") == "t-after" and after.get("results") == []
        results.append(CheckResult("alive-after-malformed", alive_ok,
                                   "" if alive_ok else f"got {after}"))
    except (TimeoutError, EOFError, json.JSONDecodeError) as e:
        results.append(CheckResult("transport", False, str(e)))
    finally:
        shim.close()
    return results

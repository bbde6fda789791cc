"""Recognizer backend wire protocol: newline-delimited JSON over the stdio
of a child process or a local TCP socket.

Server -> client on startup:
    {"capability": {"name": str, "languages": [str], "max_batch": int}}
Client -> server, one request per line:
    {"id": str, "crops": [{"png_base64": str}, ...]}
Server -> client, one reply per request (possibly out of order):
    {"id": str, "results": [{"text": str, "confidence": num, "error"?: str}]}
A line the server cannot parse yields {"error": str} (plus "id" when it
could be salvaged); the server must keep serving afterwards.

Crops travel as PNG (lossless). Correlation is by id only, never by
arrival order.
"""

from __future__ import annotations

import itertools
import json
import os
import select
import socket
import subprocess
import sys
import threading
import uuid
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .images import decode_png_base64, png_base64
from .pipeline import (
    BackendInfo,
    BackendProtocolError,
    BackendUnavailableError,
    RecognizedText,
    RecognizerBackend,
    StubRecognizer,
    mean_pixel_stub,
)

CONNECT_TIMEOUT = 10.0
REPLY_TIMEOUT = 120.0


class _TransportFailure(Exception):
    pass


class _LineChannel:
    """Buffered newline-delimited reads with a timeout, over a raw fd."""

    def __init__(self):
        self._buf = bytearray()

    def _fileno(self) -> int:
        raise NotImplementedError

    def _read_chunk(self) -> bytes:
        raise NotImplementedError

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> str:
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode("utf-8")
                del self._buf[: nl + 1]
                return line
            ready, _, _ = select.select([self._fileno()], [], [], timeout)
            if not ready:
                raise _TransportFailure("timed out waiting for backend reply")
            chunk = self._read_chunk()
            if not chunk:
                raise _TransportFailure("backend closed the connection")
            self._buf.extend(chunk)


class _ProcessChannel(_LineChannel):
    def __init__(self, cmd: Sequence[str]):
        super().__init__()
        try:
            self._proc = subprocess.Popen(
                list(cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as e:
            raise _TransportFailure(f"cannot start backend process: {e}") from None

    def _fileno(self) -> int:
        return self._proc.stdout.fileno()

    def _read_chunk(self) -> bytes:
        return os.read(self._proc.stdout.fileno(), 65536)

    def send_line(self, line: str) -> None:
        try:
            self._proc.stdin.write(line.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as e:
            raise _TransportFailure(f"backend process pipe broken: {e}") from None

    def close(self) -> None:
        for stream in (self._proc.stdin, self._proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


class _SocketChannel(_LineChannel):
    def __init__(self, host: str, port: int):
        super().__init__()
        try:
            self._sock = socket.create_connection((host, port), timeout=CONNECT_TIMEOUT)
            self._sock.settimeout(None)
        except OSError as e:
            raise _TransportFailure(f"cannot connect to backend: {e}") from None

    def _fileno(self) -> int:
        return self._sock.fileno()

    def _read_chunk(self) -> bytes:
        return self._sock.recv(65536)

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as e:
            raise _TransportFailure(f"backend socket broken: {e}") from None

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class WireBackend:
    """RecognizerBackend speaking the wire protocol to an external process.

    One connection may be shared across threads; requests are serialized on
    it and replies are matched by id, so a server that answers out of order
    is still handled correctly. A transport failure triggers a reconnect
    and one resend per remaining retry.
    """

    def __init__(self, *, cmd: Sequence[str] | None = None,
                 host: str | None = None, port: int | None = None,
                 retries: int = 2, reply_timeout: float = REPLY_TIMEOUT):
        if (cmd is None) == (host is None):
            raise ValueError("provide exactly one of cmd or host/port")
        self._cmd = list(cmd) if cmd else None
        self._addr = (host, port) if host else None
        self._retries = retries
        self._reply_timeout = reply_timeout
        self._lock = threading.Lock()
        self._chan: _LineChannel | None = None
        self._info: BackendInfo | None = None
        self._pending: dict[str, dict] = {}
        self._ids = itertools.count(1)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _connect(self) -> None:
        if self._cmd is not None:
            self._chan = _ProcessChannel(self._cmd)
        else:
            self._chan = _SocketChannel(*self._addr)
        first = json.loads(self._chan.recv_line(CONNECT_TIMEOUT))
        cap = first.get("capability")
        if not isinstance(cap, dict) or "name" not in cap:
            raise BackendProtocolError(f"expected capability announcement, got {first}")
        self._info = BackendInfo(
            name=str(cap["name"]),
            languages=tuple(cap.get("languages", ())),
            max_batch=int(cap.get("max_batch", 1)),
        )

    def _ensure_connected(self) -> None:
        if self._chan is None:
            self._connect()

    def close(self) -> None:
        if self._chan is not None:
            self._chan.close()
            self._chan = None

    def info(self) -> BackendInfo:
        with self._lock:
            if self._info is None:
                try:
                    self._ensure_connected()
                except _TransportFailure as e:
                    raise BackendUnavailableError(str(e)) from None
            return self._info

    def recognize(self, crops: Sequence[np.ndarray]) -> list[RecognizedText]:
        payload = {
            "id": f"q{next(self._ids)}-{uuid.uuid4().hex[:8]}",
            "crops": [{"png_base64": png_base64(c)} for c in crops],
        }
        line = json.dumps(payload, ensure_ascii=False)
        with self._lock:
            last_failure = None
            for _ in range(self._retries + 1):
                try:
                    self._ensure_connected()
                    self._chan.send_line(line)
                    reply = self._await_reply(payload["id"])
                    return _parse_results(reply, expected=len(crops))
                except _TransportFailure as e:
                    last_failure = e
                    self.close()
            raise BackendUnavailableError(str(last_failure))

    def _await_reply(self, rid: str) -> dict:
        if rid in self._pending:
            return self._pending.pop(rid)
        while True:
            raw = self._chan.recv_line(self._reply_timeout)
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError:
                raise BackendProtocolError(f"backend sent non-JSON line: {raw[:200]!r}")
            if not isinstance(obj, dict):
                raise BackendProtocolError(f"backend sent non-object line: {raw[:200]!r}")
            if obj.get("id") == rid:
                if "error" in obj and "results" not in obj:
                    raise BackendProtocolError(f"backend rejected request: {obj['error']}")
                return obj
            if "id" in obj:
                self._pending[obj["id"]] = obj
            elif "capability" in obj:
                continue
            elif "error" in obj:
                raise BackendProtocolError(f"backend protocol notice: {obj['error']}")


def _parse_results(reply: dict, expected: int) -> list[RecognizedText]:
    results = reply.get("results")
    if not isinstance(results, list):
        raise BackendProtocolError("reply carries no results list")
    if len(results) != expected:
        raise BackendProtocolError(
            f"reply carries {len(results)} results for {expected} crops"
        )
    out = []
    for item in results:
        try:
            text = item["text"]
            conf = float(item["confidence"])
        except (TypeError, KeyError, ValueError):
            raise BackendProtocolError(f"malformed result item: {item!r}") from None
        if not isinstance(text, str) or not 0.0 <= conf <= 1.0:
            raise BackendProtocolError(f"malformed result item: {item!r}")
        out.append(RecognizedText(text=text, confidence=conf))
    return out


# ---------------------------------------------------------------------------
# Server side (used by the bundled stub; external recognizers implement the
# same contract in their own processes).


def handle_request_line(line: str, backend: RecognizerBackend) -> dict:
    """Turn one raw request line into one reply object. Never raises: every
    failure becomes an error reply or a per-item error result."""
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

    decoded: list[np.ndarray | None] = []
    notes: dict[int, str] = {}
    for i, item in enumerate(crops_field):
        try:
            decoded.append(decode_png_base64(item["png_base64"]))
        except Exception as e:
            decoded.append(None)
            notes[i] = f"crop decode failed: {e}"

    valid = [(i, c) for i, c in enumerate(decoded) if c is not None]
    recognized: dict[int, RecognizedText] = {}
    max_batch = max(1, backend.info().max_batch)
    for start in range(0, len(valid), max_batch):
        chunk = valid[start : start + max_batch]
        try:
            replies = backend.recognize([c for _, c in chunk])
            for (i, _), r in zip(chunk, replies):
                recognized[i] = r
        except Exception as e:
            for i, _ in chunk:
                notes[i] = f"recognition failed: {e}"

    results = []
    for i in range(len(crops_field)):
        if i in recognized:
            r = recognized[i]
            results.append({"text": r.text, "confidence": r.confidence})
        else:
            results.append({"text": "", "confidence": 0.0, "error": notes.get(i, "failed")})
    return {"id": rid, "results": results}


def serve_stdio(backend: RecognizerBackend) -> None:
    """Serve the protocol over this process's stdin/stdout until EOF."""
    out = sys.stdout
    info = backend.info()
    out.write(json.dumps({"capability": {
        "name": info.name,
        "languages": list(info.languages),
        "max_batch": info.max_batch,
    }}) + "\n")
    out.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        out.write(json.dumps(handle_request_line(line, backend), ensure_ascii=False) + "\n")
        out.flush()


def serve_socket(backend: RecognizerBackend, port: int, host: str = "127.0.0.1",
                 ready_event: threading.Event | None = None,
                 max_connections: int | None = None) -> None:
    """Serve the protocol on a local TCP port, one connection at a time."""
    info = backend.info()
    cap_line = json.dumps({"capability": {
        "name": info.name,
        "languages": list(info.languages),
        "max_batch": info.max_batch,
    }}) + "\n"
    with socket.create_server((host, port)) as srv:
        print(json.dumps({"listening": {"host": host, "port": srv.getsockname()[1]}}),
              file=sys.stderr, flush=True)
        if ready_event is not None:
            ready_event.set()
        served = 0
        while max_connections is None or served < max_connections:
            conn, _ = srv.accept()
            served += 1
            with conn, conn.makefile("rw", encoding="utf-8") as stream:
                stream.write(cap_line)
                stream.flush()
                for line in stream:
                    line = line.strip()
                    if not line:
                        continue
                    reply = handle_request_line(line, backend)
                    stream.write(json.dumps(reply, ensure_ascii=False) + "\n")
                    stream.flush()


# ---------------------------------------------------------------------------
# Protocol conformance transcripts. Any process claiming to implement the
# backend contract must pass these against its live connection.


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _fixture_crops() -> list[str]:
    crops = []
    for value in (10, 100, 200):
        img = np.full((8, 12), value, dtype=np.uint8)
        crops.append(png_base64(img))
    return crops


def run_protocol_checks(channel_factory) -> list[CheckResult]:
    """Run the canned transcripts against a fresh connection.

    channel_factory must return an object with send_line / recv_line /
    close (a _LineChannel works). The checks only rely on contract shape
    and determinism, never on what text a particular engine produces.
    """
    results: list[CheckResult] = []
    chan = channel_factory()
    try:
        results.append(_check_capability(chan))
        results.append(_check_empty_batch(chan))
        results.extend(_check_ordered_batch(chan))
        results.extend(_check_malformed_line(chan))
    except _TransportFailure as e:
        results.append(CheckResult("transport", False, str(e)))
    finally:
        chan.close()
    return results


def _roundtrip(chan, payload: dict) -> dict:
    chan.send_line(json.dumps(payload))
    rid = payload.get("id")
    while True:
        obj = json.loads(chan.recv_line(CONNECT_TIMEOUT))
        if obj.get("id") == rid or "error" in obj:
            return obj


def _check_capability(chan) -> CheckResult:
    try:
        first = json.loads(chan.recv_line(CONNECT_TIMEOUT))
    except (json.JSONDecodeError, _TransportFailure) as e:
        return CheckResult("capability-announce", False, f"no capability line: {e}")
    cap = first.get("capability")
    if not isinstance(cap, dict) or "name" not in cap or "max_batch" not in cap:
        return CheckResult("capability-announce", False, f"bad capability: {first}")
    return CheckResult("capability-announce", True)


def _check_empty_batch(chan) -> CheckResult:
    reply = _roundtrip(chan, {"id": "chk-empty", "crops": []})
    ok = reply.get("id") == "chk-empty" and reply.get("results") == []
    return CheckResult("empty-batch", ok, "" if ok else f"reply: {reply}")


def _check_ordered_batch(chan) -> list[CheckResult]:
    crops = _fixture_crops()
    req = lambda rid, items: {"id": rid, "crops": [{"png_base64": c} for c in items]}

    first = _roundtrip(chan, req("chk-batch-1", crops))
    shape_ok = (
        first.get("id") == "chk-batch-1"
        and isinstance(first.get("results"), list)
        and len(first["results"]) == len(crops)
        and all(
            isinstance(r.get("text"), str) and 0.0 <= float(r.get("confidence", -1)) <= 1.0
            for r in first["results"]
        )
    )
    out = [CheckResult("ordered-batch-shape", shape_ok, "" if shape_ok else f"reply: {first}")]
    if not shape_ok:
        return out

    again = _roundtrip(chan, req("chk-batch-2", crops))
    det_ok = again.get("results") == first["results"]
    out.append(CheckResult("ordered-batch-determinism", det_ok,
                           "" if det_ok else "same crops gave different results"))

    rev = _roundtrip(chan, req("chk-batch-3", list(reversed(crops))))
    rev_ok = rev.get("results") == list(reversed(first["results"]))
    out.append(CheckResult("ordered-batch-order", rev_ok,
                           "" if rev_ok else "reversed crops did not reverse results"))
    return out


def _check_malformed_line(chan) -> list[CheckResult]:
    chan.send_line("this is not json {")
    notice = json.loads(chan.recv_line(CONNECT_TIMEOUT))
    notice_ok = isinstance(notice, dict) and "error" in notice
    out = [CheckResult("malformed-line-notice", notice_ok,
                       "" if notice_ok else f"reply: {notice}")]
    follow = _roundtrip(chan, {"id": "chk-after-garbage", "crops": []})
    alive_ok = follow.get("id") == "chk-after-garbage" and follow.get("results") == []
    out.append(CheckResult("alive-after-malformed", alive_ok,
                           "" if alive_ok else f"reply: {follow}"))
    return out


def process_channel(cmd: Sequence[str]):
    return _ProcessChannel(cmd)


def socket_channel(host: str, port: int):
    return _SocketChannel(host, port)


def _main(argv=None) -> int:
    # Stub recognizer served over the wire, mostly for tests and demos:
    #   python -m ocrforge.wire --stub mean
    import argparse

    ap = argparse.ArgumentParser(description="Serve the stub recognizer over the backend wire protocol")
    ap.add_argument("--stub", choices=["mean"], default="mean")
    ap.add_argument("--max-batch", type=int, default=16)
    ap.add_argument("--name", default="ocrforge-stub")
    ap.add_argument("--transport", choices=["stdio", "socket"], default="stdio")
    ap.add_argument("--port", type=int, default=0)
    args = ap.parse_args(argv)

    backend = StubRecognizer(fn=mean_pixel_stub, max_batch=args.max_batch, name=args.name)
    if args.transport == "stdio":
        serve_stdio(backend)
    else:
        serve_socket(backend, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(_main())

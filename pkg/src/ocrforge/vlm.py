"""Client for a hosted vision-language model endpoint.

Speaks the de-facto chat-completions JSON shape with base64 image
attachments. Transient transport failures are retried with exponential
backoff; credential rejections and explicit refusals are surfaced
immediately (a refusal is a model behavior to measure, not a fault to
retry). A replay store makes entire benchmark runs bit-deterministic and
offline."""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass

import requests

DEFAULT_API_KEY_ENV = "OCRFORGE_API_KEY"
BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER_SECONDS = 0.25


class ExhaustedError(RuntimeError):
    """Every attempt (1 + max_retries) failed on a transient fault."""


class AuthFailureError(RuntimeError):
    """Endpoint rejected the credentials; retrying cannot help."""


class ContentRefusedError(RuntimeError):
    """Endpoint returned an explicit refusal status for this request."""

    def __init__(self, message: str, text: str = ""):
        super().__init__(message)
        self.text = text


class ReplayMissError(KeyError):
    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"request digest {digest} not in replay store")


class TransientTransportError(RuntimeError):
    """Retryable transport-level failure (timeouts, 5xx, rate limits)."""


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_id: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 2
    thinking: str = "off"
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.thinking not in ("off", "on"):
            raise ValueError("thinking must be 'off' or 'on'")

    def to_manifest(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_id": self.model_id,
            "api_key_env": self.api_key_env,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "thinking": self.thinking,
            "temperature": self.temperature,
        }


@dataclass(frozen=True)
class CompletionRecord:
    request_digest: str
    text: str
    latency_ms: float
    attempts: int


def request_digest(model_id: str, messages: list[dict], thinking: str) -> str:
    """Stable content address of one request. Any change to the model, the
    rendered messages (including attached image bytes), or the thinking
    flag changes the digest."""
    canonical = json.dumps(
        {"model": model_id, "messages": messages, "thinking": thinking},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _to_wire_messages(messages: list[dict]) -> list[dict]:
    """Adapt the toolkit's message shape to the chat-completions wire form."""
    wire = []
    for msg in messages:
        parts = []
        for part in msg["content"]:
            if part["type"] == "text":
                parts.append({"type": "text", "text": part["text"]})
            elif part["type"] == "image":
                ref = part["image"]
                b64 = ref["png_base64"] if isinstance(ref, dict) else str(ref)
                parts.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{b64}"},
                    }
                )
            else:
                raise ValueError(f"unknown content part type {part['type']!r}")
        wire.append({"role": msg["role"], "content": parts})
    return wire


class HttpTransport:
    """POSTs chat-completions requests to the configured endpoint."""

    def __init__(self, endpoint: ModelEndpoint):
        self.endpoint = endpoint

    def send(self, payload: dict, digest: str) -> tuple[str, float]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.endpoint.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        start = time.monotonic()
        try:
            resp = requests.post(
                url, json=payload, headers=headers, timeout=self.endpoint.timeout
            )
        except (requests.ConnectionError, requests.Timeout) as e:
            raise TransientTransportError(str(e)) from None
        latency_ms = (time.monotonic() - start) * 1000.0
        if resp.status_code in (401, 403):
            raise AuthFailureError(f"endpoint rejected credentials ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientTransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise TransientTransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = _choice_text(choice)
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransientTransportError(f"malformed completion body: {e}") from None
        if choice.get("finish_reason") == "content_filter":
            raise ContentRefusedError("endpoint refused the request", text=text)
        return text, latency_ms


def _choice_text(choice: dict) -> str:
    content = choice["message"]["content"]
    if isinstance(content, str):
        return content
    return "".join(p.get("text", "") for p in content if isinstance(p, dict))


class ReplayStore:
    """JSONL map from request digest to recorded response and latency."""

    def __init__(self, entries: dict[str, tuple[str, float]] | None = None):
        self.entries = dict(entries or {})

    @classmethod
    def load(cls, path) -> "ReplayStore":
        entries: dict[str, tuple[str, float]] = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                entries[rec["digest"]] = (rec["response"], float(rec["latency_ms"]))
        return cls(entries)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for digest in sorted(self.entries):
                response, latency_ms = self.entries[digest]
                f.write(
                    json.dumps(
                        {"digest": digest, "response": response, "latency_ms": latency_ms},
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    def lookup(self, digest: str) -> tuple[str, float]:
        try:
            return self.entries[digest]
        except KeyError:
            raise ReplayMissError(digest) from None


class ReplayTransport:
    """Serves responses from a replay store; unknown digests are an error."""

    def __init__(self, store: ReplayStore):
        self.store = store

    @classmethod
    def from_path(cls, path) -> "ReplayTransport":
        return cls(ReplayStore.load(path))

    def send(self, payload: dict, digest: str) -> tuple[str, float]:
        return self.store.lookup(digest)


class RecordingTransport:
    """Wraps a live transport and persists every exchange for later replay."""

    def __init__(self, inner, path):
        self.inner = inner
        self.path = path
        self._lock = threading.Lock()
        open(path, "w", encoding="utf-8").close()

    def send(self, payload: dict, digest: str) -> tuple[str, float]:
        text, latency_ms = self.inner.send(payload, digest)
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(
                json.dumps(
                    {"digest": digest, "response": text, "latency_ms": latency_ms},
                    ensure_ascii=False,
                )
                + "\n"
            )
        return text, latency_ms


class VlmClient:
    """Retry-aware completion client over any transport.

    Shareable across workers; callers cap their own in-flight request
    count (the benchmark runner defaults to 4)."""

    def __init__(self, endpoint: ModelEndpoint, transport=None,
                 sleep=time.sleep, rng: random.Random | None = None):
        self.endpoint = endpoint
        self.transport = transport if transport is not None else HttpTransport(endpoint)
        self._sleep = sleep
        self._rng = rng or random.Random()

    def complete(self, messages: list[dict]) -> CompletionRecord:
        digest = request_digest(self.endpoint.model_id, messages, self.endpoint.thinking)
        payload = {
            "model": self.endpoint.model_id,
            "messages": _to_wire_messages(messages),
            "temperature": self.endpoint.temperature,
        }
        if self.endpoint.thinking == "on":
            payload["chat_template_kwargs"] = {"enable_thinking": True}

        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            try:
                text, latency_ms = self.transport.send(payload, digest)
                return CompletionRecord(
                    request_digest=digest,
                    text=text,
                    latency_ms=latency_ms,
                    attempts=attempt + 1,
                )
            except TransientTransportError as e:
                last_error = e
                if attempt < self.endpoint.max_retries:
                    delay = BACKOFF_BASE_SECONDS * (BACKOFF_FACTOR ** attempt)
                    self._sleep(delay + self._rng.uniform(0.0, BACKOFF_JITTER_SECONDS))
        raise ExhaustedError(
            f"{self.endpoint.max_retries + 1} attempts failed; last error: {last_error}"
        )

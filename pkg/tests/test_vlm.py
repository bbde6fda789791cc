import json

import pytest

from ocrforge.vlm import (
    AuthFailureError,
    CompletionRecord,
    ContentRefusedError,
    ExhaustedError,
    ModelEndpoint,
    RecordingTransport,
    ReplayMissError,
    ReplayStore,
    ReplayTransport,
    TransientTransportError,
    VlmClient,
    request_digest,
)

ENDPOINT = ModelEndpoint(base_url="http://example.invalid/v1", model_id="test-model",
                         max_retries=3)


def messages_for(text, image_b64="aW1n"):
    return [
        {
            "role": "user",
            "content": [
                {"type": "image", "image": {"png_base64": image_b64}},
                {"type": "text", "text": text},
            ],
        }
    ]


class FlakyTransport:
    """Fails a set number of times, then answers."""

    def __init__(self, failures, answer="ok"):
        self.failures = failures
        self.answer = answer
        self.calls = 0

    def send(self, payload, digest):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientTransportError(f"boom {self.calls}")
        return self.answer, 12.5


class CannedTransport:
    def __init__(self, answer):
        self.answer = answer

    def send(self, payload, digest):
        return self.answer, 1.0


def no_sleep(_):
    pass


class TestRetries:
    def test_replay_style_single_attempt(self):
        client = VlmClient(ENDPOINT, transport=CannedTransport("서울"), sleep=no_sleep)
        record = client.complete(messages_for("수도는?"))
        assert record.text == "서울"
        assert record.attempts == 1

    def test_two_failures_then_success(self):
        transport = FlakyTransport(failures=2)
        client = VlmClient(ENDPOINT, transport=transport, sleep=no_sleep)
        record = client.complete(messages_for("q"))
        assert record.attempts == 3
        assert transport.calls == 3

    def test_exhausted_after_all_retries(self):
        transport = FlakyTransport(failures=4)
        client = VlmClient(ENDPOINT, transport=transport, sleep=no_sleep)
        with pytest.raises(ExhaustedError):
            client.complete(messages_for("q"))
        assert transport.calls == 4  # 1 + max_retries

    def test_backoff_schedule_base_one_factor_two(self):
        delays = []
        transport = FlakyTransport(failures=3)
        client = VlmClient(ENDPOINT, transport=transport, sleep=delays.append)
        client.complete(messages_for("q"))
        assert len(delays) == 3
        for delay, base in zip(delays, (1.0, 2.0, 4.0)):
            assert base <= delay <= base + 0.25  # jitter rides on top

    def test_auth_failure_not_retried(self):
        class AuthFail:
            calls = 0

            def send(self, payload, digest):
                self.calls += 1
                raise AuthFailureError("401")

        transport = AuthFail()
        client = VlmClient(ENDPOINT, transport=transport, sleep=no_sleep)
        with pytest.raises(AuthFailureError):
            client.complete(messages_for("q"))
        assert transport.calls == 1

    def test_refusal_not_retried(self):
        class Refuses:
            calls = 0

            def send(self, payload, digest):
                self.calls += 1
                raise ContentRefusedError("filtered", text="")

        transport = Refuses()
        client = VlmClient(ENDPOINT, transport=transport, sleep=no_sleep)
        with pytest.raises(ContentRefusedError):
            client.complete(messages_for("q"))
        assert transport.calls == 1

    def test_attempts_never_exceed_retry_budget(self):
        record = CompletionRecord("d", "t", 1.0, attempts=ENDPOINT.max_retries + 1)
        assert record.attempts <= ENDPOINT.max_retries + 1


class TestDigest:
    def test_pure_function_of_inputs(self):
        a = request_digest("m", messages_for("q"), "off")
        b = request_digest("m", messages_for("q"), "off")
        assert a == b

    def test_question_changes_digest(self):
        assert request_digest("m", messages_for("q1"), "off") != request_digest(
            "m", messages_for("q2"), "off"
        )

    def test_ocr_block_changes_digest(self):
        with_block = messages_for("Reference OCR tokens:\n간판\n\nq")
        without = messages_for("q")
        assert request_digest("m", with_block, "off") != request_digest("m", without, "off")

    def test_image_bytes_change_digest(self):
        assert request_digest("m", messages_for("q", "AAAA"), "off") != request_digest(
            "m", messages_for("q", "BBBB"), "off"
        )

    def test_model_and_thinking_change_digest(self):
        msgs = messages_for("q")
        assert request_digest("m1", msgs, "off") != request_digest("m2", msgs, "off")
        assert request_digest("m", msgs, "off") != request_digest("m", msgs, "on")


class TestReplayStore:
    def test_record_then_replay_identical(self, tmp_path):
        store_path = tmp_path / "store.jsonl"
        live = CannedTransport("답변입니다")
        recording = RecordingTransport(live, store_path)
        client = VlmClient(ENDPOINT, transport=recording, sleep=no_sleep)
        first = client.complete(messages_for("질문?"))

        replay_client = VlmClient(
            ENDPOINT, transport=ReplayTransport.from_path(store_path), sleep=no_sleep
        )
        second = replay_client.complete(messages_for("질문?"))
        assert second.text == first.text
        assert second.latency_ms == first.latency_ms
        assert second.attempts == 1

    def test_modified_question_misses(self, tmp_path):
        store_path = tmp_path / "store.jsonl"
        recording = RecordingTransport(CannedTransport("x"), store_path)
        VlmClient(ENDPOINT, transport=recording, sleep=no_sleep).complete(messages_for("q"))

        replay_client = VlmClient(
            ENDPOINT, transport=ReplayTransport.from_path(store_path), sleep=no_sleep
        )
        with pytest.raises(ReplayMissError):
            replay_client.complete(messages_for("another q"))

    def test_store_round_trips_through_disk(self, tmp_path):
        store = ReplayStore({"d1": ("resp one", 3.5), "d2": ("응답", 7.0)})
        path = tmp_path / "s.jsonl"
        store.save(path)
        loaded = ReplayStore.load(path)
        assert loaded.entries == store.entries
        again = tmp_path / "s2.jsonl"
        loaded.save(again)
        assert path.read_text(encoding="utf-8") == again.read_text(encoding="utf-8")

    def test_store_file_is_jsonl_with_expected_fields(self, tmp_path):
        path = tmp_path / "s.jsonl"
        ReplayStore({"abc": ("hi", 2.0)}).save(path)
        (line,) = path.read_text(encoding="utf-8").splitlines()
        assert json.loads(line) == {"digest": "abc", "response": "hi", "latency_ms": 2.0}


class TestEndpointValidation:
    def test_rejects_bad_settings(self):
        with pytest.raises(ValueError):
            ModelEndpoint(base_url="x", model_id="m", max_retries=-1)
        with pytest.raises(ValueError):
            ModelEndpoint(base_url="x", model_id="m", timeout=0)
        with pytest.raises(ValueError):
            ModelEndpoint(base_url="x", model_id="m", thinking="maybe")

    def test_thinking_toggle_changes_payload(self):
        seen = {}

        class Capture:
            def send(self, payload, digest):
                seen.update(payload)
                return "ok", 1.0

        on = ModelEndpoint(base_url="x", model_id="m", thinking="on")
        VlmClient(on, transport=Capture(), sleep=no_sleep).complete(messages_for("q"))
        assert seen.get("chat_template_kwargs") == {"enable_thinking": True}
        assert seen.get("temperature") == 0.0

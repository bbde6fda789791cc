import json
import sys
import threading

import numpy as np
import pytest

from ocrforge.detect import TextBox
from ocrforge.images import png_base64
from ocrforge.pipeline import (
    BackendUnavailableError,
    StubRecognizer,
    mean_pixel_stub,
    run_ocr,
)
from ocrforge.wire import (
    WireBackend,
    handle_request_line,
    process_channel,
    run_protocol_checks,
    serve_socket,
)

STUB_CMD = [sys.executable, "-m", "ocrforge.wire", "--stub", "mean", "--max-batch", "4"]


def crop(value, shape=(6, 9)):
    return np.full(shape, value, dtype=np.uint8)


class TestHandleRequestLine:
    def backend(self):
        return StubRecognizer(fn=mean_pixel_stub, max_batch=2)

    def test_empty_batch(self):
        reply = handle_request_line('{"id": "r1", "crops": []}', self.backend())
        assert reply == {"id": "r1", "results": []}

    def test_results_in_crop_order(self):
        req = {
            "id": "r2",
            "crops": [{"png_base64": png_base64(crop(v))} for v in (10, 200, 60)],
        }
        reply = handle_request_line(json.dumps(req), self.backend())
        assert [r["text"] for r in reply["results"]] == ["crop:10", "crop:200", "crop:60"]

    def test_malformed_line_yields_error_notice(self):
        reply = handle_request_line("not json at all", self.backend())
        assert "error" in reply and "id" not in reply

    def test_bad_shape_with_salvageable_id(self):
        reply = handle_request_line('{"id": "r3", "crops": "nope"}', self.backend())
        assert reply["id"] == "r3" and "error" in reply

    def test_undecodable_crop_isolated(self):
        req = {
            "id": "r4",
            "crops": [
                {"png_base64": "zzzz"},
                {"png_base64": png_base64(crop(50))},
            ],
        }
        reply = handle_request_line(json.dumps(req), self.backend())
        assert len(reply["results"]) == 2
        assert reply["results"][0]["text"] == ""
        assert reply["results"][0]["confidence"] == 0.0
        assert "error" in reply["results"][0]
        assert reply["results"][1]["text"] == "crop:50"


class TestWireBackendOverStdio:
    def test_capability_announced(self):
        with WireBackend(cmd=STUB_CMD) as backend:
            info = backend.info()
            assert info.name == "ocrforge-stub"
            assert info.max_batch == 4

    def test_recognize_round_trip(self):
        with WireBackend(cmd=STUB_CMD) as backend:
            results = backend.recognize([crop(33), crop(77)])
            assert [r.text for r in results] == ["crop:33", "crop:77"]
            assert all(r.confidence == 1.0 for r in results)

    def test_run_ocr_over_the_wire(self):
        img = np.zeros((20, 40), dtype=np.uint8)
        img[2:8, 2:18] = 120
        img[12:18, 2:18] = 240
        boxes = [
            TextBox(quad=[[2, 12], [18, 12], [18, 18], [2, 18]]),
            TextBox(quad=[[2, 2], [18, 2], [18, 8], [2, 8]]),
        ]
        with WireBackend(cmd=STUB_CMD) as backend:
            doc = run_ocr(img, boxes, backend, image_id="wire")
        assert doc.texts() == ["crop:120", "crop:240"]

    def test_dead_process_is_unavailable(self):
        backend = WireBackend(cmd=[sys.executable, "-c", "pass"], retries=1)
        with pytest.raises(BackendUnavailableError):
            backend.recognize([crop(1)])

    def test_missing_command_is_unavailable(self):
        backend = WireBackend(cmd=["/nonexistent/recognizer"], retries=0)
        with pytest.raises(BackendUnavailableError):
            backend.info()


class TestWireBackendOverSocket:
    def test_socket_round_trip(self):
        stub = StubRecognizer(fn=mean_pixel_stub, max_batch=8, name="sock-stub")
        ready = threading.Event()
        port = 47153
        server = threading.Thread(
            target=serve_socket,
            args=(stub, port),
            kwargs={"ready_event": ready, "max_connections": 1},
            daemon=True,
        )
        server.start()
        assert ready.wait(5)
        with WireBackend(host="127.0.0.1", port=port) as backend:
            assert backend.info().name == "sock-stub"
            results = backend.recognize([crop(99)])
            assert results[0].text == "crop:99"
        server.join(timeout=5)


class TestProtocolConformance:
    def test_stub_passes_all_checks(self):
        checks = run_protocol_checks(lambda: process_channel(STUB_CMD))
        failed = [c for c in checks if not c.ok]
        assert not failed, failed
        names = {c.name for c in checks}
        assert {
            "capability-announce",
            "empty-batch",
            "ordered-batch-shape",
            "ordered-batch-determinism",
            "ordered-batch-order",
            "malformed-line-notice",
            "alive-after-malformed",
        } <= names

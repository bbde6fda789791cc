import numpy as np
import pytest

from ocrforge.detect import TextBox
from ocrforge.pipeline import (
    BackendProtocolError,
    DegenerateBoxError,
    OcrDocument,
    OcrLine,
    RecognizedText,
    StubRecognizer,
    crop_region,
    mean_pixel_stub,
    order_regions,
    run_ocr,
)


def rect_box(x, y, w, h, score=1.0):
    return TextBox(quad=[[x, y], [x + w, y], [x + w, y + h], [x, y + h]], score=score)


@pytest.fixture
def gradient_rgb():
    h, w = 24, 32
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[..., 0] = np.arange(w, dtype=np.uint8) * 7 % 250
    img[..., 1] = (np.arange(h, dtype=np.uint8) * 9 % 250)[:, None]
    img[..., 2] = 33
    return img


class TestCropRegion:
    def test_rectify_identity_on_axis_aligned_quad(self, gradient_rgb):
        box = rect_box(0, 0, 10, 5)
        crop = crop_region(gradient_rgb, box, "rectify")
        assert crop.shape == (5, 10, 3)
        assert np.array_equal(crop, gradient_rgb[0:5, 0:10])

    def test_bbox_equals_rectify_on_axis_aligned_quads(self, gradient_rgb):
        for box in [rect_box(0, 0, 10, 5), rect_box(3, 7, 8, 9), rect_box(20, 10, 12, 14)]:
            assert np.array_equal(
                crop_region(gradient_rgb, box, "bbox"),
                crop_region(gradient_rgb, box, "rectify"),
            )

    def test_rotated_gradient_round_trips(self):
        h = w = 16
        gradient = np.tile((np.arange(w, dtype=np.uint8) * 13) % 251, (h, 1))
        rotated = np.rot90(gradient, k=-1).copy()
        # corners of the rotated image listed so that the crop's top edge is
        # the original top edge again
        box = TextBox(quad=[[w, 0], [w, h], [0, h], [0, 0]])
        recovered = crop_region(rotated, box, "rectify")
        assert recovered.shape == gradient.shape
        deviation = np.abs(recovered.astype(int) - gradient.astype(int)).max()
        assert deviation <= 1

    def test_degenerate_box(self, gradient_rgb):
        flat = TextBox(quad=[[0, 0], [10, 0], [10, 0.05], [0, 0.05]])
        with pytest.raises(DegenerateBoxError):
            crop_region(gradient_rgb, flat)

    def test_minimum_one_pixel_output(self, gradient_rgb):
        thin = TextBox(quad=[[2, 2], [2.4, 2], [2.4, 6], [2, 6]])
        crop = crop_region(gradient_rgb, thin, "rectify")
        assert crop.shape[1] == 1 and crop.shape[0] == 4

    def test_grayscale_supported(self):
        img = (np.arange(100, dtype=np.uint8).reshape(10, 10) * 2) % 251
        crop = crop_region(img, rect_box(1, 2, 5, 4), "rectify")
        assert np.array_equal(crop, img[2:6, 1:6])

    def test_unknown_mode(self, gradient_rgb):
        with pytest.raises(ValueError):
            crop_region(gradient_rgb, rect_box(0, 0, 4, 4), "fancy")


class TestOrderRegions:
    def test_empty(self):
        assert order_regions([]) == []

    def test_stacked_vertically(self):
        boxes = [rect_box(0, 30, 20, 6), rect_box(0, 0, 20, 6)]
        assert order_regions(boxes) == [1, 0]

    def test_side_by_side(self):
        boxes = [rect_box(40, 0, 20, 6), rect_box(0, 0, 20, 6)]
        assert order_regions(boxes) == [1, 0]

    def test_grid_row_major(self):
        boxes = [
            rect_box(30, 20, 20, 6),  # bottom right
            rect_box(0, 0, 20, 6),    # top left
            rect_box(30, 0, 20, 6),   # top right
            rect_box(0, 20, 20, 6),   # bottom left
        ]
        assert order_regions(boxes) == [1, 2, 3, 0]

    def test_slightly_ragged_line_groups_together(self):
        # vertical centers differ by less than half the mean height
        boxes = [rect_box(40, 2, 20, 10), rect_box(0, 0, 20, 10)]
        assert order_regions(boxes) == [1, 0]

    def test_is_permutation(self):
        rng = np.random.default_rng(5)
        boxes = [
            rect_box(float(x), float(y), float(w), float(h))
            for x, y, w, h in zip(
                rng.uniform(0, 200, 30),
                rng.uniform(0, 200, 30),
                rng.uniform(5, 40, 30),
                rng.uniform(4, 12, 30),
            )
        ]
        order = order_regions(boxes)
        assert sorted(order) == list(range(30))

    def test_invariant_under_translation_and_scale(self):
        rng = np.random.default_rng(6)
        boxes = [
            rect_box(float(x), float(y), float(w), float(h))
            for x, y, w, h in zip(
                rng.uniform(0, 100, 12),
                rng.uniform(0, 100, 12),
                rng.uniform(5, 30, 12),
                rng.uniform(4, 10, 12),
            )
        ]
        base = order_regions(boxes)
        shifted = [TextBox(quad=b.quad + np.array([17.0, -5.0])) for b in boxes]
        scaled = [TextBox(quad=b.quad * 3.5) for b in boxes]
        assert order_regions(shifted) == base
        assert order_regions(scaled) == base


class TestRunOcr:
    def test_zero_boxes(self, gradient_rgb):
        backend = StubRecognizer(fn=mean_pixel_stub)
        doc = run_ocr(gradient_rgb, [], backend, image_id="img0")
        assert doc.image_id == "img0"
        assert doc.lines == []
        assert doc.order_policy == "reading-order-v1"

    def test_stub_texts_in_reading_order(self, gradient_rgb):
        backend = StubRecognizer(texts=["first", "second", "third"])
        boxes = [
            rect_box(0, 16, 10, 5),  # bottom: read last
            rect_box(0, 0, 10, 5),   # top left: read first
            rect_box(14, 0, 10, 5),  # top right: read second
        ]
        doc = run_ocr(gradient_rgb, boxes, backend)
        assert doc.texts() == ["first", "second", "third"]
        # the line order corresponds to boxes 1, 2, 0
        assert doc.lines[0].box is boxes[1]
        assert doc.lines[2].box is boxes[0]

    def test_batching_is_transparent(self, gradient_rgb):
        boxes = [rect_box(4 * i, 4 * i, 6, 4) for i in range(5)]
        small = run_ocr(gradient_rgb, boxes, StubRecognizer(fn=mean_pixel_stub, max_batch=2))
        large = run_ocr(gradient_rgb, boxes, StubRecognizer(fn=mean_pixel_stub, max_batch=5))
        assert small.texts() == large.texts()
        assert [l.confidence for l in small.lines] == [l.confidence for l in large.lines]

    def test_batch_call_count(self, gradient_rgb):
        calls = []

        class CountingStub(StubRecognizer):
            def recognize(self, crops):
                calls.append(len(crops))
                return super().recognize(crops)

        backend = CountingStub(fn=mean_pixel_stub, max_batch=2)
        boxes = [rect_box(4 * i, 4 * i, 6, 4) for i in range(5)]
        run_ocr(gradient_rgb, boxes, backend)
        assert calls == [2, 2, 1]

    def test_line_count_equals_box_count(self, gradient_rgb):
        backend = StubRecognizer(fn=mean_pixel_stub)
        boxes = [rect_box(2 * i, 3 * i, 8, 4) for i in range(7)]
        doc = run_ocr(gradient_rgb, boxes, backend)
        assert len(doc.lines) == len(boxes)

    def test_wrong_result_count_is_protocol_error(self, gradient_rgb):
        class BrokenBackend(StubRecognizer):
            def recognize(self, crops):
                return [RecognizedText("x", 1.0)]

        backend = BrokenBackend(fn=mean_pixel_stub)
        with pytest.raises(BackendProtocolError):
            run_ocr(gradient_rgb, [rect_box(0, 0, 8, 4), rect_box(12, 0, 8, 4)], backend)

    def test_empty_text_lines_allowed(self, gradient_rgb):
        backend = StubRecognizer(texts=[""])
        doc = run_ocr(gradient_rgb, [rect_box(0, 0, 8, 4)], backend)
        assert doc.texts() == [""]

    def test_document_serialization(self, gradient_rgb):
        doc = OcrDocument(
            image_id="x",
            lines=[OcrLine(text="hi", box=rect_box(0, 0, 4, 4, score=0.5), confidence=0.9)],
        )
        d = doc.to_dict()
        assert d["image_id"] == "x"
        assert d["lines"][0]["text"] == "hi"
        assert d["lines"][0]["score"] == 0.5

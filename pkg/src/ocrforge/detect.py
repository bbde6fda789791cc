"""Text-detection post-processing: probability map in, scored text boxes out.

The neural detector itself is out of scope; this module consumes the
per-pixel text-probability map such a detector produces (or box lists from
any external detector) and turns it into clean quadrilateral boxes.

Coordinate convention used across the toolkit: pixel (row r, col c) covers
the unit square [c, c+1) x [r, r+1), so its center sits at (c+0.5, r+0.5)
and a quad (0,0)(10,0)(10,5)(0,5) spans exactly the top-left 10x5 pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage


class MalformedQuadError(ValueError):
    """A box record carried a self-intersecting or zero-area quad."""

    def __init__(self, index: int, reason: str = "invalid quad"):
        self.index = index
        super().__init__(f"record {index}: {reason}")


@dataclass
class TextBox:
    """A detected text region: 4 corners (clockwise on screen) plus the mean
    in-region text probability."""

    quad: np.ndarray  # (4, 2) float64, image pixel coordinates
    score: float = 1.0

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=np.float64).reshape(4, 2)
        if not np.isfinite(self.quad).all():
            raise ValueError("quad coordinates must be finite")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DetectParams:
    """Tunables for map-to-box extraction. Defaults mirror the reference
    configuration of the detector family; override per dataset."""

    bin_thresh: float = 0.3
    box_thresh: float = 0.6
    unclip_ratio: float = 1.5
    min_side: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.bin_thresh < 1.0:
            raise ValueError("bin_thresh must be in (0, 1)")
        if not 0.0 < self.box_thresh < 1.0:
            raise ValueError("box_thresh must be in (0, 1)")
        if self.unclip_ratio < 1.0:
            raise ValueError("unclip_ratio must be >= 1")
        if self.min_side < 1.0:
            raise ValueError("min_side must be >= 1")


def signed_area(quad: np.ndarray) -> float:
    """Shoelace sum / 2; positive for clockwise-on-screen order (y grows
    downward in image coordinates)."""
    x, y = quad[:, 0], quad[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _segments_cross(a, b, c, d) -> bool:
    """Proper or collinear-overlap intersection of segments ab and cd."""
    d1, d2 = _orient(c, d, a), _orient(c, d, b)
    d3, d4 = _orient(a, b, c), _orient(a, b, d)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    if d1 == d2 == d3 == d4 == 0:
        # collinear: overlapping projections count as a crossing
        for axis in (0, 1):
            lo1, hi1 = sorted((a[axis], b[axis]))
            lo2, hi2 = sorted((c[axis], d[axis]))
            if hi1 < lo2 or hi2 < lo1:
                return False
        return True
    return False


def is_simple_quad(quad: np.ndarray) -> bool:
    """True when no pair of opposite edges intersects (a bow-tie fails)."""
    p = np.asarray(quad, dtype=np.float64)
    return not (
        _segments_cross(p[0], p[1], p[2], p[3])
        or _segments_cross(p[1], p[2], p[3], p[0])
    )


def canonical_quad(quad: np.ndarray) -> np.ndarray:
    """Order corners clockwise on screen, starting from the corner nearest
    the image origin (smallest x+y; ties broken by y then x)."""
    pts = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    c = pts.mean(axis=0)
    ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])
    pts = pts[np.argsort(ang, kind="stable")]
    start = min(range(4), key=lambda i: (pts[i, 0] + pts[i, 1], pts[i, 1], pts[i, 0]))
    return np.roll(pts, -start, axis=0)


def binarize(prob_map, bin_thresh: float) -> np.ndarray:
    """Threshold a probability map into a boolean foreground mask
    (strictly greater than the threshold)."""
    values = _as_prob_map(prob_map)
    return values > bin_thresh


def _as_prob_map(prob_map) -> np.ndarray:
    values = np.asarray(prob_map, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"probability map must be 2-D, got shape {values.shape}")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValueError("probability map values must lie in [0, 1]")
    return values


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def extract_boxes(prob_map, params: DetectParams = DetectParams()) -> list[TextBox]:
    """Group the binarized map into 8-connected components and fit one
    expanded min-area rectangle per component.

    Per component: score = mean probability over the component's own pixels
    (not the rectangle interior), so thin diagonal text does not dilute its
    score. Components below box_thresh are dropped, survivors are expanded
    outward by area*unclip_ratio/perimeter, and the size gate (min_side)
    applies to the expanded box. Output is clamped to the image and sorted
    by top-left corner (y, then x).
    """
    values = _as_prob_map(prob_map)
    h, w = values.shape
    mask = values > params.bin_thresh
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)

    boxes = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        region = labels[sl] == k
        score = float(values[sl][region].mean())
        if score < params.box_thresh:
            continue
        ys, xs = np.nonzero(region)
        centers = np.stack(
            [xs + sl[1].start + 0.5, ys + sl[0].start + 0.5], axis=1
        ).astype(np.float32)
        quad, sides = _expanded_rect(centers, params.unclip_ratio)
        if min(sides) < params.min_side:
            continue
        quad[:, 0] = np.clip(quad[:, 0], 0.0, w)
        quad[:, 1] = np.clip(quad[:, 1], 0.0, h)
        boxes.append(TextBox(quad=canonical_quad(quad), score=score))

    boxes.sort(key=lambda b: (b.quad[0, 1], b.quad[0, 0], *b.quad.ravel()))
    return boxes


def _expanded_rect(centers: np.ndarray, unclip_ratio: float):
    """Min-area rectangle over pixel centers, grown to cover the pixel
    squares (+0.5 per side) and then unclipped.

    The unclip offset follows the polygon-offset formula
    distance = area * ratio / perimeter; for a rectangle, offsetting every
    edge outward by that distance with mitered corners is exactly a growth
    of both half-extents, which is what is computed here.
    """
    (cx, cy), (rw, rh), angle = cv2.minAreaRect(centers)
    hw, hh = rw / 2.0 + 0.5, rh / 2.0 + 0.5
    area = (2 * hw) * (2 * hh)
    perimeter = 2 * (2 * hw + 2 * hh)
    offset = area * unclip_ratio / perimeter
    hw, hh = hw + offset, hh + offset

    theta = math.radians(angle)
    ux = np.array([math.cos(theta), math.sin(theta)])
    uy = np.array([-math.sin(theta), math.cos(theta)])
    center = np.array([cx, cy], dtype=np.float64)
    quad = np.stack(
        [
            center - hw * ux - hh * uy,
            center + hw * ux - hh * uy,
            center + hw * ux + hh * uy,
            center - hw * ux + hh * uy,
        ]
    )
    return quad, (2 * hw, 2 * hh)


def ingest_boxes(records) -> list[TextBox]:
    """Validate externally produced box records into TextBoxes.

    Each record needs a 4-point "quad"; "score" defaults to 1.0. Corner
    order is preserved (the first corner stays first) but orientation is
    normalized to clockwise-on-screen.
    """
    boxes = []
    for i, rec in enumerate(records):
        quad = np.asarray(rec.get("quad", []), dtype=np.float64)
        if quad.shape != (4, 2) or not np.isfinite(quad).all():
            raise MalformedQuadError(i, "quad must be 4 finite (x, y) points")
        area = signed_area(quad)
        if abs(area) < 1e-12:
            raise MalformedQuadError(i, "zero-area quad")
        if not is_simple_quad(quad):
            raise MalformedQuadError(i, "self-intersecting quad")
        if area < 0:
            quad = quad[[0, 3, 2, 1]]
        score = rec.get("score", 1.0)
        if score is None:
            score = 1.0
        try:
            boxes.append(TextBox(quad=quad, score=float(score)))
        except ValueError as e:
            raise MalformedQuadError(i, str(e)) from None
    return boxes


def load_boxes_jsonl(path) -> list[tuple[str, list[TextBox]]]:
    """Read per-image box records: one JSON object per line,
    {"image": path, "boxes": [{"quad": [[x,y]*4], "score": optional}]}."""
    out = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                image = rec["image"]
                boxes = ingest_boxes(rec.get("boxes", []))
            except MalformedQuadError as e:
                raise MalformedQuadError(e.index, f"line {ln}: {e}") from None
            except (KeyError, ValueError) as e:
                raise ValueError(f"{path}: line {ln}: {e}") from None
            out.append((image, boxes))
    return out


def dump_boxes_jsonl(path, entries) -> None:
    """Inverse of load_boxes_jsonl; entries are (image, boxes) pairs."""
    with open(path, "w", encoding="utf-8") as f:
        for image, boxes in entries:
            rec = {
                "image": image,
                "boxes": [
                    {"quad": b.quad.tolist(), "score": b.score} for b in boxes
                ],
            }
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")

"""From a text-probability map to scored boxes: binarize, group into
8-connected components, fit and expand min-area rectangles, filter.

Run: python demos/02_detection_postprocessing.py
"""

import numpy as np

from ocrforge.detect import DetectParams, binarize, extract_boxes

rng = np.random.default_rng(0)

# A synthetic 20x36 probability map with two "words" and one faint blob.
prob = np.zeros((20, 36))
prob[3:7, 2:16] = rng.uniform(0.85, 0.95, size=(4, 14))    # strong word
prob[12:16, 6:26] = rng.uniform(0.75, 0.9, size=(4, 20))   # second line
prob[3:6, 24:30] = rng.uniform(0.35, 0.45, size=(3, 6))    # too faint to keep

print("probability map (tenths):")
for row in prob:
    print("  " + "".join(str(int(v * 10)) if v > 0 else "." for v in row))
print()

mask = binarize(prob, 0.3)
print(f"binarized at 0.3: {int(mask.sum())} foreground pixels")

params = DetectParams(bin_thresh=0.3, box_thresh=0.6, unclip_ratio=1.5, min_side=3)
boxes = extract_boxes(prob, params)
print(f"extract_boxes with box_thresh={params.box_thresh}: {len(boxes)} boxes"
      " (the faint blob scored below the threshold)")
for i, box in enumerate(boxes):
    corners = ", ".join(f"({x:.1f},{y:.1f})" for x, y in box.quad)
    print(f"  box {i}: score {box.score:.3f}  corners {corners}")
print()
print("Boxes come back sorted top-left first, expanded outward by")
print("area*unclip_ratio/perimeter, and clamped to the image bounds.")

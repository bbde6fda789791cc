"""Turn box-annotated page images into cropped (image, text) recognition
pairs plus deterministic train/test splits.

Input annotation JSONL, one page per line:
    {"image": path, "regions": [{"quad": [[x,y]*4], "text": str}]}
Output manifest JSONL, one crop per line:
    {"crop": path, "text": str, "source": path, "region": int}
Regions with empty labels are skipped (and counted); splits group all
crops of one source page on the same side so no page leaks across the
train/test boundary."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .detect import ingest_boxes
from .images import load_image, save_png
from .pipeline import DegenerateBoxError, crop_region


class TooFewGroupsError(ValueError):
    """A split needs at least two groups to put something on each side."""


@dataclass(frozen=True)
class PairEntry:
    crop_path: str
    text: str
    source_image: str
    region_index: int

    def to_dict(self) -> dict:
        return {
            "crop": self.crop_path,
            "text": self.text,
            "source": self.source_image,
            "region": self.region_index,
        }


@dataclass
class PairManifest:
    entries: list[PairEntry] = field(default_factory=list)
    split: str = "unsplit"
    skipped_empty: int = 0
    skipped_degenerate: int = 0

    def __post_init__(self):
        paths = [e.crop_path for e in self.entries]
        if len(paths) != len(set(paths)):
            raise ValueError("crop paths in a manifest must be unique")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.entries:
                f.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path, split: str = "unsplit") -> "PairManifest":
        entries = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                entries.append(PairEntry(d["crop"], d["text"], d["source"], d["region"]))
        return cls(entries=entries, split=split)


def load_annotations(path) -> list[dict]:
    """Read the annotation JSONL into validated records."""
    records = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "image" not in rec or "regions" not in rec:
                raise ValueError(f"{path}: line {ln}: needs 'image' and 'regions'")
            records.append(rec)
    return records


def crop_dataset(annotations, out_dir, crop_mode: str = "rectify") -> PairManifest:
    """Crop every labeled region to a PNG under out_dir/crops and write
    out_dir/manifest.jsonl. Deterministic: re-running on unchanged input
    rewrites byte-identical crops and manifest."""
    out_dir = Path(out_dir)
    crops_dir = out_dir / "crops"
    crops_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    skipped_empty = 0
    skipped_degenerate = 0
    for rec in annotations:
        image_path = rec["image"]
        image = load_image(image_path)
        stem = Path(image_path).stem
        boxes = ingest_boxes(
            [{"quad": region["quad"]} for region in rec["regions"]]
        )
        for idx, (region, box) in enumerate(zip(rec["regions"], boxes)):
            text = region.get("text", "")
            if not text:
                skipped_empty += 1
                continue
            try:
                crop = crop_region(image, box, mode=crop_mode)
            except DegenerateBoxError:
                skipped_degenerate += 1
                continue
            crop_path = crops_dir / f"{stem}_{idx:04d}.png"
            save_png(crop_path, crop)
            entries.append(
                PairEntry(
                    crop_path=str(crop_path),
                    text=text,
                    source_image=str(image_path),
                    region_index=idx,
                )
            )

    manifest = PairManifest(
        entries=entries,
        skipped_empty=skipped_empty,
        skipped_degenerate=skipped_degenerate,
    )
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def split_manifest(manifest: PairManifest, test_fraction: float, seed: int,
                   group_by: str = "source") -> tuple[PairManifest, PairManifest]:
    """Deterministic random split of a manifest.

    group_by="source" (default) assigns whole source pages to one side;
    group_by="crop" splits at the individual crop level."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    if group_by not in ("source", "crop"):
        raise ValueError(f"unknown group_by {group_by!r}")

    if group_by == "source":
        keys = sorted({e.source_image for e in manifest.entries})
    else:
        keys = sorted(e.crop_path for e in manifest.entries)
    if len(keys) < 2:
        raise TooFewGroupsError(
            f"need at least 2 {group_by} groups to split, have {len(keys)}"
        )

    shuffled = list(keys)
    random.Random(seed).shuffle(shuffled)
    n_test = int(round(test_fraction * len(keys)))
    n_test = min(max(n_test, 1), len(keys) - 1)
    test_keys = set(shuffled[:n_test])

    def side(entry: PairEntry) -> bool:
        key = entry.source_image if group_by == "source" else entry.crop_path
        return key in test_keys

    train = PairManifest(entries=[e for e in manifest.entries if not side(e)], split="train")
    test = PairManifest(entries=[e for e in manifest.entries if side(e)], split="test")
    return train, test

"""Dataset statistics over generated scene bundles."""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mrg import LABELS, MRG
from .sensor import BBox2D

log = logging.getLogger(__name__)

SIZE_BUCKETS = (32, 64, 128, 256, 512)
OVER_512 = ">512"


def _extent(box):
    if isinstance(box, BBox2D):
        return float(box.x_min), float(box.y_min), float(box.x_max), float(box.y_max)
    x0, y0, x1, y1 = (float(v) for v in box)
    return x0, y0, x1, y1


def pixel_extent(box: BBox2D) -> tuple[float, float, float, float]:
    """Continuous rectangle covered by an inclusive pixel box."""
    return box.x_min - 0.5, box.y_min - 0.5, box.x_max + 0.5, box.y_max + 0.5


def iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = _extent(a)
    bx0, by0, bx1, by1 = _extent(b)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("box has zero area")
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def overlap_iou(boxes, i: int) -> float:
    """Largest IoU between box ``i`` and any other box of the same view.

    Boxes are rectangles ``(xMin, yMin, xMax, yMax)`` in continuous image
    coordinates (``BBox2D`` corners are used as given).
    """
    boxes = list(boxes)
    if not boxes:
        raise ValueError("need at least one box")
    x0, y0, x1, y1 = _extent(boxes[i])
    if (x1 - x0) * (y1 - y0) <= 0:
        raise ValueError("box has zero area")
    return max((iou(boxes[i], b) for j, b in enumerate(boxes) if j != i), default=0.0)


def size_bucket(box) -> int | str:
    """Smallest X in 32..512 with pixel count <= X^2, else ``">512"``."""
    if isinstance(box, BBox2D):
        count = box.width * box.height
    elif np.ndim(box) == 0:
        count = int(box)
    else:
        w, h = box
        count = int(w) * int(h)
    for x in SIZE_BUCKETS:
        if count <= x * x:
            return x
    return OVER_512


def _bin(value: float, width: float, nbins: int) -> int:
    return int(min(nbins - 1, max(0, np.floor(value / width + 1e-9))))


def _counter_of(d) -> Counter:
    return Counter({k: v for k, v in d.items()})


@dataclass
class DatasetSummary:
    scene_count: int = 0
    object_count_histogram: Counter = field(default_factory=Counter)
    category_histogram: Counter = field(default_factory=Counter)
    bbox_size_histogram: Counter = field(default_factory=Counter)
    overlap_histogram: Counter = field(default_factory=Counter)  # bin k covers [k/10, (k+1)/10)
    relationship_counts: Counter = field(default_factory=lambda: Counter({lab: 0 for lab in LABELS}))
    antipodal_histogram: Counter = field(default_factory=Counter)  # bins of 0.1
    verticality_histogram: Counter = field(default_factory=Counter)  # bins of 10 degrees
    errors: list = field(default_factory=list)

    def __add__(self, other: DatasetSummary) -> DatasetSummary:
        out = DatasetSummary(self.scene_count + other.scene_count)
        for name in ("object_count_histogram", "category_histogram", "bbox_size_histogram", "overlap_histogram",
                     "relationship_counts", "antipodal_histogram", "verticality_histogram"):
            c = Counter(getattr(self, name))
            c.update(getattr(other, name))
            setattr(out, name, c)
        for lab in LABELS:
            out.relationship_counts.setdefault(lab, 0)
        out.errors = sorted(self.errors + other.errors)
        return out

    def relationship_fractions(self) -> dict[str, float]:
        total = sum(self.relationship_counts.values())
        return {k: (v / total if total else 0.0) for k, v in self.relationship_counts.items()}

    def to_dict(self) -> dict:
        def norm(c):
            return {str(k): int(v) for k, v in sorted(c.items(), key=lambda kv: str(kv[0]))}

        return {"schemaVersion": 1, "sceneCount": self.scene_count,
                "objectCountHistogram": norm(self.object_count_histogram),
                "categoryHistogram": norm(self.category_histogram),
                "bboxSizeHistogram": norm(self.bbox_size_histogram),
                "overlapHistogram": norm(self.overlap_histogram),
                "relationshipCounts": norm(self.relationship_counts),
                "antipodalHistogram": norm(self.antipodal_histogram),
                "verticalityHistogram": norm(self.verticality_histogram),
                "errors": list(self.errors)}

    def write(self, out_dir) -> list[Path]:
        """Write ``summary.json`` plus one CSV per histogram."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        d = self.to_dict()
        paths = [out_dir / "summary.json"]
        paths[0].write_text(json.dumps(d, indent=1, sort_keys=True))
        for key, col in (("objectCountHistogram", "objects"), ("categoryHistogram", "category"),
                         ("bboxSizeHistogram", "bucket"), ("overlapHistogram", "iouBin"),
                         ("relationshipCounts", "relationship"), ("antipodalHistogram", "scoreBin"),
                         ("verticalityHistogram", "degreeBin")):
            p = out_dir / f"{key}.csv"
            with open(p, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow([col, "count"])
                for k, v in d[key].items():
                    w.writerow([k, v])
            paths.append(p)
        return paths


def summarize_scene(scene_dir) -> DatasetSummary:
    """Statistics of one scene bundle; raises on malformed files."""
    scene_dir = Path(scene_dir)
    s = DatasetSummary(scene_count=1)
    scene = json.loads((scene_dir / "scene.json").read_text())
    objs = scene["objects"]
    s.object_count_histogram[len(objs)] += 1
    for o in objs:
        s.category_histogram[o["category"]] += 1
    mrg_path = scene_dir / "mrg.json"
    if mrg_path.exists():
        mrg = MRG.from_dict(json.loads(mrg_path.read_text()))
        s.relationship_counts.update(mrg.counts())
    boxes_path = scene_dir / "bboxes.json"
    if boxes_path.exists():
        for view in json.loads(boxes_path.read_text())["views"]:
            boxes = [BBox2D.from_dict(b) for b in view["boxes"]]
            ext = [pixel_extent(b) for b in boxes]
            for k, b in enumerate(boxes):
                s.bbox_size_histogram[size_bucket(b)] += 1
                s.overlap_histogram[_bin(overlap_iou(ext, k), 0.1, 10)] += 1
    grasp_path = scene_dir / "grasps3d.json"
    if grasp_path.exists():
        for gs in json.loads(grasp_path.read_text())["graspSets"]:
            for g in gs["grasps"]:
                s.antipodal_histogram[_bin(g["s"], 0.1, 10)] += 1
                s.verticality_histogram[_bin(np.degrees(g["verticality"]), 10.0, 9)] += 1
    return s


def scene_dirs(dataset_dir) -> list[Path]:
    return sorted(p.parent for p in Path(dataset_dir).glob("*/scene.json"))


def summarize(dataset_dir) -> DatasetSummary:
    """Aggregate every scene bundle below ``dataset_dir``; bad files are reported, not fatal."""
    total = DatasetSummary()
    for d in scene_dirs(dataset_dir):
        try:
            total = total + summarize_scene(d)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.warning("skipping %s: %s", d, exc)
            total.errors.append(f"{d.name}: {type(exc).__name__}: {exc}")
    total.errors.sort()
    return total

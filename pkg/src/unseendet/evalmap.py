"""Pascal-style detection evaluation: IoU matching, all-point AP, mAP."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

INTERPOLATION = "all-point"


@dataclass
class Detection:
    image_id: str
    cls: str
    confidence: float
    bbox: tuple

    def to_json(self):
        return {"image": self.image_id, "class": self.cls, "confidence": self.confidence, "bbox": list(self.bbox)}


def _area(b):
    return (b[2] - b[0]) * (b[3] - b[1])


def iou(a, b) -> float:
    if _area(a) <= 0 or _area(b) <= 0:
        raise ValidationError(f"degenerate box: {a if _area(a) <= 0 else b}")
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (_area(a) + _area(b) - inter)


@dataclass
class Labeled:
    """One detection after matching: ``tp`` is True for a hit."""

    detection: Detection
    tp: bool
    order: int  # insertion index, the confidence tie-break


def match_detections(dets, gts, iou_thresh=0.5) -> dict:
    """Greedy VOC matching.

    ``gts`` maps image id -> list of BoxLabel. Returns class -> list of
    Labeled in ranking order (confidence desc, then insertion index).
    """
    by_class: dict = {}
    for i, d in enumerate(dets):
        by_class.setdefault(d.cls, []).append((i, d))
    out = {}
    for c, items in by_class.items():
        items.sort(key=lambda it: (-it[1].confidence, it[0]))
        used: dict = {}
        labeled = []
        for i, d in items:
            cands = [o.bbox for o in gts.get(d.image_id, ()) if o.cls == c]
            taken = used.setdefault(d.image_id, [False] * len(cands))
            best, best_j = -1.0, -1
            for j, g in enumerate(cands):
                if taken[j]:
                    continue
                ov = iou(d.bbox, g)
                if ov > best:
                    best, best_j = ov, j
            hit = best_j >= 0 and best >= iou_thresh
            if hit:
                taken[best_j] = True
            labeled.append(Labeled(d, hit, i))
        out[c] = labeled
    return out


def average_precision(labeled, num_gt: int) -> float:
    """All-point interpolated AP of a ranked TP/FP sequence."""
    if num_gt <= 0:
        raise ValidationError("average precision is undefined without ground truth")
    if not labeled:
        return 0.0
    tp = np.array([l.tp for l in labeled], dtype=float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(aps: dict) -> float:
    vals = [v for v in aps.values() if v is not None]
    if not vals:
        raise ValidationError("no class with ground truth to average over")
    return float(np.mean(vals))


@dataclass
class ClassResult:
    ap: float
    num_gt: int
    tp: int
    fp: int


@dataclass
class EvalReport:
    per_class: dict  # class -> ClassResult
    mAP: float
    iou_threshold: float
    excluded: list = field(default_factory=list)  # classes with zero ground truth
    interpolation: str = INTERPOLATION

    def to_dict(self):
        return {
            "mAP": self.mAP,
            "iou_threshold": self.iou_threshold,
            "interpolation": self.interpolation,
            "excluded": list(self.excluded),
            "per_class": {c: vars(r) for c, r in self.per_class.items()},
        }

    @classmethod
    def from_dict(cls, d):
        per = {c: ClassResult(**r) for c, r in d["per_class"].items()}
        return cls(per, d["mAP"], d["iou_threshold"], list(d.get("excluded", [])), d.get("interpolation", INTERPOLATION))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# interpolation={self.interpolation} iou={self.iou_threshold}\n")
            w = csv.writer(fh)
            w.writerow(["class", "AP", "num_GT", "TP", "FP"])
            for c, r in self.per_class.items():
                w.writerow([c, f"{r.ap:.6f}", r.num_gt, r.tp, r.fp])
            for c in self.excluded:
                w.writerow([c, "", 0, "", ""])
            w.writerow(["mAP", f"{self.mAP:.6f}", "", "", ""])


def evaluate(dets, gts, classes=None, iou_thresh=0.5) -> EvalReport:
    """Per-class AP and mAP; classes without ground truth are excluded and listed."""
    if classes is None:
        classes = sorted({o.cls for objs in gts.values() for o in objs} | {d.cls for d in dets})
    matched = match_detections(dets, gts, iou_thresh)
    per, excluded = {}, []
    for c in classes:
        n_gt = sum(1 for objs in gts.values() for o in objs if o.cls == c)
        labeled = matched.get(c, [])
        if n_gt == 0:
            excluded.append(c)
            continue
        ntp = sum(l.tp for l in labeled)
        per[c] = ClassResult(average_precision(labeled, n_gt), n_gt, ntp, len(labeled) - ntp)
    m = mean_ap({c: r.ap for c, r in per.items()})
    return EvalReport(per, m, iou_thresh, excluded)


def gts_from_manifest(m) -> dict:
    return {s.image: list(s.objects) for s in m.samples}


def write_detections(dets, path):
    with open(path, "w") as fh:
        for d in dets:
            fh.write(json.dumps(d.to_json()) + "\n")


def read_detections(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(Detection(r["image"], r["class"], float(r["confidence"]), tuple(float(v) for v in r["bbox"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{n}: bad detection record ({exc})") from exc
    return out


def make_splits(classes, sizes=(5, 20), seed=0) -> dict:
    """Seeded random class subsets, named ``<size>-class``."""
    classes = sorted(classes)
    rng = np.random.default_rng(seed)
    out = {}
    for size in sizes:
        if size > len(classes) or size < 1:
            raise ValidationError(f"split size {size} out of range for {len(classes)} classes")
        pick = rng.choice(len(classes), size=size, replace=False)
        out[f"{size}-class"] = [classes[i] for i in sorted(pick)]
    return out


def save_splits(splits, path, seed):
    Path(path).write_text(json.dumps({"seed": seed, "splits": splits}, indent=2) + "\n")

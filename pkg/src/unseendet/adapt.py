"""Classifier-to-detector transfer of head weights between baselines."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tinydet import class_weight_vector, set_class_weight_vector


class DeltaTable(dict):
    """seen class -> strong-minus-weak class weight vector."""

    def save(self, path):
        doc = {"format": "tinydet-delta/1", "deltas": {c: v.tolist() for c, v in self.items()}}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != "tinydet-delta/1":
            raise ValidationError(f"{path}: not a delta table")
        return cls({c: np.asarray(v, dtype=np.float64) for c, v in doc["deltas"].items()})


def compute_deltas(strong, weak) -> DeltaTable:
    if strong.arch != weak.arch:
        raise ValidationError("strong and weak baselines have different architectures")
    if list(strong.classes) != list(weak.classes):
        raise ValidationError("strong and weak baselines must list the same classes in the same order")
    out = DeltaTable()
    for c in strong.classes:
        d = class_weight_vector(strong, c) - class_weight_vector(weak, c)
        if not np.all(np.isfinite(d)):
            raise ValidationError(f"non-finite delta for {c!r}")
        out[c] = d
    return out


def restrict_to_anchors(deltas: DeltaTable, arch, anchors) -> DeltaTable:
    """Zero every delta component that belongs to an anchor outside ``anchors``.

    An anchor that never received a box while the weak baseline trained still
    holds its initial class weights there, so strong-minus-weak on that anchor
    is not a classifier-to-detector correction.
    """
    keep = set(anchors)
    if not keep <= set(range(arch.num_anchors)):
        raise ValidationError(f"anchor indices {sorted(keep)} out of range for {arch.num_anchors} anchors")
    per = arch.head_channels + 1
    mask = np.repeat([a in keep for a in range(arch.num_anchors)], per).astype(np.float64)
    out = DeltaTable()
    for c, d in deltas.items():
        if d.shape != mask.shape:
            raise ValidationError(f"delta for {c!r} has shape {d.shape}, expected {mask.shape}")
        out[c] = d * mask
    return out


def adapt_unseen(cu, u, deltas: DeltaTable, nbrs):
    """Add the similarity-weighted neighbour deltas to the class-``u`` head weights.

    No training happens here; every parameter outside the class-``u`` score
    channels is returned unchanged.
    """
    w = class_weight_vector(cu, u)
    correction = np.zeros_like(w)
    for c, weight in nbrs.neighbors:
        if c not in deltas:
            raise ValidationError(f"neighbour {c!r} has no delta")
        d = deltas[c]
        if d.shape != w.shape:
            raise ValidationError(f"delta for {c!r} has shape {d.shape}, expected {w.shape}")
        correction += weight * d
    return set_class_weight_vector(cu, u, w + correction)

"""Raw grid -> scored boxes, with per-class greedy NMS."""

from __future__ import annotations

import numpy as np

from ..evalmap import Detection, iou
from .model import BOX_FIELDS, ArchConfig


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def nms(dets, iou_thresh):
    """Greedy suppression; ``dets`` must already be in ranking order."""
    kept = []
    for d in dets:
        if all(k.cls != d.cls or iou(k.bbox, d.bbox) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


def decode(raw, arch: ArchConfig, classes, conf_thresh=0.005, nms_iou=0.45, image_id=None):
    raw = np.asarray(raw, dtype=np.float64)
    g, na, s = arch.grid, arch.num_anchors, arch.input_size
    obj = sigmoid(raw[..., 4])
    probs = softmax(raw[..., BOX_FIELDS:])
    conf = obj[..., None] * probs  # (G, G, A, C)

    rows, cols = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    anchors = np.asarray(arch.anchors)
    tw = np.clip(raw[..., 2], -8, 8)
    th = np.clip(raw[..., 3], -8, 8)
    cx = (cols[..., None] + sigmoid(raw[..., 0])) / g * s
    cy = (rows[..., None] + sigmoid(raw[..., 1])) / g * s
    bw = anchors[:, 0] * np.exp(tw) * s
    bh = anchors[:, 1] * np.exp(th) * s
    x0 = np.clip(cx - bw / 2, 0, s)
    x1 = np.clip(cx + bw / 2, 0, s)
    y0 = np.clip(cy - bh / 2, 0, s)
    y1 = np.clip(cy + bh / 2, 0, s)

    cand = []
    for r, c, a, k in zip(*np.nonzero(conf > conf_thresh)):
        if x1[r, c, a] <= x0[r, c, a] or y1[r, c, a] <= y0[r, c, a]:
            continue
        cell = (r * g + c) * na + a
        box = (float(x0[r, c, a]), float(y0[r, c, a]), float(x1[r, c, a]), float(y1[r, c, a]))
        cand.append((-conf[r, c, a, k], cell, k, Detection(image_id, classes[k], float(conf[r, c, a, k]), box)))
    cand.sort(key=lambda t: t[:3])
    return nms([t[3] for t in cand], nms_iou)

"""YOLO-style loss on the raw grid."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

LAMBDA_COORD = 5.0
LAMBDA_NOOBJ = 0.5


def _wh_iou(w1, h1, w2, h2):
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def assign(boxes, arch):
    """Responsible (row, col, anchor) for a box given in image fractions.

    The cell holds the box centre; the anchor is the one overlapping the box
    best when both are centred at the same point.
    """
    x0, y0, x1, y1 = boxes
    g = arch.grid
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    col = min(int(cx * g), g - 1)
    row = min(int(cy * g), g - 1)
    bw, bh = x1 - x0, y1 - y0
    ious = [_wh_iou(bw, bh, aw, ah) for aw, ah in arch.anchors]
    a = int(np.argmax(ious))
    return row, col, a, (cx * g - col, cy * g - row, np.log(bw / arch.anchors[a][0]), np.log(bh / arch.anchors[a][1]))


def supervised_anchors(targets, arch) -> tuple:
    """Anchors that are responsible for at least one box in ``targets``."""
    return tuple(sorted({assign(b, arch)[2] for objs in targets for _, b in objs}))


def build_targets(targets, arch, class_index: dict):
    """Dense target arrays for a batch of per-image [(class, box)] lists."""
    n, g, na = len(targets), arch.grid, arch.num_anchors
    resp = np.zeros((n, g, g, na), dtype=bool)
    box = np.zeros((n, g, g, na, 4))
    cls = np.zeros((n, g, g, na), dtype=np.int64)
    for i, objs in enumerate(targets):
        for c, b in objs:
            r, col, a, t = assign(b, arch)
            resp[i, r, col, a] = True
            box[i, r, col, a] = t
            cls[i, r, col, a] = class_index[c]
    return resp, box, cls


def yolo_loss(raw: torch.Tensor, resp, box, cls):
    """Returns (total, {localization, objectness, classification}), averaged over images."""
    n = raw.shape[0]
    resp_t = torch.as_tensor(resp)
    obj_logit = raw[..., 4]
    obj_target = resp_t.to(raw.dtype)
    bce = F.binary_cross_entropy_with_logits(obj_logit, obj_target, reduction="none")
    obj = (bce * torch.where(resp_t, 1.0, LAMBDA_NOOBJ).to(raw.dtype)).sum()
    if resp_t.any():
        p = raw[resp_t]
        t = torch.as_tensor(box, dtype=raw.dtype)[resp_t]
        xy = (torch.sigmoid(p[:, :2]) - t[:, :2]).pow(2).sum()
        wh = (p[:, 2:4] - t[:, 2:4]).pow(2).sum()
        loc = LAMBDA_COORD * (xy + wh)
        clf = F.cross_entropy(p[:, 5:], torch.as_tensor(cls)[resp_t], reduction="sum")
    else:
        loc = raw.sum() * 0.0
        clf = raw.sum() * 0.0
    total = (loc + obj + clf) / n
    return total, {"localization": loc / n, "objectness": obj / n, "classification": clf / n}


def compute_loss(m, raw, gts):
    """Loss of one image's raw grid (numpy, G x G x A x 5+C) against its BoxLabels."""
    arch = m.arch
    s = arch.input_size
    objs = [(o.cls, (o.bbox[0] / s, o.bbox[1] / s, o.bbox[2] / s, o.bbox[3] / s)) for o in gts]
    idx = {c: i for i, c in enumerate(m.classes)}
    resp, box, cls = build_targets([objs], arch, idx)
    raw_t = torch.as_tensor(np.asarray(raw, dtype=np.float64))[None]
    total, parts = yolo_loss(raw_t, resp, box, cls)
    return float(total), {k: float(v) for k, v in parts.items()}

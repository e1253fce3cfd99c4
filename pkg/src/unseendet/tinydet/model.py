"""Grid detector: four stride-2 conv blocks and a 1x1 prediction head.

Parameters live as float64 numpy arrays keyed by layer name so that head
slices can be read and written exactly; torch is only used for arithmetic.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import UnknownNameError, ValidationError

BOX_FIELDS = 5  # tx, ty, tw, th, objectness logit
LEAK = 0.1


@dataclass(frozen=True)
class ArchConfig:
    input_size: int = 96
    grid: int = 6
    anchors: tuple = ((0.33, 0.33), (0.8, 0.8))
    head_channels: int = 64
    backbone: tuple = (16, 32, 48)
    block_depth: int = 2  # convs per block: one stride-2, the rest stride-1

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(tuple(float(v) for v in a) for a in self.anchors))
        object.__setattr__(self, "backbone", tuple(int(c) for c in self.backbone))
        if self.input_size % 16:
            raise ValidationError(f"input_size {self.input_size} must be divisible by 16")
        if self.grid != self.input_size // 16:
            raise ValidationError(f"grid must equal input_size / 16 = {self.input_size // 16}")
        if not self.anchors:
            raise ValidationError("at least one anchor is required")
        if len(self.backbone) != 3:
            raise ValidationError("backbone lists the widths of the first three blocks")
        if self.block_depth < 1:
            raise ValidationError("block_depth must be >= 1")

    @property
    def channels(self):
        return (3, *self.backbone, self.head_channels)

    @property
    def num_anchors(self):
        return len(self.anchors)

    def to_dict(self):
        return {
            "input_size": self.input_size,
            "grid": self.grid,
            "anchors": [list(a) for a in self.anchors],
            "head_channels": self.head_channels,
            "backbone": list(self.backbone),
            "block_depth": self.block_depth,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_size"], d["grid"], tuple(map(tuple, d["anchors"])), d["head_channels"],
                   tuple(d["backbone"]), d.get("block_depth", 1))


def conv_layers(arch: ArchConfig):
    """(name, in, out, stride) for every backbone convolution."""
    ch = arch.channels
    out = []
    for i in range(4):
        for j in range(arch.block_depth):
            name = f"conv{i + 1}" if arch.block_depth == 1 else f"conv{i + 1}{'abcdefgh'[j]}"
            out.append((name, ch[i] if j == 0 else ch[i + 1], ch[i + 1], 2 if j == 0 else 1))
    return out


def param_shapes(arch: ArchConfig, n_classes: int) -> dict:
    shapes = {}
    ch = arch.channels
    for name, cin, cout, _stride in conv_layers(arch):
        shapes[f"{name}.weight"] = (cout, cin, 3, 3)
        shapes[f"{name}.bias"] = (cout,)
    out = arch.num_anchors * (BOX_FIELDS + n_classes)
    shapes["head.weight"] = (out, arch.head_channels)
    shapes["head.bias"] = (out,)
    return shapes


@dataclass
class DetectorModel:
    arch: ArchConfig
    classes: list
    params: dict
    rng_seed: int = 0
    history: list = field(default_factory=list)

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def head_out(self):
        return self.arch.num_anchors * (BOX_FIELDS + self.n_classes)

    def class_index(self, c):
        try:
            return self.classes.index(c)
        except ValueError:
            raise UnknownNameError(c) from None

    def copy(self) -> "DetectorModel":
        return DetectorModel(self.arch, list(self.classes), {k: v.copy() for k, v in self.params.items()},
                             self.rng_seed, copy.deepcopy(self.history))

    def params_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype=np.float64).tobytes())
        return h.hexdigest()


def init_model(arch: ArchConfig, classes, seed: int) -> DetectorModel:
    classes = list(classes)
    if not classes:
        raise ValidationError("a detector needs at least one class")
    if len(set(classes)) != len(classes):
        dup = sorted({c for c in classes if classes.count(c) > 1})
        raise ValidationError(f"duplicate classes: {', '.join(dup)}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(arch, len(classes)).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in) if name.startswith("conv") else np.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return DetectorModel(arch, classes, params, seed)


def torch_params(m: DetectorModel, dtype=torch.float32, requires_grad=False) -> dict:
    return {k: torch.tensor(v, dtype=dtype, requires_grad=requires_grad) for k, v in m.params.items()}


def forward_tensor(tp: dict, arch: ArchConfig, n_classes: int, x: torch.Tensor) -> torch.Tensor:
    """(N, 3, S, S) -> (N, G, G, A, 5 + C) raw predictions."""
    h = x
    for name, _cin, _cout, stride in conv_layers(arch):
        h = F.leaky_relu(F.conv2d(h, tp[f"{name}.weight"], tp[f"{name}.bias"], stride=stride, padding=1), LEAK)
    w = tp["head.weight"]
    out = F.conv2d(h, w.reshape(*w.shape, 1, 1), tp["head.bias"])
    n, _, g, _ = out.shape
    out = out.reshape(n, arch.num_anchors, BOX_FIELDS + n_classes, g, g)
    return out.permute(0, 3, 4, 1, 2)


def _as_batch(m: DetectorModel, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    s = m.arch.input_size
    if x.ndim != 4 or x.shape[1:] != (3, s, s):
        raise ValidationError(f"expected image(s) of shape (3, {s}, {s}), got {np.shape(images)}")
    return x


def forward(m: DetectorModel, images, dtype=torch.float32) -> np.ndarray:
    """Raw grid for one image (G, G, A, 5+C) or a batch (N, G, G, A, 5+C)."""
    single = np.ndim(images) == 3
    x = _as_batch(m, images)
    with torch.no_grad():
        out = forward_tensor(torch_params(m, dtype), m.arch, m.n_classes, torch.tensor(x, dtype=dtype))
    out = out.to(torch.float64).numpy()
    return out[0] if single else out


def rename_slot(m: DetectorModel, old: str, new: str) -> DetectorModel:
    """Relabel a class slot; weights are untouched."""
    idx = m.class_index(old)
    if new in m.classes:
        raise ValidationError(f"class {new!r} already present in the detector")
    out = m.copy()
    out.classes[idx] = new
    return out


def _class_rows(m: DetectorModel, c: str):
    idx = m.class_index(c)
    stride = BOX_FIELDS + m.n_classes
    return [a * stride + BOX_FIELDS + idx for a in range(m.arch.num_anchors)]


def class_weight_vector(m: DetectorModel, c: str) -> np.ndarray:
    """Class-score head weights and bias for ``c``, anchors concatenated."""
    w, b = m.params["head.weight"], m.params["head.bias"]
    return np.concatenate([np.append(w[r], b[r]) for r in _class_rows(m, c)])


def weight_vector_length(arch: ArchConfig) -> int:
    return arch.num_anchors * (arch.head_channels + 1)


def set_class_weight_vector(m: DetectorModel, c: str, v) -> DetectorModel:
    v = np.asarray(v, dtype=np.float64)
    want = weight_vector_length(m.arch)
    if v.shape != (want,):
        raise ValidationError(f"weight vector for {c!r} must have length {want}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("weight vector has non-finite entries")
    out = m.copy()
    f = m.arch.head_channels + 1
    for a, r in enumerate(_class_rows(m, c)):
        out.params["head.weight"][r] = v[a * f:a * f + f - 1]
        out.params["head.bias"][r] = v[a * f + f - 1]
    return out

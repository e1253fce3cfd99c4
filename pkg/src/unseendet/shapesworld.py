"""Procedural shapes dataset: detection scenes, iconic images, directory ingestion.

On-disk layout of a manifest root::

    <root>/images/*.png
    <root>/annotations.jsonl   one JSON object per sample
    <root>/meta.json           kind, seed, classes, config hash
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from PIL import Image, ImageDraw

from .errors import UnseenDetError, ValidationError

log = logging.getLogger(__name__)

DETECTION = "detection"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class BoxLabel:
    cls: str
    bbox: tuple  # (xmin, ymin, xmax, ymax), integer pixels, max exclusive


@dataclass
class Sample:
    image: str  # relative to the manifest root
    width: int
    height: int
    objects: list


@dataclass
class DatasetManifest:
    root: Path
    samples: list
    classes: list
    kind: str
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def image_path(self, s: Sample) -> Path:
        return Path(self.root) / s.image

    def content_hash(self) -> str:
        """sha256 over annotations and image bytes, in sample order."""
        h = hashlib.sha256()
        for s in self.samples:
            h.update(json.dumps(_sample_record(s), sort_keys=True).encode())
            p = self.image_path(s)
            if p.exists():
                h.update(p.read_bytes())
        return h.hexdigest()


@dataclass(frozen=True)
class GeneratorConfig:
    size: int = 96
    min_objects: int = 1
    max_objects: int = 4
    min_extent: int = 18  # pixels, longest side of a detection object
    max_extent: int = 72
    noise: float = 8.0
    max_distractors: int = 3
    min_cover: float = 0.62  # iconic object extent / min(image side)
    max_cover: float = 0.85
    focus: Optional[str] = None  # detection only: every image contains this class

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --------------------------------------------------------------------------
# shape geometry, in unit coordinates; each shape is a list of (fill, polygon)
# where fill=255 paints and fill=0 cuts.


def _ngon(n, r=1.0, phase=-math.pi / 2, cx=0.0, cy=0.0, sx=1.0, sy=1.0):
    a = phase + 2 * math.pi * np.arange(n) / n
    return np.stack([cx + sx * r * np.cos(a), cy + sy * r * np.sin(a)], axis=1)


def _ellipse(rx, ry, cx=0.0, cy=0.0, n=48):
    return _ngon(n, 1.0, 0.0, cx, cy, rx, ry)


def _arc(a0, a1, n=25):
    a = np.linspace(a0, a1, n)
    return np.stack([np.cos(a), -np.sin(a) + 0.5], axis=1)


def _star(points, inner):
    a = -math.pi / 2 + math.pi * np.arange(2 * points) / points
    r = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def _rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _poly(*pts):
    return np.array(pts, dtype=float)


def _fleece(bumps):
    parts = [(255, _ellipse(0.75, 0.45, -0.1, 0.0))]
    for k in range(bumps):
        t = math.pi * (k + 0.5) / bumps
        parts.append((255, _ellipse(0.28, 0.28, -0.1 - 0.62 * math.cos(t), -0.3 * math.sin(t) - 0.05)))
    for x in (-0.55, -0.25, 0.1, 0.35):
        parts.append((255, _rect(x, 0.3, x + 0.1, 0.8)))
    return parts


SHAPES = {
    "triangle": lambda: [(255, _ngon(3))],
    "square": lambda: [(255, _ngon(4, phase=math.pi / 4))],
    "diamond": lambda: [(255, _poly((0, -1), (0.6, 0), (0, 1), (-0.6, 0)))],
    "trapezoid": lambda: [(255, _poly((-1, 0.55), (1, 0.55), (0.45, -0.55), (-0.45, -0.55)))],
    "pentagon": lambda: [(255, _ngon(5))],
    "hexagon": lambda: [(255, _ngon(6))],
    "heptagon": lambda: [(255, _ngon(7))],
    "octagon": lambda: [(255, _ngon(8, phase=math.pi / 8))],
    "circle": lambda: [(255, _ellipse(1, 1))],
    "ellipse": lambda: [(255, _ellipse(1, 0.55))],
    "ring": lambda: [(255, _ellipse(1, 1)), (0, _ellipse(0.55, 0.55))],
    "semicircle": lambda: [(255, _arc(0, math.pi))],
    "crescent": lambda: [(255, _ellipse(1, 1)), (0, _ellipse(0.85, 0.85, 0.45, 0.0))],
    "star4": lambda: [(255, _star(4, 0.38))],
    "star5": lambda: [(255, _star(5, 0.45))],
    "star6": lambda: [(255, _star(6, 0.55))],
    "star8": lambda: [(255, _star(8, 0.62))],
    "arrow": lambda: [(255, _rect(-1, -0.18, 0.2, 0.18)), (255, _poly((0.2, -0.6), (1, 0), (0.2, 0.6)))],
    "chevron": lambda: [(255, _poly((-0.8, -1), (0.2, 0), (-0.8, 1), (-0.35, 1), (0.65, 0), (-0.35, -1)))],
    "double_arrow": lambda: [
        (255, _rect(-0.45, -0.15, 0.45, 0.15)),
        (255, _poly((0.35, -0.55), (1, 0), (0.35, 0.55))),
        (255, _poly((-0.35, -0.55), (-1, 0), (-0.35, 0.55))),
    ],
    "plus": lambda: [(255, _rect(-1, -0.28, 1, 0.28)), (255, _rect(-0.28, -1, 0.28, 1))],
    "xcross": lambda: [
        (255, _poly((-1, -0.72), (-0.72, -1), (1, 0.72), (0.72, 1))),
        (255, _poly((1, -0.72), (0.72, -1), (-1, 0.72), (-0.72, 1))),
    ],
    "tee": lambda: [(255, _rect(-1, -1, 1, -0.5)), (255, _rect(-0.25, -0.5, 0.25, 1))],
    "bullseye": lambda: [(255, _ellipse(1, 1)), (0, _ellipse(0.7, 0.7)), (255, _ellipse(0.38, 0.38))],
    "house": lambda: [(255, _rect(-0.7, -0.1, 0.7, 1)), (255, _poly((-1, -0.1), (0, -1), (1, -0.1)))],
    "keyhole": lambda: [(255, _ellipse(0.55, 0.55, 0, -0.4)), (255, _poly((-0.2, -0.2), (0.2, -0.2), (0.55, 1), (-0.55, 1)))],
    "hourglass": lambda: [(255, _poly((-0.8, -1), (0.8, -1), (0, 0))), (255, _poly((-0.8, 1), (0.8, 1), (0, 0)))],
    "sheeplike": lambda: _fleece(5) + [(255, _ellipse(0.22, 0.18, 0.78, -0.25))],
    "goatlike": lambda: _fleece(2) + [
        (255, _ellipse(0.22, 0.16, 0.78, -0.3)),
        (255, _poly((0.65, -0.4), (0.55, -1), (0.75, -0.42))),
        (255, _poly((0.85, -0.42), (0.95, -1), (0.95, -0.4))),
        (255, _poly((0.85, -0.15), (0.95, 0.2), (1.0, -0.15))),
    ],
    "fishlike": lambda: [(255, _ellipse(0.7, 0.4, -0.15, 0)), (255, _poly((0.45, 0), (1, -0.5), (1, 0.5))), (0, _ellipse(0.08, 0.08, -0.55, -0.08))],
}

VOCABULARY = tuple(sorted(SHAPES))


def _placed(cls, rot, extent, cx, cy):
    """Rotate, scale to ``extent`` pixels on the longer side, centre at (cx, cy)."""
    parts = SHAPES[cls]()
    c, s = math.cos(rot), math.sin(rot)
    R = np.array([[c, -s], [s, c]])
    parts = [(f, p @ R.T) for f, p in parts]
    painted = np.vstack([p for f, p in parts if f])
    lo, hi = painted.min(axis=0), painted.max(axis=0)
    scale = extent / float((hi - lo).max())
    mid = (lo + hi) / 2
    return [(f, (p - mid) * scale + [cx, cy]) for f, p in parts]


def _mask(size, parts):
    m = Image.new("L", (size, size), 0)
    d = ImageDraw.Draw(m)
    for fill, pts in parts:
        d.polygon([tuple(q) for q in pts.tolist()], fill=fill)
    return m


def _background(rng, size, cfg):
    base = rng.uniform(40, 215, size=3)
    px = base + rng.normal(0, cfg.noise, size=(size, size, 3))
    img = Image.fromarray(np.clip(px, 0, 255).astype(np.uint8), "RGB")
    d = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(0, cfg.max_distractors + 1))):
        pts = rng.uniform(0, size, size=(2, 2))
        colour = tuple(int(v) for v in rng.integers(0, 256, size=3))
        d.line([tuple(pts[0]), tuple(pts[1])], fill=colour, width=int(rng.integers(1, 3)))
    return img, base


def _object_colour(rng, base):
    # keep the object visibly off the background mean
    while True:
        col = rng.integers(0, 256, size=3)
        if np.abs(col - base).sum() > 150:
            return tuple(int(v) for v in col)


def _iou(a, b):
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union else 0.0


def _check_request(classes, n_images):
    if n_images < 1:
        raise ValidationError(f"n_images must be >= 1, got {n_images}")
    if not classes:
        raise ValidationError("at least one class is required")
    bad = [c for c in classes if c not in SHAPES]
    if bad:
        raise ValidationError(f"classes not renderable: {', '.join(bad)}")


class _Deck:
    """Balanced class draws: shuffled copies of the class list, dealt in turn."""

    def __init__(self, classes, rng):
        self.classes = list(classes)
        self.rng = rng
        self.cards: list = []

    def draw(self):
        if not self.cards:
            self.cards = [self.classes[i] for i in self.rng.permutation(len(self.classes))]
        return self.cards.pop()


def _image_rng(seed, index):
    return np.random.default_rng([seed, index])


def _render_scene(rng, cfg, plan):
    size = cfg.size
    img, base = _background(rng, size, cfg)
    objects = []
    for cls in plan:
        for _attempt in range(30):
            extent = float(rng.uniform(cfg.min_extent, cfg.max_extent))
            half = extent / 2 + 1
            cx, cy = rng.uniform(half, size - half, size=2)
            parts = _placed(cls, float(rng.uniform(0, 2 * math.pi)), extent, cx, cy)
            mask = _mask(size, parts)
            box = mask.getbbox()
            if box is None or box[2] - box[0] < 4 or box[3] - box[1] < 4:
                continue
            if all(_iou(box, o.bbox) < 0.1 for o in objects):
                break
        else:
            continue
        img.paste(Image.new("RGB", (size, size), _object_colour(rng, base)), (0, 0), mask)
        objects.append(BoxLabel(cls, tuple(int(v) for v in box)))
    return img, objects


def _render_iconic(rng, cfg, cls):
    size = cfg.size
    img, base = _background(rng, size, cfg)
    extent = float(rng.uniform(cfg.min_cover, cfg.max_cover)) * size
    jitter = rng.uniform(-0.04, 0.04, size=2) * size
    parts = _placed(cls, float(rng.uniform(0, 2 * math.pi)), extent, size / 2 + jitter[0], size / 2 + jitter[1])
    img.paste(Image.new("RGB", (size, size), _object_colour(rng, base)), (0, 0), _mask(size, parts))
    return img, [BoxLabel(cls, (0, 0, size, size))]


def _write_set(root, kind, classes, n_images, seed, cfg, render):
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(n_images):
        img, objects = render(i)
        name = f"images/{i:05d}.png"
        img.save(root / name, format="PNG", optimize=False)
        samples.append(Sample(name, cfg.size, cfg.size, objects))
    present = {o.cls for s in samples for o in s.objects}
    order = [c for c in classes if c in present]
    m = DatasetManifest(root, samples, order, kind, seed, {"config": asdict(cfg), "config_hash": cfg.digest()})
    save_manifest(m)
    return m


def generate_detection_set(classes, n_images, seed, cfg=GeneratorConfig(), root="."):
    """Cluttered scenes with 1-4 tightly boxed shapes per image."""
    _check_request(classes, n_images)
    if cfg.focus is not None and cfg.focus not in SHAPES:
        raise ValidationError(f"focus class {cfg.focus!r} is not renderable")
    planner = np.random.default_rng(seed)
    others = [c for c in classes if c != cfg.focus] or list(classes)
    deck = _Deck(others, planner)
    plans = []
    for _ in range(n_images):
        n = int(planner.integers(cfg.min_objects, cfg.max_objects + 1))
        plan = [deck.draw() for _ in range(n)]
        if cfg.focus is not None:
            plan[0] = cfg.focus
        plans.append(plan)

    def render(i):
        return _render_scene(_image_rng(seed, i), cfg, plans[i])

    all_classes = list(classes) if cfg.focus is None or cfg.focus in classes else [cfg.focus, *classes]
    return _write_set(root, DETECTION, all_classes, n_images, seed, cfg, render)


def generate_classification_set(classes, n_images, seed, cfg=GeneratorConfig(), root="."):
    """Iconic images: one large centred shape, labelled with a full-image box."""
    _check_request(classes, n_images)
    deck = _Deck(classes, np.random.default_rng(seed))
    plan = [deck.draw() for _ in range(n_images)]

    def render(i):
        return _render_iconic(_image_rng(seed, i), cfg, plan[i])

    return _write_set(root, CLASSIFICATION, list(classes), n_images, seed, cfg, render)


IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff"}


def ingest_directory(path, label: str) -> DatasetManifest:
    """Image-level labelled images from a folder: every file becomes one full-image box."""
    path = Path(path)
    if not path.is_dir():
        raise ValidationError(f"not a directory: {path}")
    files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise ValidationError(f"empty image directory: {path}")
    samples = []
    for p in files:
        try:
            with Image.open(p) as im:
                im.load()
                w, h = im.size
        except Exception as exc:  # PIL raises a zoo of types on corrupt files
            log.warning("skipping undecodable file %s: %s", p, exc)
            continue
        samples.append(Sample(p.name, w, h, [BoxLabel(label, (0, 0, w, h))]))
    if not samples:
        raise ValidationError(f"no decodable images in {path}")
    return DatasetManifest(path, samples, [label], CLASSIFICATION, 0, {"source": str(path)})


class ImageFetcher(Protocol):
    def fetch(self, label: str, dest: Path) -> DatasetManifest: ...


@dataclass
class DirectoryFetcher:
    """Stands in for a web image search: reads whatever sits in ``path``."""

    path: Path

    def fetch(self, label, dest=None):
        m = ingest_directory(self.path, label)
        if dest is None:
            return m
        return copy_manifest(m, dest)


@dataclass
class SyntheticFetcher:
    n_images: int
    seed: int
    cfg: GeneratorConfig = GeneratorConfig()

    def fetch(self, label, dest):
        return generate_classification_set([label], self.n_images, self.seed, self.cfg, dest)


def copy_manifest(m: DatasetManifest, dest) -> DatasetManifest:
    """Re-encode every image as PNG under ``dest/images`` and save the manifest there."""
    dest = Path(dest)
    (dest / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for i, s in enumerate(m.samples):
        name = f"images/{i:05d}.png"
        with Image.open(m.image_path(s)) as im:
            im.convert("RGB").save(dest / name, format="PNG")
        samples.append(Sample(name, s.width, s.height, list(s.objects)))
    out = DatasetManifest(dest, samples, list(m.classes), m.kind, m.seed, dict(m.meta))
    save_manifest(out)
    return out


def _sample_record(s: Sample):
    return {
        "image": s.image,
        "width": s.width,
        "height": s.height,
        "objects": [{"class": o.cls, "bbox": list(o.bbox)} for o in s.objects],
    }


def save_manifest(m: DatasetManifest):
    root = Path(m.root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "annotations.jsonl", "w") as fh:
        for s in m.samples:
            fh.write(json.dumps(_sample_record(s)) + "\n")
    meta = {"kind": m.kind, "seed": m.seed, "classes": list(m.classes), **m.meta}
    meta.setdefault("config_hash", None)
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    try:
        meta = json.loads((root / "meta.json").read_text())
        samples = []
        with open(root / "annotations.jsonl") as fh:
            for line in fh:
                if not line.strip():
                    continue
                r = json.loads(line)
                objs = [BoxLabel(o["class"], tuple(int(v) for v in o["bbox"])) for o in r["objects"]]
                samples.append(Sample(r["image"], int(r["width"]), int(r["height"]), objs))
    except FileNotFoundError as exc:
        raise ValidationError(f"no manifest at {root}: {exc}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"malformed manifest at {root}: {exc}") from exc
    extra = {k: v for k, v in meta.items() if k not in ("kind", "seed", "classes")}
    return DatasetManifest(root, samples, list(meta["classes"]), meta["kind"], int(meta["seed"]), extra)


def validate_manifest(m: DatasetManifest) -> list:
    """Every broken invariant as a human-readable line; empty means valid."""
    problems = []
    present = set()
    for s in m.samples:
        tag = f"sample {s.image}"
        p = m.image_path(s)
        if not p.exists():
            problems.append(f"{tag}: image file missing")
        else:
            try:
                with Image.open(p) as im:
                    if im.size != (s.width, s.height):
                        problems.append(f"{tag}: decoded size {im.size} != declared {(s.width, s.height)}")
            except Exception as exc:
                problems.append(f"{tag}: undecodable image ({exc})")
        if m.kind == DETECTION and not s.objects:
            problems.append(f"{tag}: detection sample without objects")
        if m.kind == CLASSIFICATION:
            if len(s.objects) != 1:
                problems.append(f"{tag}: classification sample must have exactly one object")
            elif tuple(s.objects[0].bbox) != (0, 0, s.width, s.height):
                problems.append(f"{tag}: classification box is not the full image")
        for o in s.objects:
            present.add(o.cls)
            x0, y0, x1, y1 = o.bbox
            if not (0 <= x0 < x1 <= s.width and 0 <= y0 < y1 <= s.height):
                problems.append(f"{tag}: bbox {o.bbox} of {o.cls} outside 0..{s.width}x0..{s.height} or empty")
    if present != set(m.classes):
        problems.append(f"manifest classes {sorted(m.classes)} != classes in samples {sorted(present)}")
    if m.kind not in (DETECTION, CLASSIFICATION):
        problems.append(f"unknown manifest kind {m.kind!r}")
    return problems


def load_arrays(m: DatasetManifest, size: int):
    """Decode all images to float32 (N, 3, size, size) in [0, 1].

    Boxes come back per image as a list of (class, (x0, y0, x1, y1)) in
    fractions of the image side, so resizing needs no further bookkeeping.
    """
    images = np.empty((len(m.samples), 3, size, size), dtype=np.float32)
    targets = []
    for i, s in enumerate(m.samples):
        try:
            with Image.open(m.image_path(s)) as im:
                im = im.convert("RGB")
                if im.size != (size, size):
                    im = im.resize((size, size), Image.BILINEAR)
                images[i] = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
        except OSError as exc:
            raise UnseenDetError(f"cannot read {m.image_path(s)}: {exc}") from exc
        targets.append([(o.cls, (o.bbox[0] / s.width, o.bbox[1] / s.height,
                                 o.bbox[2] / s.width, o.bbox[3] / s.height)) for o in s.objects])
    return images, targets

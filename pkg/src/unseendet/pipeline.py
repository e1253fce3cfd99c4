"""Offline baselines, the online unseen-class request, sweeps and reports.

Run directory layout (append-only; every stage writes its manifest first)::

    <run_dir>/baselines/{strong,weak}.json, deltas.json, manifest.json
    <run_dir>/finetune/<key>/cu.json, manifest.json     shared by modes and alphas
    <run_dir>/requests/<run_id>/record.json, stages/, images/, ...
    <run_dir>/sweeps/alpha-<u>-<hash>.csv
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .adapt import DeltaTable, adapt_unseen, compute_deltas, restrict_to_anchors
from .budget import plan_budget, measure_step_time
from .errors import UnseenDetError, ValidationError
from .evalmap import EvalReport, evaluate as evaluate_detections, gts_from_manifest, make_splits, save_splits, write_detections
from .shapesworld import (
    SHAPES,
    DirectoryFetcher,
    GeneratorConfig,
    SyntheticFetcher,
    generate_classification_set,
    generate_detection_set,
    load_manifest,
    validate_manifest,
)
from .simrank import SimilarityTable, Thresholds, average_similarity, build_table, topk_neighbors
from .taxonomy import load_taxonomy, nearest_semantic, resolve_alias
from .tinydet import (
    ArchConfig,
    TensorData,
    TrainSchedule,
    decode,
    forward,
    init_model,
    load_checkpoint,
    rename_slot,
    save_checkpoint,
    supervised_anchors,
    train,
    unseen_schedule,
)

log = logging.getLogger(__name__)

MODES = ("no_adapt", "finetune", "finetune_adapt")
DELTA_ANCHORS = ("supervised", "all")
DEFAULT_SEEN = ("triangle", "square", "pentagon", "circle", "ring", "star5", "arrow", "plus", "bullseye", "sheeplike")
DEFAULT_UNSEEN = ("hexagon", "ellipse", "star6", "goatlike")
LADDER_NOTE = (
    "no_adapt = fine-tune starting from the weak (classification) baseline; "
    "finetune = fine-tune starting from the strong (detection) baseline with the source slot renamed; "
    "finetune_adapt = finetune plus weighted nearest-neighbour delta adaptation"
)


# --------------------------------------------------------------------------
# configuration


@dataclass
class DataConfig:
    n_detection: int = 400
    n_classification: int = 400
    n_unseen_images: int = 120
    n_test: int = 100
    min_test_images: int = 100  # test images that must contain the unseen class
    generator: dict = field(default_factory=dict)  # GeneratorConfig overrides


@dataclass
class BaselineConfig:
    epochs: int = 30
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    optimizer: str = "adam"
    weight_decay: float = 0.0
    batch_size: int = 16


@dataclass
class FinetuneConfig:
    lr: float = 1e-4
    optimizer: str = "sgd"
    scope: str = "classes"
    clip_norm: Optional[float] = None
    batch_size: int = 16


@dataclass
class BudgetConfig:
    response_time_s: float = 600.0
    scale: float = 0.1
    step_time_s: Optional[float] = None  # pin t instead of measuring it
    warmup: int = 3
    sample: int = 10

    @property
    def seconds(self) -> float:
        return self.response_time_s * self.scale


@dataclass
class EvalConfig:
    conf_thresh: float = 0.005
    nms_iou: float = 0.45
    iou: float = 0.5


@dataclass
class PipelineConfig:
    taxonomy: Optional[str] = None  # None = bundled ShapesWorld taxonomy
    data_root: str = "work/data"
    run_dir: str = "work/runs"
    seen_classes: list = field(default_factory=lambda: list(DEFAULT_SEEN))
    unseen_classes: list = field(default_factory=lambda: list(DEFAULT_UNSEEN))
    arch: dict = field(default_factory=dict)  # ArchConfig overrides
    data: DataConfig = field(default_factory=DataConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    alpha: float = 0.6
    k: int = 10
    thresholds: dict = field(default_factory=lambda: {"v": 0.0, "s": 0.0})
    exclude_source: bool = False
    delta_anchors: str = "supervised"  # anchors that receive deltas: weak-supervised only, or all
    mode: str = "finetune_adapt"
    seed: int = 1234  # data and baselines
    request_seed: Optional[int] = None  # online stage; defaults to seed

    def validate(self):
        tax = load_taxonomy(self.taxonomy)
        self.seen_classes = [resolve_alias(tax, c) for c in self.seen_classes]
        self.unseen_classes = [resolve_alias(tax, c) for c in self.unseen_classes]
        if not self.seen_classes:
            raise ValidationError("seen_classes is empty")
        if len(set(self.seen_classes)) != len(self.seen_classes):
            raise ValidationError("seen_classes has duplicates")
        both = sorted(set(self.seen_classes) & set(self.unseen_classes))
        if both:
            raise ValidationError(f"classes listed as both seen and unseen: {', '.join(both)}")
        missing = [c for c in self.seen_classes if c not in SHAPES]
        if missing:
            raise ValidationError(f"seen classes without a renderer: {', '.join(missing)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.delta_anchors not in DELTA_ANCHORS:
            raise ValidationError(f"delta_anchors must be one of {', '.join(DELTA_ANCHORS)}, got {self.delta_anchors!r}")
        if not self.budget.seconds > 0:
            raise ValidationError("budget must be positive")
        if self.budget.step_time_s is not None and not self.budget.step_time_s > 0:
            raise ValidationError("budget.step_time_s must be positive")
        if set(self.thresholds) - {"v", "s"}:
            raise ValidationError("thresholds takes keys v and s")
        self.arch_config()
        self.generator_config()
        self.baseline_schedule()
        self.finetune_schedule(1)
        return self

    # derived objects
    def arch_config(self) -> ArchConfig:
        try:
            return ArchConfig(**self.arch)
        except TypeError as exc:
            raise ValidationError(f"bad arch settings: {exc}") from exc

    def generator_config(self, **kw) -> GeneratorConfig:
        try:
            return GeneratorConfig(**{**self.data.generator, **kw})
        except TypeError as exc:
            raise ValidationError(f"bad data.generator settings: {exc}") from exc

    def baseline_schedule(self) -> TrainSchedule:
        b = self.baseline
        return TrainSchedule("baseline", b.lr_initial, b.lr_final, "exponential", b.epochs, b.batch_size,
                             b.optimizer, b.weight_decay)

    def finetune_schedule(self, epochs) -> TrainSchedule:
        f = self.finetune
        return unseen_schedule(epochs, f.batch_size, f.lr, optimizer=f.optimizer, scope=f.scope, clip_norm=f.clip_norm)

    def similarity_thresholds(self) -> Thresholds:
        return Thresholds(float(self.thresholds.get("v", 0.0)), float(self.thresholds.get("s", 0.0)))

    @property
    def online_seed(self) -> int:
        return self.seed if self.request_seed is None else self.request_seed

    # serialisation
    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        d = self.to_dict()
        for k in ("data_root", "run_dir"):
            d.pop(k)
        return _digest(d)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return _build(cls, d, "")

    def with_overrides(self, pairs) -> "PipelineConfig":
        d = self.to_dict()
        for pair in pairs:
            key, sep, raw = pair.partition("=")
            if not sep:
                raise ValidationError(f"override {pair!r} is not KEY=VALUE")
            _set_path(d, key.strip(), _parse_value(raw.strip()))
        return PipelineConfig.from_dict(d)


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ValidationError(f"{prefix or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kw = {}
    for name, value in d.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kw[name] = copy.deepcopy(value)
    return cls(**kw)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        if "," in raw:
            return [v.strip() for v in raw.split(",") if v.strip()]
        return raw


def _set_path(d, key, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if not isinstance(cur.get(p), dict):
            raise ValidationError(f"unknown config key: {key}")
        cur = cur[p]
    if parts[-1] not in cur:
        raise ValidationError(f"unknown config key: {key}")
    cur[parts[-1]] = value


def load_config(path=None, overrides=()) -> PipelineConfig:
    """JSON config file (any subset of keys) plus KEY=VALUE overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"no config file at {path}") from None
        except ValueError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        cfg = PipelineConfig.from_dict(doc)
    return cfg.with_overrides(overrides).validate()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _derived_seed(*parts) -> int:
    return int(_digest(list(parts))[:8], 16)


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    tmp.replace(path)
    return path


def _read_json(path):
    return json.loads(Path(path).read_text())


class _Stages:
    """Per-request stage log: a manifest is written before each stage runs."""

    def __init__(self, root):
        self.root = Path(root) / "stages"
        self.n = 0
        self.timings = {}

    def run(self, name, fn, *, timed_as=None):
        self.n += 1
        path = self.root / f"{self.n}-{name}.json"
        _write_json(path, {"stage": name, "status": "started"})
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        self.timings[timed_as or name] = self.timings.get(timed_as or name, 0.0) + dt
        _write_json(path, {"stage": name, "status": "done", "seconds": dt})
        return out


# --------------------------------------------------------------------------
# data


def _ensure(root, want: dict, make):
    """Reuse the dataset at ``root`` when its recorded request matches ``want``."""
    root = Path(root)
    stamp = root / "request.json"
    if stamp.exists() and _read_json(stamp) == want:
        return load_manifest(root)
    m = make(root)
    _write_json(stamp, want)
    return m


def seen_detection_set(cfg: PipelineConfig):
    gcfg = cfg.generator_config()
    seed = _derived_seed(cfg.seed, "detection")
    want = {"classes": cfg.seen_classes, "n": cfg.data.n_detection, "seed": seed, "config": gcfg.digest()}
    return _ensure(Path(cfg.data_root) / "seen" / "detection", want,
                   lambda r: generate_detection_set(cfg.seen_classes, cfg.data.n_detection, seed, gcfg, r))


def seen_classification_set(cfg: PipelineConfig):
    gcfg = cfg.generator_config()
    seed = _derived_seed(cfg.seed, "classification")
    want = {"classes": cfg.seen_classes, "n": cfg.data.n_classification, "seed": seed, "config": gcfg.digest()}
    return _ensure(Path(cfg.data_root) / "seen" / "classification", want,
                   lambda r: generate_classification_set(cfg.seen_classes, cfg.data.n_classification, seed, gcfg, r))


def unseen_test_set(cfg: PipelineConfig, u: str):
    """Held-out detection images: each contains ``u`` among seen-class clutter."""
    if u not in SHAPES:
        raise ValidationError(f"no renderer for {u!r}, so no synthetic test set can be built")
    gcfg = cfg.generator_config(focus=u)
    seed = _derived_seed(cfg.seed, "test", u)
    want = {"classes": cfg.seen_classes, "n": cfg.data.n_test, "seed": seed, "config": gcfg.digest()}
    m = _ensure(Path(cfg.data_root) / "unseen" / u / "test", want,
                lambda r: generate_detection_set(cfg.seen_classes, cfg.data.n_test, seed, gcfg, r))
    with_u = sum(any(o.cls == u for o in s.objects) for s in m.samples)
    if with_u < cfg.data.min_test_images:
        raise ValidationError(f"test set for {u!r} has {with_u} images containing it, "
                              f"fewer than data.min_test_images={cfg.data.min_test_images}")
    return m


def gen_data(cfg: PipelineConfig, unseen=None) -> dict:
    """Generate (or reuse) every dataset the config needs; returns content hashes."""
    out = {"seen/detection": seen_detection_set(cfg).content_hash(),
           "seen/classification": seen_classification_set(cfg).content_hash()}
    for u in unseen if unseen is not None else cfg.unseen_classes:
        out[f"unseen/{u}/test"] = unseen_test_set(cfg, u).content_hash()
    _write_json(Path(cfg.data_root) / "hashes.json", out)
    return out


# --------------------------------------------------------------------------
# offline stage


def _baseline_dir(cfg):
    return Path(cfg.run_dir) / "baselines"


def train_baselines(cfg: PipelineConfig, force=False):
    """Train D_S on the detection set and D_W on the classification set; returns both checkpoint paths."""
    det, cls = seen_detection_set(cfg), seen_classification_set(cfg)
    if list(det.classes) != list(cls.classes):
        raise ValidationError(f"class order differs between detection {det.classes} and classification {cls.classes} sets")
    root = _baseline_dir(cfg)
    want = {
        "arch": cfg.arch_config().to_dict(),
        "classes": cfg.seen_classes,
        "schedule": asdict(cfg.baseline),
        "seed": cfg.seed,
        "data": {"detection": det.content_hash(), "classification": cls.content_hash()},
    }
    manifest = root / "manifest.json"
    strong, weak = root / "strong.json", root / "weak.json"
    if not force and manifest.exists():
        doc = _read_json(manifest)
        if doc.get("request") == want and doc.get("status") == "done" and strong.exists() and weak.exists():
            log.info("baselines up to date in %s", root)
            return strong, weak
    _write_json(manifest, {"request": want, "status": "started"})
    m0 = init_model(cfg.arch_config(), cfg.seen_classes, cfg.seed)
    sched = cfg.baseline_schedule()
    timings = {}
    for name, data, path in (("strong", det, strong), ("weak", cls, weak)):
        t0 = time.perf_counter()
        model, _ = train(m0, data, sched, cfg.seed)
        timings[name] = time.perf_counter() - t0
        save_checkpoint(model, path)
        log.info("%s baseline trained in %.1fs", name, timings[name])
    s, w = load_checkpoint(strong), load_checkpoint(weak)
    compute_deltas(s, w).save(root / "deltas.json")
    _write_json(manifest, {"request": want, "status": "done", "seconds": timings})
    return strong, weak


def _load_baselines(cfg):
    root = _baseline_dir(cfg)
    doc = root / "manifest.json"
    if not doc.exists() or _read_json(doc).get("status") != "done":
        raise ValidationError(f"no trained baselines under {root}; run train-baselines first")
    s, w = load_checkpoint(root / "strong.json"), load_checkpoint(root / "weak.json")
    if s.classes != cfg.seen_classes:
        raise ValidationError("baselines were trained for a different seen-class list; retrain them")
    return s, w


def weak_supervised_anchors(cfg) -> tuple:
    """Anchors the weak baseline's image-level (full-image) boxes were assigned to."""
    m = seen_classification_set(cfg)
    targets = [[(o.cls, (o.bbox[0] / s.width, o.bbox[1] / s.height, o.bbox[2] / s.width, o.bbox[3] / s.height))
                for o in s.objects] for s in m.samples]
    return supervised_anchors(targets, cfg.arch_config())


def _load_deltas(cfg, strong, weak):
    path = _baseline_dir(cfg) / "deltas.json"
    deltas = DeltaTable.load(path) if path.exists() else compute_deltas(strong, weak)
    if cfg.delta_anchors == "supervised":
        deltas = restrict_to_anchors(deltas, strong.arch, weak_supervised_anchors(cfg))
    return deltas


# --------------------------------------------------------------------------
# online stage


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    unseen: str
    mode: str
    source: str
    seed: int
    budget: dict
    checkpoints: dict  # name -> path relative to the run dir
    timings: dict  # stage -> seconds
    eval: dict
    mAP: float
    similarity: Optional[str] = None  # relative path of the similarity CSV
    neighbors: list = field(default_factory=list)
    alpha: float = 0.6
    k: int = 10
    dataset_hashes: dict = field(default_factory=dict)
    finetune_reused: bool = False
    images: str = "synthetic"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def report(self) -> EvalReport:
        return EvalReport.from_dict(self.eval)


def _request_dir(cfg, run_id):
    return Path(cfg.run_dir) / "requests" / run_id


def load_record(cfg, run_id) -> RunRecord:
    path = _request_dir(cfg, run_id) / "record.json"
    if not path.exists():
        raise ValidationError(f"no run {run_id!r} under {cfg.run_dir}")
    return RunRecord.from_dict(_read_json(path))


def list_runs(cfg) -> list:
    root = Path(cfg.run_dir) / "requests"
    if not root.is_dir():
        return []
    return sorted(p.name for p in root.iterdir() if (p / "record.json").exists())


def _fetch_images(cfg, u, images, dest):
    if images is None:
        if u not in SHAPES:
            raise ValidationError(f"no renderer for {u!r}; pass --images DIR")
        seed = _derived_seed(cfg.seed, "unseen-train", u)
        fetcher = SyntheticFetcher(cfg.data.n_unseen_images, seed, cfg.generator_config())
    else:
        fetcher = DirectoryFetcher(Path(images))
    m = fetcher.fetch(u, dest)
    problems = validate_manifest(m)
    if problems:
        raise ValidationError(f"unusable image source for {u!r}: {problems[0]}")
    return m


def _finetune(cfg, u, start, start_name, source, images_m, stages):
    """Stage 4, cached on disk so modes and alpha sweeps share one C_u."""
    run_dir = Path(cfg.run_dir)
    key = _digest({
        "u": u, "start": start_name, "start_params": start.params_digest(), "source": source,
        "finetune": asdict(cfg.finetune), "budget_s": cfg.budget.seconds, "step_time_s": cfg.budget.step_time_s,
        "seed": cfg.online_seed, "images": images_m.content_hash(),
    })[:16]
    root = run_dir / "finetune" / key
    manifest, ckpt = root / "manifest.json", root / "cu.json"
    if manifest.exists() and ckpt.exists():
        doc = _read_json(manifest)
        if doc.get("status") == "done":
            log.info("reusing fine-tuned model %s", key)
            stages.timings["finetune"] = doc["seconds"]
            stages.timings["step_probe"] = doc.get("probe_seconds", 0.0)
            return load_checkpoint(ckpt), doc["plan"], str(ckpt.relative_to(run_dir)), True
    _write_json(manifest, {"status": "started", "u": u, "start": start_name})
    m = rename_slot(start, source, u)
    data = TensorData.from_manifest(images_m, m.arch.input_size)
    f = cfg.finetune

    def probe():
        if cfg.budget.step_time_s is not None:
            return float(cfg.budget.step_time_s)
        return measure_step_time(m, data, cfg.budget.warmup, cfg.budget.sample, f.batch_size, f.lr, cfg.online_seed,
                                 optimizer=f.optimizer, scope=f.scope, clip_norm=f.clip_norm)

    t = stages.run("step-probe", probe, timed_as="step_probe")
    plan = plan_budget(cfg.budget.seconds, len(data), f.batch_size, t).to_dict()
    plan["measured"] = cfg.budget.step_time_s is None
    log.info("fine-tuning %s from %s (%s slot): %d epochs for a %.0fs budget at t=%.4fs",
             u, start_name, source, plan["epochs"], cfg.budget.seconds, t)
    cu, _ = stages.run("finetune", lambda: train(m, data, cfg.finetune_schedule(plan["epochs"]), cfg.online_seed))
    save_checkpoint(cu, ckpt)
    _write_json(manifest, {"status": "done", "u": u, "start": start_name, "plan": plan,
                           "seconds": stages.timings["finetune"], "probe_seconds": stages.timings["step_probe"]})
    return cu, plan, str(ckpt.relative_to(run_dir)), False


def _detect(cfg, model, manifest, batch=64):
    data = TensorData.from_manifest(manifest, model.arch.input_size)
    dets = []
    for start in range(0, len(data), batch):
        raw = forward(model, data.images[start:start + batch])
        for i, r in enumerate(raw):
            s = manifest.samples[start + i]
            scale = s.width / model.arch.input_size
            for d in decode(r, model.arch, model.classes, cfg.eval.conf_thresh, cfg.eval.nms_iou, s.image):
                if scale != 1:
                    d = dataclasses.replace(d, bbox=tuple(v * scale for v in d.bbox))
                dets.append(d)
    return dets


def _evaluate_unseen(cfg, model, u, test):
    dets = _detect(cfg, model, test)
    return dets, evaluate_detections(dets, gts_from_manifest(test), classes=[u], iou_thresh=cfg.eval.iou)


def _similarity(cfg, u, cu, weak, tax, alpha, source):
    tbl = build_table(u, cu, weak, tax, alpha, cfg.similarity_thresholds())
    if not tbl.eligible():
        raise ValidationError(f"no seen class passes the similarity thresholds for {u!r}")
    exclude = (source,) if cfg.exclude_source else ()
    return tbl, topk_neighbors(tbl, cfg.k, exclude=exclude)


def _run_id(cfg, u, mode, images):
    src = "synthetic" if images is None else str(Path(images).resolve())
    return f"{u}-{mode}-{_digest([cfg.digest(), u, mode, src, cfg.online_seed])[:10]}"


def request_unseen(cfg: PipelineConfig, u: str, images=None, mode=None, force=False) -> RunRecord:
    """Online stages 1-6 for one unseen class; returns the persisted RunRecord."""
    cfg = copy.deepcopy(cfg)
    if mode is not None:
        cfg.mode = mode
    cfg.validate()
    tax = load_taxonomy(cfg.taxonomy)
    u = resolve_alias(tax, u)
    if u in cfg.seen_classes:
        raise ValidationError(f"{u!r} is a seen class; an unseen request needs a class outside the baselines")
    strong, weak = _load_baselines(cfg)
    run_id = _run_id(cfg, u, cfg.mode, images)
    rdir = _request_dir(cfg, run_id)
    if (rdir / "record.json").exists() and not force:
        log.info("run %s already complete", run_id)
        return load_record(cfg, run_id)
    rdir.mkdir(parents=True, exist_ok=True)
    _write_json(rdir / "config.json", cfg.to_dict())
    stages = _Stages(rdir)
    run_dir = Path(cfg.run_dir)

    images_m = stages.run("ingest", lambda: _fetch_images(cfg, u, images, rdir / "images"))
    test = stages.run("test-set", lambda: unseen_test_set(cfg, u))
    source = stages.run("source", lambda: nearest_semantic(tax, u, cfg.seen_classes)[0][0])
    start_name, start = ("weak", weak) if cfg.mode == "no_adapt" else ("strong", strong)
    cu, plan, cu_path, reused = _finetune(cfg, u, start, start_name, source, images_m, stages)
    checkpoints = {"strong": str((_baseline_dir(cfg) / "strong.json").relative_to(run_dir)),
                   "weak": str((_baseline_dir(cfg) / "weak.json").relative_to(run_dir)),
                   "cu": cu_path}

    tbl, nbrs = stages.run("similarity", lambda: _similarity(cfg, u, cu, weak, tax, cfg.alpha, source))
    tbl.write_csv(rdir / "similarity.csv")
    final = cu
    if cfg.mode == "finetune_adapt":
        def adapt():
            return adapt_unseen(cu, u, _load_deltas(cfg, strong, weak), nbrs)

        final = stages.run("adapt", adapt)
        save_checkpoint(final, rdir / "du.json")
        checkpoints["du"] = str((rdir / "du.json").relative_to(run_dir))

    dets, rep = stages.run("eval", lambda: _evaluate_unseen(cfg, final, u, test))
    write_detections(dets, rdir / "detections.jsonl")
    rep.write_csv(rdir / "eval.csv")

    record = RunRecord(
        run_id=run_id, config_hash=cfg.digest(), unseen=u, mode=cfg.mode, source=source, seed=cfg.online_seed,
        budget=plan, checkpoints=checkpoints, timings=dict(stages.timings), eval=rep.to_dict(), mAP=rep.mAP,
        similarity=str((rdir / "similarity.csv").relative_to(run_dir)),
        neighbors=[[c, w] for c, w in nbrs.neighbors], alpha=cfg.alpha, k=cfg.k,
        dataset_hashes={"train": images_m.content_hash(), "test": test.content_hash()},
        finetune_reused=reused, images="synthetic" if images is None else str(images),
    )
    _write_json(rdir / "record.json", record.to_dict())
    log.info("%s [%s]: mAP %.4f (source %s, %d epochs)", u, cfg.mode, rep.mAP, source, plan["epochs"])
    return record


DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))


def alpha_sweep(cfg: PipelineConfig, u: str, alphas=DEFAULT_ALPHAS, images=None, out=None):
    """One adaptation and evaluation per alpha on a single shared C_u.

    Returns (csv path, [(alpha, mAP)]); a PNG plot is written next to the CSV.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValidationError("no alpha values given")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {a}")
    rec = request_unseen(cfg, u, images, mode="finetune_adapt")
    run_dir = Path(cfg.run_dir)
    tax = load_taxonomy(cfg.taxonomy)
    strong, weak = _load_baselines(cfg)
    cu = load_checkpoint(run_dir / rec.checkpoints["cu"])
    deltas = _load_deltas(cfg, strong, weak)
    test = unseen_test_set(cfg, rec.unseen)
    rows = []
    for a in alphas:
        _, nbrs = _similarity(cfg, rec.unseen, cu, weak, tax, a, rec.source)
        du = adapt_unseen(cu, rec.unseen, deltas, nbrs)
        _, rep = _evaluate_unseen(cfg, du, rec.unseen, test)
        rows.append((a, rep.mAP))
        log.info("alpha %.2f: mAP %.4f", a, rep.mAP)
    out = Path(out) if out else run_dir / "sweeps" / f"alpha-{rec.unseen}-{rec.run_id.rsplit('-', 1)[-1]}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "mAP"])
        for a, m in rows:
            w.writerow([a, repr(m)])
    plotting.plot_alpha(rows, out.with_suffix(".png"), rec.unseen)
    return out, rows


def evaluate_checkpoint(cfg: PipelineConfig, checkpoint, test_dir, classes=None, out_dir=None) -> EvalReport:
    """Evaluate any checkpoint on any detection manifest; writes eval.csv and detections.jsonl."""
    model = load_checkpoint(checkpoint)
    test = load_manifest(test_dir)
    problems = validate_manifest(test)
    if problems:
        raise ValidationError(f"invalid test manifest: {problems[0]}")
    dets = _detect(cfg, model, test)
    rep = evaluate_detections(dets, gts_from_manifest(test), classes=classes, iou_thresh=cfg.eval.iou)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_detections(dets, out_dir / "detections.jsonl")
        rep.write_csv(out_dir / "eval.csv")
    return rep


def report(cfg: PipelineConfig, run_ids=None, out_dir=None) -> dict:
    """Budget curve, similarity pairing and mode ladder, each as CSV plus PNG."""
    run_ids = list_runs(cfg) if run_ids is None else list(run_ids)
    if not run_ids:
        raise ValidationError("no runs to report on")
    records = [load_record(cfg, r) for r in run_ids]
    out_dir = Path(out_dir) if out_dir else Path(cfg.run_dir) / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    run_dir = Path(cfg.run_dir)
    paths = {}

    curve = [{"unseen": r.unseen, "mode": r.mode, "budget_s": r.budget["response_time"], "mAP": r.mAP,
              "epochs": r.budget["epochs"], "finetune_s": r.timings.get("finetune", 0.0), "run_id": r.run_id}
             for r in records]
    curve.sort(key=lambda d: (d["unseen"], d["mode"], d["budget_s"], d["run_id"]))
    paths["budget_curve"] = _write_rows(out_dir / "budget_curve.csv", curve)
    paths["budget_curve_png"] = plotting.plot_budget_curve(curve, out_dir / "budget_curve.png")

    sim = []
    for r in records:
        tbl = SimilarityTable.read_csv(run_dir / r.similarity, r.unseen, r.alpha)
        m = min(10, len(tbl.eligible()))
        sim.append({"unseen": r.unseen, "mode": r.mode, "budget_s": r.budget["response_time"], "mAP": r.mAP,
                    "avg_similarity": average_similarity(tbl, m), "m": m, "run_id": r.run_id})
    sim.sort(key=lambda d: (d["unseen"], d["mode"], d["budget_s"], d["run_id"]))
    paths["similarity"] = _write_rows(out_dir / "similarity.csv", sim)
    best = [d for d in sim if d["mode"] == "finetune_adapt"] or sim
    paths["similarity_png"] = plotting.plot_similarity(best, out_dir / "similarity.png")

    ladder = {}
    for r in records:
        row = ladder.setdefault((r.unseen, r.budget["response_time"]), {"unseen": r.unseen, "budget_s": r.budget["response_time"]})
        row[r.mode] = r.mAP
    rows = [dict({m: None for m in MODES}, **v) for _, v in sorted(ladder.items())]
    paths["ladder"] = _write_rows(out_dir / "ladder.csv", rows, ["unseen", "budget_s", *MODES], note=LADDER_NOTE)
    paths["ladder_png"] = plotting.plot_ladder(rows, out_dir / "ladder.png")

    sweeps = sorted((run_dir / "sweeps").glob("alpha-*.csv")) if (run_dir / "sweeps").is_dir() else []
    for p in sweeps:
        with open(p, newline="") as fh:
            pts = [(float(r["alpha"]), float(r["mAP"])) for r in csv.DictReader(fh)]
        paths[f"alpha:{p.stem}"] = plotting.plot_alpha(pts, out_dir / f"{p.stem}.png", p.stem.split("-")[1])
    return paths


def _write_rows(path, rows, columns=None, note=None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        if note:
            fh.write(f"# {note}\n")
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return path


def splits(cfg: PipelineConfig, sizes=(5, 20), seed=None, out=None):
    """Random unseen-class splits drawn from renderable classes outside the seen set."""
    tax = load_taxonomy(cfg.taxonomy)
    pool = [c for c in sorted(SHAPES) if c in tax.nodes and c not in cfg.seen_classes]
    seed = cfg.seed if seed is None else seed
    result = make_splits(pool, sizes, seed)
    out = Path(out) if out else Path(cfg.run_dir) / "splits.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_splits(result, out, seed)
    return out, result


__all__ = [
    "MODES", "DEFAULT_SEEN", "DEFAULT_UNSEEN", "DEFAULT_ALPHAS", "LADDER_NOTE",
    "DataConfig", "BaselineConfig", "FinetuneConfig", "BudgetConfig", "EvalConfig", "PipelineConfig",
    "RunRecord", "load_config", "gen_data", "train_baselines", "request_unseen", "alpha_sweep",
    "evaluate_checkpoint", "report", "splits", "load_record", "list_runs",
    "seen_detection_set", "seen_classification_set", "unseen_test_set", "UnseenDetError",
]

"""JSON checkpoints, format ``tinydet-ckpt/1``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, CheckpointVersionError
from .model import ArchConfig, DetectorModel, param_shapes

FORMAT = "tinydet-ckpt/1"


def model_to_dict(m: DetectorModel) -> dict:
    return {
        "format": FORMAT,
        "arch": m.arch.to_dict(),
        "classes": list(m.classes),
        "rng_seed": m.rng_seed,
        "params": {k: v.ravel().tolist() for k, v in sorted(m.params.items())},
        "history": m.history,
    }


def model_from_dict(doc: dict, source="<dict>") -> DetectorModel:
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt != FORMAT:
        raise CheckpointVersionError(f"{source}: unsupported checkpoint format {fmt!r}, this build reads {FORMAT!r}")
    try:
        arch = ArchConfig.from_dict(doc["arch"])
        classes = list(doc["classes"])
        shapes = param_shapes(arch, len(classes))
        params = {}
        for name, shape in shapes.items():
            flat = np.asarray(doc["params"][name], dtype=np.float64)
            params[name] = flat.reshape(shape)
        extra = set(doc["params"]) - set(shapes)
        if extra:
            raise CheckpointError(f"{source}: unexpected parameters {sorted(extra)}")
        return DetectorModel(arch, classes, params, int(doc.get("rng_seed", 0)), list(doc.get("history", [])))
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{source}: corrupt checkpoint ({exc})") from exc


def save_checkpoint(m: DetectorModel, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(model_to_dict(m)))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> DetectorModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint at {path}") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return model_from_dict(doc, str(path))

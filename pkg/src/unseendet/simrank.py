"""Visual + semantic similarity between an unseen class and the seen pool."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .taxonomy import path_similarity
from .tinydet import class_weight_vector

DEFAULT_ALPHA = 0.6


@dataclass
class SimilarityRow:
    d_vis: float
    s_v: float
    s_s: float
    s: float
    eligible: bool = True


@dataclass
class SimilarityTable:
    unseen: str
    rows: dict  # seen class -> SimilarityRow, in seen-class order
    alpha: float

    def eligible(self):
        return {c: r for c, r in self.rows.items() if r.eligible}

    def ranked(self):
        """Eligible (class, s) pairs, highest s first, ties by class id."""
        return sorted(((c, r.s) for c, r in self.eligible().items()), key=lambda cs: (-cs[1], cs[0]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seen_class", "d_vis", "s_v", "s_s", "s", "eligible"])
            for c, r in self.rows.items():
                w.writerow([c, repr(r.d_vis), repr(r.s_v), repr(r.s_s), repr(r.s), int(r.eligible)])

    @classmethod
    def read_csv(cls, path, unseen, alpha):
        rows = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows[rec["seen_class"]] = SimilarityRow(float(rec["d_vis"]), float(rec["s_v"]), float(rec["s_s"]),
                                                        float(rec["s"]), rec["eligible"] in ("1", "True", "true"))
        return cls(unseen, rows, alpha)


@dataclass
class NeighborSet:
    neighbors: list = field(default_factory=list)  # [(class, weight)]

    @property
    def classes(self):
        return [c for c, _ in self.neighbors]

    @property
    def weights(self):
        return np.array([w for _, w in self.neighbors])

    def __len__(self):
        return len(self.neighbors)


@dataclass(frozen=True)
class Thresholds:
    v: float = 0.0
    s: float = 0.0


def visual_distance(wu, wi) -> float:
    wu, wi = np.asarray(wu, dtype=np.float64), np.asarray(wi, dtype=np.float64)
    if wu.shape != wi.shape:
        raise ValidationError(f"weight vectors differ in shape: {wu.shape} vs {wi.shape}")
    return float(np.linalg.norm(wu - wi))


def normalize_visual(distances: dict) -> dict:
    """Min-max map distances to similarities in [0, 1]; closest -> 1."""
    if not distances:
        raise ValidationError("no distances to normalise")
    d = np.array(list(distances.values()), dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValidationError("distances must be finite")
    lo, hi = d.min(), d.max()
    if hi == lo:
        return {k: 0.5 for k in distances}
    return {k: float((hi - v) / (hi - lo)) for k, v in distances.items()}


def _unit(name, x):
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {x}")


def comprehensive_similarity(s_v, s_s, alpha=DEFAULT_ALPHA) -> float:
    _unit("s_v", s_v)
    _unit("s_s", s_s)
    _unit("alpha", alpha)
    return alpha * s_v + (1.0 - alpha) * s_s


def build_table(u, cu_model, weak_model, taxonomy, alpha=DEFAULT_ALPHA, thresholds=Thresholds()) -> SimilarityTable:
    """Score every seen class of the weak baseline against unseen class ``u``."""
    if cu_model.arch != weak_model.arch:
        raise ValidationError("fine-tuned and weak models have different architectures")
    wu = class_weight_vector(cu_model, u)
    seen = [c for c in weak_model.classes if c != u]
    dist = {c: visual_distance(wu, class_weight_vector(weak_model, c)) for c in seen}
    s_v = normalize_visual(dist)
    rows = {}
    for c in seen:
        s_s = path_similarity(taxonomy, u, c)
        rows[c] = SimilarityRow(dist[c], s_v[c], s_s, comprehensive_similarity(s_v[c], s_s, alpha),
                                s_v[c] >= thresholds.v and s_s >= thresholds.s)
    return SimilarityTable(u, rows, alpha)


def topk_neighbors(tbl: SimilarityTable, k: int, normalize_weights=True, exclude=()) -> NeighborSet:
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    ranked = [(c, s) for c, s in tbl.ranked() if c not in exclude]
    if not ranked:
        raise ValidationError(f"no eligible seen class for {tbl.unseen!r}; relax the similarity thresholds")
    top = ranked[:k]
    if not normalize_weights:
        return NeighborSet(list(top))
    total = sum(s for _, s in top)
    if total == 0:
        return NeighborSet([(c, 1.0 / len(top)) for c, _ in top])
    return NeighborSet([(c, s / total) for c, s in top])


def average_similarity(tbl: SimilarityTable, m=10) -> float:
    """Mean of the ``m`` largest comprehensive similarities."""
    ranked = tbl.ranked()
    if m < 1 or m > len(ranked):
        raise ValidationError(f"m={m} but only {len(ranked)} eligible seen classes")
    return float(np.mean([s for _, s in ranked[:m]]))

"""Dual-granularity semantic scoring of patches against artifact descriptor
prompts, plus the ambiguity trigger that gates deep reasoning."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

GROUPS = ("geometry", "texture", "reflection", "anatomy", "color", "structure")


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ArtifactCategory:
    id: str
    name: str
    group: str
    prompts: Tuple[str, ...]

    def __post_init__(self):
        if not self.prompts:
            raise ScoringError(f"category {self.id!r} has no prompts")
        if self.group not in GROUPS:
            raise ScoringError(f"category {self.id!r} has unknown group {self.group!r}")


def load_taxonomy(path: Optional[Path] = None) -> List[ArtifactCategory]:
    """Load the artifact taxonomy (bundled file by default).  Slugs must be
    unique; order is preserved for deterministic tie-breaking."""
    if path is None:
        raw = resources.files("synthscope.data").joinpath("taxonomy.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    rows = json.loads(raw)
    cats = [
        ArtifactCategory(id=r["id"], name=r["name"], group=r["group"], prompts=tuple(r["prompts"]))
        for r in rows
    ]
    slugs = [c.id for c in cats]
    if len(set(slugs)) != len(slugs):
        raise ScoringError("duplicate category slugs in taxonomy")
    if not cats:
        raise ScoringError("empty taxonomy")
    return cats


# ---------------------------------------------------------------------------
# Similarity
# ---------------------------------------------------------------------------

def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]; symmetric and scale-invariant."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ScoringError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ScoringError("cosine undefined for zero vectors")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def similarity_matrix(patch_vecs: np.ndarray, category_vecs: np.ndarray) -> np.ndarray:
    """(n_patches, n_categories) cosine matrix from unnormalized embeddings."""
    p = np.asarray(patch_vecs, dtype=np.float64)
    c = np.asarray(category_vecs, dtype=np.float64)
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    cn = np.linalg.norm(c, axis=1, keepdims=True)
    if np.any(pn == 0) or np.any(cn == 0):
        raise ScoringError("zero vector in similarity batch")
    return np.clip((p / pn) @ (c / cn).T, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Category scores
# ---------------------------------------------------------------------------

@dataclass
class SemanticProfile:
    category_ids: List[str]
    scores: np.ndarray  # S_c per category
    coarse_means: np.ndarray
    fine_means: np.ndarray
    alpha_blend: float
    top_category: str = field(init=False)
    ambiguity: Optional[bool] = None

    def __post_init__(self):
        best = self.scores.max()
        tied = [cid for cid, s in zip(self.category_ids, self.scores) if s == best]
        self.top_category = min(tied)  # deterministic tie-break by slug

    @property
    def max_score(self) -> float:
        return float(self.scores.max())

    def as_dict(self) -> Dict:
        return {
            "alpha_blend": self.alpha_blend,
            "top_category": self.top_category,
            "ambiguity": self.ambiguity,
            "categories": [
                {
                    "id": cid,
                    "score": round(float(self.scores[i]), 6),
                    "coarse_mean": round(float(self.coarse_means[i]), 6),
                    "fine_mean": round(float(self.fine_means[i]), 6),
                }
                for i, cid in enumerate(self.category_ids)
            ],
        }


def score_categories(
    category_ids: Sequence[str],
    coarse_sims: np.ndarray,
    fine_sims: np.ndarray,
    alpha_blend: float = 0.5,
    coarse_weights: Optional[np.ndarray] = None,
    fine_weights: Optional[np.ndarray] = None,
) -> SemanticProfile:
    """Blend per-level mean similarities into unified category scores.

    ``coarse_sims``/``fine_sims`` are (n_patches, n_categories).  The default
    is the plain unweighted mean per level; passing per-patch weights switches
    to weighted means (a documented extension, off by default).
    """
    if not (0.0 <= alpha_blend <= 1.0):
        raise ScoringError(f"alpha_blend must be in [0, 1], got {alpha_blend}")
    cs = np.asarray(coarse_sims, dtype=np.float64)
    fs = np.asarray(fine_sims, dtype=np.float64)
    if cs.ndim != 2 or fs.ndim != 2 or cs.shape[0] == 0 or fs.shape[0] == 0:
        raise ScoringError("both granularity levels need at least one patch")
    if cs.shape[1] != len(category_ids) or fs.shape[1] != len(category_ids):
        raise ScoringError("similarity columns do not match category count")

    def _level_mean(sims: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
        if weights is None:
            return sims.mean(axis=0)
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (sims.shape[0],):
            raise ScoringError("weights do not align with patches")
        total = w.sum()
        if total <= 0:
            raise ScoringError("weights must have positive mass")
        return (w[:, None] * sims).sum(axis=0) / total

    coarse_means = _level_mean(cs, coarse_weights)
    fine_means = _level_mean(fs, fine_weights)
    scores = alpha_blend * coarse_means + (1.0 - alpha_blend) * fine_means
    return SemanticProfile(
        category_ids=list(category_ids),
        scores=scores,
        coarse_means=coarse_means,
        fine_means=fine_means,
        alpha_blend=alpha_blend,
    )


# ---------------------------------------------------------------------------
# Ambiguity trigger
# ---------------------------------------------------------------------------

def ambiguity_trigger(
    profile: SemanticProfile,
    tau_clip: float,
    region_top_labels: Sequence[str],
    region_weights: Sequence[float],
) -> bool:
    """Deep reasoning fires when the best category score is below tau_clip,
    or when regions disagree: two or more distinct argmax labels among
    regions whose weight strictly exceeds the median weight.
    """
    if profile.max_score < tau_clip:
        return True
    labels = list(region_top_labels)
    weights = np.asarray(list(region_weights), dtype=np.float64)
    if len(labels) != weights.size:
        raise ScoringError("labels and weights differ in length")
    if weights.size == 0:
        return False
    median = float(np.median(weights))
    heavy = {lab for lab, w in zip(labels, weights) if w > median}
    return len(heavy) >= 2


def region_top_categories(
    region_ids: Sequence[str],
    sims_by_region: np.ndarray,
    category_ids: Sequence[str],
) -> List[str]:
    """Per-region argmax category (ties -> earliest taxonomy slug)."""
    sims = np.asarray(sims_by_region, dtype=np.float64)
    if sims.shape != (len(region_ids), len(category_ids)):
        raise ScoringError("per-region similarity shape mismatch")
    return [category_ids[int(np.argmax(sims[i]))] for i in range(len(region_ids))]

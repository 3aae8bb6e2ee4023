"""GradCAM and the attention-weighting chain from raw salience to
hierarchy-modulated patch weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .raster import AttentionMap, FeatureTensor, normalize_map, resize_bicubic
from .segmentation import PatchSet

logger = logging.getLogger(__name__)


class LocalizationError(ValueError):
    pass


class NoSalienceError(LocalizationError):
    """Raised when the attention map carries zero activation over all
    patches; callers fall back to uniform weights."""


@dataclass(frozen=True)
class GradCamInput:
    features: FeatureTensor
    grads: FeatureTensor
    target_class: int = 1

    def __post_init__(self):
        if self.features.shape != self.grads.shape:
            raise LocalizationError(
                f"features {self.features.shape} and grads {self.grads.shape} differ"
            )


@dataclass
class WeightedRegion:
    region_id: str
    alpha: float
    w: float
    w_tilde: float
    parent_activation: float


@dataclass
class WeightedRegionSet:
    entries: List[WeightedRegion] = field(default_factory=list)

    def by_weight(self) -> List[WeightedRegion]:
        return sorted(self.entries, key=lambda e: (-e.w_tilde, e.region_id))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


# ---------------------------------------------------------------------------
# GradCAM
# ---------------------------------------------------------------------------

def gradcam_map(features: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Raw class-activation map: ReLU of the channel-importance-weighted sum
    of feature maps, with importances as global averages of the gradients."""
    f = np.asarray(features, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if f.shape != g.shape or f.ndim != 3:
        raise LocalizationError(f"feature/grad shape mismatch: {f.shape} vs {g.shape}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise LocalizationError("non-finite values in gradcam input")
    alpha = g.mean(axis=(0, 1))
    cam = np.tensordot(f, alpha, axes=([2], [0]))
    return np.maximum(cam, 0.0)


def gradcam(inp: GradCamInput, align_to: Optional[Tuple[int, int]] = None) -> AttentionMap:
    """Full GradCAM chain: raw map, min-max normalization, then bicubic
    alignment to the working raster (when ``align_to`` differs)."""
    cam = gradcam_map(inp.features.values, inp.grads.values)
    amap = normalize_map(cam)
    if align_to is not None and align_to != (amap.height, amap.width):
        resized = resize_bicubic(amap.values, align_to[0], align_to[1])
        amap = AttentionMap(np.clip(resized, 0.0, 1.0))
    return amap


# ---------------------------------------------------------------------------
# Weight chain
# ---------------------------------------------------------------------------

def raw_patch_weights(amap: AttentionMap, patches: PatchSet) -> np.ndarray:
    """Per-patch activation mass, normalized to sum 1 (scale-invariant).

    Raises NoSalienceError when the total masked activation is zero; the
    pipeline falls back to uniform weights with a warning in that case.
    """
    if amap.values.shape != patches.image_shape:
        raise LocalizationError(
            f"attention map {amap.values.shape} not aligned to patches {patches.image_shape}"
        )
    if not patches.patches:
        raise LocalizationError("empty patch set")
    sums = np.empty(len(patches.patches), dtype=np.float64)
    for i, p in enumerate(patches.patches):
        x, y, w, h = p.bbox
        sums[i] = float(np.sum(amap.values[y : y + h, x : x + w][p.mask]))
    total = sums.sum()
    if total <= 0.0:
        raise NoSalienceError("attention map has zero activation over all patches")
    return sums / total


def uniform_weights(n: int) -> np.ndarray:
    if n < 1:
        raise LocalizationError("need at least one patch")
    return np.full(n, 1.0 / n)


def sharpen_weights(alpha: np.ndarray, tau: float) -> np.ndarray:
    """Contrast sharpening: softmax of tau * alpha.  Order-preserving for
    every tau > 0; uniform input stays uniform."""
    if not (tau > 0):
        raise LocalizationError(f"temperature must be positive, got {tau}")
    a = np.asarray(alpha, dtype=np.float64)
    z = tau * a
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def superpixel_activation(amap: AttentionMap, region_mask: np.ndarray) -> float:
    """Mean activation over the region's pixels, in [0, 1]."""
    mask = np.asarray(region_mask, dtype=bool)
    if mask.shape != amap.values.shape:
        raise LocalizationError("region mask not aligned to attention map")
    n = int(mask.sum())
    if n == 0:
        raise LocalizationError("empty region")
    return float(amap.values[mask].mean())


def modulate_weights(w: np.ndarray, parents: np.ndarray) -> np.ndarray:
    """Hierarchical modulation: w * logistic(parent activation).

    Deliberately NOT renormalized; ranking consumers use relative order and
    renormalize explicitly when they need a distribution.
    """
    w = np.asarray(w, dtype=np.float64)
    parents = np.asarray(parents, dtype=np.float64)
    if w.shape != parents.shape:
        raise LocalizationError("weights and parent activations differ in length")
    if parents.size and (parents.min() < 0.0 or parents.max() > 1.0):
        raise LocalizationError("parent activations must lie in [0, 1]")
    return w * sigmoid(parents)


def voting_prior(parents: Sequence[float]) -> np.ndarray:
    """Voting weights proportional to parent-region activation, normalized to
    sum 1; all-zero parents degrade to uniform."""
    p = np.asarray(parents, dtype=np.float64)
    if p.size == 0:
        raise LocalizationError("empty parent activations")
    total = p.sum()
    if total <= 0.0:
        return np.full(p.size, 1.0 / p.size)
    return p / total


def weight_chain(
    amap: AttentionMap,
    patches: PatchSet,
    parent_activations: np.ndarray,
    tau: float,
) -> Tuple[WeightedRegionSet, np.ndarray, np.ndarray, np.ndarray]:
    """Run alpha -> sharpened -> modulated for one patch set.

    ``parent_activations`` holds A(S) for each patch's parent region, aligned
    with patch order.  Returns the entry set plus the three weight vectors.
    """
    try:
        alpha = raw_patch_weights(amap, patches)
    except NoSalienceError:
        logger.warning("all-zero attention; falling back to uniform patch weights")
        alpha = uniform_weights(len(patches.patches))
    w = sharpen_weights(alpha, tau)
    w_tilde = modulate_weights(w, parent_activations)
    entries = WeightedRegionSet(
        entries=[
            WeightedRegion(
                region_id=p.patch_id,
                alpha=float(alpha[i]),
                w=float(w[i]),
                w_tilde=float(w_tilde[i]),
                parent_activation=float(parent_activations[i]),
            )
            for i, p in enumerate(patches.patches)
        ]
    )
    return entries, alpha, w, w_tilde

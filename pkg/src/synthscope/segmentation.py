"""SLIC superpixel segmentation at two granularities plus patch extraction.

The assignment/accumulation inner loops live in ``synthscope._native`` (a
compiled Cython kernel with a bit-identical NumPy fallback); this module owns
seeding, iteration, connectivity enforcement, the coarse/fine hierarchy and
the tile-within-region patch decomposition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import scipy.ndimage

from ._native import slic_kernels
from .raster import ImageRaster, rgb_to_lab

logger = logging.getLogger(__name__)

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class SegmentationError(ValueError):
    pass


@dataclass
class SlicDetails:
    """Diagnostics from one SLIC run (objective is the sum of squared scaled
    distances after each assignment sweep; it is non-increasing)."""

    objectives: List[float]
    iterations: int
    converged: bool
    n_seeds: int


@dataclass(frozen=True)
class RegionInfo:
    label: int
    pixel_count: int
    centroid: Tuple[float, float]  # (x, y)
    mean_color: Tuple[float, ...]


@dataclass
class SuperpixelHierarchy:
    """Coarse and fine label maps over one raster plus parent links."""

    coarse_labels: np.ndarray
    fine_labels: np.ndarray
    parent_of: np.ndarray  # fine label -> coarse label
    coarse_regions: List[RegionInfo]
    fine_regions: List[RegionInfo]

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_regions)

    @property
    def n_fine(self) -> int:
        return len(self.fine_regions)

    def region_mask(self, level: str, label: int) -> np.ndarray:
        labels = self.labels_at(level)
        return labels == label

    def labels_at(self, level: str) -> np.ndarray:
        if level == "coarse":
            return self.coarse_labels
        if level == "fine":
            return self.fine_labels
        raise SegmentationError(f"unknown level {level!r}")


@dataclass(frozen=True)
class Patch:
    patch_id: str
    parent_label: int
    level: str
    bbox: Tuple[int, int, int, int]  # (x, y, w, h)
    mask: np.ndarray  # bool, bbox-local
    crop: ImageRaster  # bbox-sized, zero-filled outside the mask


@dataclass
class PatchSet:
    level: str
    image_shape: Tuple[int, int]
    patches: List[Patch]

    def __len__(self) -> int:
        return len(self.patches)


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------

def _seed_grid(h: int, w: int, k: int) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """Regular seed grid with gh*gw <= k, biased toward the wider image axis."""
    gw = int(np.ceil(np.sqrt(k * w / h)))
    gw = max(1, min(gw, w, k))
    gh = max(1, min(k // gw, h))
    sx = (np.arange(gw, dtype=np.float64) + 0.5) * (w / gw) - 0.5
    sy = (np.arange(gh, dtype=np.float64) + 0.5) * (h / gh) - 0.5
    return sx, sy, gh, gw


def _slic_iterate(lab: np.ndarray, k: int, compactness: float, max_iters: int):
    h, w = lab.shape[:2]
    l = np.ascontiguousarray(lab[:, :, 0])
    a = np.ascontiguousarray(lab[:, :, 1])
    b = np.ascontiguousarray(lab[:, :, 2])

    sx, sy, gh, gw = _seed_grid(h, w, k)
    n_seeds = gh * gw
    step = max(1, int(round(np.sqrt(h * w / n_seeds))))
    ratio = (compactness * compactness) / (step * step)

    centers = np.empty((n_seeds, 5), dtype=np.float64)
    for i in range(gh):
        for j in range(gw):
            px = int(np.floor(sx[j] + 0.5))
            py = int(np.floor(sy[i] + 0.5))
            px = min(max(px, 0), w - 1)
            py = min(max(py, 0), h - 1)
            idx = i * gw + j
            centers[idx] = (l[py, px], a[py, px], b[py, px], sx[j], sy[i])

    col = np.minimum((np.arange(w) / (w / gw)).astype(np.int64), gw - 1)
    row = np.minimum((np.arange(h) / (h / gh)).astype(np.int64), gh - 1)
    labels = np.ascontiguousarray(row[:, None] * gw + col[None, :])

    objectives: List[float] = []
    converged = False
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        new_labels, dists = slic_kernels.assign_labels(l, a, b, labels, centers, step, ratio)
        objectives.append(float(np.sum(dists)))
        changed = int(np.count_nonzero(new_labels != labels))
        labels = np.ascontiguousarray(new_labels)
        sums, counts = slic_kernels.accumulate(l, a, b, labels, n_seeds)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if changed == 0:
            converged = True
            break

    return labels, centers, SlicDetails(objectives, iterations, converged, n_seeds)


def _relabel_by_scan_order(labels: np.ndarray) -> np.ndarray:
    """Contiguous labels 0..K-1 ordered by first row-major occurrence."""
    flat = labels.ravel()
    _, first_idx = np.unique(flat, return_index=True)
    order = flat[np.sort(first_idx)]
    mapping = np.empty(int(flat.max()) + 1, dtype=np.int64)
    mapping[order] = np.arange(len(order))
    return mapping[labels]


def _enforce_connectivity(labels: np.ndarray, k_limit: int) -> np.ndarray:
    """Split disconnected labels into components, merge small fragments into
    their largest 4-adjacent region, and cap the region count at ``k_limit``.

    Fragments below 1/4 of the mean region size are always merged (SLIC's
    standard post-pass); larger detached components become regions of their
    own unless the cap forces further merging.
    """
    h, w = labels.shape
    n_labels = int(labels.max()) + 1

    comp_map = np.full((h, w), -1, dtype=np.int64)
    comp_primary: List[bool] = []
    next_comp = 0
    for v in range(n_labels):
        mask = labels == v
        if not mask.any():
            continue
        comp_lab, n_comp = scipy.ndimage.label(mask, structure=_FOUR_CONN)
        sizes = scipy.ndimage.sum_labels(np.ones_like(comp_lab), comp_lab, index=range(1, n_comp + 1))
        largest = int(np.argmax(sizes))  # ties -> earliest scan order
        for ci in range(n_comp):
            comp_map[comp_lab == ci + 1] = next_comp
            comp_primary.append(ci == largest)
            next_comp += 1

    n_nonempty = sum(1 for v in range(n_labels) if (labels == v).any())
    threshold = (h * w / max(1, n_nonempty)) / 4.0

    def _sizes() -> Dict[int, int]:
        vals, cnts = np.unique(comp_map, return_counts=True)
        return dict(zip(vals.tolist(), cnts.tolist()))

    def _merge(src: int, sizes: Dict[int, int]) -> bool:
        mask = comp_map == src
        neigh = np.zeros_like(mask)
        neigh[:-1, :] |= mask[1:, :]
        neigh[1:, :] |= mask[:-1, :]
        neigh[:, :-1] |= mask[:, 1:]
        neigh[:, 1:] |= mask[:, :-1]
        neigh &= ~mask
        candidates = sorted(set(comp_map[neigh].tolist()))
        if not candidates:
            return False
        target = max(candidates, key=lambda c: (sizes[c], -c))
        comp_map[mask] = target
        return True

    sizes = _sizes()
    fragments = [c for c in sizes if not comp_primary[c] and sizes[c] < threshold]
    for c in sorted(fragments, key=lambda c: (sizes[c], c)):
        if _merge(c, sizes):
            sizes = _sizes()

    sizes = _sizes()
    while len(sizes) > k_limit:
        smallest = min(sizes, key=lambda c: (sizes[c], c))
        if not _merge(smallest, sizes):
            break
        sizes = _sizes()

    return _relabel_by_scan_order(comp_map)


def slic_segment(
    img: ImageRaster,
    k: int,
    compactness: float = 10.0,
    max_iters: int = 10,
    want_details: bool = False,
):
    """Segment into at most ``k`` connected superpixels.

    Distance metric: sqrt(d_lab^2 + (d_xy / S)^2 * m^2) in Lab space (D65),
    minimized in squared form; assignment search is restricted to 2S x 2S
    windows around each cluster center and always includes the pixel's
    current cluster, so the objective never increases.  Iteration stops when
    no pixel changes label or ``max_iters`` is reached.
    """
    n_pixels = img.height * img.width
    if k < 1:
        raise SegmentationError(f"k must be >= 1, got {k}")
    if k > n_pixels:
        raise SegmentationError(f"k={k} exceeds pixel count {n_pixels}")
    if not np.isfinite(compactness) or compactness <= 0:
        raise SegmentationError(f"compactness must be finite and positive, got {compactness}")
    if max_iters < 1:
        raise SegmentationError("max_iters must be >= 1")

    if k == 1:
        labels = np.zeros((img.height, img.width), dtype=np.int64)
        details = SlicDetails([0.0], 0, True, 1)
        return (labels, details) if want_details else labels

    lab = rgb_to_lab(img)
    labels, _, details = _slic_iterate(lab, k, float(compactness), int(max_iters))
    labels = _enforce_connectivity(labels, k)
    return (labels, details) if want_details else labels


# ---------------------------------------------------------------------------
# Hierarchy
# ---------------------------------------------------------------------------

def _region_table(labels: np.ndarray, img: ImageRaster) -> List[RegionInfo]:
    n = int(labels.max()) + 1
    h, w = labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    cx = np.bincount(flat, weights=xs.ravel(), minlength=n) / np.maximum(counts, 1)
    cy = np.bincount(flat, weights=ys.ravel(), minlength=n) / np.maximum(counts, 1)
    regions = []
    for v in range(n):
        mean_color = tuple(float(c) for c in img.data[labels == v].mean(axis=0))
        regions.append(
            RegionInfo(
                label=v,
                pixel_count=int(counts[v]),
                centroid=(float(cx[v]), float(cy[v])),
                mean_color=mean_color,
            )
        )
    return regions


def build_hierarchy(
    img: ImageRaster,
    k_coarse: int,
    k_fine: int,
    compactness: float = 10.0,
    max_iters: int = 10,
) -> SuperpixelHierarchy:
    """SLIC at two granularities with majority-overlap parent assignment.

    Each fine region's parent is the coarse region of maximal pixel overlap;
    exact ties break toward the lower coarse label id.
    """
    if k_fine <= k_coarse:
        raise SegmentationError(f"k_fine ({k_fine}) must exceed k_coarse ({k_coarse})")
    coarse = slic_segment(img, k_coarse, compactness, max_iters)
    fine = slic_segment(img, k_fine, compactness, max_iters)
    n_coarse = int(coarse.max()) + 1
    n_fine = int(fine.max()) + 1
    contingency = np.zeros((n_fine, n_coarse), dtype=np.int64)
    np.add.at(contingency, (fine.ravel(), coarse.ravel()), 1)
    parent_of = np.argmax(contingency, axis=1).astype(np.int64)
    return SuperpixelHierarchy(
        coarse_labels=coarse,
        fine_labels=fine,
        parent_of=parent_of,
        coarse_regions=_region_table(coarse, img),
        fine_regions=_region_table(fine, img),
    )


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------

def extract_patches(
    hierarchy: SuperpixelHierarchy,
    img: ImageRaster,
    level: str,
    tile: int = 16,
) -> PatchSet:
    """Tile each superpixel's bounding box with a fixed-size grid clipped to
    the region mask.  Regions smaller than one tile yield exactly one patch;
    patch masks at a level partition the image.
    """
    labels = hierarchy.labels_at(level)
    if labels.shape != (img.height, img.width):
        raise SegmentationError(
            f"hierarchy built over {labels.shape}, image is {(img.height, img.width)}"
        )
    if tile < 1:
        raise SegmentationError("tile size must be >= 1")
    prefix = "C" if level == "coarse" else "S"
    patches: List[Patch] = []
    n_labels = int(labels.max()) + 1
    for v in range(n_labels):
        region = labels == v
        ys, xs = np.nonzero(region)
        if ys.size == 0:
            continue
        y_lo, y_hi = int(ys.min()), int(ys.max()) + 1
        x_lo, x_hi = int(xs.min()), int(xs.max()) + 1
        idx = 0
        for ty in range(y_lo, y_hi, tile):
            for tx in range(x_lo, x_hi, tile):
                ty1 = min(ty + tile, y_hi)
                tx1 = min(tx + tile, x_hi)
                local = region[ty:ty1, tx:tx1]
                if not local.any():
                    continue
                crop = np.where(local[:, :, None], img.data[ty:ty1, tx:tx1], 0.0)
                patches.append(
                    Patch(
                        patch_id=f"{prefix}{v}.P{idx}",
                        parent_label=v,
                        level=level,
                        bbox=(tx, ty, tx1 - tx, ty1 - ty),
                        mask=local.copy(),
                        crop=ImageRaster(crop, color_space=img.color_space),
                    )
                )
                idx += 1
    return PatchSet(level=level, image_shape=(img.height, img.width), patches=patches)


def patch_global_mask(patch: Patch, shape: Tuple[int, int]) -> np.ndarray:
    """Patch mask lifted into full-image coordinates."""
    full = np.zeros(shape, dtype=bool)
    x, y, w, h = patch.bbox
    full[y : y + h, x : x + w] = patch.mask
    return full


def label_map_png_data(labels: np.ndarray) -> np.ndarray:
    """Debug rendering of a label map as a deterministic color image."""
    n = int(labels.max()) + 1
    rng = np.random.default_rng(12345)
    palette = rng.uniform(0.15, 0.95, size=(n, 3))
    return palette[labels]

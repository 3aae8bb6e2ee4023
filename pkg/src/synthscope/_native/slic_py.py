"""Pure-NumPy SLIC inner-loop kernels.

This is the fallback used when the compiled extension is unavailable.  The
arithmetic (operation order, tie-breaking, accumulation order) is written to
match ``_slic.pyx`` exactly so both backends produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def assign_labels(l, a, b, labels, centers, half_window, ratio):
    """One SLIC assignment sweep.

    Each pixel starts at the distance to its current center (so the k-means
    objective cannot increase), then every cluster scans a 2S x 2S window
    around its center; a pixel is re-labeled only on strict improvement,
    which breaks ties toward the lower cluster id.

    Returns (new_labels, dists) where dists holds the squared scaled
    distance of every pixel to its assigned center.
    """
    h, w = l.shape
    n_clusters = centers.shape[0]
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)

    cl = centers[labels]
    dl = l - cl[:, :, 0]
    da = a - cl[:, :, 1]
    db = b - cl[:, :, 2]
    dx = xs[None, :] - cl[:, :, 3]
    dy = ys[:, None] - cl[:, :, 4]
    best = (dl * dl + da * da + db * db) + (dx * dx + dy * dy) * ratio
    out = labels.copy()

    for k in range(n_clusters):
        cx = centers[k, 3]
        cy = centers[k, 4]
        cyi = int(np.floor(cy + 0.5))
        cxi = int(np.floor(cx + 0.5))
        y0 = max(0, cyi - half_window)
        y1 = min(h, cyi + half_window + 1)
        x0 = max(0, cxi - half_window)
        x1 = min(w, cxi + half_window + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        dl = l[y0:y1, x0:x1] - centers[k, 0]
        da = a[y0:y1, x0:x1] - centers[k, 1]
        db = b[y0:y1, x0:x1] - centers[k, 2]
        dx = xs[x0:x1][None, :] - cx
        dy = ys[y0:y1][:, None] - cy
        d = (dl * dl + da * da + db * db) + (dx * dx + dy * dy) * ratio
        win_best = best[y0:y1, x0:x1]
        improved = d < win_best
        win_best[improved] = d[improved]
        out[y0:y1, x0:x1][improved] = k

    return out, best


def accumulate(l, a, b, labels, n_clusters):
    """Per-cluster sums of (L, a, b, x, y) and pixel counts, row-major order."""
    h, w = l.shape
    flat = labels.ravel()
    xs = np.broadcast_to(np.arange(w, dtype=np.float64)[None, :], (h, w)).ravel()
    ys = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w)).ravel()
    sums = np.empty((n_clusters, 5), dtype=np.float64)
    sums[:, 0] = np.bincount(flat, weights=l.ravel(), minlength=n_clusters)
    sums[:, 1] = np.bincount(flat, weights=a.ravel(), minlength=n_clusters)
    sums[:, 2] = np.bincount(flat, weights=b.ravel(), minlength=n_clusters)
    sums[:, 3] = np.bincount(flat, weights=xs, minlength=n_clusters)
    sums[:, 4] = np.bincount(flat, weights=ys, minlength=n_clusters)
    counts = np.bincount(flat, minlength=n_clusters).astype(np.int64)
    return sums, counts

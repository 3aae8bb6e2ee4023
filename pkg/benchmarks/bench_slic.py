"""Benchmark the compiled SLIC kernels against the pure-NumPy fallback.

Run from the repo root:
    python3 benchmarks/bench_slic.py

Both backends produce bit-identical labels (asserted here); the point of the
extension is the wall-clock difference on the per-pixel assignment loop.
"""

import time

import numpy as np

from synthscope._native import slic_py

try:
    from synthscope._native import _slic as slic_ext
except ImportError:
    slic_ext = None


def bench_backend(kern, l, a, b, labels, centers, step, ratio, iters):
    labels = labels.copy()
    t0 = time.perf_counter()
    for _ in range(iters):
        labels, dists = kern.assign_labels(l, a, b, labels, centers, step, ratio)
        sums, counts = kern.accumulate(l, a, b, labels, centers.shape[0])
        nonempty = counts > 0
        centers = centers.copy()
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
    return time.perf_counter() - t0, labels


def make_problem(h, w, k, seed=0):
    rng = np.random.default_rng(seed)
    l = np.ascontiguousarray(rng.random((h, w)) * 100.0)
    a = np.ascontiguousarray(rng.random((h, w)) * 50.0 - 25.0)
    b = np.ascontiguousarray(rng.random((h, w)) * 50.0 - 25.0)
    g = int(np.sqrt(k))
    step = max(1, int(round(np.sqrt(h * w / k))))
    ys, xs = np.mgrid[0:h, 0:w]
    labels = np.ascontiguousarray(
        np.minimum(ys // (h // g), g - 1) * g + np.minimum(xs // (w // g), g - 1)
    ).astype(np.int64)
    centers = np.zeros((k, 5))
    for i in range(g):
        for j in range(g):
            cy = int((i + 0.5) * h / g)
            cx = int((j + 0.5) * w / g)
            centers[i * g + j] = (l[cy, cx], a[cy, cx], b[cy, cx], cx, cy)
    ratio = 100.0 / (step * step)
    return l, a, b, labels, centers, step, ratio


def main():
    print(f"{'size':>10} {'k':>5} {'iters':>5} {'python':>10} {'cython':>10} {'speedup':>8}")
    for h, w, k, iters in ((64, 64, 16, 10), (128, 128, 64, 10), (256, 256, 256, 5), (512, 512, 1024, 3)):
        l, a, b, labels, centers, step, ratio = make_problem(h, w, k)
        t_py, lab_py = bench_backend(slic_py, l, a, b, labels, centers, step, ratio, iters)
        if slic_ext is None:
            print(f"{h}x{w:>5} {k:>5} {iters:>5} {t_py:>9.3f}s {'n/a':>10} {'n/a':>8}")
            continue
        t_cy, lab_cy = bench_backend(slic_ext, l, a, b, labels, centers, step, ratio, iters)
        assert np.array_equal(lab_py, lab_cy), "backends diverged"
        print(f"{h}x{w:>5} {k:>5} {iters:>5} {t_py:>9.3f}s {t_cy:>9.3f}s {t_py / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()

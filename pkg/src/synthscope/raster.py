"""Image containers, resampling, filtering and frequency transforms.

Everything downstream (segmentation, localization, scoring, attacks) works on
the types defined here.  Pixels are real values in [0, 1]; quantization to
8-bit happens only when a PNG is written.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.fft
import scipy.ndimage
from PIL import Image, UnidentifiedImageError

COLOR_SPACES = ("sRGB", "Lab", "Gray")

# Catmull-Rom parameter for the bicubic kernel.  Fixed convention: the
# interpolant is documented, reproducible, and exact on constants.
_CUBIC_A = -0.5


class RasterError(ValueError):
    """Raised for malformed images, unsupported formats and bad arguments."""


@dataclass(frozen=True)
class ImageRaster:
    """H x W x C pixel array in [0, 1] with a color-space tag.

    ``data`` is always 3-D (H, W, C) float64 and read-only; rasters are safe
    to share across threads.
    """

    data: np.ndarray
    color_space: str = "sRGB"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise RasterError(f"raster data must be 2-D or 3-D, got shape {arr.shape}")
        h, w, c = arr.shape
        if h == 0 or w == 0:
            raise RasterError("zero-dimension image")
        if c not in (1, 3):
            raise RasterError(f"channels must be 1 or 3, got {c}")
        if self.color_space not in COLOR_SPACES:
            raise RasterError(f"unknown color space {self.color_space!r}")
        if not np.all(np.isfinite(arr)):
            raise RasterError("raster contains non-finite values")
        if self.color_space in ("sRGB", "Gray") and (arr.min() < 0.0 or arr.max() > 1.0):
            raise RasterError("pixel values outside [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class AttentionMap:
    """Per-pixel salience in [0, 1] aligned to a raster."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise RasterError(f"attention map must be non-empty 2-D, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RasterError("attention map contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise RasterError("attention values outside [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureTensor:
    """H x W x K real-valued feature stack (activations or gradients)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) == 0:
            raise RasterError(f"feature tensor must be 3-D non-empty, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RasterError("feature tensor contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple:
        return self.values.shape


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------

def load_image(path) -> ImageRaster:
    """Load a PNG or JPEG into an ImageRaster with values in [0, 1].

    32x32 inputs are accepted as-is; no silent resizing ever happens here.
    """
    path = Path(path)
    if not path.exists():
        raise RasterError(f"file not found: {path}")
    suffix = path.suffix.lower()
    if suffix not in (".png", ".jpg", ".jpeg"):
        raise RasterError(f"unsupported format {suffix!r} (PNG or JPEG required)")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I"):
                im = im.convert("L")
                arr = np.asarray(im, dtype=np.float64) / 255.0
                return ImageRaster(arr[:, :, None], color_space="Gray")
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
            return ImageRaster(arr, color_space="sRGB")
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise RasterError(f"decode failure for {path}: {exc}") from exc


def save_png(img: ImageRaster, path) -> None:
    """Write an 8-bit PNG (the only point where pixels are quantized)."""
    arr = np.clip(img.data, 0.0, 1.0)
    arr8 = np.round(arr * 255.0).astype(np.uint8)
    if arr8.shape[2] == 1:
        pil = Image.fromarray(arr8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr8, mode="RGB")
    pil.save(Path(path), format="PNG")


def png_bytes(img: ImageRaster) -> bytes:
    """PNG-encode a raster in memory (used by the HTTP classifier wire)."""
    arr8 = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    pil = Image.fromarray(arr8[:, :, 0], mode="L") if arr8.shape[2] == 1 else Image.fromarray(arr8, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def raster_from_png_bytes(blob: bytes) -> ImageRaster:
    try:
        with Image.open(io.BytesIO(blob)) as im:
            im.load()
            if im.mode == "L":
                return ImageRaster(np.asarray(im, dtype=np.float64)[:, :, None] / 255.0, color_space="Gray")
            return ImageRaster(np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0, color_space="sRGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise RasterError(f"decode failure: {exc}") from exc


# ---------------------------------------------------------------------------
# Color conversion (sRGB <-> Lab, D65 white point; Gray)
# ---------------------------------------------------------------------------

_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)


def _srgb_to_linear(v: np.ndarray) -> np.ndarray:
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(img: ImageRaster) -> np.ndarray:
    """sRGB (or Gray, expanded to RGB) to CIELAB, D65 white point.

    Returns an H x W x 3 float array; L in [0, 100].
    """
    if img.color_space == "Lab":
        return np.array(img.data)
    rgb = img.data
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    lin = _srgb_to_linear(rgb)
    xyz = lin @ _RGB_TO_XYZ.T
    xyz = xyz / _D65
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16.0) / 116.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def to_gray(img: ImageRaster) -> np.ndarray:
    """Luma (Rec. 601) as an H x W array in [0, 1]."""
    if img.channels == 1:
        return img.data[:, :, 0].copy()
    r, g, b = img.data[:, :, 0], img.data[:, :, 1], img.data[:, :, 2]
    return 0.299 * r + 0.587 * g + 0.114 * b


# ---------------------------------------------------------------------------
# Bicubic resampling (Catmull-Rom, replicate edges)
# ---------------------------------------------------------------------------

def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom kernel evaluated at |t|; exact 1 at 0 and 0 at integers."""
    a = _CUBIC_A
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    inner = (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0
    outer = a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))


def _resample_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """One separable bicubic pass along ``axis`` with replicate padding."""
    in_len = arr.shape[axis]
    scale = out_len / in_len
    dst = np.arange(out_len, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    moved = np.moveaxis(arr, axis, 0)
    out = None
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, in_len - 1)
        w = _cubic_weights(frac - tap)
        shape = (out_len,) + (1,) * (moved.ndim - 1)
        term = w.reshape(shape) * moved[idx]
        out = term if out is None else out + term
    return np.moveaxis(out, 0, axis)


def resize_bicubic(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """General bicubic resize of a 2-D or 3-D array (rows pass, then cols)."""
    if out_h < 1 or out_w < 1:
        raise RasterError("target dimensions must be positive")
    arr = np.asarray(values, dtype=np.float64)
    arr = _resample_axis(arr, out_h, axis=0)
    arr = _resample_axis(arr, out_w, axis=1)
    return arr


def bicubic_resample(img: ImageRaster, factor: int) -> ImageRaster:
    """Upscale by an integer factor in {1, 2, 4, 8}; output clamped to [0, 1].

    factor=1 is a bit-identical copy; constant images stay constant at any
    factor (the kernel weights sum to 1).
    """
    if factor not in (1, 2, 4, 8):
        raise RasterError(f"unsupported resample factor {factor} (expected 1, 2, 4 or 8)")
    out = resize_bicubic(img.data, img.height * factor, img.width * factor)
    return ImageRaster(np.clip(out, 0.0, 1.0), color_space=img.color_space)


# ---------------------------------------------------------------------------
# Gaussian blur (optionally masked)
# ---------------------------------------------------------------------------

def _gaussian_kernel_1d(sigma: float) -> np.ndarray:
    radius = max(1, int(round(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: ImageRaster, sigma: float, region: Optional[np.ndarray] = None) -> ImageRaster:
    """Gaussian blur with replicate-edge padding; kernel truncated at 3 sigma.

    When ``region`` (binary H x W mask) is given, output is
    (1 - M) * x + M * blur(x): pixels outside the mask are bit-identical to
    the input.
    """
    if not (sigma > 0):
        raise RasterError(f"sigma must be positive, got {sigma}")
    k = _gaussian_kernel_1d(float(sigma))
    blurred = img.data.copy()
    blurred = scipy.ndimage.convolve1d(blurred, k, axis=0, mode="nearest")
    blurred = scipy.ndimage.convolve1d(blurred, k, axis=1, mode="nearest")
    blurred = np.clip(blurred, 0.0, 1.0)
    if region is not None:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != (img.height, img.width):
            raise RasterError("region mask shape does not match image")
        out = np.array(img.data)
        out[mask] = blurred[mask]
        return ImageRaster(out, color_space=img.color_space)
    return ImageRaster(blurred, color_space=img.color_space)


# ---------------------------------------------------------------------------
# Frequency transforms (orthonormal type-II 2-D DCT)
# ---------------------------------------------------------------------------

def dct2(channel: np.ndarray) -> FeatureTensor:
    """Orthonormal type-II 2-D DCT of a single channel.

    Invertible: ``idct2(dct2(x)) == x`` to within 1e-8, and Parseval holds
    (sum of squares is preserved).
    """
    arr = np.asarray(channel, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise RasterError(f"dct2 expects a single channel, got shape {np.shape(channel)}")
    coeffs = scipy.fft.dctn(arr, type=2, norm="ortho")
    return FeatureTensor(coeffs[:, :, None])


def idct2(coeffs) -> np.ndarray:
    arr = coeffs.values[:, :, 0] if isinstance(coeffs, FeatureTensor) else np.asarray(coeffs, dtype=np.float64)
    if arr.ndim != 2:
        raise RasterError("idct2 expects a single 2-D coefficient grid")
    return scipy.fft.idctn(arr, type=2, norm="ortho")


# ---------------------------------------------------------------------------
# Map normalization
# ---------------------------------------------------------------------------

def normalize_map(values: np.ndarray) -> AttentionMap:
    """Min-max scale a grid to [0, 1].

    Degenerate input (max == min) maps to all-0.5 so downstream softmax
    weighting stays well-defined on blank heatmaps.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise RasterError(f"normalize_map expects a 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RasterError("normalize_map input contains NaN or inf")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return AttentionMap(np.full(arr.shape, 0.5))
    return AttentionMap((arr - lo) / (hi - lo))

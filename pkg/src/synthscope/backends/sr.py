"""Super-resolution backends: identity, native bicubic, and the fallback
wrapper that downgrades a failing remote resolver to bicubic."""

from __future__ import annotations

import logging
from typing import Tuple

from ..raster import ImageRaster, bicubic_resample
from .base import TransportError

logger = logging.getLogger(__name__)


class IdentitySuperResolver:
    provenance = "identity"

    def super_resolve(self, img: ImageRaster, factor: int) -> Tuple[ImageRaster, str]:
        return img, self.provenance


class BicubicSuperResolver:
    provenance = "bicubic"

    def super_resolve(self, img: ImageRaster, factor: int) -> Tuple[ImageRaster, str]:
        return bicubic_resample(img, factor), self.provenance


class FallbackSuperResolver:
    """Runs the primary resolver; on transport failure, either falls back to
    native bicubic (provenance "bicubic-fallback") or re-raises."""

    def __init__(self, primary, fall_back_to_bicubic: bool = True):
        self.primary = primary
        self.fall_back_to_bicubic = fall_back_to_bicubic
        self._bicubic = BicubicSuperResolver()

    def super_resolve(self, img: ImageRaster, factor: int) -> Tuple[ImageRaster, str]:
        try:
            return self.primary.super_resolve(img, factor)
        except TransportError as exc:
            if not self.fall_back_to_bicubic:
                raise
            logger.warning("remote super-resolution failed (%s); using bicubic fallback", exc)
            out, _ = self._bicubic.super_resolve(img, factor)
            return out, "bicubic-fallback"

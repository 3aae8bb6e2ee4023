"""Built-in reference classifier: a fixed logistic model over the low-
frequency block of the orthonormal 2-D DCT, with analytic input gradients.

The decision score is affine in the pixels (the DCT is linear), which gives
the attack suite exact closed forms to verify against.  Weights come from a
seeded generator, so any seed defines a concrete, reproducible model.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
import scipy.fft

from ..raster import FeatureTensor, ImageRaster
from .base import CAP_FEATURES, CAP_INPUT_GRAD, BackendError, ClassifierOutput


def _sigmoid(x: float) -> float:
    return float(1.0 / (1.0 + np.exp(-x)))


class ReferenceClassifier:
    """sigma(w . phi(x) + b) with phi = the top n_freq x n_freq orthonormal
    DCT coefficients per channel."""

    capabilities = (CAP_FEATURES, CAP_INPUT_GRAD)

    def __init__(self, seed: int = 0, n_freq: int = 8, channels: int = 3):
        rng = np.random.default_rng(seed)
        self.n_freq = n_freq
        self.channels = channels
        self.weights = rng.normal(0.0, 0.05, size=(n_freq, n_freq, channels))
        self.bias = float(rng.normal(0.0, 0.1))
        self.seed = seed

    # -- feature map -------------------------------------------------------

    def _dct_block(self, img: ImageRaster) -> np.ndarray:
        data = img.data
        if data.shape[0] < self.n_freq or data.shape[1] < self.n_freq:
            raise BackendError(
                f"image {data.shape[:2]} smaller than the {self.n_freq}x{self.n_freq} DCT block"
            )
        if data.shape[2] == 1 and self.channels == 3:
            data = np.repeat(data, 3, axis=2)
        elif data.shape[2] != self.channels:
            raise BackendError(f"expected {self.channels}-channel input, got {data.shape[2]}")
        block = np.empty((self.n_freq, self.n_freq, self.channels))
        for c in range(self.channels):
            coeffs = scipy.fft.dctn(data[:, :, c], type=2, norm="ortho")
            block[:, :, c] = coeffs[: self.n_freq, : self.n_freq]
        return block

    def score(self, img: ImageRaster) -> float:
        """Decision score s(x), affine in the pixels; positive means fake."""
        return float(np.sum(self.weights * self._dct_block(img)) + self.bias)

    def predict(self, img: ImageRaster) -> int:
        return int(self.score(img) > 0)

    def p_fake(self, img: ImageRaster) -> float:
        return _sigmoid(self.score(img))

    # -- classifier contract -----------------------------------------------

    def classify(self, img: ImageRaster) -> ClassifierOutput:
        block = self._dct_block(img)
        s = float(np.sum(self.weights * block) + self.bias)
        return ClassifierOutput(
            logits=np.array([0.0, s]),
            features=FeatureTensor(block),
            feature_grads=FeatureTensor(self.weights),
        )

    # -- gradients ---------------------------------------------------------

    def _score_gradient(self, shape: Tuple[int, int, int]) -> np.ndarray:
        """d s / d x: the weight block mapped back through the inverse DCT."""
        h, w, c_in = shape
        grad = np.zeros((h, w, self.channels))
        for c in range(self.channels):
            padded = np.zeros((h, w))
            padded[: self.n_freq, : self.n_freq] = self.weights[:, :, c]
            grad[:, :, c] = scipy.fft.idctn(padded, type=2, norm="ortho")
        if c_in == 1:
            # gray input was replicated into three channels
            return grad.sum(axis=2, keepdims=True)
        return grad

    def decision_and_grad(self, img: ImageRaster) -> Tuple[float, np.ndarray]:
        return self.score(img), self._score_gradient(img.data.shape)

    def margin_loss_and_grad(self, img: ImageRaster, y: int) -> Tuple[float, np.ndarray]:
        """Attack loss (1 - 2y) * s(x): affine in x, increases as the
        prediction moves away from the true label ``y`` (0 real, 1 fake)."""
        s, g = self.decision_and_grad(img)
        sign = 1.0 - 2.0 * y
        return sign * s, sign * g

    def bce_loss_and_grad(self, img: ImageRaster, y: int) -> Tuple[float, np.ndarray]:
        """Cross-entropy -log p(y); gradient is (p - y) chained through the
        linear DCT feature map."""
        s, g = self.decision_and_grad(img)
        p = _sigmoid(s)
        loss = float(np.logaddexp(0.0, s) - y * s)
        return loss, (p - y) * g

    def loss_and_grad(self, img: ImageRaster, y: int, loss: str = "margin"):
        if loss == "margin":
            return self.margin_loss_and_grad(img, y)
        if loss == "bce":
            return self.bce_loss_and_grad(img, y)
        raise BackendError(f"unknown loss {loss!r}")

"""Model-inference boundary: contracts, errors and tensor interchange.

Backends are plain objects with the methods below; the engine never runs a
neural network in-process.  Tensors cross the wire as base64 little-endian
32-bit floats with explicit dims.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..raster import FeatureTensor


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Network-level failure after retries were exhausted (retriable class)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class CapabilityError(BackendError):
    """A required capability (feature tensors, input gradients) is missing;
    raised at configuration time, never mid-run."""


class FixtureMissError(BackendError):
    """A scripted mock was asked for a prompt/image it has no fixture for."""


@dataclass
class ClassifierOutput:
    logits: np.ndarray  # (2,), index 0 = real, 1 = fake
    features: Optional[FeatureTensor] = None
    feature_grads: Optional[FeatureTensor] = None
    input_grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != (2,) or not np.all(np.isfinite(self.logits)):
            raise BackendError(f"logits must be two finite reals, got {self.logits}")
        if (self.features is None) != (self.feature_grads is None):
            raise BackendError("features and feature_grads must be provided together")
        if self.features is not None and self.features.shape != self.feature_grads.shape:
            raise BackendError("features and feature_grads dimensions differ")

    @property
    def p_fake(self) -> float:
        s = self.logits[1] - self.logits[0]
        return float(1.0 / (1.0 + np.exp(-s)))


# Capability flags a classifier may declare.
CAP_FEATURES = "features"
CAP_INPUT_GRAD = "input_grad"


def require_capabilities(classifier, needed: Sequence[str]) -> None:
    have = set(getattr(classifier, "capabilities", ()))
    missing = [c for c in needed if c not in have]
    if missing:
        raise CapabilityError(
            f"{type(classifier).__name__} lacks required capabilities: {', '.join(missing)}"
        )


# ---------------------------------------------------------------------------
# Tensor interchange
# ---------------------------------------------------------------------------

def encode_tensor(arr: np.ndarray) -> Dict:
    a = np.asarray(arr, dtype="<f4")
    return {"dims": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(payload: Dict) -> np.ndarray:
    dims = payload.get("dims")
    data = payload.get("data")
    if dims is None or data is None:
        raise BackendError("tensor payload must carry 'dims' and 'data'")
    raw = base64.b64decode(data)
    arr = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(dims)) if dims else 0
    if arr.size != expected:
        raise BackendError(f"tensor payload size {arr.size} does not match dims {dims}")
    return arr.reshape(dims).astype(np.float64)


def embeddings_matrix(vectors: List[Sequence[float]]) -> np.ndarray:
    """Stack backend vectors into a 2-D float array, checking dim consistency."""
    if not vectors:
        raise BackendError("empty embedding batch")
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise BackendError(f"inconsistent embedding dims in batch: {sorted(dims)}")
    return np.asarray(vectors, dtype=np.float64)


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Row-normalize; tolerates backends that pre-normalize or not."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise BackendError("zero vector cannot be normalized")
    return v / norms

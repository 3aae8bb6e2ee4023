"""HTTP inference clients.

Wire protocol (JSON bodies, vendor-neutral):
  embedding:  POST {base}/v1/embed     {"inputs": [...]}                -> {"vectors": [[...], ...]}
  generation: POST {base}/v1/generate  {"messages": [{"role","content"}],
                                        "max_tokens", "temperature"}    -> {"text": "..."}
  classifier: POST {base}/v1/classify  {"image": <base64 PNG>}          -> {"logits": [r, f],
                                        optional "features"/"feature_grads"/"input_grad"
                                        as {"dims": [...], "data": <base64 LE f32>}}
  super-res:  POST {base}/v1/super-resolve {"image": <b64 PNG>, "factor": n} -> {"image": <b64 PNG>}

Auth tokens come from an environment variable named in the endpoint config;
secrets never live in config files.  Clients are shareable handles, safe for
concurrent calls; the per-endpoint in-flight limit is enforced here, not by
callers.
"""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import requests

from ..raster import ImageRaster, png_bytes, raster_from_png_bytes
from .base import BackendError, ClassifierOutput, TransportError, decode_tensor

logger = logging.getLogger(__name__)


@dataclass
class BackendEndpoint:
    base_url: str
    timeout_ms: int = 30000
    max_retries: int = 2
    auth_env: Optional[str] = None
    max_in_flight: int = 4
    backoff_base_s: float = 0.05

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise BackendError("timeout must be positive")
        if self.max_retries < 0:
            raise BackendError("retries must be >= 0")
        if self.max_in_flight < 1:
            raise BackendError("max_in_flight must be >= 1")


class HttpClient:
    """Shared POST machinery: retries with exponential backoff on transport
    failures and 5xx, bounded in-flight requests, attempt accounting.

    Worst-case wall time per call is timeout * (retries + 1) plus the bounded
    backoff sum backoff_base * (2^retries - 1); a client never blocks the
    pipeline beyond that.
    """

    def __init__(self, endpoint: BackendEndpoint):
        self.endpoint = endpoint
        self.session = requests.Session()
        self._sem = threading.Semaphore(endpoint.max_in_flight)
        self.last_attempts = 0
        self.last_elapsed_s = 0.0

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.endpoint.auth_env:
            token = os.environ.get(self.endpoint.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def post_json(self, path: str, payload: Dict) -> Dict:
        url = self.endpoint.base_url.rstrip("/") + path
        timeout = self.endpoint.timeout_ms / 1000.0
        attempts = 0
        start = time.monotonic()
        last_error = "unknown"
        with self._sem:
            for attempt in range(self.endpoint.max_retries + 1):
                attempts = attempt + 1
                try:
                    resp = self.session.post(url, json=payload, headers=self._headers(), timeout=timeout)
                except requests.RequestException as exc:
                    last_error = str(exc)
                else:
                    if resp.status_code == 200:
                        self.last_attempts = attempts
                        self.last_elapsed_s = time.monotonic() - start
                        try:
                            return resp.json()
                        except ValueError as exc:
                            raise BackendError(f"invalid JSON from {url}: {exc}") from exc
                    if resp.status_code < 500:
                        raise BackendError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
                    last_error = f"HTTP {resp.status_code}"
                if attempt < self.endpoint.max_retries:
                    time.sleep(self.endpoint.backoff_base_s * (2 ** attempt))
        self.last_attempts = attempts
        self.last_elapsed_s = time.monotonic() - start
        raise TransportError(f"{url} failed after {attempts} attempts: {last_error}", attempts=attempts)


class HttpEmbedder:
    def __init__(self, endpoint: BackendEndpoint):
        self.client = HttpClient(endpoint)

    def _embed(self, inputs: List) -> List[List[float]]:
        if not inputs:
            raise BackendError("empty batch")
        body = self.client.post_json("/v1/embed", {"inputs": inputs})
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(inputs):
            raise BackendError("embedding response missing or mismatched 'vectors'")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise BackendError(f"inconsistent embedding dims in batch: {sorted(dims)}")
        return vectors

    def embed_texts(self, texts: Sequence[str]) -> List[List[float]]:
        return self._embed(list(texts))

    def embed_image_patches(self, crops: Sequence[ImageRaster]) -> List[List[float]]:
        payload = [base64.b64encode(png_bytes(c)).decode("ascii") for c in crops]
        return self._embed(payload)


class HttpGenerator:
    def __init__(self, endpoint: BackendEndpoint):
        self.client = HttpClient(endpoint)

    def generate(self, messages: Sequence[Dict[str, str]], max_tokens: int = 512, temperature: float = 0.0) -> str:
        if not messages:
            raise BackendError("empty messages")
        body = self.client.post_json(
            "/v1/generate",
            {"messages": list(messages), "max_tokens": max_tokens, "temperature": temperature},
        )
        text = body.get("text")
        if not isinstance(text, str):
            raise BackendError("generation response missing 'text'")
        return text


class HttpClassifier:
    def __init__(self, endpoint: BackendEndpoint, capabilities: Sequence[str] = ()):
        self.client = HttpClient(endpoint)
        self.capabilities = tuple(capabilities)

    def classify(self, img: ImageRaster) -> ClassifierOutput:
        body = self.client.post_json(
            "/v1/classify", {"image": base64.b64encode(png_bytes(img)).decode("ascii")}
        )
        logits = body.get("logits")
        if logits is None:
            raise BackendError("classifier response missing 'logits'")
        from ..raster import FeatureTensor

        features = body.get("features")
        grads = body.get("feature_grads")
        input_grad = body.get("input_grad")
        return ClassifierOutput(
            logits=logits,
            features=FeatureTensor(decode_tensor(features)) if features else None,
            feature_grads=FeatureTensor(decode_tensor(grads)) if grads else None,
            input_grad=decode_tensor(input_grad) if input_grad else None,
        )


class RemoteSuperResolver:
    provenance = "remote"

    def __init__(self, endpoint: BackendEndpoint, factors: Sequence[int] = (1, 2, 4, 8)):
        self.client = HttpClient(endpoint)
        self.factors = tuple(factors)

    def super_resolve(self, img: ImageRaster, factor: int):
        if factor not in self.factors:
            raise BackendError(f"remote resolver does not support factor {factor}")
        body = self.client.post_json(
            "/v1/super-resolve",
            {"image": base64.b64encode(png_bytes(img)).decode("ascii"), "factor": factor},
        )
        blob = body.get("image")
        if not blob:
            raise BackendError("super-resolve response missing 'image'")
        out = raster_from_png_bytes(base64.b64decode(blob))
        if out.height != img.height * factor or out.width != img.width * factor:
            raise BackendError(
                f"super-resolve returned {out.height}x{out.width}, expected x{factor} dims"
            )
        return out, self.provenance

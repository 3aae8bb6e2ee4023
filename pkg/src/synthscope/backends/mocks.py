"""Deterministic mock backends.

Every mock derives its output from a content hash plus a fixed seed — no
mutable RNG state — so results are identical across runs, call orders and
thread counts.  The scripted generator serves transcript fixtures keyed by a
prompt hash and can optionally synthesize grammar-valid completions for
prompts with no fixture (used by ``--mock`` pipeline runs).
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..raster import ImageRaster, resize_bicubic, to_gray
from .base import (
    CAP_FEATURES,
    BackendError,
    ClassifierOutput,
    FixtureMissError,
)


def _sha(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "big")


def prompt_hash(messages: Sequence[Dict[str, str]]) -> str:
    canonical = json.dumps(list(messages), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def image_key(img: ImageRaster) -> str:
    """Content hash of a raster (8-bit quantized, like the PNG wire form)."""
    arr8 = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    return hashlib.sha256(arr8.tobytes() + str(arr8.shape).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Embedding mock
# ---------------------------------------------------------------------------

class MockEmbedder:
    """Seeded random-projection embedder.

    Texts: each token hashes to a fixed pseudo-random vector; the text
    embedding is the normalized token mean.  Image patches: a fixed random
    matrix projects linear pixel features (bicubic 8x8 gray downsample plus a
    bias term), so the map is linear in the pixels and smooth under small
    perturbations.
    """

    def __init__(self, seed: int = 0, dim: int = 64):
        self.seed = seed
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._proj = rng.normal(0.0, 1.0, size=(8 * 8 + 1, dim))

    def _token_vector(self, token: str) -> np.ndarray:
        h = _sha(f"{self.seed}:{token}".encode("utf-8"))
        rng = np.random.default_rng(h)
        return rng.normal(0.0, 1.0, size=self.dim)

    def embed_texts(self, texts: Sequence[str]) -> List[List[float]]:
        if not texts:
            raise BackendError("empty batch")
        out = []
        for text in texts:
            tokens = re.findall(r"[a-z0-9']+", text.lower())
            if not tokens:
                tokens = ["<empty>"]
            vec = np.mean([self._token_vector(t) for t in tokens], axis=0)
            norm = np.linalg.norm(vec)
            out.append((vec / norm if norm > 0 else vec).tolist())
        return out

    def embed_image_patches(self, crops: Sequence[ImageRaster]) -> List[List[float]]:
        if not crops:
            raise BackendError("empty batch")
        out = []
        for crop in crops:
            gray = to_gray(crop)
            feat = resize_bicubic(gray, 8, 8).ravel()
            feat = np.concatenate([feat, [1.0]])
            out.append((feat @ self._proj).tolist())
        return out


# ---------------------------------------------------------------------------
# Classifier mock
# ---------------------------------------------------------------------------

class ScriptedClassifier:
    """Serves fixture outputs keyed by image content hash.

    Each fixture entry: {"logits": [r, f], "features": tensor?, "feature_grads": tensor?}
    where tensors are plain nested lists.  A ``default`` entry, when given,
    answers unknown images; otherwise misses raise FixtureMissError.
    """

    def __init__(self, fixtures: Dict[str, Dict], default: Optional[Dict] = None):
        self.fixtures = fixtures
        self.default = default
        caps = set()
        for entry in list(fixtures.values()) + ([default] if default else []):
            if entry and entry.get("features") is not None:
                caps.add(CAP_FEATURES)
        self.capabilities = tuple(sorted(caps))

    def classify(self, img: ImageRaster) -> ClassifierOutput:
        entry = self.fixtures.get(image_key(img), self.default)
        if entry is None:
            raise FixtureMissError(f"no classifier fixture for image {image_key(img)[:12]}")
        from ..raster import FeatureTensor

        features = entry.get("features")
        grads = entry.get("feature_grads")
        return ClassifierOutput(
            logits=np.asarray(entry["logits"], dtype=np.float64),
            features=FeatureTensor(np.asarray(features, dtype=np.float64)) if features is not None else None,
            feature_grads=FeatureTensor(np.asarray(grads, dtype=np.float64)) if grads is not None else None,
        )


# ---------------------------------------------------------------------------
# Generation mock
# ---------------------------------------------------------------------------

_ACTION_SEQUENCE = ("inspect_region", "evaluate_texture", "check_edges", "check_symmetry")


def load_transcripts(path) -> Dict[str, str]:
    """Read a transcript fixture file: JSONL of {prompt_sha256, completion}."""
    table: Dict[str, str] = {}
    with open(Path(path), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            table[row["prompt_sha256"]] = row["completion"]
    return table


class ScriptedGenerator:
    """Text-generation mock.

    Completions come from a transcript table keyed by prompt hash.  On a
    miss, behavior follows ``on_miss``: "error" raises FixtureMissError (the
    strict fixture contract used in tests), "synthesize" produces a
    deterministic, grammar-valid completion derived from the prompt content
    (used by --mock pipeline runs so arbitrary prompts stay reproducible).
    """

    def __init__(
        self,
        table: Optional[Dict[str, str]] = None,
        on_miss: str = "error",
        seed: int = 0,
    ):
        if on_miss not in ("error", "synthesize"):
            raise BackendError(f"on_miss must be 'error' or 'synthesize', got {on_miss!r}")
        self.table = dict(table or {})
        self.on_miss = on_miss
        self.seed = seed
        self.call_count = 0
        self._lock = threading.Lock()

    def generate(self, messages: Sequence[Dict[str, str]], max_tokens: int = 512, temperature: float = 0.0) -> str:
        with self._lock:
            self.call_count += 1
        key = prompt_hash(messages)
        if key in self.table:
            return self.table[key]
        if self.on_miss == "error":
            raise FixtureMissError(f"no transcript fixture for prompt {key[:12]}")
        return self._synthesize(messages, key)

    # -- deterministic synthesis ------------------------------------------

    def _rng(self, key: str) -> np.random.Generator:
        return np.random.default_rng(_sha(f"{self.seed}:{key}".encode()))

    def _synthesize(self, messages: Sequence[Dict[str, str]], key: str) -> str:
        text = "\n".join(m.get("content", "") for m in messages)
        if "Truthfulness" in text:
            return self._judge_reply(text, key)
        if "Specificity" in text:
            return self._rubric_reply(key)
        if "Action Input" in text:
            return self._react_reply(messages, text)
        if "Final Explanation" in text:
            return self._cot_reply(text)
        if "Rewrite the finding" in text:
            return self._paraphrase_reply(text)
        rng = self._rng(key)
        return f"Deterministic mock reply {rng.integers(0, 10 ** 6)}."

    @staticmethod
    def _first_region(text: str) -> str:
        m = re.search(r"\b([CS]\d+\.P\d+)\b", text)
        return m.group(1) if m else "S0.P0"

    @staticmethod
    def _artifact_name(text: str) -> str:
        m = re.search(r'finding "([^"]+)"', text)
        if m:
            return m.group(1)
        m = re.search(r'artifact "([^"]+)"', text)
        return m.group(1) if m else "visual anomaly"

    def _react_reply(self, messages: Sequence[Dict[str, str]], text: str) -> str:
        observations = sum(
            1 for m in messages if m.get("role") == "user" and m.get("content", "").startswith("Observation:")
        )
        rid = self._first_region(text)
        artifact = self._artifact_name(text)
        if observations < 2:
            action = _ACTION_SEQUENCE[observations % len(_ACTION_SEQUENCE)]
            thought = (
                f"I should examine region {rid} for signs of {artifact}."
                if observations == 0
                else f"The previous observation on {rid} warrants a texture check."
            )
            return f"Thought: {thought}\nAction: {action}\nAction Input: {rid}"
        description = (
            f"Region {rid} shows measurable evidence consistent with {artifact}; "
            "statistics from the inspected crop support the hypothesis."
        )
        return (
            f"Thought: The gathered observations on {rid} are sufficient to conclude.\n"
            "Action: finish\n"
            "Action Input: none\n"
            f'Final Answer: {{"description": "{description}"}}'
        )

    def _cot_reply(self, text: str) -> str:
        rid = self._first_region(text)
        artifact = self._artifact_name(text)
        return (
            f"Step 1: the weighted evidence concentrates on region {rid}.\n"
            f"Step 2: the measured statistics match how {artifact} typically manifests.\n"
            f"Final Explanation: region {rid} carries the strongest signs of {artifact}, "
            "based on the inspected crop statistics and texture measurements."
        )

    def _judge_reply(self, text: str, key: str) -> str:
        rng = self._rng(key)
        t, r, c = (int(rng.integers(2, 6)) for _ in range(3))
        final = (t + r + c) / 3.0
        return (
            f"Truthfulness: {t}\n"
            f"Relevance: {r}\n"
            f"Clarity: {c}\n"
            f"Final Score: {final:.4f}\n"
            f"Justification: the description aligns with the visible evidence at strength {final:.2f}."
        )

    def _rubric_reply(self, key: str) -> str:
        rng = self._rng(key)
        cl, sp, re_ = (int(rng.integers(2, 6)) for _ in range(3))
        return f"Clarity: {cl}\nSpecificity: {sp}\nRelevance: {re_}"

    def _paraphrase_reply(self, text: str) -> str:
        m = re.search(r"Text:\s*(.+)", text, re.DOTALL)
        body = m.group(1).strip() if m else "the finding"
        body = body.splitlines()[0].strip()
        if "technical" in text:
            return f"Quantitative assessment: {body}"
        if "human_friendly" in text:
            return f"In plain terms, {body}"
        if "accessibility" in text:
            return f"Simply put, {body}"
        return body


class EchoGenerator:
    """Returns the text after the 'Text:' marker verbatim (identity mock)."""

    def __init__(self):
        self.call_count = 0

    def generate(self, messages: Sequence[Dict[str, str]], max_tokens: int = 512, temperature: float = 0.0) -> str:
        self.call_count += 1
        text = "\n".join(m.get("content", "") for m in messages)
        m = re.search(r"Text:\s*(.+)", text, re.DOTALL)
        return m.group(1).strip() if m else text

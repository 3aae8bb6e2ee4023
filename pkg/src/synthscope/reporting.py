"""Filtering, two-key ranking and styled report composition."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .evaluation import JudgeVerdict, ParaphraseResult, RubricScore
from .scoring import ArtifactCategory

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


class ReportingError(ValueError):
    pass


@dataclass
class ExplanationRecord:
    """One artifact hypothesis with its full evaluation metadata."""

    artifact: ArtifactCategory
    description: str
    rubric: RubricScore
    verdict: JudgeVerdict
    paraphrases: Dict[str, ParaphraseResult]
    regions: List[Tuple[str, float]]  # (region id, weight)
    flags: List[str] = field(default_factory=list)


@dataclass
class ReportEntry:
    artifact_id: str
    artifact_name: str
    text: str
    confidence: float
    quality: float
    regions: List[str]
    justification: Optional[str] = None
    overlay: Optional[str] = None
    provenance: str = "verified-explanation"


@dataclass
class ForensicReport:
    image_id: str
    classifier_score: float
    sr_provenance: str
    sr_factor: int
    entries: List[ReportEntry]
    style: str
    k: int
    config_hash: str
    pipeline_version: str
    note: Optional[str] = None
    attention_overlay: Optional[str] = None

    def as_dict(self) -> Dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "image_id": self.image_id,
            "classifier": {"p_fake": round(self.classifier_score, 6)},
            "super_resolution": {"provenance": self.sr_provenance, "factor": self.sr_factor},
            "style": self.style,
            "k": self.k,
            "entries": [
                {
                    "artifact_id": e.artifact_id,
                    "artifact_name": e.artifact_name,
                    "text": e.text,
                    "confidence": round(e.confidence, 6),
                    "quality": round(e.quality, 6),
                    "regions": e.regions,
                    "justification": e.justification,
                    "overlay": e.overlay,
                    "provenance": e.provenance,
                }
                for e in self.entries
            ],
            "note": self.note,
            "attention_overlay": self.attention_overlay,
            "config_hash": self.config_hash,
            "pipeline_version": self.pipeline_version,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Filter and rank
# ---------------------------------------------------------------------------

def filter_records(records: Sequence[ExplanationRecord], tau_filter: float = 0.5) -> List[ExplanationRecord]:
    """Keep records with verdict Yes AND confidence >= tau (boundary kept:
    confidence equal to the threshold does not fall below it)."""
    return [r for r in records if r.verdict.verdict == "Yes" and r.verdict.confidence >= tau_filter]


def rank_records(records: Sequence[ExplanationRecord]) -> List[ExplanationRecord]:
    """Two-key order: quality G first, judge confidence as tiebreaker,
    artifact slug as the final deterministic tiebreak."""
    return sorted(records, key=lambda r: (-r.rubric.G, -r.verdict.confidence, r.artifact.id))


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def content_hash_name(prefix: str, data: bytes, suffix: str = ".png") -> str:
    return f"{prefix}-{hashlib.sha256(data).hexdigest()[:12]}{suffix}"


def compose_report(
    image_id: str,
    classifier_score: float,
    sr_provenance: str,
    sr_factor: int,
    ranked: Sequence[ExplanationRecord],
    style: str,
    k: int = 5,
    config_hash: str = "",
    pipeline_version: str = "0",
    include_justification: bool = True,
    overlays: Optional[Dict[str, str]] = None,
) -> ForensicReport:
    """Retain the top-k ranked records and render them in the chosen style.

    The k-entry report is always a prefix of the (k+1)-entry report for the
    same inputs.  An empty survivor list yields a valid report with an
    explicit note.
    """
    if k < 1:
        raise ReportingError("k must be >= 1")
    entries: List[ReportEntry] = []
    for rec in list(ranked)[:k]:
        pr = rec.paraphrases.get(style)
        if pr is None:
            raise ReportingError(f"record {rec.artifact.id!r} missing paraphrase for style {style!r}")
        entries.append(
            ReportEntry(
                artifact_id=rec.artifact.id,
                artifact_name=rec.artifact.name,
                text=pr.text,
                confidence=rec.verdict.confidence,
                quality=rec.rubric.G,
                regions=[rid for rid, _ in rec.regions],
                justification=rec.verdict.justification if include_justification else None,
                overlay=(overlays or {}).get(rec.artifact.id),
            )
        )
    note = None if entries else "no verified artifacts"
    return ForensicReport(
        image_id=image_id,
        classifier_score=classifier_score,
        sr_provenance=sr_provenance,
        sr_factor=sr_factor,
        entries=entries,
        style=style,
        k=k,
        config_hash=config_hash,
        pipeline_version=pipeline_version,
        note=note,
    )


def profile_only_report(
    image_id: str,
    classifier_score: float,
    sr_provenance: str,
    sr_factor: int,
    profile_rows: Sequence[Tuple[ArtifactCategory, float]],
    k: int,
    config_hash: str,
    pipeline_version: str,
) -> ForensicReport:
    """Report for images where the ambiguity trigger did not fire: entries
    carry semantic-profile provenance and engine-templated text, with no
    generation-backend involvement."""
    entries = []
    for cat, score in list(profile_rows)[:k]:
        entries.append(
            ReportEntry(
                artifact_id=cat.id,
                artifact_name=cat.name,
                text=(
                    f"Semantic screening ranked '{cat.name}' highest "
                    f"(score {score:.4f}); regions voted consistently, so deep "
                    "reasoning was not required."
                ),
                confidence=max(0.0, min(1.0, (score + 1.0) / 2.0)),
                quality=0.0,
                regions=[],
                provenance="semantic-profile",
            )
        )
    return ForensicReport(
        image_id=image_id,
        classifier_score=classifier_score,
        sr_provenance=sr_provenance,
        sr_factor=sr_factor,
        entries=entries,
        style="profile",
        k=k,
        config_hash=config_hash,
        pipeline_version=pipeline_version,
        note="semantic profile only; ambiguity trigger did not fire",
    )


def render_markdown(report: ForensicReport) -> str:
    """Human-readable rendering of a report."""
    lines = [
        f"# Forensic report: {report.image_id}",
        "",
        f"- Classifier synthetic probability: **{report.classifier_score:.4f}**",
        f"- Super-resolution: {report.sr_provenance} (x{report.sr_factor})",
        f"- Style: {report.style}",
        f"- Config hash: `{report.config_hash}`",
        f"- Engine version: {report.pipeline_version}",
        "",
    ]
    if report.note:
        lines += [f"> {report.note}", ""]
    for i, e in enumerate(report.entries, start=1):
        lines += [f"## {i}. {e.artifact_name}", ""]
        lines += [e.text, ""]
        meta = [f"confidence {e.confidence:.3f}"]
        if e.provenance == "verified-explanation":
            meta.insert(0, f"quality {e.quality:.3f}")
        if e.regions:
            meta.append("regions: " + ", ".join(e.regions))
        lines += ["*" + "; ".join(meta) + "*", ""]
        if e.justification:
            lines += [f"> Judge: {e.justification}", ""]
        if e.overlay:
            lines += [f"![{e.artifact_id}]({e.overlay})", ""]
    return "\n".join(lines).rstrip() + "\n"


# ---------------------------------------------------------------------------
# Overlay rendering
# ---------------------------------------------------------------------------

def heat_colormap(values: np.ndarray) -> np.ndarray:
    """Deterministic blue->red ramp for salience values in [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    rgb = np.empty(v.shape + (3,))
    rgb[..., 0] = np.clip(1.5 * v - 0.25, 0.0, 1.0)
    rgb[..., 1] = np.clip(1.0 - 2.0 * np.abs(v - 0.5), 0.0, 1.0)
    rgb[..., 2] = np.clip(1.25 - 1.5 * v, 0.0, 1.0)
    return rgb


def heatmap_overlay(image: np.ndarray, heat: np.ndarray, alpha: float = 0.45) -> np.ndarray:
    base = np.asarray(image, dtype=np.float64)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    return np.clip((1.0 - alpha) * base + alpha * heat_colormap(heat), 0.0, 1.0)


def region_outline_overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Highlight a region's boundary in red over the raster."""
    base = np.asarray(image, dtype=np.float64)
    if base.shape[2] == 1:
        base = np.repeat(base, 3, axis=2)
    m = np.asarray(mask, dtype=bool)
    interior = np.zeros_like(m)
    interior[1:-1, 1:-1] = m[1:-1, 1:-1] & m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    boundary = m & ~interior
    out = base.copy()
    out[boundary] = np.array([0.9, 0.1, 0.1])
    return out

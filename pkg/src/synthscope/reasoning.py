"""ReAct loop, CoT synthesis and evidential-narrative assembly.

The model reasons; the engine measures.  Every Observation is computed here
from the evidence pack (crop statistics, autocorrelation, flip difference,
edge quartiles), so observations are deterministic functions of the evidence
and the whole module is bit-reproducible under a scripted backend.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.ndimage

from .raster import ImageRaster, to_gray
from .scoring import ArtifactCategory, SemanticProfile

logger = logging.getLogger(__name__)

ACTIONS = ("inspect_region", "evaluate_texture", "check_symmetry", "check_edges", "finish")


class ReasoningError(ValueError):
    pass


def load_template(name: str) -> str:
    return resources.files("synthscope.templates").joinpath(f"{name}.txt").read_text("utf-8")


@dataclass
class ReActStep:
    index: int
    thought: str
    action: str
    action_input: str
    observation: str  # empty on the finish step

    def as_dict(self) -> Dict:
        return {
            "index": self.index,
            "thought": self.thought,
            "action": self.action,
            "action_input": self.action_input,
            "observation": self.observation,
        }


@dataclass
class ReasoningTrace:
    steps: List[ReActStep] = field(default_factory=list)
    cot_summary: str = ""
    final_description: str = ""
    token_budget_used: int = 0
    malformed: bool = False
    budget_exhausted: bool = False
    cot_fallback: bool = False


@dataclass
class EvidenceRegion:
    region_id: str
    w_tilde: float
    crop: ImageRaster
    mask: np.ndarray
    top_sims: List[Tuple[str, float]]


@dataclass
class EvidencePack:
    regions: List[EvidenceRegion]
    profile: SemanticProfile

    def region(self, region_id: str) -> Optional[EvidenceRegion]:
        for r in self.regions:
            if r.region_id == region_id:
                return r
        return None

    def evidence_lines(self) -> str:
        lines = []
        for r in self.regions:
            mean = float(r.crop.data[r.mask].mean()) if r.mask.any() else 0.0
            lines.append(f"- {r.region_id} (weight {r.w_tilde:.4f}): mean intensity {mean:.4f}")
        return "\n".join(lines)

    def score_lines(self) -> str:
        order = np.argsort(-self.profile.scores)
        return "\n".join(
            f"- {self.profile.category_ids[i]}: {self.profile.scores[i]:.4f}" for i in order[:5]
        )


# ---------------------------------------------------------------------------
# Engine-computed observations
# ---------------------------------------------------------------------------

def observe_inspect_region(region: EvidenceRegion) -> str:
    vals = region.crop.data[region.mask]
    mean = float(vals.mean()) if vals.size else 0.0
    std = float(vals.std()) if vals.size else 0.0
    sims = ", ".join(f"{slug}={sim:.4f}" for slug, sim in region.top_sims[:2])
    return (
        f"region {region.region_id}: mean={mean:.4f} std={std:.4f} "
        f"weight={region.w_tilde:.4f} top categories: {sims}"
    )


def _axis_period(g: np.ndarray, axis: int) -> Optional[Tuple[int, float]]:
    """First autocovariance peak along one axis: (lag, strength), or None.

    Smooth/constant axes (lag-1 correlation ~1) carry no repetition signal
    and are skipped; otherwise the smallest lag >= 2 that is a local maximum
    above 0.3 wins.
    """
    length = g.shape[axis]
    var = float(np.mean(g * g))
    if length < 5 or var <= 0:
        return None
    max_lag = length // 2
    profile = np.empty(max_lag + 1)
    profile[0] = 1.0
    for lag in range(1, max_lag + 1):
        a = np.take(g, range(0, length - lag), axis=axis)
        b = np.take(g, range(lag, length), axis=axis)
        profile[lag] = float(np.mean(a * b)) / var
    if profile[1] > 0.98:
        return None
    for lag in range(2, max_lag):
        if profile[lag] > profile[lag - 1] and profile[lag] >= profile[lag + 1] and profile[lag] > 0.3:
            return lag, float(profile[lag])
    return None


def observe_texture(region: EvidenceRegion) -> str:
    """Autocorrelation first-peak lag: the 'repeats every ~N px' signal."""
    gray = to_gray(region.crop)
    g = gray - gray.mean()
    if not np.any(g):
        return f"region {region.region_id}: texture is uniform, no repetition signal"
    peaks = []
    for axis, name in ((1, "x"), (0, "y")):
        found = _axis_period(g, axis)
        if found:
            peaks.append((found[1], found[0], name))
    if not peaks:
        return f"region {region.region_id}: no clear periodic repetition"
    strength, lag, name = max(peaks)
    return (
        f"region {region.region_id}: texture repeats every ~{lag} px along {name} "
        f"(strength {strength:.4f})"
    )


def observe_symmetry(region: EvidenceRegion) -> str:
    arr = region.crop.data
    diff = float(np.mean(np.abs(arr - arr[:, ::-1, :])))
    return f"region {region.region_id}: horizontal-flip L1 difference {diff:.4f}"


def observe_edges(region: EvidenceRegion) -> str:
    gray = to_gray(region.crop)
    gx = scipy.ndimage.sobel(gray, axis=1, mode="nearest")
    gy = scipy.ndimage.sobel(gray, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    q1, q2, q3 = (float(np.percentile(mag, q)) for q in (25, 50, 75))
    return f"region {region.region_id}: edge magnitude quartiles q1={q1:.4f} q2={q2:.4f} q3={q3:.4f}"


_OBSERVERS = {
    "inspect_region": observe_inspect_region,
    "evaluate_texture": observe_texture,
    "check_symmetry": observe_symmetry,
    "check_edges": observe_edges,
}


def compute_observation(action: str, action_input: str, evidence: EvidencePack) -> str:
    region = evidence.region(action_input.strip())
    if region is None:
        known = ", ".join(r.region_id for r in evidence.regions)
        return f"unknown region {action_input.strip()!r}; known regions: {known}"
    return _OBSERVERS[action](region)


# ---------------------------------------------------------------------------
# Transcript grammar
# ---------------------------------------------------------------------------

_STEP_RE = re.compile(
    r"Thought:\s*(?P<thought>.*?)\s*^Action:\s*(?P<action>\S+)\s*$\s*^Action Input:\s*(?P<input>[^\n]*)",
    re.MULTILINE | re.DOTALL,
)
_FINAL_RE = re.compile(r"Final Answer:\s*(\{.*\})", re.DOTALL)


def parse_turn(completion: str) -> Tuple[str, str, str, Optional[str]]:
    """Parse one model turn into (thought, action, action_input, description).

    Raises ReasoningError on any grammar violation: missing fields, an action
    outside the closed set, or a finish turn without a parsable Final Answer
    JSON carrying a "description" key.
    """
    m = _STEP_RE.search(completion)
    if not m:
        raise ReasoningError("turn does not follow the Thought/Action/Action Input format")
    thought = m.group("thought").strip()
    action = m.group("action").strip()
    action_input = m.group("input").strip()
    if action not in ACTIONS:
        raise ReasoningError(f"action {action!r} not in the allowed set {ACTIONS}")
    description = None
    if action == "finish":
        fm = _FINAL_RE.search(completion)
        if not fm:
            raise ReasoningError("finish turn is missing the Final Answer JSON line")
        try:
            payload = json.loads(fm.group(1))
        except json.JSONDecodeError as exc:
            raise ReasoningError(f"Final Answer is not valid JSON: {exc}") from exc
        description = payload.get("description")
        if not isinstance(description, str) or not description.strip():
            raise ReasoningError('Final Answer JSON lacks a non-empty "description"')
    return thought, action, action_input, description


_GRAMMAR_REMINDER = (
    "Your last reply violated the required format. Reply again with exactly:\n"
    "Thought: <reasoning>\nAction: <one of: "
    + ", ".join(ACTIONS)
    + ">\nAction Input: <region id or none>\n"
    "and, only when the action is finish, a final line "
    'Final Answer: {"description": "..."}'
)


def _count_tokens(text: str) -> int:
    return len(text.split())


def run_react(
    artifact: ArtifactCategory,
    evidence: EvidencePack,
    backend,
    max_steps: int = 6,
    max_tokens: int = 4096,
    retries: int = 2,
) -> ReasoningTrace:
    """Drive one ReAct trace for one artifact hypothesis.

    The backend is called at most ``max_steps`` times for the loop plus at
    most ``retries`` extra calls per step for grammar repair.  The engine
    answers every non-finish action with a computed Observation.
    """
    if not evidence.regions:
        raise ReasoningError("evidence pack has no regions")
    if max_steps < 1 or max_tokens < 1:
        raise ReasoningError("limits must be positive")

    template = load_template("react")
    prompt = template.format(
        artifact_name=artifact.name,
        group=artifact.group,
        evidence=evidence.evidence_lines(),
        scores=evidence.score_lines(),
    )
    messages: List[Dict[str, str]] = [{"role": "user", "content": prompt}]
    trace = ReasoningTrace()

    for step_index in range(max_steps):
        parsed = None
        for attempt in range(retries + 1):
            completion = backend.generate(messages, max_tokens=max_tokens)
            trace.token_budget_used += _count_tokens(completion)
            try:
                parsed = parse_turn(completion)
                break
            except ReasoningError as exc:
                logger.debug("grammar violation at step %d attempt %d: %s", step_index, attempt, exc)
                if attempt < retries:
                    messages.append({"role": "assistant", "content": completion})
                    messages.append({"role": "user", "content": _GRAMMAR_REMINDER})
        if parsed is None:
            trace.malformed = True
            return trace

        thought, action, action_input, description = parsed
        if action == "finish":
            trace.steps.append(ReActStep(step_index, thought, action, action_input, ""))
            trace.final_description = description or ""
            return trace

        observation = compute_observation(action, action_input, evidence)
        trace.steps.append(ReActStep(step_index, thought, action, action_input, observation))
        messages.append({"role": "assistant", "content": completion})
        messages.append({"role": "user", "content": f"Observation: {observation}"})
        if trace.token_budget_used > max_tokens:
            break

    trace.budget_exhausted = True
    return trace


# ---------------------------------------------------------------------------
# CoT synthesis
# ---------------------------------------------------------------------------

_COT_MARKER = "Final Explanation:"


def synthesize_cot(
    steps: Sequence[ReActStep],
    artifact: ArtifactCategory,
    evidence: EvidencePack,
    backend,
    retries: int = 1,
) -> Tuple[str, bool]:
    """One consolidation call over the completed trace.

    Returns (summary, fallback_flag).  When the marker is absent after a
    retry, the concatenated thoughts stand in and the flag is set.
    """
    if not steps:
        raise ReasoningError("empty trace")
    rendered = "\n".join(
        f"{s.index + 1}. Thought: {s.thought} | Action: {s.action}({s.action_input})"
        + (f" | Observation: {s.observation}" if s.observation else "")
        for s in steps
    )
    prompt = load_template("cot").format(
        artifact_name=artifact.name,
        steps=rendered,
        evidence=evidence.evidence_lines(),
    )
    messages = [{"role": "user", "content": prompt}]
    for attempt in range(retries + 1):
        completion = backend.generate(messages)
        if _COT_MARKER in completion:
            return completion.split(_COT_MARKER, 1)[1].strip(), False
        if attempt < retries:
            messages.append({"role": "assistant", "content": completion})
            messages.append(
                {"role": "user", "content": f'Repeat your summary ending with a line starting "{_COT_MARKER}".'}
            )
    fallback = " ".join(s.thought for s in steps if s.thought)
    return fallback, True


# ---------------------------------------------------------------------------
# Evidential narrative
# ---------------------------------------------------------------------------

@dataclass
class EvidentialNarrative:
    category: str
    regions: List[Tuple[str, float]]  # (region id, w_tilde)
    narrative: str
    step_citations: List[int]
    sr_meta: Dict
    hierarchy_summary: Dict


_REGION_TOKEN_RE = re.compile(r"\b[CS]\d+\.P\d+\b")


def assemble_narrative(
    sr_meta: Dict,
    hierarchy_summary: Dict,
    profile: SemanticProfile,
    cot_summary: str,
    steps: Sequence[ReActStep],
    artifact: ArtifactCategory,
    evidence: EvidencePack,
    taxonomy: Sequence[ArtifactCategory],
) -> EvidentialNarrative:
    """Fuse the category, cited regions and reasoning trace into the
    intermediate evidential record consumed by evaluation."""
    if not cot_summary.strip():
        raise ReasoningError("empty explanation summary")
    if artifact.id not in {c.id for c in taxonomy}:
        raise ReasoningError(f"category {artifact.id!r} absent from the taxonomy")
    known = {r.region_id: r.w_tilde for r in evidence.regions}
    cited = [t for t in _REGION_TOKEN_RE.findall(cot_summary) if t in known]
    seen = set()
    cited = [t for t in cited if not (t in seen or seen.add(t))]
    if not cited:
        cited = [evidence.regions[0].region_id]
    return EvidentialNarrative(
        category=artifact.id,
        regions=[(rid, known[rid]) for rid in cited],
        narrative=cot_summary,
        step_citations=[s.index for s in steps if s.action != "finish"],
        sr_meta=dict(sr_meta),
        hierarchy_summary=dict(hierarchy_summary),
    )

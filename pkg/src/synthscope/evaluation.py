"""Explanation evaluation: rubric scoring, multimodal-judge verification,
style-conditioned paraphrasing, token-matching fidelity and readability."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .reasoning import load_template
from .scoring import ArtifactCategory

logger = logging.getLogger(__name__)

PARAPHRASE_STYLES = ("technical", "human_friendly", "accessibility")

# Yes/No bridge for the scored judge template: the verdict is Yes when the
# mean of the three 0-5 scores reaches the midpoint.
JUDGE_YES_THRESHOLD = 2.5


class EvaluationError(ValueError):
    pass


@dataclass
class RubricScore:
    clarity: float
    specificity: float
    relevance: float
    G: float
    raw_1to5: Optional[Tuple[float, float, float]] = None
    flagged: bool = False

    def as_dict(self) -> Dict:
        return {
            "clarity": round(self.clarity, 6),
            "specificity": round(self.specificity, 6),
            "relevance": round(self.relevance, 6),
            "G": round(self.G, 6),
            "raw_1to5": list(self.raw_1to5) if self.raw_1to5 else None,
            "flagged": self.flagged,
        }


@dataclass
class JudgeVerdict:
    verdict: str  # "Yes" | "No"
    confidence: float
    justification: str
    raw_scores: Optional[Tuple[float, float, float]] = None
    flagged: bool = False

    def as_dict(self) -> Dict:
        return {
            "verdict": self.verdict,
            "confidence": round(self.confidence, 6),
            "justification": self.justification,
            "raw_scores": list(self.raw_scores) if self.raw_scores else None,
            "flagged": self.flagged,
        }


@dataclass
class ParaphraseResult:
    style: str
    text: str
    fidelity: float
    flagged: bool = False


# ---------------------------------------------------------------------------
# Rubric scoring
# ---------------------------------------------------------------------------

def rubric_weights_valid(weights: Sequence[float]) -> Tuple[float, float, float]:
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
        raise EvaluationError(f"rubric weights must be three non-negatives summing to 1, got {weights}")
    return w


def _parse_scored_line(text: str, label: str) -> Optional[float]:
    m = re.search(rf"^{label}:\s*([0-9]+(?:\.[0-9]+)?)\s*$", text, re.MULTILINE)
    return float(m.group(1)) if m else None


def scale_1to5(score: float) -> float:
    """Map the 1-5 rubric scale onto [0, 1]: 1 -> 0, 5 -> 1, exact."""
    return (min(max(score, 1.0), 5.0) - 1.0) / 4.0


def aggregate_rubric(normalized: Sequence[float], weights: Sequence[float]) -> float:
    w = rubric_weights_valid(weights)
    r = tuple(float(x) for x in normalized)
    return w[0] * r[0] + w[1] * r[1] + w[2] * r[2]


def rubric_score(
    description: str,
    artifact: ArtifactCategory,
    backend,
    weights: Sequence[float] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
    retries: int = 1,
) -> RubricScore:
    """Prompt the evaluator with the three-axis rubric and aggregate.

    Unparseable replies after a retry produce a flagged record with G = 0 so
    the pipeline can de-prioritize rather than abort.
    """
    if not description.strip():
        raise EvaluationError("empty description")
    rubric_weights_valid(weights)
    prompt = load_template("rubric").format(artifact_name=artifact.name, description=description)
    messages = [{"role": "user", "content": prompt}]
    for attempt in range(retries + 1):
        reply = backend.generate(messages)
        raw = tuple(_parse_scored_line(reply, label) for label in ("Clarity", "Specificity", "Relevance"))
        if all(v is not None for v in raw):
            norm = tuple(scale_1to5(v) for v in raw)
            return RubricScore(
                clarity=norm[0],
                specificity=norm[1],
                relevance=norm[2],
                G=aggregate_rubric(norm, weights),
                raw_1to5=raw,  # type: ignore[arg-type]
            )
        if attempt < retries:
            messages.append({"role": "assistant", "content": reply})
            messages.append(
                {"role": "user", "content": "Reply with exactly three lines: Clarity/Specificity/Relevance, each '<label>: <1-5>'."}
            )
    logger.warning("rubric reply unparseable after retry; flagging record")
    return RubricScore(clarity=0.0, specificity=0.0, relevance=0.0, G=0.0, flagged=True)


# ---------------------------------------------------------------------------
# Multimodal judge
# ---------------------------------------------------------------------------

def verdict_from_scores(truthfulness: float, relevance: float, clarity: float) -> JudgeVerdict:
    """Deterministic bridge from template scores to the verdict tuple:
    final = mean of the 0-5 scores, Yes iff final >= 2.5, confidence = final/5."""
    final = (truthfulness + relevance + clarity) / 3.0
    verdict = "Yes" if final >= JUDGE_YES_THRESHOLD else "No"
    return JudgeVerdict(
        verdict=verdict,
        confidence=final / 5.0,
        justification="",
        raw_scores=(truthfulness, relevance, clarity),
    )


def judge(
    evidence_lines: str,
    artifact: ArtifactCategory,
    description: str,
    backend,
    retries: int = 1,
) -> JudgeVerdict:
    """Run the scored judge template and derive the structured verdict.

    Malformed replies after a retry yield (No, 0, flagged) rather than an
    exception.
    """
    if not description.strip():
        raise EvaluationError("empty description")
    prompt = load_template("judge").format(
        artifact_name=artifact.name, description=description, evidence=evidence_lines
    )
    messages = [{"role": "user", "content": prompt}]
    for attempt in range(retries + 1):
        reply = backend.generate(messages)
        scores = tuple(_parse_scored_line(reply, label) for label in ("Truthfulness", "Relevance", "Clarity"))
        jm = re.search(r"^Justification:\s*(.+)$", reply, re.MULTILINE)
        if all(v is not None and 0.0 <= v <= 5.0 for v in scores) and jm and jm.group(1).strip():
            result = verdict_from_scores(*scores)  # type: ignore[arg-type]
            result.justification = jm.group(1).strip()
            return result
        if attempt < retries:
            messages.append({"role": "assistant", "content": reply})
            messages.append(
                {"role": "user", "content": "Reply again with the exact five lines: Truthfulness, Relevance, Clarity, Final Score, Justification."}
            )
    logger.warning("judge reply malformed after retry; returning No with zero confidence")
    return JudgeVerdict(verdict="No", confidence=0.0, justification="", flagged=True)


# ---------------------------------------------------------------------------
# Paraphrasing
# ---------------------------------------------------------------------------

def paraphrase(
    description: str,
    style: str,
    backend,
    embedder=None,
    min_fidelity: float = 0.7,
    styles: Sequence[str] = PARAPHRASE_STYLES,
) -> ParaphraseResult:
    """Style-conditioned rewrite that must keep the visual claim intact.

    When an embedder is supplied, the token-matching fidelity check runs; a
    paraphrase below ``min_fidelity`` is regenerated once, then flagged.
    """
    if style not in styles:
        raise EvaluationError(f"style not configured: {style!r} (have {list(styles)})")
    if not description.strip():
        raise EvaluationError("empty description")
    prompt = load_template(f"paraphrase_{style}").format(description=description)
    messages = [{"role": "user", "content": prompt}]
    text = backend.generate(messages)
    if not text.strip():
        raise EvaluationError("paraphraser returned empty text")
    if embedder is None:
        return ParaphraseResult(style=style, text=text, fidelity=float("nan"))
    score = fidelity(description, text, embedder)
    if score >= min_fidelity:
        return ParaphraseResult(style=style, text=text, fidelity=score)
    messages.append({"role": "assistant", "content": text})
    messages.append(
        {"role": "user", "content": "Your rewrite drifted from the original claim. Rewrite again, staying closer to the original wording."}
    )
    text2 = backend.generate(messages)
    score2 = fidelity(description, text2, embedder) if text2.strip() else -1.0
    if score2 >= min_fidelity:
        return ParaphraseResult(style=style, text=text2, fidelity=score2)
    best_text, best_score = (text, score) if score >= score2 else (text2, score2)
    return ParaphraseResult(style=style, text=best_text, fidelity=best_score, flagged=True)


# ---------------------------------------------------------------------------
# Fidelity (greedy max-cosine token matching F1)
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _tokens(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


def fidelity(original: str, paraphrased: str, embedder) -> float:
    """Greedy token-matching F1 over backend token embeddings.

    Precision: mean over paraphrase tokens of the max cosine against any
    original token; recall symmetric; returns their harmonic mean.
    """
    tok_a = _tokens(original)
    tok_b = _tokens(paraphrased)
    if not tok_a or not tok_b:
        raise EvaluationError("fidelity needs non-empty token streams on both sides")
    vec_a = np.asarray(embedder.embed_texts(tok_a), dtype=np.float64)
    vec_b = np.asarray(embedder.embed_texts(tok_b), dtype=np.float64)
    na = np.linalg.norm(vec_a, axis=1, keepdims=True)
    nb = np.linalg.norm(vec_b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise EvaluationError("zero token embedding")
    sims = (vec_a / na) @ (vec_b / nb).T  # (len_a, len_b)
    recall = float(sims.max(axis=1).mean())
    precision = float(sims.max(axis=0).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# Readability
# ---------------------------------------------------------------------------

def count_syllables(word: str) -> int:
    """Vowel-group counting with the silent-e rule; floor of one syllable."""
    w = re.sub(r"[^a-z]", "", word.lower())
    if not w:
        return 0
    groups = re.findall(r"[aeiouy]+", w)
    n = len(groups)
    if n > 1 and w.endswith("e") and not w.endswith("le"):
        n -= 1
    return max(1, n)


def flesch_kincaid(text: str) -> float:
    """Flesch-Kincaid grade: 0.39*(words/sentences) + 11.8*(syllables/words) - 15.59.

    Invariant under duplicating the whole text (the ratios are unchanged).
    """
    sentences = [s for s in re.split(r"[.!?]+", text) if _TOKEN_RE.search(s.lower())]
    words = [w for w in re.findall(r"[A-Za-z']+", text)]
    if not sentences or not words:
        raise EvaluationError("need at least one sentence and one word")
    syllables = sum(count_syllables(w) for w in words)
    return 0.39 * (len(words) / len(sentences)) + 11.8 * (syllables / len(words)) - 15.59

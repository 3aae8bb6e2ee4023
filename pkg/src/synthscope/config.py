"""Pipeline configuration: schema, validation, hashing and backend wiring.

One structured JSON file configures every free parameter the pipeline
exposes (softmax temperature, blend weight, ambiguity threshold, filter
threshold, top-k, backend endpoints per role).  Secrets never appear here;
auth tokens are named environment variables on each endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .backends import (
    BackendEndpoint,
    BicubicSuperResolver,
    FallbackSuperResolver,
    HttpClassifier,
    HttpEmbedder,
    HttpGenerator,
    IdentitySuperResolver,
    MockEmbedder,
    ReferenceClassifier,
    RemoteSuperResolver,
    ScriptedGenerator,
    load_transcripts,
)
from .evaluation import PARAPHRASE_STYLES

logger = logging.getLogger(__name__)

GENERATOR_ROLES = ("reasoner", "evaluator", "judge", "paraphraser")


class ConfigError(ValueError):
    pass


@dataclass
class SRConfig:
    mode: str = "bicubic"  # remote | bicubic | identity
    factor: int = 4
    fallback_to_bicubic: bool = True


@dataclass
class SegmentationConfig:
    k_coarse: int = 16
    k_fine: int = 64
    compactness: float = 10.0
    max_iters: int = 10
    tile: int = 16
    tile_no_sr: int = 8


@dataclass
class WeightingConfig:
    tau_temperature: float = 10.0


@dataclass
class ScoringConfig:
    alpha_blend: float = 0.5
    tau_clip: float = 0.22
    taxonomy_path: Optional[str] = None
    weighted_means: bool = False


@dataclass
class ReasoningConfig:
    max_steps: int = 6
    retries: int = 2
    max_tokens: int = 4096
    max_hypotheses: int = 5
    max_regions: int = 5


@dataclass
class EvaluationConfig:
    rubric_weights: Tuple[float, float, float] = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    tau_filter: float = 0.5
    k_top: int = 5
    styles: Tuple[str, ...] = PARAPHRASE_STYLES
    min_fidelity: float = 0.7
    include_justification: bool = True


@dataclass
class BackendSpec:
    kind: str = "mock"
    base_url: Optional[str] = None
    timeout_ms: int = 30000
    max_retries: int = 2
    auth_env: Optional[str] = None
    max_in_flight: int = 4
    transcripts: Optional[str] = None  # scripted generator fixture file

    def endpoint(self) -> BackendEndpoint:
        if not self.base_url:
            raise ConfigError(f"backend kind {self.kind!r} requires base_url")
        return BackendEndpoint(
            base_url=self.base_url,
            timeout_ms=self.timeout_ms,
            max_retries=self.max_retries,
            auth_env=self.auth_env,
            max_in_flight=self.max_in_flight,
        )


@dataclass
class BackendsConfig:
    classifier: BackendSpec = field(default_factory=lambda: BackendSpec(kind="reference"))
    sr: BackendSpec = field(default_factory=lambda: BackendSpec(kind="native"))
    embedder: BackendSpec = field(default_factory=lambda: BackendSpec(kind="mock"))
    reasoner: BackendSpec = field(default_factory=lambda: BackendSpec(kind="mock"))
    evaluator: BackendSpec = field(default_factory=lambda: BackendSpec(kind="mock"))
    judge: BackendSpec = field(default_factory=lambda: BackendSpec(kind="mock"))
    paraphraser: BackendSpec = field(default_factory=lambda: BackendSpec(kind="mock"))


@dataclass
class PipelineConfig:
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1
    report_style: str = "technical"
    mock: bool = False
    sr: SRConfig = field(default_factory=SRConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    reasoning: ReasoningConfig = field(default_factory=ReasoningConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    backends: BackendsConfig = field(default_factory=BackendsConfig)

    def as_dict(self) -> Dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Hash of the analysis-relevant config.  Output location and worker
        count cannot influence results, so they are excluded: the same
        analysis gets the same hash wherever and however wide it runs."""
        payload = self.as_dict()
        payload.pop("output_dir", None)
        payload.pop("workers", None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _build_section(cls, payload: Dict, errors: List[str], prefix: str):
    kwargs = {}
    valid = {f for f in cls.__dataclass_fields__}
    for key, value in payload.items():
        if key not in valid:
            errors.append(f"{prefix}: unknown key {key!r}")
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{prefix}: {exc}")
        return cls()


def config_from_dict(payload: Dict) -> PipelineConfig:
    """Build and validate a PipelineConfig; raises ConfigError listing every
    problem found."""
    errors: List[str] = []
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")

    sections = {
        "sr": SRConfig,
        "segmentation": SegmentationConfig,
        "weighting": WeightingConfig,
        "scoring": ScoringConfig,
        "reasoning": ReasoningConfig,
        "evaluation": EvaluationConfig,
    }
    kwargs: Dict = {}
    for name, cls in sections.items():
        section = payload.get(name, {})
        if not isinstance(section, dict):
            errors.append(f"{name}: must be an object")
            section = {}
        kwargs[name] = _build_section(cls, section, errors, name)

    backends_payload = payload.get("backends", {})
    backend_kwargs = {}
    if not isinstance(backends_payload, dict):
        errors.append("backends: must be an object")
        backends_payload = {}
    for role in ("classifier", "sr", "embedder", *GENERATOR_ROLES):
        if role in backends_payload:
            backend_kwargs[role] = _build_section(
                BackendSpec, backends_payload[role], errors, f"backends.{role}"
            )
    kwargs["backends"] = BackendsConfig(**backend_kwargs)

    for key in ("seed", "output_dir", "workers", "report_style", "mock"):
        if key in payload:
            kwargs[key] = payload[key]
    known_top = set(sections) | {"backends", "seed", "output_dir", "workers", "report_style", "mock"}
    for key in payload:
        if key not in known_top:
            errors.append(f"unknown top-level key {key!r}")

    cfg = PipelineConfig(**kwargs)
    errors.extend(validate_config(cfg))
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def validate_config(cfg: PipelineConfig) -> List[str]:
    errors: List[str] = []
    if cfg.sr.mode not in ("remote", "bicubic", "identity"):
        errors.append(f"sr.mode must be remote/bicubic/identity, got {cfg.sr.mode!r}")
    if cfg.sr.factor not in (1, 2, 4, 8):
        errors.append(f"sr.factor must be one of 1/2/4/8, got {cfg.sr.factor}")
    seg = cfg.segmentation
    if seg.k_coarse < 1 or seg.k_fine <= seg.k_coarse:
        errors.append("segmentation: need k_fine > k_coarse >= 1")
    if seg.compactness <= 0:
        errors.append("segmentation.compactness must be positive")
    if seg.max_iters < 1:
        errors.append("segmentation.max_iters must be >= 1")
    if seg.tile < 1 or seg.tile_no_sr < 1:
        errors.append("segmentation tile sizes must be >= 1")
    if cfg.weighting.tau_temperature <= 0:
        errors.append("weighting.tau_temperature must be positive")
    if not (0.0 <= cfg.scoring.alpha_blend <= 1.0):
        errors.append("scoring.alpha_blend must be in [0, 1]")
    if cfg.scoring.taxonomy_path and not Path(cfg.scoring.taxonomy_path).exists():
        errors.append(f"scoring.taxonomy_path does not exist: {cfg.scoring.taxonomy_path}")
    rs = cfg.reasoning
    if rs.max_steps < 1 or rs.retries < 0 or rs.max_tokens < 1 or rs.max_hypotheses < 1:
        errors.append("reasoning limits must be positive (retries >= 0)")
    ev = cfg.evaluation
    if len(ev.rubric_weights) != 3 or any(w < 0 for w in ev.rubric_weights):
        errors.append("evaluation.rubric_weights must be three non-negatives")
    elif abs(sum(ev.rubric_weights) - 1.0) > 1e-9:
        errors.append("evaluation.rubric_weights must sum to 1")
    if not (0.0 <= ev.tau_filter <= 1.0):
        errors.append("evaluation.tau_filter must be in [0, 1]")
    if ev.k_top < 1:
        errors.append("evaluation.k_top must be >= 1")
    unknown_styles = [s for s in ev.styles if s not in PARAPHRASE_STYLES]
    if unknown_styles:
        errors.append(f"evaluation.styles has unknown styles {unknown_styles}")
    if cfg.report_style not in ev.styles:
        errors.append(f"report_style {cfg.report_style!r} not in evaluation.styles")
    if cfg.workers < 1:
        errors.append("workers must be >= 1")
    for role in GENERATOR_ROLES + ("classifier", "sr", "embedder"):
        spec: BackendSpec = getattr(cfg.backends, role)
        if spec.kind == "http" and not spec.base_url:
            errors.append(f"backends.{role}: kind 'http' requires base_url")
        if spec.transcripts and not Path(spec.transcripts).exists():
            errors.append(f"backends.{role}: transcripts file not found: {spec.transcripts}")
    return errors


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(payload)


# ---------------------------------------------------------------------------
# Backend wiring
# ---------------------------------------------------------------------------

@dataclass
class BackendSet:
    classifier: object
    resolver: object
    embedder: object
    reasoner: object
    evaluator: object
    judge: object
    paraphraser: object


def _make_generator(spec: BackendSpec, seed: int, mock: bool):
    if mock or spec.kind == "mock":
        table = load_transcripts(spec.transcripts) if spec.transcripts else None
        return ScriptedGenerator(table=table, on_miss="synthesize", seed=seed)
    if spec.kind == "scripted":
        table = load_transcripts(spec.transcripts) if spec.transcripts else {}
        return ScriptedGenerator(table=table, on_miss="error", seed=seed)
    if spec.kind == "http":
        return HttpGenerator(spec.endpoint())
    raise ConfigError(f"unknown generator backend kind {spec.kind!r}")


def build_backends(cfg: PipelineConfig) -> BackendSet:
    """Instantiate every backend role.  Capability problems (a classifier
    that cannot produce feature tensors for GradCAM) surface here, at
    configuration time, not mid-run."""
    mock = cfg.mock

    cspec = cfg.backends.classifier
    if mock or cspec.kind in ("reference", "mock"):
        classifier = ReferenceClassifier(seed=cfg.seed)
    elif cspec.kind == "http":
        classifier = HttpClassifier(cspec.endpoint(), capabilities=("features",))
    else:
        raise ConfigError(f"unknown classifier backend kind {cspec.kind!r}")

    if cfg.sr.mode == "identity":
        resolver = IdentitySuperResolver()
    elif cfg.sr.mode == "bicubic" or mock:
        resolver = BicubicSuperResolver()
    else:
        remote = RemoteSuperResolver(cfg.backends.sr.endpoint())
        resolver = FallbackSuperResolver(remote, cfg.sr.fallback_to_bicubic)

    espec = cfg.backends.embedder
    if mock or espec.kind == "mock":
        embedder = MockEmbedder(seed=cfg.seed)
    elif espec.kind == "http":
        embedder = HttpEmbedder(espec.endpoint())
    else:
        raise ConfigError(f"unknown embedder backend kind {espec.kind!r}")

    from .backends.base import CAP_FEATURES, require_capabilities

    require_capabilities(classifier, [CAP_FEATURES])

    return BackendSet(
        classifier=classifier,
        resolver=resolver,
        embedder=embedder,
        reasoner=_make_generator(cfg.backends.reasoner, cfg.seed, mock),
        evaluator=_make_generator(cfg.backends.evaluator, cfg.seed + 1, mock),
        judge=_make_generator(cfg.backends.judge, cfg.seed + 2, mock),
        paraphraser=_make_generator(cfg.backends.paraphraser, cfg.seed + 3, mock),
    )

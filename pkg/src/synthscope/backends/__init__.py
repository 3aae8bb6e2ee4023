"""Pluggable model-inference boundary: contracts, HTTP clients, deterministic
mocks and the built-in reference classifier."""

from .base import (
    CAP_FEATURES,
    CAP_INPUT_GRAD,
    BackendError,
    CapabilityError,
    ClassifierOutput,
    FixtureMissError,
    TransportError,
    decode_tensor,
    embeddings_matrix,
    encode_tensor,
    l2_normalize,
    require_capabilities,
)
from .http import (
    BackendEndpoint,
    HttpClassifier,
    HttpEmbedder,
    HttpGenerator,
    RemoteSuperResolver,
)
from .mocks import (
    EchoGenerator,
    MockEmbedder,
    ScriptedClassifier,
    ScriptedGenerator,
    image_key,
    load_transcripts,
    prompt_hash,
)
from .reference import ReferenceClassifier
from .sr import BicubicSuperResolver, FallbackSuperResolver, IdentitySuperResolver

__all__ = [
    "BackendEndpoint",
    "BackendError",
    "BicubicSuperResolver",
    "CAP_FEATURES",
    "CAP_INPUT_GRAD",
    "CapabilityError",
    "ClassifierOutput",
    "EchoGenerator",
    "FallbackSuperResolver",
    "FixtureMissError",
    "HttpClassifier",
    "HttpEmbedder",
    "HttpGenerator",
    "IdentitySuperResolver",
    "MockEmbedder",
    "ReferenceClassifier",
    "RemoteSuperResolver",
    "ScriptedClassifier",
    "ScriptedGenerator",
    "TransportError",
    "decode_tensor",
    "embeddings_matrix",
    "encode_tensor",
    "image_key",
    "l2_normalize",
    "load_transcripts",
    "prompt_hash",
    "require_capabilities",
]

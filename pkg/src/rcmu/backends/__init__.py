"""Model access: prompt templates, verdict parsing, scripted and HTTP transports, response cache."""

from .base import (
    BackendConfig,
    BackendError,
    BackendUnavailableError,
    Completion,
    ConfigurationError,
    PreconditionError,
    TransientBackendError,
    VerdictParseError,
    attachment_digest,
    slot_digest,
)
from .cache import ResponseCache, cache_key
from .client import BackendClient, EmbeddingClient
from .config import Settings, load_settings, make_client, make_embedder, parse_settings
from .http import OpenAIChatTransport, OpenAIEmbeddingTransport
from .parsing import parse_binary, parse_choice, parse_score, parse_ternary, parse_verdict
from .scripted import MatchRule, ScriptedBackend, ScriptedEmbeddingBackend
from .templates import PromptTemplate, TemplateRegistry

__all__ = [
    "BackendClient", "BackendConfig", "BackendError", "BackendUnavailableError", "Completion",
    "ConfigurationError", "EmbeddingClient", "MatchRule", "OpenAIChatTransport", "OpenAIEmbeddingTransport",
    "PreconditionError", "PromptTemplate", "ResponseCache", "ScriptedBackend", "ScriptedEmbeddingBackend",
    "Settings", "TemplateRegistry", "TransientBackendError", "VerdictParseError", "attachment_digest",
    "cache_key", "load_settings", "make_client", "make_embedder", "parse_binary", "parse_choice",
    "parse_score", "parse_settings", "parse_ternary", "parse_verdict", "slot_digest",
]

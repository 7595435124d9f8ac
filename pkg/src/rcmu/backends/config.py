"""TOML run configuration.

::

    template_dir = "templates"      # optional overrides of the default prompts
    cache_dir = ".rcmu-cache"       # optional; enables the on-disk response cache
    workers = 4

    [backends.judge]
    kind = "openai"                 # openai | openai-embedding | scripted | scripted-embedding
    endpoint = "https://api.openai.com/v1"
    model = "gpt-4o-mini"
    api_key_env = "OPENAI_API_KEY"
    timeout = 60
    max_retries = 3
    max_concurrency = 4
    temperature = 0.0

    [backends.fake]
    kind = "scripted"
    script = "script.json"          # relative to this file

    [pipeline]                      # build-dataset settings, see rcmu.pipeline.PipelineConfig

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .base import BackendConfig, ConfigurationError
from .cache import ResponseCache
from .client import BackendClient, EmbeddingClient
from .http import OpenAIChatTransport, OpenAIEmbeddingTransport
from .scripted import ScriptedBackend, ScriptedEmbeddingBackend
from .templates import TemplateRegistry

COMPLETION_KINDS = ("openai", "scripted")
EMBEDDING_KINDS = ("openai-embedding", "scripted-embedding")
_BACKEND_KEYS = {"kind", "endpoint", "model", "api_key_env", "timeout", "max_retries", "max_concurrency",
                 "temperature", "script", "modalities", "options"}


@dataclass
class Settings:
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    template_dir: Path | None = None
    cache_dir: Path | None = None
    workers: int = 1
    seed: int = 0
    pipeline: dict[str, Any] = field(default_factory=dict)
    digest: str = ""

    def templates(self) -> TemplateRegistry:
        return TemplateRegistry.from_directory(self.template_dir)

    def cache(self) -> ResponseCache | None:
        return ResponseCache(self.cache_dir) if self.cache_dir else None


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def parse_settings(text: str, base_dir: Path | str = ".") -> Settings:
    base = Path(base_dir)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config: {exc}") from None
    backends = {}
    for name, spec in data.get("backends", {}).items():
        unknown = set(spec) - _BACKEND_KEYS
        if unknown:
            raise ConfigurationError(f"backend {name}: unknown keys {sorted(unknown)}")
        kind = spec.get("kind", "openai")
        if kind not in COMPLETION_KINDS + EMBEDDING_KINDS:
            raise ConfigurationError(f"backend {name}: unknown kind {kind!r}")
        if kind.startswith("openai") and not spec.get("endpoint"):
            raise ConfigurationError(f"backend {name}: endpoint required")
        script = spec.get("script")
        backends[name] = BackendConfig(
            backend_id=name,
            kind=kind,
            endpoint=spec.get("endpoint", ""),
            model=spec.get("model", ""),
            api_key_env=spec.get("api_key_env"),
            timeout=float(spec.get("timeout", 60.0)),
            max_retries=int(spec.get("max_retries", 3)),
            max_concurrency=int(spec.get("max_concurrency", 4)),
            temperature=float(spec.get("temperature", 0.0)),
            script=str(_resolve(base, script)) if script else None,
            modalities=tuple(spec.get("modalities", ("text",) if kind == "openai-embedding" else ("text", "image"))),
            options=dict(spec.get("options", {})),
        )
    return Settings(
        backends=backends,
        template_dir=_resolve(base, data.get("template_dir")),
        cache_dir=_resolve(base, data.get("cache_dir")),
        workers=int(data.get("workers", 1)),
        seed=int(data.get("seed", 0)),
        pipeline=dict(data.get("pipeline", {})),
        digest=hashlib.sha256(text.encode("utf-8")).hexdigest()[:16],
    )


def load_settings(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {p}: {exc}") from None
    return parse_settings(text, p.parent)


def make_client(settings: Settings, name: str, templates: TemplateRegistry | None = None,
                cache: ResponseCache | None = None) -> BackendClient:
    cfg = settings.backends.get(name)
    if cfg is None:
        raise ConfigurationError(f"backend {name!r} not declared in config")
    if cfg.kind not in COMPLETION_KINDS:
        raise ConfigurationError(f"backend {name!r} is an embedding backend")
    if cfg.kind == "scripted":
        if not cfg.script:
            raise ConfigurationError(f"backend {name!r}: scripted backends need a script file")
        transport = ScriptedBackend.from_file(cfg.script, name)
    else:
        transport = OpenAIChatTransport(cfg)
    return BackendClient(transport, cfg, templates or settings.templates(), cache)


def make_embedder(settings: Settings, name: str, cache: ResponseCache | None = None) -> EmbeddingClient:
    cfg = settings.backends.get(name)
    if cfg is None:
        raise ConfigurationError(f"backend {name!r} not declared in config")
    if cfg.kind not in EMBEDDING_KINDS:
        raise ConfigurationError(f"backend {name!r} is not an embedding backend")
    if cfg.kind == "scripted-embedding":
        transport = ScriptedEmbeddingBackend.from_file(cfg.script, name) if cfg.script else \
            ScriptedEmbeddingBackend(backend_id=name)
    else:
        transport = OpenAIEmbeddingTransport(cfg)
    return EmbeddingClient(transport, cfg, cache)

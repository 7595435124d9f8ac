from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence


class BackendError(Exception):
    pass


class ConfigurationError(BackendError):
    pass


class PreconditionError(BackendError, ValueError):
    pass


class BackendUnavailableError(BackendError):
    pass


class TransientBackendError(BackendError):
    """Raised by a transport for failures worth retrying."""


class VerdictParseError(BackendError):
    def __init__(self, kind: str, raw_response: str):
        self.kind = kind
        self.raw_response = raw_response
        super().__init__(f"no {kind} verdict in response: {raw_response[:80]!r}")


@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    kind: str = "openai"
    endpoint: str = ""
    model: str = ""
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrency: int = 4
    temperature: float = 0.0
    script: str | None = None
    modalities: tuple[str, ...] = ("text",)
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigurationError(f"{self.backend_id}: max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ConfigurationError(f"{self.backend_id}: max_concurrency must be >= 1")


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Mapping[str, Any] = field(default_factory=dict)
    cached: bool = False


class CompletionTransport(Protocol):
    """Something that turns a rendered prompt into text. Implementations: scripted, HTTP."""

    def send(self, template_id: str, slots: Mapping[str, str], prompt: str,
             attachments: Sequence[str]) -> Completion: ...


class EmbeddingTransport(Protocol):
    def embed_raw(self, payload: str, modality: str) -> Sequence[float]: ...


def slot_digest(slots: Mapping[str, Any]) -> str:
    canon = json.dumps({k: str(v) for k, v in slots.items()}, sort_keys=True, ensure_ascii=False,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def attachment_digest(refs: Sequence[str]) -> str:
    h = hashlib.sha256()
    for ref in refs:
        p = Path(ref)
        if "://" not in ref and p.is_file():
            h.update(b"file:")
            h.update(hashlib.sha256(p.read_bytes()).digest())
        else:
            h.update(b"uri:")
            h.update(ref.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def is_image_ref(payload: str) -> bool:
    lower = payload.lower()
    return lower.startswith(("http://", "https://", "file://", "data:image/")) or lower.endswith(
        (".png", ".jpg", ".jpeg", ".webp", ".gif", ".bmp")
    )

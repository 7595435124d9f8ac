"""OpenAI-compatible HTTP transports (chat completions and embeddings)."""

from __future__ import annotations

import base64
import mimetypes
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx

from .base import (
    BackendConfig,
    BackendError,
    Completion,
    ConfigurationError,
    TransientBackendError,
    is_image_ref,
)

_RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}
# options consumed by the client rather than sent to the endpoint
CLIENT_OPTIONS = frozenset({"backoff_seconds"})


def image_url(ref: str) -> str:
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    path = Path(ref[len("file://"):] if ref.startswith("file://") else ref)
    if not path.is_file():
        raise BackendError(f"image attachment not found: {ref}")
    mime = mimetypes.guess_type(path.name)[0] or "image/png"
    return f"data:{mime};base64,{base64.b64encode(path.read_bytes()).decode('ascii')}"


class _HTTPBase:
    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = config
        self.backend_id = config.backend_id
        self._client = client or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise ConfigurationError(
                    f"{self.backend_id}: environment variable {self.config.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, body: Mapping[str, Any]) -> dict[str, Any]:
        url = self.config.endpoint.rstrip("/") + path
        headers = self._headers()
        try:
            resp = self._client.post(url, json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"{self.backend_id}: {exc!r}") from exc
        if resp.status_code in _RETRY_STATUS:
            raise TransientBackendError(f"{self.backend_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransientBackendError(f"{self.backend_id}: non-JSON reply") from exc


class OpenAIChatTransport(_HTTPBase):
    def send(self, template_id: str, slots: Mapping[str, str], prompt: str,
             attachments: Sequence[str] = ()) -> Completion:
        if attachments:
            content: Any = [{"type": "text", "text": prompt}]
            content += [{"type": "image_url", "image_url": {"url": image_url(a)}} for a in attachments]
        else:
            content = prompt
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
            **{k: v for k, v in self.config.options.items() if k not in CLIENT_OPTIONS},
        }
        data = self._post("/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{self.backend_id}: malformed completion payload") from exc
        return Completion(text or "", data.get("usage") or {})


class OpenAIEmbeddingTransport(_HTTPBase):
    """Text goes in ``input`` as a string; images (when enabled) as ``{"image": url}``."""

    def embed_raw(self, payload: str, modality: str) -> list[float]:
        if modality not in self.config.modalities:
            raise ConfigurationError(f"{self.backend_id}: modality {modality!r} not supported")
        item: Any = {"image": image_url(payload)} if modality == "image" else payload
        data = self._post("/embeddings", {"model": self.config.model, "input": [item]})
        try:
            return data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{self.backend_id}: malformed embedding payload") from exc


def payload_modality(payload: str) -> str:
    return "image" if is_image_ref(payload) else "text"

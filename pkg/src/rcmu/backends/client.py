from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import Future
from collections import Counter
from typing import Mapping, Sequence

import numpy as np

from ..core import JudgeVerdict
from .base import (
    BackendConfig,
    BackendUnavailableError,
    Completion,
    PreconditionError,
    TransientBackendError,
    VerdictParseError,
    attachment_digest,
    slot_digest,
)
from .cache import ResponseCache, cache_key
from .http import payload_modality
from .parsing import parse_verdict
from .templates import TemplateRegistry

log = logging.getLogger(__name__)


class _Counters:
    def __init__(self):
        self._lock = threading.Lock()
        self.counts = Counter()

    def bump(self, name: str, n: int = 1) -> None:
        with self._lock:
            self.counts[name] += n

    def __getitem__(self, name: str) -> int:
        return self.counts[name]


class BackendClient:
    """Template rendering, caching, retries and a concurrency bound around one completion transport."""

    def __init__(self, transport, config: BackendConfig | None = None,
                 templates: TemplateRegistry | None = None, cache: ResponseCache | None = None):
        self.transport = transport
        self.config = config or BackendConfig(getattr(transport, "backend_id", "scripted"), kind="scripted")
        self.templates = templates or TemplateRegistry.default()
        self.cache = cache
        self.backoff = float(self.config.options.get("backoff_seconds", 0.5))
        self._slots = threading.BoundedSemaphore(self.config.max_concurrency)
        self.counters = _Counters()

    @property
    def backend_id(self) -> str:
        return self.config.backend_id

    def complete(self, template_id: str, slots: Mapping[str, object],
                 attachments: Sequence[str] = ()) -> Completion:
        template = self.templates.get(template_id)
        if attachments and template.modality != "text_and_image":
            raise PreconditionError(f"{template_id} is text-only; attachments not allowed")
        slots = {k: str(v) for k, v in slots.items()}
        prompt = template.render(slots)
        key = None
        if self.cache is not None:
            key = cache_key(self.backend_id, template_id, slot_digest(slots),
                            attachment_digest(attachments) + template.digest)
            hit = self.cache.lookup(key)
            if hit is not None:
                self.counters.bump("cache_hits")
                return Completion(hit["response"], hit.get("usage", {}), cached=True)
            self.counters.bump("cache_misses")
        result = self._send_with_retries(template_id, slots, prompt, attachments)
        if key is not None:
            self.cache.store(key, result.text, usage=dict(result.usage), backend_id=self.backend_id,
                             template_id=template_id)
        return result

    def _send_with_retries(self, template_id, slots, prompt, attachments) -> Completion:
        last = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            with self._slots:
                self.counters.bump("live_calls")
                try:
                    return self.transport.send(template_id, slots, prompt, attachments)
                except TransientBackendError as exc:
                    last = exc
                    log.info("%s: transient failure (attempt %d): %s", self.backend_id, attempt + 1, exc)
        raise BackendUnavailableError(
            f"{self.backend_id}: gave up after {self.config.max_retries + 1} attempts: {last}")

    def judge(self, template_id: str, slots: Mapping[str, object], attachments: Sequence[str] = (),
              n_options: int | None = None) -> JudgeVerdict:
        template = self.templates.get(template_id)
        kind = template.expected_verdict_kind
        if kind == "free_text":
            raise PreconditionError(f"{template_id} is a free-text template, not a judge")
        raw = self.complete(template_id, slots, attachments).text
        value = parse_verdict(kind, raw, n_options)
        return JudgeVerdict(kind, value, raw, template_id, slot_digest({k: str(v) for k, v in slots.items()}))

    def try_judge(self, template_id: str, slots: Mapping[str, object], attachments: Sequence[str] = (),
                  n_options: int | None = None) -> tuple[JudgeVerdict | None, str]:
        """Like ``judge`` but a parse failure returns ``(None, raw)`` instead of raising."""
        try:
            v = self.judge(template_id, slots, attachments, n_options)
            return v, v.raw_response
        except VerdictParseError as exc:
            self.counters.bump("parse_errors")
            log.warning("%s: unparseable %s verdict from %s: %r", template_id, exc.kind,
                        self.backend_id, exc.raw_response[:80])
            return None, exc.raw_response

    def manifest(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "kind": self.config.kind,
            "model": self.config.model,
            "temperature": self.config.temperature,
            "cache_hits": self.counters["cache_hits"],
            "cache_misses": self.counters["cache_misses"],
            "live_calls": self.counters["live_calls"],
        }


class EmbeddingClient:
    def __init__(self, transport, config: BackendConfig | None = None, cache: ResponseCache | None = None):
        self.transport = transport
        self.config = config or BackendConfig(getattr(transport, "backend_id", "scripted-embedding"),
                                              kind="scripted-embedding")
        self.cache = cache
        self._memo: dict[str, Future] = {}
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(self.config.max_concurrency)
        self.counters = _Counters()
        self.dim: int | None = None

    @property
    def backend_id(self) -> str:
        return self.config.backend_id

    def embed(self, payload: str) -> np.ndarray:
        """Unit-normalised embedding; concurrent requests for one payload share a single call."""
        with self._lock:
            pending = self._memo.get(payload)
            owner = pending is None
            if owner:
                pending = self._memo[payload] = Future()
            else:
                self.counters.bump("cache_hits")
        if not owner:
            return pending.result()
        try:
            vec = self._embed_uncached(payload)
        except BaseException as exc:
            with self._lock:
                del self._memo[payload]
            pending.set_exception(exc)
            raise
        pending.set_result(vec)
        return vec

    def _embed_uncached(self, payload: str) -> np.ndarray:
        modality = payload_modality(payload)
        key = None
        raw = None
        if self.cache is not None:
            key = cache_key(self.backend_id, "embed:" + modality, slot_digest({"payload": payload}),
                            attachment_digest([payload]) if modality == "image" else "")
            hit = self.cache.lookup(key)
            if hit is not None:
                self.counters.bump("cache_hits")
                raw = hit["response"]
            else:
                self.counters.bump("cache_misses")
        if raw is None:
            raw = self._send(payload, modality)
            if key is not None:
                self.cache.store(key, [float(x) for x in raw], backend_id=self.backend_id)
        vec = np.asarray(raw, dtype=float)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or not np.isfinite(norm):
            raise BackendUnavailableError(f"{self.backend_id}: degenerate embedding")
        vec = vec / norm
        with self._lock:
            if self.dim is None:
                self.dim = vec.shape[0]
            elif vec.shape[0] != self.dim:
                raise BackendUnavailableError(f"{self.backend_id}: embedding dimension changed")
        return vec

    def _send(self, payload: str, modality: str):
        last = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(float(self.config.options.get("backoff_seconds", 0.5)) * 2 ** (attempt - 1))
            with self._slots:
                self.counters.bump("live_calls")
                try:
                    return self.transport.embed_raw(payload, modality)
                except TransientBackendError as exc:
                    last = exc
        raise BackendUnavailableError(f"{self.backend_id}: gave up: {last}")

    def manifest(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "kind": self.config.kind,
            "model": self.config.model,
            "cache_hits": self.counters["cache_hits"],
            "cache_misses": self.counters["cache_misses"],
            "live_calls": self.counters["live_calls"],
        }

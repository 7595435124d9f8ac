"""Deterministic stand-ins for model endpoints, for tests and golden runs.

A script file (JSON) looks like::

    {
      "entries":  [{"template_id": "rcid.mention", "slots": {...}, "response": "yes"}],
      "rules":    [{"template_id": "rcid.mention", "match": {"object_info": "chef"},
                    "response": "yes"}],
      "defaults": {"rcid.consistency": "uncertain"}
    }

``entries`` match on the exact slot digest, ``rules`` on substrings of slot
values (first matching rule wins, ``"*"`` matches any template). A rule with
``"format": true`` renders its response with the call's slots.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .base import Completion, ConfigurationError, PreconditionError, slot_digest

Rule = Callable[[str, Mapping[str, str]], "str | None"]


class _FormatDict(dict):
    def __missing__(self, key):
        return "{" + key + "}"


@dataclass
class MatchRule:
    template_id: str
    match: Mapping[str, str] = field(default_factory=dict)
    response: str = ""
    format: bool = False

    def __call__(self, template_id: str, slots: Mapping[str, str]) -> str | None:
        if self.template_id not in ("*", template_id):
            return None
        for name, needle in self.match.items():
            if needle not in str(slots.get(name, "")):
                return None
        if self.format:
            return self.response.format_map(_FormatDict({k: str(v) for k, v in slots.items()}))
        return self.response


class ScriptedBackend:
    """Answers from a fixed script. Unscripted calls raise unless a default is set."""

    def __init__(self, responses: Mapping[tuple[str, str], str] | None = None,
                 rules: Sequence[Rule] = (), defaults: Mapping[str, str] | None = None,
                 backend_id: str = "scripted"):
        self.backend_id = backend_id
        self.responses = dict(responses or {})
        self.rules = list(rules)
        self.defaults = dict(defaults or {})
        self.calls: list[tuple[str, dict[str, str]]] = []
        self.attachments: list[tuple[str, ...]] = []
        self._lock = threading.Lock()

    def script(self, template_id: str, slots: Mapping[str, object], response: str) -> None:
        self.responses[(template_id, slot_digest(slots))] = response

    def send(self, template_id: str, slots: Mapping[str, str], prompt: str = "",
             attachments: Sequence[str] = ()) -> Completion:
        with self._lock:
            self.calls.append((template_id, dict(slots)))
            self.attachments.append(tuple(attachments))
        text = self.responses.get((template_id, slot_digest(slots)))
        if text is None:
            for rule in self.rules:
                text = rule(template_id, slots)
                if text is not None:
                    break
        if text is None:
            text = self.defaults.get(template_id, self.defaults.get("*"))
        if text is None:
            raise PreconditionError(f"{self.backend_id}: no scripted response for {template_id}")
        return Completion(text, {"prompt_chars": len(prompt)})

    @classmethod
    def from_file(cls, path: str | Path, backend_id: str = "scripted") -> "ScriptedBackend":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot load script {path}: {exc}") from None
        responses = {(e["template_id"], slot_digest(e["slots"])): e["response"]
                     for e in data.get("entries", [])}
        rules = [MatchRule(r.get("template_id", "*"), r.get("match", {}), r["response"],
                           bool(r.get("format", False)))
                 for r in data.get("rules", [])]
        return cls(responses, rules, data.get("defaults"), backend_id)


def hash_vector(payload: str, dim: int = 32) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim)


class ScriptedEmbeddingBackend:
    """Fixed vectors per payload; unknown payloads get a hash-seeded vector or raise."""

    def __init__(self, vectors: Mapping[str, Sequence[float]] | None = None, dim: int | None = None,
                 fallback: str = "hash", modalities: Sequence[str] = ("text", "image"),
                 backend_id: str = "scripted-embedding"):
        self.backend_id = backend_id
        self.vectors = {k: np.asarray(v, dtype=float) for k, v in (vectors or {}).items()}
        dims = {v.shape[0] for v in self.vectors.values()}
        if len(dims) > 1:
            raise ConfigurationError(f"{backend_id}: scripted vectors differ in dimension")
        self.dim = dim or (dims.pop() if dims else 32)
        self.fallback = fallback
        self.modalities = tuple(modalities)
        self.calls = 0

    def embed_raw(self, payload: str, modality: str) -> np.ndarray:
        self.calls += 1
        if payload in self.vectors:
            return self.vectors[payload]
        if self.fallback == "hash":
            return hash_vector(payload, self.dim)
        raise PreconditionError(f"{self.backend_id}: no scripted vector for {payload[:40]!r}")

    @classmethod
    def from_file(cls, path: str | Path, backend_id: str = "scripted-embedding") -> "ScriptedEmbeddingBackend":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot load script {path}: {exc}") from None
        return cls(data.get("vectors"), data.get("dim"), data.get("fallback", "hash"),
                   data.get("modalities", ("text", "image")), backend_id)

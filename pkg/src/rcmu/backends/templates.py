"""Prompt templates loaded from TOML files.

A template file holds one table per template id::

    ["rcid.mention"]
    modality = "text_only"          # or "text_and_image"
    verdict = "binary"              # binary | ternary | score | choice | free_text
    text = "... {object_info} ... {description} ..."

Slot values are wrapped in ``<slot>...</slot>`` tags when rendered, so two
different slot assignments never render to the same prompt.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .base import ConfigurationError, PreconditionError

MODALITIES = ("text_only", "text_and_image")
TEMPLATE_KINDS = ("binary", "ternary", "score", "choice", "free_text")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    parts: tuple[tuple[str, str], ...]  # ("text", literal) | ("slot", name)
    modality: str = "text_only"
    expected_verdict_kind: str = "free_text"
    reconstruction: bool = False

    @classmethod
    def from_text(cls, template_id: str, text: str, modality: str = "text_only",
                  expected_verdict_kind: str = "free_text", reconstruction: bool = False) -> "PromptTemplate":
        if modality not in MODALITIES:
            raise ConfigurationError(f"{template_id}: unknown modality {modality!r}")
        if expected_verdict_kind not in TEMPLATE_KINDS:
            raise ConfigurationError(f"{template_id}: unknown verdict kind {expected_verdict_kind!r}")
        parts = []
        for literal, name, spec, conv in string.Formatter().parse(text):
            if literal:
                parts.append(("text", literal))
            if name is not None:
                if not name.isidentifier() or spec or conv:
                    raise ConfigurationError(f"{template_id}: bad slot {{{name}}}")
                parts.append(("slot", name))
        return cls(template_id, tuple(parts), modality, expected_verdict_kind, reconstruction)

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(v for k, v in self.parts if k == "slot")

    @property
    def text(self) -> str:
        return "".join(v if k == "text" else "{" + v + "}" for k, v in self.parts)

    @property
    def digest(self) -> str:
        canon = f"{self.modality}\n{self.expected_verdict_kind}\n{self.text}"
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def render(self, slots: Mapping[str, object]) -> str:
        missing = self.slots - set(slots)
        if missing:
            raise PreconditionError(f"{self.template_id}: unfilled slots {sorted(missing)}")
        out = []
        for kind, value in self.parts:
            if kind == "text":
                out.append(value)
            else:
                out.append(f"<{value}>{slots[value]}</{value}>")
        return "".join(out)


class TemplateRegistry:
    def __init__(self, templates: Mapping[str, PromptTemplate] | None = None):
        self._templates = dict(templates or {})

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def __iter__(self):
        return iter(sorted(self._templates))

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise ConfigurationError(f"unknown template_id {template_id!r}") from None

    def add(self, template: PromptTemplate) -> None:
        self._templates[template.template_id] = template

    def digests(self) -> dict[str, str]:
        return {tid: self._templates[tid].digest for tid in sorted(self._templates)}

    def load_toml(self, text: str, source: str = "<string>") -> None:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{source}: {exc}") from None
        for tid, spec in data.items():
            if not isinstance(spec, dict) or "text" not in spec:
                raise ConfigurationError(f"{source}: template {tid!r} needs a text field")
            self.add(PromptTemplate.from_text(
                tid, spec["text"], spec.get("modality", "text_only"), spec.get("verdict", "free_text"),
                bool(spec.get("reconstruction", False)),
            ))

    @classmethod
    def default(cls) -> "TemplateRegistry":
        reg = cls()
        text = resources.files("rcmu.backends").joinpath("default_templates.toml").read_text("utf-8")
        reg.load_toml(text, "default_templates.toml")
        return reg

    @classmethod
    def from_directory(cls, directory: str | Path | None) -> "TemplateRegistry":
        """Defaults overlaid by every ``*.toml`` in ``directory`` (same id overrides)."""
        reg = cls.default()
        if directory is None:
            return reg
        d = Path(directory)
        if not d.is_dir():
            raise ConfigurationError(f"template directory not found: {d}")
        for path in sorted(d.glob("*.toml")):
            reg.load_toml(path.read_text("utf-8"), str(path))
        return reg

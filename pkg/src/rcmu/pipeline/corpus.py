"""Built-dataset container, on-disk layout and the statistics table."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..citations import MARKER_RE
from ..core import RCVQA_CATEGORIES, AnnotatedImage, DescriptionRecord, RCVQAItem, read_jsonl, write_jsonl
from .types import Profile, RcvitRecord

FILES = {
    "quadruples": "quadruples.jsonl",
    "descriptions": "descriptions.jsonl",
    "rcvit": "rcvit.jsonl",
    "profiles": "profiles.jsonl",
    "images": "images.jsonl",
    "stats": "stats.json",
}


@dataclass(frozen=True)
class Quadruple:
    """An RCVQA item plus how it was built (which object and expression it references)."""

    item: RCVQAItem
    provenance: dict[str, Any] = field(default_factory=dict, hash=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {**self.item.to_dict(), "provenance": dict(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Quadruple":
        return cls(RCVQAItem.from_dict(d), dict(d.get("provenance", {})))


@dataclass(frozen=True)
class _ImageRow:
    image_id: str
    image: AnnotatedImage

    def to_dict(self) -> dict[str, Any]:
        return {"image_id": self.image_id, **self.image.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "_ImageRow":
        return cls(str(d["image_id"]), AnnotatedImage.from_dict(d))


@dataclass
class Dataset:
    images: dict[str, AnnotatedImage] = field(default_factory=dict)      # image_id -> image
    profiles: list[Profile] = field(default_factory=list)
    quadruples: list[Quadruple] = field(default_factory=list)
    descriptions: list[DescriptionRecord] = field(default_factory=list)
    rcvit: list[RcvitRecord] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def save(self, out_dir: str | os.PathLike) -> dict[str, Any]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / FILES["quadruples"], self.quadruples)
        write_jsonl(out / FILES["descriptions"], self.descriptions)
        write_jsonl(out / FILES["rcvit"], self.rcvit)
        write_jsonl(out / FILES["profiles"], self.profiles)
        write_jsonl(out / FILES["images"], [_ImageRow(i, img) for i, img in self.images.items()])
        stats = {"stats": corpus_stats(self), "metadata": self.metadata}
        (out / FILES["stats"]).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return stats

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "Dataset":
        d = Path(directory)

        def maybe(name, kind):
            p = d / FILES[name]
            return read_jsonl(p, kind) if p.exists() else []

        meta_path = d / FILES["stats"]
        meta = json.loads(meta_path.read_text(encoding="utf-8")).get("metadata", {}) if meta_path.exists() else {}
        return cls(
            images={r.image_id: r.image for r in maybe("images", _ImageRow)},
            profiles=maybe("profiles", Profile),
            quadruples=maybe("quadruples", Quadruple),
            descriptions=maybe("descriptions", DescriptionRecord),
            rcvit=maybe("rcvit", RcvitRecord),
            metadata=meta,
        )


def words(text: str) -> int:
    return len(text.split())


def count_citations(text: str) -> int:
    return sum(len(m.group(0).strip()[1:-1].split(",")) for m in MARKER_RE.finditer(text))


def _avg(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def corpus_stats(dataset: Dataset) -> dict[str, Any]:
    """Counts and averages over a built dataset. Lengths are whitespace-token counts."""
    images = list(dataset.images.values())
    if not images:
        # fall back to images embedded in the records
        seen: dict[str, AnnotatedImage] = {}
        for q in dataset.quadruples:
            seen.setdefault(q.item.image.image_ref, q.item.image)
        for desc in dataset.descriptions:
            seen.setdefault(desc.image.image_ref, desc.image)
        images = list(seen.values())
    objects = [o for img in images for o in img.objects]
    cells = Counter(q.item.category for q in dataset.quadruples)
    answerable = [q.item for q in dataset.quadruples if q.item.answerable]
    return {
        "images": len(images),
        "categories": len({o.category for o in objects}),
        "profiles": len(dataset.profiles),
        "descriptions": len(dataset.descriptions),
        "quadruples": len(dataset.quadruples),
        "quadruples_per_cell": {c: cells.get(c, 0) for c in RCVQA_CATEGORIES},
        "objects_per_image": _avg([img.k for img in images]),
        "context_length": _avg([words(o.info_text) for o in objects if o.info_text]),
        "description_length": _avg([words(d.description_text) for d in dataset.descriptions]),
        "citations_per_description": _avg([count_citations(d.description_text) for d in dataset.descriptions]),
        "question_length": _avg([words(q.item.question) for q in dataset.quadruples]),
        "answer_length": _avg([words(i.reference_answer) for i in answerable]),
        "rcvit_records": len(dataset.rcvit),
    }

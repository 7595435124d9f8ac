"""Shared record types, validation and JSONL (de)serialization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

SCHEMA_VERSION = 1
UNANSWERABLE = "UNANSWERABLE"

RCVQA_CATEGORIES = ("V2C", "C2V", "UA_V2C", "UA_C2V")
UA_CATEGORIES = ("UA_V2C", "UA_C2V")
MCQ_QTYPES = ("V2C", "C2V")
VERDICT_KINDS = ("binary", "ternary", "score", "choice")

# Dataset-specific phrasings folded into UNANSWERABLE at load time.
UNANSWERABLE_ALIASES = frozenset(
    {
        "unanswerable",
        "not answerable",
        "cannot be answered",
        "can't be answered",
        "no answer",
        "insufficient information",
        "not enough information",
    }
)


class RecordError(ValueError):
    """A JSONL line could not be decoded into a record."""

    def __init__(self, line_no: int, prefix: str, reason: str):
        self.line_no = line_no
        self.prefix = prefix
        self.reason = reason
        super().__init__(f"line {line_no}: {reason} (near {prefix!r})")


def canonical_answer(text: str) -> str:
    if text.strip().rstrip(".").lower() in UNANSWERABLE_ALIASES:
        return UNANSWERABLE
    return text


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    def __str__(self) -> str:
        return f"[{self.x1}, {self.y1}, {self.x2}, {self.y2}]"

    @classmethod
    def from_list(cls, values: Sequence[int]) -> "BoundingBox":
        if len(values) != 4:
            raise ValueError(f"bbox needs 4 coordinates, got {len(values)}")
        return cls(*values)


@dataclass(frozen=True)
class ObjectContext:
    object_id: str
    category: str
    bbox: BoundingBox
    info_text: str
    citation_key: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "object_id": self.object_id,
            "category": self.category,
            "bbox": self.bbox.as_list(),
            "info_text": self.info_text,
            "citation_key": self.citation_key,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ObjectContext":
        return cls(
            object_id=str(d["object_id"]),
            category=d["category"],
            bbox=BoundingBox.from_list(d["bbox"]),
            info_text=d["info_text"],
            citation_key=int(d["citation_key"]),
        )


@dataclass(frozen=True)
class AnnotatedImage:
    image_ref: str
    width: int
    height: int
    objects: tuple[ObjectContext, ...] = ()

    @property
    def k(self) -> int:
        return len(self.objects)

    def by_key(self) -> dict[int, ObjectContext]:
        return {o.citation_key: o for o in self.objects}

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_ref": self.image_ref,
            "width": self.width,
            "height": self.height,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AnnotatedImage":
        return cls(
            image_ref=d["image_ref"],
            width=int(d["width"]),
            height=int(d["height"]),
            objects=tuple(ObjectContext.from_dict(o) for o in d.get("objects", [])),
        )


@dataclass(frozen=True)
class RCVQAItem:
    item_id: str
    image: AnnotatedImage
    question: str
    reference_answer: str
    category: str
    expected_citation_keys: frozenset[int] = frozenset()

    @property
    def answerable(self) -> bool:
        return self.category not in UA_CATEGORIES

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "image": self.image.to_dict(),
            "question": self.question,
            "reference_answer": self.reference_answer,
            "category": self.category,
            "expected_citation_keys": sorted(self.expected_citation_keys),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RCVQAItem":
        return cls(
            item_id=str(d["item_id"]),
            image=AnnotatedImage.from_dict(d["image"]),
            question=d["question"],
            reference_answer=canonical_answer(d["reference_answer"]),
            category=d["category"],
            expected_citation_keys=frozenset(int(k) for k in d.get("expected_citation_keys", [])),
        )


@dataclass(frozen=True)
class DescriptionRecord:
    item_id: str
    image: AnnotatedImage
    description_text: str
    source_model: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "image": self.image.to_dict(),
            "description_text": self.description_text,
            "source_model": self.source_model,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DescriptionRecord":
        return cls(
            item_id=str(d["item_id"]),
            image=AnnotatedImage.from_dict(d["image"]),
            description_text=d["description_text"],
            source_model=d.get("source_model", ""),
        )


@dataclass(frozen=True)
class Entity:
    entity_id: str
    profile_text: str
    reference_image_refs: tuple[str, ...] = ()
    category: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = {
            "entity_id": self.entity_id,
            "profile_text": self.profile_text,
            "reference_image_refs": list(self.reference_image_refs),
        }
        if self.category:
            d["category"] = self.category
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Entity":
        return cls(
            entity_id=str(d["entity_id"]),
            profile_text=d["profile_text"],
            reference_image_refs=tuple(d.get("reference_image_refs", [])),
            category=d.get("category", ""),
        )


@dataclass(frozen=True)
class MCQItem:
    item_id: str
    question_image_ref: str
    entities: tuple[Entity, ...]
    gold_entity_id: str
    question: str
    options: tuple[str, ...]
    correct_index: int
    insufficient_index: int
    qtype: str
    category: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "question_image_ref": self.question_image_ref,
            "entities": [e.to_dict() for e in self.entities],
            "gold_entity_id": self.gold_entity_id,
            "question": self.question,
            "options": list(self.options),
            "correct_index": self.correct_index,
            "insufficient_index": self.insufficient_index,
            "qtype": self.qtype,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MCQItem":
        return cls(
            item_id=str(d["item_id"]),
            question_image_ref=d["question_image_ref"],
            entities=tuple(Entity.from_dict(e) for e in d["entities"]),
            gold_entity_id=str(d["gold_entity_id"]),
            question=d["question"],
            options=tuple(d["options"]),
            correct_index=int(d["correct_index"]),
            insufficient_index=int(d["insufficient_index"]),
            qtype=d["qtype"],
            category=d.get("category", ""),
        )


@dataclass(frozen=True)
class JudgeVerdict:
    kind: str
    value: Any
    raw_response: str
    template_id: str
    slot_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "value": self.value,
            "raw_response": self.raw_response,
            "template_id": self.template_id,
            "slot_digest": self.slot_digest,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "JudgeVerdict":
        return cls(d["kind"], d["value"], d["raw_response"], d["template_id"], d["slot_digest"])


@dataclass(frozen=True)
class HumanRating:
    """One human quality judgement on the five-level rubric (1 = Very Poor .. 5 = Excellent)."""

    item_id: str
    level: int

    def to_dict(self) -> dict[str, Any]:
        return {"item_id": self.item_id, "level": self.level}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HumanRating":
        level = d["level"]
        if isinstance(level, str):
            level = RUBRIC_LEVELS[level.strip().lower()]
        return cls(str(d["item_id"]), int(level))


RUBRIC_LEVELS = {"very poor": 1, "poor": 2, "average": 3, "good": 4, "excellent": 5}


# ---------------------------------------------------------------- validation


def validate_bbox(box: BoundingBox, width: int | None = None, height: int | None = None) -> list[str]:
    out = []
    coords = box.as_list()
    if any(not isinstance(c, int) or isinstance(c, bool) for c in coords):
        out.append("bbox: integer coordinates required")
    if any(c < 0 for c in coords):
        out.append("bbox: coordinates >= 0 violated")
    if not box.x1 < box.x2:
        out.append("bbox: x1 < x2 violated")
    if not box.y1 < box.y2:
        out.append("bbox: y1 < y2 violated")
    if width is not None and box.x2 > width:
        out.append("bbox: x2 <= width violated")
    if height is not None and box.y2 > height:
        out.append("bbox: y2 <= height violated")
    if width is not None and width > 1 and box.x2 <= 1.0:
        out.append("bbox: looks normalized (x2 <= 1.0), absolute pixels expected")
    return out


def validate_image(img: AnnotatedImage) -> list[str]:
    """Return a list of invariant violations; empty when the image is well formed."""
    out = []
    known = img.width > 0 and img.height > 0
    if not known:
        out.append("width/height: positive size required")
    seen_ids = set()
    for obj in img.objects:
        if obj.object_id in seen_ids:
            out.append(f"object_id: duplicate {obj.object_id!r}")
        seen_ids.add(obj.object_id)
        out.extend(validate_bbox(obj.bbox, img.width if known else None, img.height if known else None))
        if not obj.info_text.strip():
            out.append("info_text: empty")
    keys = [o.citation_key for o in img.objects]
    for k in sorted({k for k in keys if keys.count(k) > 1}):
        out.append(f"citation_key: duplicate {k}")
    for k in sorted({k for k in keys if k < 1}):
        out.append(f"citation_key: non-positive {k}")
    top = max([len(keys)] + keys) if keys else 0
    present = set(keys)
    for k in range(1, top + 1):
        if k not in present:
            out.append(f"citation_key: gap at {k}")
    return out


def validate_rcvqa_item(item: RCVQAItem) -> list[str]:
    out = validate_image(item.image)
    if item.category not in RCVQA_CATEGORIES:
        out.append(f"category: {item.category!r} not in {RCVQA_CATEGORIES}")
    elif not item.answerable and item.reference_answer != UNANSWERABLE:
        out.append("reference_answer: unanswerable item must carry UNANSWERABLE")
    elif item.answerable and item.reference_answer == UNANSWERABLE:
        out.append("reference_answer: answerable item carries UNANSWERABLE")
    bad = sorted(k for k in item.expected_citation_keys if not 1 <= k <= item.image.k)
    if bad:
        out.append(f"expected_citation_keys: out of range {bad}")
    return out


def validate_mcq(item: MCQItem) -> list[str]:
    out = []
    n = len(item.options)
    if not 0 <= item.correct_index < n:
        out.append("correct_index: out of range")
    if not 0 <= item.insufficient_index < n:
        out.append("insufficient_index: out of range")
    if item.correct_index == item.insufficient_index:
        out.append("correct_index: equals insufficient_index")
    if item.gold_entity_id not in {e.entity_id for e in item.entities}:
        out.append(f"gold_entity_id: {item.gold_entity_id!r} not among entities")
    if item.qtype not in MCQ_QTYPES:
        out.append(f"qtype: {item.qtype!r} not in {MCQ_QTYPES}")
    out += mcq_warnings(item)
    return out


def mcq_warnings(item: MCQItem) -> list[str]:
    """Soft checks: entities sharing one question image are expected to share a category."""
    cats = sorted({e.category for e in item.entities if e.category})
    if len(cats) > 1:
        return [f"entities: mixed categories {cats} (warning)"]
    return []


# ---------------------------------------------------------------------- JSONL


def write_jsonl(path: str | os.PathLike, records: Iterable[Any]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = {"schema_version": SCHEMA_VERSION, **rec.to_dict()}
            fh.write(json.dumps(d, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | os.PathLike, record_kind: type) -> list[Any]:
    """Read one record per non-blank line. ``record_kind`` is any class with ``from_dict``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            prefix = line[:40]
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(line_no, prefix, f"invalid JSON ({exc.msg})") from None
            if not isinstance(d, dict):
                raise RecordError(line_no, prefix, "record must be a JSON object")
            if d.get("schema_version") != SCHEMA_VERSION:
                raise RecordError(line_no, prefix, f"schema_version must be {SCHEMA_VERSION}")
            try:
                out.append(record_kind.from_dict(d))
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordError(line_no, prefix, f"bad {record_kind.__name__} ({exc!r})") from None
    return out


def read_json(path: str | os.PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))

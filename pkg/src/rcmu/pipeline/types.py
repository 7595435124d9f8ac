from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..core import AnnotatedImage, BoundingBox, ObjectContext

REF = "{REF}"


@dataclass(frozen=True)
class Profile:
    profile_id: str
    category: str
    info_text: str
    forbidden_visual_terms_checked: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"profile_id": self.profile_id, "category": self.category, "info_text": self.info_text,
                "forbidden_visual_terms_checked": self.forbidden_visual_terms_checked}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Profile":
        return cls(d["profile_id"], d["category"], d["info_text"], bool(d.get("forbidden_visual_terms_checked")))


@dataclass(frozen=True)
class StructuredFacts:
    source_kind: str                       # "visual_expression" | "context"
    facts: tuple[tuple[str, str], ...]
    object_id: str = ""

    @property
    def attributes(self) -> frozenset[str]:
        return frozenset(normalize_attribute(a) for a, _ in self.facts)

    def as_text(self) -> str:
        return "\n".join(f"{a}: {v}" for a, v in self.facts)


def normalize_attribute(name: str) -> str:
    return "_".join(name.strip().lower().replace("-", " ").split())


@dataclass(frozen=True)
class CandidateQA:
    question_with_placeholder: str
    answer: str
    target_modality: str                   # "visual" | "context"
    object_id: str = ""
    validity_score: float | None = None
    informativeness_score: float | None = None


@dataclass(frozen=True)
class ReferringExpression:
    object_id: str
    kind: str                              # "visual" | "contextual"
    text: str
    context_text: str | None = None        # the profile a contextual expression was written from
    embedding: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SourceObject:
    object_id: str
    category: str
    bbox: BoundingBox
    expressions: tuple[str, ...] = ()


@dataclass(frozen=True)
class SourceRecord:
    """One image from a referring-expression dataset: boxes, visual expressions, grounded caption."""

    image_id: str
    image_ref: str
    width: int
    height: int
    objects: tuple[SourceObject, ...]
    grounded_caption: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "image_ref": self.image_ref,
            "width": self.width,
            "height": self.height,
            "grounded_caption": self.grounded_caption,
            "objects": [{"object_id": o.object_id, "category": o.category, "bbox": o.bbox.as_list(),
                         "expressions": list(o.expressions)} for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SourceRecord":
        return cls(
            image_id=str(d["image_id"]),
            image_ref=d["image_ref"],
            width=int(d["width"]),
            height=int(d["height"]),
            grounded_caption=d.get("grounded_caption", ""),
            objects=tuple(SourceObject(str(o["object_id"]), o["category"], BoundingBox.from_list(o["bbox"]),
                                       tuple(o.get("expressions", []))) for o in d["objects"]),
        )

    def to_image(self) -> AnnotatedImage:
        """Image with empty context slots; citation keys follow object order."""
        objs = tuple(ObjectContext(o.object_id, o.category, o.bbox, "", i + 1) for i, o in enumerate(self.objects))
        return AnnotatedImage(self.image_ref, self.width, self.height, objs)


@dataclass(frozen=True)
class RcvitRecord:
    record_id: str
    task: str                              # "rcvqa" | "rcid"
    image_ref: str
    prompt: str
    response: str
    category: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"record_id": self.record_id, "task": self.task, "image_ref": self.image_ref,
                "prompt": self.prompt, "response": self.response, "category": self.category}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RcvitRecord":
        return cls(d["record_id"], d["task"], d["image_ref"], d["prompt"], d["response"], d.get("category", ""))


@dataclass
class PipelineConfig:
    profiles_per_category: int = 4
    retry_budget: int = 3
    min_validity: float = 7.0
    min_informativeness: float = 7.0
    dedup_threshold: float = 0.85
    answerable_ratio: int = 1
    unanswerable_ratio: int = 1
    ua_c2v_per_image: int = 1
    expressions_per_qa: int = 1
    rcid_instruction: str = "Describe the image in detail, citing the object information you use."
    unanswerable_response: str = "This question cannot be answered from the image and the provided information."
    visual_blocklist: tuple[str, ...] = (
        "red", "blue", "green", "yellow", "black", "white", "brown", "gray", "grey", "orange", "purple",
        "pink", "wearing", "wears", "jacket", "shirt", "dress", "coat", "jeans", "hat", "hair", "blond",
        "blonde", "beard", "striped", "spotted", "fluffy", "colored", "coloured",
    )
    unanswerable_attributes: dict[str, str] = field(default_factory=lambda: {
        "birthplace": "Where was {REF} born?",
        "age": "How old is {REF}?",
        "favorite_food": "What is the favorite food of {REF}?",
    })
    category_attributes: dict[str, dict[str, str]] = field(default_factory=dict)

    def attributes_for(self, category: str) -> dict[str, str]:
        return self.category_attributes.get(category, self.unanswerable_attributes)

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known - {"ua_ratio"}
        if unknown:
            raise ValueError(f"unknown pipeline settings {sorted(unknown)}")
        data = dict(data)
        if "ua_ratio" in data:
            a, _, u = str(data.pop("ua_ratio")).partition(":")
            data["answerable_ratio"], data["unanswerable_ratio"] = int(a), int(u)
        if "visual_blocklist" in data:
            data["visual_blocklist"] = tuple(data["visual_blocklist"])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["visual_blocklist"] = list(self.visual_blocklist)
        return d

"""RCIDScore: a reference-free score for context-aware image descriptions.

Contextual side, per description with ``k`` context-bearing objects:

* coverage (cc): share of objects whose context the description mentions
* accuracy (ca): share of mentioned objects whose context is entirely correct
* consistency (cvc): mean over mentioned objects of consistent=1 / uncertain=0.5 / inconsistent=0

``ctx`` is the mean of the three. The visual side is a CLIPScore-style
cosine between image and text embeddings, computed after the object context
has been removed from the description. The final score is the harmonic mean
of ``ctx`` and the visual score. All scores are on a 0-100 scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ._pool import ordered_map
from .backends import BackendClient, BackendError, EmbeddingClient, PreconditionError
from .citations import strip_markers
from .core import AnnotatedImage, DescriptionRecord, ObjectContext, validate_image

log = logging.getLogger(__name__)

CONSISTENCY_SCORES = {"consistent": 1.0, "inconsistent": 0.0, "uncertain": 0.5}
DEFAULT_CLIP_WEIGHT = 2.5


class UndefinedInputError(ValueError):
    pass


def _check_range(**values: float) -> None:
    for name, v in values.items():
        if not 0.0 <= v <= 100.0:
            raise PreconditionError(f"{name}={v} outside [0, 100]")


def object_slots(obj: ObjectContext, description: str) -> dict[str, str]:
    return {
        "object_info": f"{obj.category}: {obj.info_text}",
        "bbox": str(obj.bbox),
        "description": description,
    }


def _objects(image: AnnotatedImage) -> list[ObjectContext]:
    return sorted(image.objects, key=lambda o: o.citation_key)


@dataclass
class _Audit:
    per_object: dict[int, dict[str, Any]] = field(default_factory=dict)
    parse_errors: dict[str, int] = field(default_factory=lambda: {"mention": 0, "accuracy": 0, "consistency": 0})

    def note(self, key: int, **kv: Any) -> None:
        self.per_object.setdefault(key, {"mention": False, "accuracy": None, "consistency": None}).update(kv)


def coverage(description: DescriptionRecord, judge: BackendClient,
             audit: _Audit | None = None) -> tuple[frozenset[int], float]:
    objs = _objects(description.image)
    if not objs:
        raise UndefinedInputError(f"{description.item_id}: coverage undefined for an image without context")
    mentioned = set()
    for obj in objs:
        verdict, _ = judge.try_judge("rcid.mention", object_slots(obj, description.description_text))
        if verdict is None and audit is not None:
            audit.parse_errors["mention"] += 1
        hit = bool(verdict and verdict.value)
        if hit:
            mentioned.add(obj.citation_key)
        if audit is not None:
            audit.note(obj.citation_key, mention=hit)
    return frozenset(mentioned), 100.0 * len(mentioned) / len(objs)


def contextual_accuracy(description: DescriptionRecord, mentioned_keys: frozenset[int], judge: BackendClient,
                        audit: _Audit | None = None) -> float:
    if not mentioned_keys:
        return 0.0
    by_key = description.image.by_key()
    correct = 0
    for key in sorted(mentioned_keys):
        verdict, _ = judge.try_judge("rcid.accuracy", object_slots(by_key[key], description.description_text),
                                     [description.image.image_ref])
        if verdict is None and audit is not None:
            audit.parse_errors["accuracy"] += 1
        ok = bool(verdict and verdict.value)
        correct += ok
        if audit is not None:
            audit.note(key, accuracy=ok)
    return 100.0 * correct / len(mentioned_keys)


def context_visual_consistency(description: DescriptionRecord, mentioned_keys: frozenset[int],
                               judge: BackendClient, audit: _Audit | None = None) -> float:
    if not mentioned_keys:
        return 0.0
    by_key = description.image.by_key()
    total = 0.0
    for key in sorted(mentioned_keys):
        verdict, _ = judge.try_judge("rcid.consistency",
                                     object_slots(by_key[key], description.description_text),
                                     [description.image.image_ref])
        label = verdict.value if verdict is not None else "uncertain"
        if verdict is None and audit is not None:
            audit.parse_errors["consistency"] += 1
        total += CONSISTENCY_SCORES[label]
        if audit is not None:
            audit.note(key, consistency=label)
    return 100.0 * total / len(mentioned_keys)


def context_score(cc: float, ca: float, cvc: float) -> float:
    _check_range(cc=cc, ca=ca, cvc=cvc)
    return (cc + ca + cvc) / 3


def rcid_score(ctx: float, clip: float) -> float:
    _check_range(ctx=ctx, clip=clip)
    if ctx == 0 or clip == 0:
        return 0.0
    return 2 * ctx * clip / (ctx + clip)


def strip_context(description: DescriptionRecord, llm: BackendClient) -> str:
    """LLM rewrite without object context, then mechanical removal of citation markers."""
    text = description.description_text
    if not text.strip():
        raise PreconditionError("empty description")
    passages = "\n".join(f"{o.category}: {o.info_text}" for o in _objects(description.image))
    reply = llm.complete("rcid.strip_context", {"description": text, "passages": passages}).text
    cleaned = strip_markers(reply).strip()
    if not cleaned:
        log.warning("%s: empty context-stripping reply, using de-cited original", description.item_id)
        return strip_markers(text).strip()
    return cleaned


def clip_style_score(visual_text: str, image_ref: str, embedder: EmbeddingClient,
                     weight: float = DEFAULT_CLIP_WEIGHT) -> float:
    """``100 * min(1, weight * max(0, cos(image, text)))``."""
    e_img = embedder.embed(image_ref)
    e_txt = embedder.embed(visual_text)
    cos = float(np.dot(e_img, e_txt))
    return 100.0 * min(1.0, weight * max(0.0, cos))


@dataclass
class RcidComponentScores:
    cc: float
    ca: float
    cvc: float
    ctx: float
    clip: float
    final: float
    mentioned_keys: frozenset[int] = frozenset()
    per_object_verdicts: dict[int, dict[str, Any]] = field(default_factory=dict)
    parse_errors: dict[str, int] = field(default_factory=dict)
    visual_text: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "cc": self.cc, "ca": self.ca, "cvc": self.cvc, "ctx": self.ctx, "clip": self.clip,
            "final": self.final,
            "mentioned_keys": sorted(self.mentioned_keys),
            "per_object_verdicts": {str(k): v for k, v in sorted(self.per_object_verdicts.items())},
            "parse_errors": dict(self.parse_errors),
            "visual_text": self.visual_text,
        }


def score_description(description: DescriptionRecord, judge: BackendClient, mllm_judge: BackendClient,
                      embedder: EmbeddingClient, weight: float = DEFAULT_CLIP_WEIGHT,
                      llm: BackendClient | None = None) -> RcidComponentScores:
    audit = _Audit()
    mentioned, cc = coverage(description, judge, audit)
    ca = contextual_accuracy(description, mentioned, mllm_judge, audit)
    cvc = context_visual_consistency(description, mentioned, mllm_judge, audit)
    ctx = context_score(cc, ca, cvc)
    visual = strip_context(description, llm or judge)
    clip = clip_style_score(visual, description.image.image_ref, embedder, weight)
    return RcidComponentScores(cc, ca, cvc, ctx, clip, rcid_score(ctx, clip), mentioned, audit.per_object,
                               audit.parse_errors, visual)


COMPONENTS = ("cc", "ca", "cvc", "clip")


def corpus_scores(items: Sequence[RcidComponentScores]) -> dict[str, float]:
    """Average the components over items, then compose ctx and final from the averages."""
    if not items:
        raise ValueError("no items")
    means = {c: sum(getattr(s, c) for s in items) / len(items) for c in COMPONENTS}
    ctx = context_score(means["cc"], means["ca"], means["cvc"])
    return {**means, "ctx": ctx, "final": rcid_score(ctx, means["clip"])}


def evaluate_rcid(descriptions: Sequence[DescriptionRecord], judge: BackendClient, mllm_judge: BackendClient,
                  embedder: EmbeddingClient, weight: float = DEFAULT_CLIP_WEIGHT, workers: int = 1,
                  llm: BackendClient | None = None) -> dict[str, Any]:
    if not descriptions:
        raise ValueError("no items")

    def run(desc: DescriptionRecord):
        problems = validate_image(desc.image)
        if not desc.description_text.strip():
            problems.append("description_text: empty")
        if problems:
            return None, "invalid input: " + "; ".join(problems)
        try:
            return score_description(desc, judge, mllm_judge, embedder, weight, llm), None
        except (BackendError, ValueError) as exc:
            log.warning("rcid scoring failed for %s: %s", desc.item_id, exc)
            return None, f"{type(exc).__name__}: {exc}"

    results = ordered_map(run, descriptions, workers)
    scored = sorted(((d.item_id, s) for d, (s, _) in zip(descriptions, results) if s is not None),
                    key=lambda p: p[0])
    excluded = sorted(({"item_id": d.item_id, "reason": err}
                       for d, (s, err) in zip(descriptions, results) if s is None), key=lambda e: e["item_id"])
    corpus: dict[str, Any] = corpus_scores([s for _, s in scored]) if scored else {}
    parse_errors = {"mention": 0, "accuracy": 0, "consistency": 0}
    for _, s in scored:
        for k, v in s.parse_errors.items():
            parse_errors[k] += v
    corpus.update(n_items=len(scored), n_excluded=len(excluded), parse_errors=parse_errors)
    return {
        "kind": "rcid",
        "corpus": corpus,
        "items": [{"item_id": i, **s.to_dict()} for i, s in scored],
        "excluded": excluded,
        "metadata": {
            "clip_weight": weight,
            "clip_clamped_per_item": True,
            "aggregation": "component means, then ctx and harmonic mean at corpus level",
            "parse_error_fallbacks": {"mention": "not mentioned", "accuracy": "incorrect",
                                      "consistency": "uncertain"},
        },
    }

"""End-to-end dataset construction from referring-expression source records.

Phases run in this order:

1. profile pools, one serial pass per category;
2. profile assignment, seeded per image id;
3. per image (parallel): facts, QA generation and filtering, referring expressions,
   dedup, cross-modal pairing, cited description;
4. unanswerable C2V items, drawing contextual expressions from other images;
5. training records with the answerable:unanswerable mix, then statistics.
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

from .._pool import ordered_map
from ..backends import BackendClient, BackendError, EmbeddingClient, PreconditionError
from ..core import UNANSWERABLE, AnnotatedImage, DescriptionRecord, RCVQAItem
from .corpus import Dataset, Quadruple
from .generation import (
    EmptyFactsError,
    assign_profiles,
    build_unanswerable_c2v,
    contextual_expression,
    dedupe_expressions,
    extract_facts,
    filter_qa,
    generate_profiles,
    generate_qa,
    generate_rcid,
    pair_category,
    substitute,
)
from .rcvit import format_rcvit
from .types import CandidateQA, PipelineConfig, ReferringExpression, RcvitRecord, SourceRecord

log = logging.getLogger(__name__)


@dataclass
class _ImageResult:
    image_id: str
    image: AnnotatedImage
    quadruples: list[Quadruple] = field(default_factory=list)
    description: DescriptionRecord | None = None
    # per object: retained contextual expressions and answerable visual questions (for UA_C2V donors)
    contextual: list[ReferringExpression] = field(default_factory=list)
    visual_questions: dict[str, list[str]] = field(default_factory=dict)
    skipped: list[dict[str, str]] = field(default_factory=list)


def qualified_image(record: SourceRecord) -> AnnotatedImage:
    """Object ids are prefixed with the image id so they stay unique across the corpus."""
    img = record.to_image()
    objs = tuple(replace(o, object_id=f"{record.image_id}/{o.object_id}") for o in img.objects)
    return replace(img, objects=objs)


def _image_phase(record: SourceRecord, image: AnnotatedImage, cfg: PipelineConfig, llm: BackendClient,
                 scorer: BackendClient, embedder: EmbeddingClient) -> _ImageResult:
    res = _ImageResult(record.image_id, image)
    visual_qas: list[CandidateQA] = []
    context_qas: list[CandidateQA] = []
    expressions: list[ReferringExpression] = []
    source_objs = {f"{record.image_id}/{o.object_id}": o for o in record.objects}

    for obj in sorted(image.objects, key=lambda o: o.citation_key):
        src = source_objs[obj.object_id]
        try:
            if src.expressions:
                vf = extract_facts("\n".join(src.expressions), "visual_expression", llm, obj.object_id)
                answerable = filter_qa(generate_qa(vf, llm, category=obj.category), scorer,
                                       cfg.min_validity, cfg.min_informativeness)
                visual_qas += answerable
                expressions += [ReferringExpression(obj.object_id, "visual", e) for e in src.expressions]
            cf = extract_facts(obj.info_text, "context", llm, obj.object_id)
            cands = generate_qa(cf, llm, cfg.attributes_for(obj.category), obj.category)
            # template-built unanswerable questions skip the LLM scorer
            ua = [q for q in cands if q.answer == UNANSWERABLE]
            kept = filter_qa([q for q in cands if q.answer != UNANSWERABLE], scorer,
                             cfg.min_validity, cfg.min_informativeness)
            context_qas += kept + ua
            expressions.append(contextual_expression(cf, llm, obj.category, obj.info_text))
        except (EmptyFactsError, BackendError) as exc:
            log.warning("%s: object skipped (%s)", obj.object_id, exc)
            res.skipped.append({"object_id": obj.object_id, "reason": str(exc)})

    retained = dedupe_expressions(expressions, embedder, cfg.dedup_threshold)
    by_obj: dict[tuple[str, str], list[ReferringExpression]] = {}
    for e in retained:
        by_obj.setdefault((e.object_id, e.kind), []).append(e)
    res.contextual = [e for e in retained if e.kind == "contextual"]
    for qa in visual_qas:
        res.visual_questions.setdefault(qa.object_id, []).append(qa.question_with_placeholder)

    keys = {o.object_id: o.citation_key for o in image.objects}
    built: list[tuple[str, str, str, ReferringExpression, CandidateQA]] = []
    for qa in context_qas + visual_qas:
        kind = "visual" if qa.target_modality == "context" else "contextual"
        for expr in by_obj.get((qa.object_id, kind), [])[: cfg.expressions_per_qa]:
            cat = pair_category(qa.target_modality, expr.kind, qa.answer != UNANSWERABLE)
            built.append((cat, substitute(qa.question_with_placeholder, expr), qa.answer, expr, qa))
    for n, (cat, question, answer, expr, qa) in enumerate(built):
        item = RCVQAItem(f"{record.image_id}-q{n:03d}", image, question, answer, cat,
                         frozenset({keys[qa.object_id]}))
        res.quadruples.append(Quadruple(item, {
            "construction": "pairing", "object_id": qa.object_id, "expression_kind": expr.kind,
            "expression": expr.text, "question_template": qa.question_with_placeholder,
            "validity_score": qa.validity_score, "informativeness_score": qa.informativeness_score,
        }))

    if record.grounded_caption.strip() and image.k:
        try:
            text = generate_rcid(record.grounded_caption, image, llm)
            res.description = DescriptionRecord(f"{record.image_id}-rcid", image, text, "pipeline")
        except BackendError as exc:
            log.warning("%s: description skipped (%s)", record.image_id, exc)
            res.skipped.append({"object_id": "", "reason": f"description: {exc}"})
    return res


def _ua_c2v_phase(results: Sequence[_ImageResult], cfg: PipelineConfig, seed: int) -> list[Quadruple]:
    out = []
    for res in results:
        present_ids = {o.object_id for o in res.image.objects}
        present_ctx = {o.info_text for o in res.image.objects}
        present_cats = {o.category for o in res.image.objects}
        cats_of = {o.object_id: o.category for r in results for o in r.image.objects}
        pool = []
        for donor in results:
            if donor.image_id == res.image_id:
                continue
            for expr in donor.contextual:
                if expr.object_id in present_ids or expr.context_text in present_ctx:
                    continue
                for q in donor.visual_questions.get(expr.object_id, []):
                    pool.append((cats_of[expr.object_id] not in present_cats, expr, q))
        disjoint = [p for p in pool if p[0]]
        pool = disjoint or pool
        if not pool:
            if cfg.ua_c2v_per_image:
                log.warning("%s: no donor expressions for unanswerable C2V", res.image_id)
            continue
        rng = random.Random(f"{seed}:{res.image_id}:ua_c2v")
        picks = rng.sample(pool, min(cfg.ua_c2v_per_image, len(pool)))
        for n, (_, expr, question) in enumerate(picks):
            item = build_unanswerable_c2v(res.image, expr, question, f"{res.image_id}-u{n:03d}")
            out.append(Quadruple(item, {
                "construction": "absent_object", "object_id": expr.object_id, "expression_kind": "contextual",
                "expression": expr.text, "context_text": expr.context_text, "question_template": question,
            }))
    return out


def mix_training(quadruples: Sequence[Quadruple], cfg: PipelineConfig, seed: int) -> list[Quadruple]:
    """Subsample the larger side so answerable:unanswerable follows the configured ratio."""
    a_ratio, u_ratio = cfg.answerable_ratio, cfg.unanswerable_ratio
    if a_ratio < 0 or u_ratio < 0 or a_ratio + u_ratio == 0:
        raise PreconditionError("mixing ratio needs non-negative parts, not both zero")
    ans = sorted((q for q in quadruples if q.item.answerable), key=lambda q: q.item.item_id)
    ua = sorted((q for q in quadruples if not q.item.answerable), key=lambda q: q.item.item_id)
    if u_ratio == 0:
        n_a, n_u = len(ans), 0
    elif a_ratio == 0:
        n_a, n_u = 0, len(ua)
    else:
        scale = min(len(ans) / a_ratio, len(ua) / u_ratio)
        n_a, n_u = int(scale * a_ratio), int(scale * u_ratio)
    rng = random.Random(f"{seed}:rcvit")
    chosen = rng.sample(ans, n_a) + rng.sample(ua, n_u)
    return sorted(chosen, key=lambda q: q.item.item_id)


def rcvit_records(quadruples: Sequence[Quadruple], descriptions: Sequence[DescriptionRecord],
                  cfg: PipelineConfig, seed: int) -> list[RcvitRecord]:
    out = []
    for q in mix_training(quadruples, cfg, seed):
        it = q.item
        response = it.reference_answer if it.answerable else cfg.unanswerable_response
        out.append(RcvitRecord(it.item_id, "rcvqa", it.image.image_ref, format_rcvit(it.image, it.question),
                               response, it.category))
    for d in descriptions:
        out.append(RcvitRecord(d.item_id, "rcid", d.image.image_ref,
                               format_rcvit(d.image, cfg.rcid_instruction), d.description_text))
    return out


def build_dataset(sources: Sequence[SourceRecord], cfg: PipelineConfig, llm: BackendClient,
                  embedder: EmbeddingClient, seed: int, scorer: BackendClient | None = None,
                  screen: BackendClient | None = None, workers: int = 1) -> Dataset:
    if not sources:
        raise PreconditionError("no source records")
    ids = [s.image_id for s in sources]
    dup = sorted(i for i, c in Counter(ids).items() if c > 1)
    if dup:
        raise PreconditionError(f"duplicate image ids: {', '.join(dup)}")
    sources = sorted(sources, key=lambda s: s.image_id)
    scorer = scorer or llm

    base = [qualified_image(s) for s in sources]
    need: Counter = Counter()
    for img in base:
        for cat, c in Counter(o.category for o in img.objects).items():
            need[cat] = max(need[cat], c)
    pool = {cat: generate_profiles(cat, max(cfg.profiles_per_category, need[cat]), llm, screen,
                                   cfg.retry_budget, cfg.visual_blocklist)
            for cat in sorted(need)}
    images = assign_profiles(base, pool, seed, [s.image_id for s in sources])

    results = ordered_map(lambda pair: _image_phase(pair[0], pair[1], cfg, llm, scorer, embedder),
                          list(zip(sources, images)), workers)
    quadruples = [q for r in results for q in r.quadruples] + _ua_c2v_phase(results, cfg, seed)
    quadruples.sort(key=lambda q: q.item.item_id)
    descriptions = [r.description for r in results if r.description is not None]

    return Dataset(
        images={r.image_id: r.image for r in results},
        profiles=[p for cat in sorted(pool) for p in pool[cat]],
        quadruples=quadruples,
        descriptions=descriptions,
        rcvit=rcvit_records(quadruples, descriptions, cfg, seed),
        metadata={"seed": seed, "config": cfg.to_dict(),
                  "skipped": [{"image_id": r.image_id, **s} for r in results for s in r.skipped]},
    )


def scan_ua_c2v(dataset: Dataset) -> list[str]:
    """Independent check: ids of UA_C2V items whose referenced object or its context is in the image."""
    bad = []
    for q in dataset.quadruples:
        if q.item.category != "UA_C2V":
            continue
        obj_id = q.provenance.get("object_id")
        ctx = q.provenance.get("context_text")
        if obj_id is None or any(o.object_id == obj_id or (ctx is not None and o.info_text == ctx)
                                 for o in q.item.image.objects):
            bad.append(q.item.item_id)
    return bad


def category_matches_path(q: Quadruple) -> bool:
    """V2C/UA_V2C need a visual expression, C2V/UA_C2V a contextual one."""
    kind = q.provenance.get("expression_kind")
    return {"V2C": "visual", "UA_V2C": "visual", "C2V": "contextual", "UA_C2V": "contextual"}.get(
        q.item.category) == kind


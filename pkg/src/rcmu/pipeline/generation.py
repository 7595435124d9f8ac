"""LLM-driven steps of dataset construction: profiles, facts, QA pairs, expressions, cited descriptions."""

from __future__ import annotations

import logging
import random
import re
from collections import defaultdict
from dataclasses import replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..backends import BackendClient, BackendError, EmbeddingClient, PreconditionError
from ..citations import MARKER_RE
from ..core import UNANSWERABLE, AnnotatedImage, RCVQAItem
from .types import REF, CandidateQA, PipelineConfig, Profile, ReferringExpression, StructuredFacts

log = logging.getLogger(__name__)


class EmptyFactsError(ValueError):
    pass


# ----------------------------------------------------------- textual context


def blocklisted_terms(text: str, blocklist: Iterable[str]) -> list[str]:
    lower = text.lower()
    return [t for t in blocklist if re.search(rf"\b{re.escape(t.lower())}\b", lower)]


def generate_profiles(category: str, n: int, llm: BackendClient, screen: BackendClient | None = None,
                      retry_budget: int = 3, blocklist: Sequence[str] = PipelineConfig().visual_blocklist,
                      ) -> list[Profile]:
    """``n`` distinct profiles, each checked against the blocklist and by a leak-screening judge.

    A leaking or duplicate profile is regenerated up to ``retry_budget`` times; after that the
    slot is left empty and a warning is logged.
    """
    if n < 1:
        raise PreconditionError("n must be >= 1")
    screen = screen or llm
    out: list[Profile] = []
    seen: set[str] = set()
    for index in range(n):
        for attempt in range(retry_budget + 1):
            text = llm.complete("pipeline.profile", {"category": category, "index": index,
                                                     "attempt": attempt}).text
            text = " ".join(text.split())
            if not text or text in seen:
                continue
            if blocklisted_terms(text, blocklist):
                log.info("profile %s/%d attempt %d: visual terms, regenerating", category, index, attempt)
                continue
            verdict, _ = screen.try_judge("pipeline.profile_screen", {"info_text": text})
            if verdict is None or verdict.value:
                log.info("profile %s/%d attempt %d: screen flagged leak", category, index, attempt)
                continue
            seen.add(text)
            out.append(Profile(f"{category}-{index}", category, text, True))
            break
        else:
            log.warning("profile %s/%d: retry budget exhausted", category, index)
    return out


def assign_profiles(images: Sequence[AnnotatedImage], pool: Mapping[str, Sequence[Profile]], seed: int,
                    image_ids: Sequence[str] | None = None) -> list[AnnotatedImage]:
    """Fill each object's context from its category pool; no profile repeats within an image.

    Each image draws from its own generator seeded by ``(seed, image id)``.
    """
    needed = sorted({o.category for img in images for o in img.objects} - {c for c, p in pool.items() if p})
    if needed:
        raise PreconditionError(f"no profiles for categories: {', '.join(needed)}")
    out = []
    for idx, img in enumerate(images):
        image_id = image_ids[idx] if image_ids else img.image_ref
        rng = random.Random(f"{seed}:{image_id}")
        per_cat: dict[str, list] = defaultdict(list)
        for obj in img.objects:
            per_cat[obj.category].append(obj)
        chosen: dict[str, Profile] = {}
        for cat in sorted(per_cat):
            objs = per_cat[cat]
            profiles = list(pool[cat])
            if len(objs) > len(profiles):
                raise PreconditionError(
                    f"{image_id}: {len(objs)} {cat} objects but only {len(profiles)} distinct profiles")
            for obj, prof in zip(objs, rng.sample(profiles, len(objs))):
                chosen[obj.object_id] = prof
        objs = tuple(replace(o, info_text=chosen[o.object_id].info_text) for o in img.objects)
        out.append(replace(img, objects=objs))
    return out


# ------------------------------------------------------------- RCVQA building


def parse_fact_lines(reply: str) -> tuple[list[tuple[str, str]], int]:
    facts, bad = [], 0
    for line in reply.splitlines():
        line = line.strip().lstrip("-*• ").strip()
        if not line:
            continue
        attr, sep, value = line.partition(":")
        if not sep or not attr.strip() or not value.strip():
            bad += 1
            continue
        facts.append((attr.strip(), value.strip()))
    return facts, bad


def extract_facts(source_text: str, source_kind: str, llm: BackendClient, object_id: str = "") -> StructuredFacts:
    if not source_text.strip():
        raise PreconditionError("empty source text")
    reply = llm.complete("pipeline.extract_facts", {"source_kind": source_kind, "source_text": source_text}).text
    facts, bad = parse_fact_lines(reply)
    if bad:
        log.warning("%s: %d malformed fact line(s) skipped", object_id or source_kind, bad)
    if not facts:
        raise EmptyFactsError(f"{object_id or source_kind}: no parseable facts")
    return StructuredFacts(source_kind, tuple(facts), object_id)


_QA = re.compile(r"^\s*Q\s*[:.]\s*(.+?)\s*\n\s*A\s*[:.]\s*(.+?)\s*$", re.MULTILINE)


def parse_qa_pairs(reply: str) -> list[tuple[str, str]]:
    return [(q.strip(), a.strip()) for q, a in _QA.findall(reply)]


def generate_qa(facts: StructuredFacts, llm: BackendClient, attribute_questions: Mapping[str, str] | None = None,
                category: str = "") -> list[CandidateQA]:
    """Answerable QAs from the backend, plus unanswerable contextual QAs for listed attributes the facts lack."""
    modality = "context" if facts.source_kind == "context" else "visual"
    reply = llm.complete("pipeline.generate_qa", {"facts": facts.as_text(), "target_modality": modality,
                                                  "category": category}).text
    out = []
    for q, a in parse_qa_pairs(reply):
        if q.count(REF) != 1:
            log.info("%s: dropping question without exactly one placeholder: %r", facts.object_id, q)
            continue
        out.append(CandidateQA(q, a, modality, facts.object_id))
    if modality == "context" and attribute_questions:
        present = facts.attributes
        for attr in sorted(attribute_questions):
            if attr not in present:
                out.append(CandidateQA(attribute_questions[attr], UNANSWERABLE, "context", facts.object_id))
    return out


def filter_qa(candidates: Sequence[CandidateQA], scorer: BackendClient, min_validity: float = 7.0,
              min_informativeness: float = 7.0) -> list[CandidateQA]:
    for t in (min_validity, min_informativeness):
        if not 0 <= t <= 10:
            raise PreconditionError(f"threshold {t} outside [0, 10]")
    kept = []
    for qa in candidates:
        slots = {"question": qa.question_with_placeholder, "answer": qa.answer}
        v, _ = scorer.try_judge("pipeline.score_validity", slots)
        i, _ = scorer.try_judge("pipeline.score_informativeness", slots)
        if v is None or i is None:
            log.info("dropping unscorable QA %r", qa.question_with_placeholder)
            continue
        scored = replace(qa, validity_score=v.value, informativeness_score=i.value)
        if v.value >= min_validity and i.value >= min_informativeness:
            kept.append(scored)
    return kept


def contextual_expression(facts: StructuredFacts, llm: BackendClient, category: str,
                          context_text: str) -> ReferringExpression:
    text = llm.complete("pipeline.contextual_expression", {"facts": facts.as_text(), "category": category}).text
    text = text.strip().strip('"').strip()
    if not text:
        raise EmptyFactsError(f"{facts.object_id}: empty contextual expression")
    return ReferringExpression(facts.object_id, "contextual", text, context_text)


def dedupe_expressions(expressions: Sequence[ReferringExpression], embedder: EmbeddingClient,
                       threshold: float = 0.85) -> list[ReferringExpression]:
    """Greedy pass: keep an expression unless it is too close to a kept one for a different object."""
    if not 0 < threshold <= 1:
        raise PreconditionError("threshold must be in (0, 1]")
    kept: list[tuple[ReferringExpression, np.ndarray]] = []
    for expr in expressions:
        try:
            vec = embedder.embed(expr.text)
        except BackendError as exc:
            log.warning("dropping expression %r: %s", expr.text, exc)
            continue
        sims = [float(np.dot(vec, v)) for e, v in kept if e.object_id != expr.object_id]
        if sims and max(sims) >= threshold:
            continue
        kept.append((replace(expr, embedding=tuple(float(x) for x in vec)), vec))
    return [e for e, _ in kept]


def substitute(question_with_placeholder: str, expression: ReferringExpression | str) -> str:
    text = expression.text if isinstance(expression, ReferringExpression) else expression
    n = question_with_placeholder.count(REF)
    if n != 1:
        raise PreconditionError(f"question must contain exactly one {REF}, found {n}")
    return question_with_placeholder.replace(REF, text)


def pair_category(target_modality: str, expression_kind: str, answerable: bool = True) -> str | None:
    """Cross-modal pairing: context question + visual expression is V2C, the reverse is C2V."""
    if target_modality == "context" and expression_kind == "visual":
        return "V2C" if answerable else "UA_V2C"
    if target_modality == "visual" and expression_kind == "contextual":
        return "C2V" if answerable else "UA_C2V"
    return None


def build_unanswerable_c2v(image: AnnotatedImage, expression: ReferringExpression, visual_question: str,
                           item_id: str = "") -> RCVQAItem:
    """A visual question about an object that is not in ``image``, referenced by its context."""
    if expression.kind != "contextual":
        raise PreconditionError("unanswerable C2V needs a contextual expression")
    if any(o.object_id == expression.object_id for o in image.objects):
        raise PreconditionError(f"object {expression.object_id} is present in {image.image_ref}")
    if expression.context_text is not None and any(o.info_text == expression.context_text for o in image.objects):
        raise PreconditionError(f"the context behind {expression.text!r} belongs to an object in the image")
    return RCVQAItem(item_id, image, substitute(visual_question, expression), UNANSWERABLE, "UA_C2V")


# ----------------------------------------------------------------------- RCID


def numbered_passages(image: AnnotatedImage) -> str:
    return "\n".join(f"[{o.citation_key}] The {o.category} located at {o.bbox} in the image: {o.info_text}"
                     for o in sorted(image.objects, key=lambda o: o.citation_key))


def drop_invalid_markers(text: str, k: int) -> tuple[str, list[int]]:
    dropped: list[int] = []

    def fix(m: re.Match) -> str:
        keys = [int(x) for x in re.findall(r"\d+", m.group(0))]
        good = [x for x in keys if 1 <= x <= k]
        dropped.extend(x for x in keys if not 1 <= x <= k)
        if not good:
            return ""
        lead = m.group(0)[: len(m.group(0)) - len(m.group(0).lstrip())]
        return lead + "[" + ",".join(str(x) for x in good) + "]" if len(good) != len(keys) else m.group(0)

    return MARKER_RE.sub(fix, text), dropped


def generate_rcid(grounded_description: str, contexts: AnnotatedImage, llm: BackendClient) -> str:
    """Merge the grounded description with the object contexts, then add ``[k]`` citations."""
    if not grounded_description.strip():
        raise PreconditionError("empty grounded description")
    if contexts.k < 1:
        raise PreconditionError("no object contexts")
    passages = numbered_passages(contexts)
    merged = llm.complete("pipeline.rcid_merge", {"description": grounded_description,
                                                  "passages": passages}).text.strip()
    cited = llm.complete("pipeline.rcid_cite", {"description": merged, "passages": passages}).text.strip()
    cited, dropped = drop_invalid_markers(cited, contexts.k)
    if dropped:
        log.warning("%s: removed out-of-range citation(s) %s", contexts.image_ref, dropped)
    return cited

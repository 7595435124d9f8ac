"""RCVQA answer judging and accuracy tables; multiple-choice benchmark scoring.

Benchmark settings:

closed
    the chosen option is right iff it is the correct option, whatever was retrieved.
open
    when retrieval missed the gold entity, choosing the "insufficient
    information" option is the right answer; otherwise the correct option is.
oracle
    gold evidence is handed to the model, so only the correct option counts.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from ._pool import ordered_map
from .backends import BackendClient, BackendError, EmbeddingClient, PreconditionError, VerdictParseError
from .backends.parsing import parse_choice
from .core import MCQ_QTYPES, RCVQA_CATEGORIES, Entity, MCQItem, RCVQAItem, validate_mcq

log = logging.getLogger(__name__)

SETTINGS = ("closed", "open", "oracle")


@dataclass(frozen=True)
class AnswerRecord:
    item_id: str
    category: str = ""
    model_answer: Any = ""      # free text, or an option index for benchmark items
    retrieved_entity_ids: tuple[str, ...] | None = None
    setting: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "category": self.category,
            "model_answer": self.model_answer,
            "retrieved_entity_ids": None if self.retrieved_entity_ids is None else list(self.retrieved_entity_ids),
            "setting": self.setting,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AnswerRecord":
        retrieved = d.get("retrieved_entity_ids")
        return cls(
            item_id=str(d["item_id"]),
            category=d.get("category", ""),
            model_answer=d.get("model_answer", ""),
            retrieved_entity_ids=None if retrieved is None else tuple(str(x) for x in retrieved),
            setting=d.get("setting"),
        )


@dataclass
class AccuracyTable:
    cells: dict[str, float | None]
    counts: dict[str, tuple[int, int]]     # cell -> (correct, total)
    overall: float | None                  # primary overall (macro for RCVQA, micro for the benchmark)
    overall_macro: float | None = None
    overall_micro: float | None = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cells": dict(self.cells),
            "counts": {k: {"correct": c, "total": t} for k, (c, t) in self.counts.items()},
            "overall": self.overall,
            "overall_macro": self.overall_macro,
            "overall_micro": self.overall_micro,
            "warnings": list(self.warnings),
        }


def macro_overall(cells: Mapping[str, float | None]) -> float | None:
    populated = [v for v in cells.values() if v is not None]
    return sum(populated) / len(populated) if populated else None


def weighted_mean(visual_acc: float, text_acc: float) -> float:
    for v in (visual_acc, text_acc):
        if not 0 <= v <= 100:
            raise PreconditionError(f"accuracy {v} outside [0, 100]")
    return (visual_acc + text_acc) / 2


def _table(outcomes: Sequence[tuple[str, bool]], cell_names: Sequence[str]) -> tuple[dict, dict, list[str]]:
    counts = {c: [0, 0] for c in cell_names}
    for cell, ok in outcomes:
        if cell not in counts:
            raise ValueError(f"unknown category {cell!r}")
        counts[cell][1] += 1
        counts[cell][0] += bool(ok)
    cells, notes = {}, []
    for c in cell_names:
        correct, total = counts[c]
        if total == 0:
            cells[c] = None
            notes.append(f"no {c} items; cell reported absent")
        else:
            cells[c] = 100.0 * correct / total
    for note in notes:
        warnings.warn(note, stacklevel=3)
    return cells, {c: tuple(v) for c, v in counts.items()}, notes


# -------------------------------------------------------------------- RCVQA


def judge_rcvqa_answer(item: RCVQAItem, model_answer: str, judge: BackendClient) -> tuple[bool, dict[str, Any]]:
    """Correctness of one answer plus an audit record. Unparseable verdicts count as incorrect."""
    if item.answerable:
        template = "rcvqa.correctness"
        slots = {"question": item.question, "reference_answer": item.reference_answer,
                 "model_answer": model_answer}
    else:
        template = "rcvqa.abstention"
        slots = {"question": item.question, "model_answer": model_answer}
    verdict, raw = judge.try_judge(template, slots)
    correct = bool(verdict and verdict.value)
    return correct, {"template_id": template, "raw_response": raw, "parse_error": verdict is None}


def rcvqa_accuracy(outcomes: Sequence[tuple[str, bool]]) -> AccuracyTable:
    """Per-cell accuracy over (category, correct) pairs; overall is the mean of populated cells."""
    cells, counts, notes = _table(outcomes, RCVQA_CATEGORIES)
    macro = macro_overall(cells)
    total = sum(t for _, t in counts.values())
    micro = 100.0 * sum(c for c, _ in counts.values()) / total if total else None
    return AccuracyTable(cells, counts, macro, macro, micro, notes)


def evaluate_rcvqa(items: Sequence[RCVQAItem], answers: Sequence[AnswerRecord], judge: BackendClient,
                   workers: int = 1) -> dict[str, Any]:
    if not answers:
        raise ValueError("no items")
    by_id = {it.item_id: it for it in items}
    seen = set()
    for a in answers:
        if a.item_id in seen:
            raise ValueError(f"duplicate answer for item {a.item_id}")
        seen.add(a.item_id)

    def run(ans: AnswerRecord):
        item = by_id.get(ans.item_id)
        if item is None:
            return None, "no matching item"
        try:
            correct, audit = judge_rcvqa_answer(item, str(ans.model_answer), judge)
        except BackendError as exc:
            return None, f"{type(exc).__name__}: {exc}"
        return {"item_id": item.item_id, "category": item.category, "correct": correct, **audit}, None

    results = ordered_map(run, answers, workers)
    rows = sorted((r for r, _ in results if r is not None), key=lambda r: r["item_id"])
    excluded = sorted(({"item_id": a.item_id, "reason": err} for a, (r, err) in zip(answers, results)
                       if r is None), key=lambda e: e["item_id"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = rcvqa_accuracy([(r["category"], r["correct"]) for r in rows])
    return {
        "kind": "rcvqa",
        "corpus": {**table.to_dict(), "n_items": len(rows), "n_excluded": len(excluded),
                   "parse_errors": sum(r["parse_error"] for r in rows)},
        "items": rows,
        "excluded": excluded,
        "metadata": {"overall": "macro mean of populated cells", "parse_error_fallback": "incorrect"},
    }


# ---------------------------------------------------------------- benchmark


def chosen_index(item: MCQItem, record: AnswerRecord) -> int | None:
    """Option index picked by the model, or None when the answer cannot be parsed."""
    ans = record.model_answer
    if isinstance(ans, bool):
        return None
    if isinstance(ans, int):
        return ans if 0 <= ans < len(item.options) else None
    try:
        return parse_choice(str(ans), len(item.options))
    except VerdictParseError:
        return None


def expected_index(item: MCQItem, setting: str, retrieved: Sequence[str] | None) -> int:
    if setting == "open" and item.gold_entity_id not in (retrieved or ()):
        return item.insufficient_index
    return item.correct_index


def score_mcq(item: MCQItem, record: AnswerRecord, setting: str | None = None) -> bool:
    setting = setting or record.setting
    if setting not in SETTINGS:
        raise PreconditionError(f"setting must be one of {SETTINGS}, got {setting!r}")
    if setting in ("open", "closed") and record.retrieved_entity_ids is None:
        raise PreconditionError(f"{item.item_id}: retrieved_entity_ids required in the {setting} setting")
    chosen = chosen_index(item, record)
    if chosen is None:
        return False
    return chosen == expected_index(item, setting, record.retrieved_entity_ids)


def bench_accuracy(items: Sequence[MCQItem], records: Sequence[AnswerRecord], setting: str) -> dict[str, Any]:
    by_id = {it.item_id: it for it in items}
    seen: set[str] = set()
    outcomes, rows, unparseable = [], [], 0
    for rec in records:
        if rec.item_id in seen:
            raise ValueError(f"duplicate record for item {rec.item_id}")
        seen.add(rec.item_id)
        item = by_id.get(rec.item_id)
        if item is None:
            raise ValueError(f"record for unknown item {rec.item_id}")
        chosen = chosen_index(item, rec)
        unparseable += chosen is None
        ok = score_mcq(item, rec, setting)
        gold_retrieved = None if rec.retrieved_entity_ids is None else item.gold_entity_id in rec.retrieved_entity_ids
        outcomes.append((item.qtype, ok))
        rows.append({"item_id": item.item_id, "qtype": item.qtype, "chosen": chosen, "correct": ok,
                     "gold_retrieved": gold_retrieved})
    cells, counts, notes = _table(outcomes, MCQ_QTYPES)
    for item in sorted(by_id.values(), key=lambda it: it.item_id):
        for problem in validate_mcq(item):
            log.warning("%s: %s", item.item_id, problem)
            notes.append(f"{item.item_id}: {problem}")
    total = sum(t for _, t in counts.values())
    micro = 100.0 * sum(c for c, _ in counts.values()) / total if total else None
    table = AccuracyTable(cells, counts, micro, macro_overall(cells), micro, notes)
    return {
        "kind": "bench",
        "setting": setting,
        "corpus": {**table.to_dict(), "n_items": len(rows), "unparseable": unparseable},
        "items": sorted(rows, key=lambda r: r["item_id"]),
        "excluded": [],
        "metadata": {"overall": "micro (pooled over items); macro also reported"},
    }


# ---------------------------------------------------------------- retrieval


class Retriever(Protocol):
    def retrieve(self, item: MCQItem, store: Mapping[str, Entity], n: int) -> list[str]: ...


class OracleRetriever:
    def retrieve(self, item: MCQItem, store: Mapping[str, Entity], n: int) -> list[str]:
        return [item.gold_entity_id]


class ScriptedRetriever:
    def __init__(self, mapping: Mapping[str, Sequence[str]]):
        self.mapping = {k: list(v) for k, v in mapping.items()}

    def retrieve(self, item: MCQItem, store: Mapping[str, Entity], n: int) -> list[str]:
        return self.mapping.get(item.item_id, [])[:n]


class EmbeddingRetriever:
    """Cosine top-n between the question image and each entity's reference images / profile text.

    An entity's score is its best match over its references.
    """

    def __init__(self, embedder: EmbeddingClient, use_profile_text: bool = True):
        self.embedder = embedder
        self.use_profile_text = use_profile_text

    def entity_score(self, query: np.ndarray, entity: Entity) -> float:
        payloads = list(entity.reference_image_refs)
        if self.use_profile_text or not payloads:
            payloads.append(entity.profile_text)
        return max(float(np.dot(query, self.embedder.embed(p))) for p in payloads)

    def retrieve(self, item: MCQItem, store: Mapping[str, Entity], n: int) -> list[str]:
        query = self.embedder.embed(item.question_image_ref)
        scored = [(-self.entity_score(query, e), eid) for eid, e in store.items()]
        scored.sort()
        return [eid for _, eid in scored[:n]]


def entity_store(items: Sequence[MCQItem]) -> dict[str, Entity]:
    store: dict[str, Entity] = {}
    for item in items:
        for e in item.entities:
            store.setdefault(e.entity_id, e)
    return dict(sorted(store.items()))


def run_retrieval(item: MCQItem, store: Mapping[str, Entity], retriever: Retriever, n: int = 1) -> list[str]:
    if not store:
        raise ValueError("empty entity store")
    if n < 1:
        raise ValueError("n must be >= 1")
    return retriever.retrieve(item, store, n)


def fill_retrieval(items: Sequence[MCQItem], records: Sequence[AnswerRecord], retriever: Retriever, n: int,
                   setting: str) -> list[AnswerRecord]:
    """Attach retrieval results to records that lack them."""
    by_id = {it.item_id: it for it in items}
    store = entity_store(items)
    out = []
    for rec in records:
        retrieved = rec.retrieved_entity_ids
        if retrieved is None and rec.item_id in by_id:
            retrieved = tuple(run_retrieval(by_id[rec.item_id], store, retriever, n))
        out.append(AnswerRecord(rec.item_id, rec.category, rec.model_answer, retrieved, setting))
    return out


def format_options(options: Sequence[str]) -> str:
    return "\n".join(f"{chr(ord('A') + i)}. {opt}" for i, opt in enumerate(options))


def answer_bench_item(item: MCQItem, setting: str, model: BackendClient, store: Mapping[str, Entity],
                      retrieved: Sequence[str] | None) -> AnswerRecord:
    """Ask ``model`` one multiple-choice question with the evidence the setting allows."""
    if setting == "oracle":
        evidence = [item.gold_entity_id]
    else:
        evidence = list(retrieved or ())
    passages = "\n".join(f"[{n}] {store[e].profile_text}" for n, e in enumerate(evidence, start=1) if e in store)
    raw = model.complete("bench.answer", {"passages": passages or "(none)", "question": item.question,
                                          "options": format_options(item.options)},
                         attachments=[item.question_image_ref]).text
    return AnswerRecord(item.item_id, item.qtype, raw, None if retrieved is None else tuple(retrieved), setting)

"""Scripted backends and source corpora shared by the tests."""

from __future__ import annotations

import re

from rcmu.backends import BackendClient, EmbeddingClient, ScriptedBackend, ScriptedEmbeddingBackend
from rcmu.core import AnnotatedImage, BoundingBox, ObjectContext
from rcmu.pipeline import SourceObject, SourceRecord

CATEGORIES = ("person", "dog", "car")
TOWNS = ("Lyon", "Porto", "Ghent", "Turin", "Bergen", "Split", "Graz", "Cork")


def client(transport, **kw) -> BackendClient:
    return BackendClient(transport, **kw)


def pipeline_rules(bad_profile_first: bool = False):
    """A deterministic stand-in for the generation, scoring and screening models."""

    def rule(template_id: str, slots):
        if template_id == "pipeline.profile":
            idx, attempt, cat = int(slots["index"]), int(slots["attempt"]), slots["category"]
            if bad_profile_first and attempt == 0:
                return f"A {cat} in a red jacket."
            town = TOWNS[(idx + 3 * CATEGORIES.index(cat)) % len(TOWNS)] if cat in CATEGORIES else "Lyon"
            return f"Named {cat.title()}{idx}, registered in {town}. Occupation: role{idx}."
        if template_id == "pipeline.profile_screen":
            return "yes" if "jacket" in slots["info_text"] else "no"
        if template_id == "pipeline.extract_facts":
            if slots["source_kind"] == "context":
                m = re.search(r"Named (\w+), registered in (\w+)\. Occupation: (\w+)", slots["source_text"])
                return f"name: {m.group(1)}\ncity: {m.group(2)}\noccupation: {m.group(3)}"
            first = slots["source_text"].splitlines()[0]
            return f"appearance: {first}\nthis line is malformed"
        if template_id == "pipeline.generate_qa":
            facts = dict(line.split(": ", 1) for line in slots["facts"].splitlines())
            if slots["target_modality"] == "context":
                return (f"Q: In which city is {{REF}} registered?\nA: {facts['city']}\n"
                        f"Q: What does {{REF}} do?\nA: {facts['occupation']}\n"
                        "Q: Why?\nA: no placeholder, dropped")
            return f"Q: What does {{REF}} look like?\nA: {facts['appearance']}"
        if template_id == "pipeline.contextual_expression":
            facts = dict(line.split(": ", 1) for line in slots["facts"].splitlines())
            return f"the {slots['category']} called {facts['name']}"
        if template_id == "pipeline.score_validity":
            return "9"
        if template_id == "pipeline.score_informativeness":
            return "3" if "look like" in slots["question"] and "blurry" in slots["answer"] else "8"
        if template_id == "pipeline.rcid_merge":
            keys = re.findall(r"^\[(\d+)\]", slots["passages"], re.MULTILINE)
            return slots["description"] + " " + " ".join(f"Object {k} has a story." for k in keys)
        if template_id == "pipeline.rcid_cite":
            return re.sub(r"Object (\d+) has a story\.", r"Object \1 has a story [\1].", slots["description"])
        return None

    return [rule]


def pipeline_clients(bad_profile_first: bool = False):
    llm = client(ScriptedBackend(rules=pipeline_rules(bad_profile_first), backend_id="gen"))
    emb = EmbeddingClient(ScriptedEmbeddingBackend(dim=64, backend_id="emb"))
    return llm, emb


def source_corpus(n_images: int = 10) -> list[SourceRecord]:
    out = []
    for i in range(n_images):
        objs = []
        n_obj = 2 + i % 3
        for j in range(n_obj):
            cat = CATEGORIES[(i + j) % len(CATEGORIES)]
            x = 10 + 100 * j
            looks = "blurry shape" if (i, j) == (0, 1) else f"the {cat} number {j} on the {'left' if j % 2 else 'right'} of photo {i}"
            objs.append(SourceObject(f"o{j}", cat, BoundingBox(x, 20, x + 80, 200), (looks,)))
        out.append(SourceRecord(f"img{i:02d}", f"images/img{i:02d}.jpg", 640, 480, tuple(objs),
                                f"A photo with {n_obj} things in it."))
    return out


def image(*infos: str, categories=None, ref: str = "img.jpg") -> AnnotatedImage:
    cats = categories or ["person"] * len(infos)
    objs = tuple(ObjectContext(f"o{i + 1}", cats[i], BoundingBox(10 * i, 10, 10 * i + 50, 90), info, i + 1)
                 for i, info in enumerate(infos))
    return AnnotatedImage(ref, 640, 480, objs)


def entailment_judge(support) -> BackendClient:
    """Entailment verdicts from ``support``: claim -> list of sufficient key sets."""

    def rule(template_id, slots):
        if template_id != "citation.entailment":
            return None
        given = {int(k) for k in re.findall(r"^\[(\d+)\]", slots["passages"], re.MULTILINE)}
        options = support.get(slots["sentence"], [])
        return "yes" if any(set(opt) <= given for opt in options) else "no"

    return client(ScriptedBackend(rules=[rule], backend_id="entail"))


def random_bench(rng, n: int):
    """``n`` random multiple-choice items with random retrievals and picks."""
    from rcmu.core import Entity, MCQItem
    from rcmu.vqa import AnswerRecord

    items, records = [], []
    for i in range(n):
        n_ent = rng.randint(2, 5)
        ents = tuple(Entity(f"e{i}-{j}", f"profile {i} {j}") for j in range(n_ent))
        n_opt = rng.randint(3, 5)
        correct, insufficient = rng.sample(range(n_opt), 2)
        gold = rng.choice(ents).entity_id
        item = MCQItem(f"m{i:04d}", f"q{i}.jpg", ents, gold, "Which?", tuple(f"opt{o}" for o in range(n_opt)),
                       correct, insufficient, rng.choice(["V2C", "C2V"]))
        retrieved = tuple(e.entity_id for e in rng.sample(ents, rng.randint(0, 2)))
        pick = rng.choice([correct, insufficient, rng.randrange(n_opt), "garbage"])
        answer = pick if pick == "garbage" else "ABCDE"[pick]
        items.append(item)
        records.append(AnswerRecord(item.item_id, item.qtype, answer, retrieved))
    return items, records


def rescore(item, answer: str, retrieved, setting: str) -> bool:
    """Independent re-scorer used as the oracle for benchmark settings."""
    letters = "ABCDE"[: len(item.options)]
    if answer not in letters:
        return False
    chosen = letters.index(answer)
    if setting == "open" and item.gold_entity_id not in retrieved:
        return chosen == item.insufficient_index
    return chosen == item.correct_index


def brute_tau(xs, ys) -> tuple[int, int, float]:
    """O(n^2) pair counting: (concordant, discordant, tau-b)."""
    import math

    c = d = tx = ty = 0
    n = len(xs)
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = xs[i] - xs[j], ys[i] - ys[j]
            if dx == 0:
                tx += 1
            if dy == 0:
                ty += 1
            if dx * dy > 0:
                c += 1
            elif dx * dy < 0:
                d += 1
    total = n * (n - 1) // 2
    denom = math.sqrt((total - tx) * (total - ty))
    return c, d, (c - d) / denom if denom else float("nan")

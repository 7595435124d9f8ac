"""Regenerates the golden fixture corpus and scripts in this directory.

Run from the repository root::

    python3 tests/fixtures/golden/generate.py

then refresh the frozen reports with ``--refresh-reports``. The intended per-object
verdicts and per-answer outcomes go to intended.json so tests can recompute the
expected numbers without going through the scorer.
"""

import json
import math
import random
import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
NAMES = ["Ann", "Bob", "Chen", "Dara", "Eli", "Femi", "Gus", "Hana", "Ivo", "Jun"]
JOBS = ["pilot", "baker", "nurse", "welder", "tailor", "judge", "farmer", "chemist"]
CATS = ["person", "dog", "car", "cat"]
CELLS = ["V2C", "C2V", "UA_V2C", "UA_C2V"]


def dump_jsonl(path, rows):
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def main():
    rng = random.Random(20240)
    descriptions, rules, vectors, intended_rcid = [], [], {}, {}
    for i in range(20):
        k = rng.randint(2, 4)
        objects, verdicts = [], {}
        for j in range(k):
            tag = f"P{i:02d}{j}"
            cat = rng.choice(CATS)
            x = 20 + 150 * j
            objects.append({"object_id": f"o{j + 1}", "category": cat, "bbox": [x, 40, x + 120, 300],
                            "info_text": f"{tag}: {rng.choice(NAMES)} works as a {rng.choice(JOBS)}.",
                            "citation_key": j + 1})
            mention = rng.random() < 0.7
            accurate = rng.random() < 0.75
            consistency = rng.choice(["consistent", "consistent", "uncertain", "inconsistent"])
            verdicts[tag] = [mention, accurate, consistency]
            rules += [
                {"template_id": "rcid.mention", "match": {"object_info": tag},
                 "response": "Yes, it is mentioned." if mention else "No."},
                {"template_id": "rcid.accuracy", "match": {"object_info": tag},
                 "response": "Yes." if accurate else "No, the job is wrong."},
                {"template_id": "rcid.consistency", "match": {"object_info": tag},
                 "response": f"{consistency.capitalize()}."},
            ]
        scene = f"D{i:02d}"
        visual = f"Scene {scene} shows {k} subjects outdoors."
        cited = " ".join(f"Subject {j + 1} is here [{j + 1}]." for j in range(k))
        image_ref = f"images/golden{i:02d}.jpg"
        descriptions.append({"schema_version": 1, "item_id": f"desc-{i:02d}", "source_model": "fixture",
                             "description_text": f"Scene {scene}. {cited}",
                             "image": {"image_ref": image_ref, "width": 800, "height": 600, "objects": objects}})
        rules.append({"template_id": "rcid.strip_context", "match": {"description": f"Scene {scene}."},
                      "response": visual})
        cos = round(rng.uniform(-0.1, 0.5), 3)
        vectors[image_ref] = [1.0, 0.0]
        vectors[visual] = [cos, math.sqrt(1 - cos * cos)]
        intended_rcid[f"desc-{i:02d}"] = {"verdicts": verdicts, "cos": cos}

    items, answers, intended_vqa = [], [], {}
    for n in range(40):
        cell = CELLS[n % 4]
        item_id = f"vqa-{n:02d}"
        ua = cell.startswith("UA")
        img = {"image_ref": f"images/vqa{n:02d}.jpg", "width": 640, "height": 480,
               "objects": [{"object_id": "o1", "category": "person", "bbox": [10, 10, 200, 400],
                            "info_text": f"{NAMES[n % 10]} works as a {JOBS[n % 8]}.", "citation_key": 1}]}
        items.append({"schema_version": 1, "item_id": item_id, "image": img, "category": cell,
                      "question": f"Question {n} about the person?",
                      "reference_answer": "UNANSWERABLE" if ua else JOBS[n % 8],
                      "expected_citation_keys": [] if ua else [1]})
        roll = rng.random()
        if roll < 0.08:
            text, correct = "hmm, hard to say", False
        elif roll < 0.65:
            text, correct = ("I cannot answer that." if ua else f"It is indeed a {JOBS[n % 8]}."), True
        else:
            text, correct = ("The answer is blue." if ua else "It is a plumber."), False
        answers.append({"schema_version": 1, "item_id": item_id, "category": cell, "model_answer": text})
        intended_vqa[item_id] = {"category": cell, "correct": correct}
    vqa_rules = [
        {"template_id": "*", "match": {"model_answer": "hmm"}, "response": "Hmm, hard to say."},
        {"template_id": "rcvqa.correctness", "match": {"model_answer": "indeed"}, "response": "Yes, correct."},
        {"template_id": "rcvqa.abstention", "match": {"model_answer": "cannot"}, "response": "Yes, it abstains."},
    ]
    script = {"rules": rules + vqa_rules,
              "defaults": {"rcvqa.correctness": "No.", "rcvqa.abstention": "No."}}

    dump_jsonl(HERE / "descriptions.jsonl", descriptions)
    dump_jsonl(HERE / "rcvqa_items.jsonl", items)
    dump_jsonl(HERE / "rcvqa_answers.jsonl", answers)
    (HERE / "judge_script.json").write_text(json.dumps(script, indent=1, sort_keys=True) + "\n")
    (HERE / "embed_script.json").write_text(json.dumps({"vectors": vectors, "fallback": "error"}, indent=1,
                                                       sort_keys=True) + "\n")
    (HERE / "intended.json").write_text(json.dumps({"rcid": intended_rcid, "rcvqa": intended_vqa}, indent=1,
                                                   sort_keys=True) + "\n")


def refresh_reports():
    env = {"SOURCE_DATE_EPOCH": "1700000000", "PATH": "/usr/bin:/bin"}
    for cmd, out in (
        (["eval-rcid", "--input", "descriptions.jsonl", "--judge", "judge", "--embed", "embed"], "rcid_report.json"),
        (["eval-rcvqa", "--items", "rcvqa_items.jsonl", "--answers", "rcvqa_answers.jsonl", "--judge", "judge"],
         "rcvqa_report.json"),
    ):
        result = subprocess.run([sys.executable, "-m", "rcmu", "--config", "config.toml", *cmd],
                                cwd=HERE, env=env, capture_output=True, check=True)
        (HERE / out).write_bytes(result.stdout)


if __name__ == "__main__":
    if "--refresh-reports" in sys.argv:
        refresh_reports()
    else:
        main()

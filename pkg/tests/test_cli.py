import json
import subprocess
import sys
from pathlib import Path

import pytest

from rcmu.citations import CitedResponse
from rcmu.cli import dispatch
from rcmu.core import HumanRating, write_jsonl
from rcmu.vqa import AnswerRecord
from tests.fakes import image, random_bench, source_corpus

GOLDEN = Path(__file__).parent / "fixtures" / "golden"
CONFIG = str(GOLDEN / "config.toml")
RCVQA = ["eval-rcvqa", "--items", str(GOLDEN / "rcvqa_items.jsonl"),
         "--answers", str(GOLDEN / "rcvqa_answers.jsonl"), "--judge", "judge"]
RCID = ["eval-rcid", "--input", str(GOLDEN / "descriptions.jsonl"), "--judge", "judge", "--embed", "embed"]


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def run(capsys, *argv):
    code = dispatch(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_config(tmp_path, script, extra=""):
    (tmp_path / "script.json").write_text(json.dumps(script))
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'[backends.s]\nkind = "scripted"\nscript = "script.json"\n'
                   f'[backends.e]\nkind = "scripted-embedding"\n{extra}')
    return str(cfg)


# ---------------------------------------------------------------- exit codes


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "eval-rcid", "--judge", "j", "--embed", "e")[0] == 2
    code, _, err = run(capsys, "--bogus", "stats", "--dataset", ".")
    assert code == 2 and "usage" in err
    assert run(capsys)[0] == 2
    assert run(capsys, "--config", "/nonexistent.toml", *RCVQA)[0] == 2


def test_unknown_backend_and_bad_records_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "--config", CONFIG, *RCVQA[:-1], "nobody")
    assert code == 2 and "nobody" in err
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema_version": 1, "item_id"\n')
    code, _, err = run(capsys, "--config", CONFIG, "eval-rcvqa", "--items", str(bad),
                       "--answers", str(bad), "--judge", "judge")
    assert code == 2 and "line 1" in err


def test_excluded_item_exits_1(capsys, tmp_path):
    answers = tmp_path / "answers.jsonl"
    lines = (GOLDEN / "rcvqa_answers.jsonl").read_text().splitlines()
    extra = json.dumps({"schema_version": 1, "item_id": "ghost", "model_answer": "x"})
    answers.write_text("\n".join(lines[:5] + [extra]) + "\n")
    code, out, _ = run(capsys, "--config", CONFIG, "eval-rcvqa", "--items", str(GOLDEN / "rcvqa_items.jsonl"),
                       "--answers", str(answers), "--judge", "judge")
    report = json.loads(out)
    assert code == 1
    assert report["excluded"] == [{"item_id": "ghost", "reason": "no matching item"}]
    assert report["manifest"]["excluded_items"] == 1


def test_version(capsys):
    assert run(capsys, "--version")[0] == 0


# ------------------------------------------------------------------- output


def test_rcid_table_columns(capsys):
    code, out, _ = run(capsys, "--config", CONFIG, "--format", "table", *RCID)
    assert code == 0
    header = out.splitlines()[1].split()
    assert header == ["CC", "CA", "CVC", "RCIDS_ctx", "CLIPS", "RCIDS"]


def test_rcvqa_table_and_flag_position(capsys):
    code, out, _ = run(capsys, *RCVQA, "--config", CONFIG, "--format", "table", "--workers", "3")
    assert code == 0
    lines = out.splitlines()
    assert "V2C    C2V  UA V2C  UA C2V  Overall" in lines[1]
    assert lines[3].split() == ["60.00", "50.00", "70.00", "70.00", "62.50"]


def test_json_matches_golden_and_out_file(capsys, tmp_path):
    out = tmp_path / "r" / "rcvqa.json"
    assert run(capsys, "--config", CONFIG, "--out", str(out), *RCVQA)[0] == 0
    assert out.read_bytes() == (GOLDEN / "rcvqa_report.json").read_bytes()


def test_figures(capsys, tmp_path):
    figs = tmp_path / "figs"
    assert run(capsys, "--config", CONFIG, "--figures", str(figs), *RCID)[0] == 0
    names = sorted(p.name for p in figs.iterdir())
    assert "rcid_summary.png" in names and len(names) >= 2
    assert all(p.read_bytes()[:4] == b"\x89PNG" for p in figs.iterdir())


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "rcmu", "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "eval-citations" in result.stdout


# ---------------------------------------------------------------- citations


def test_eval_citations(capsys, tmp_path):
    cfg = write_config(tmp_path, {
        "rules": [{"template_id": "citation.entailment", "match": {"sentence": "dog", "passages": "[1]"},
                   "response": "yes"}],
        "defaults": {"citation.entailment": "no"}})
    responses = tmp_path / "resp.jsonl"
    write_jsonl(responses, [CitedResponse("r1", image("Rex is a dog."), "A dog [1]. A cat [1]."),
                            CitedResponse("r2", image("Rex is a dog."), "Nothing here.")])
    code, out, _ = run(capsys, "--config", cfg, "eval-citations", "--input", str(responses), "--mode", "rcid",
                       "--judge", "s")
    c = json.loads(out)["corpus"]
    assert code == 0
    assert (c["recall"], c["precision"], c["n_no_citation"]) == (25.0, 50.0, 1)
    code, out, _ = run(capsys, "--config", cfg, "--format", "table", "eval-citations", "--input", str(responses),
                       "--mode", "rcid", "--judge", "s")
    assert out.splitlines()[1].split() == ["Recall", "Precision", "F1"]


# -------------------------------------------------------------------- bench


def bench_files(tmp_path):
    import random

    items, records = random_bench(random.Random(1), 30)
    write_jsonl(tmp_path / "items.jsonl", items)
    write_jsonl(tmp_path / "answers.jsonl", records)
    bare = [AnswerRecord(r.item_id, r.category, r.model_answer) for r in records]
    write_jsonl(tmp_path / "bare.jsonl", bare)
    return items, records


def test_eval_bench_settings(capsys, tmp_path):
    items, records = bench_files(tmp_path)
    reports = {}
    for setting in ("closed", "open"):
        code, out, _ = run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"),
                           "--answers", str(tmp_path / "answers.jsonl"), "--setting", setting)
        assert code == 0
        reports[setting] = json.loads(out)
    assert reports["open"]["corpus"]["n_items"] == 30
    assert reports["open"]["corpus"]["overall"] != reports["closed"]["corpus"]["overall"]
    code, out, _ = run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"),
                       "--answers", str(tmp_path / "bare.jsonl"), "--setting", "open", "--retriever", "oracle")
    oracle_open = json.loads(out)["corpus"]["overall"]
    code, out, _ = run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"),
                       "--answers", str(tmp_path / "bare.jsonl"), "--setting", "closed", "--retriever", "oracle")
    assert json.loads(out)["corpus"]["overall"] == oracle_open


def test_eval_bench_scripted_retriever_and_usage(capsys, tmp_path):
    items, _ = bench_files(tmp_path)
    mapping = {it.item_id: [it.gold_entity_id] for it in items}
    (tmp_path / "map.json").write_text(json.dumps(mapping))
    code, out, _ = run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"), "--answers",
                       str(tmp_path / "bare.jsonl"), "--setting", "open", "--retriever", "scripted",
                       "--retrieval-map", str(tmp_path / "map.json"))
    assert code == 0 and all(row["gold_retrieved"] for row in json.loads(out)["items"])
    assert run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"), "--setting", "open")[0] == 2
    assert run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"), "--answers",
               str(tmp_path / "bare.jsonl"), "--setting", "open", "--retriever", "scripted")[0] == 2
    # open setting without any retrieval information is an input error
    assert run(capsys, "eval-bench", "--items", str(tmp_path / "items.jsonl"), "--answers",
               str(tmp_path / "bare.jsonl"), "--setting", "open")[0] == 2


def test_eval_bench_with_model(capsys, tmp_path):
    items, _ = bench_files(tmp_path)
    cfg = write_config(tmp_path, {"defaults": {"bench.answer": "A"}})
    code, out, _ = run(capsys, "--config", cfg, "--workers", "4", "eval-bench", "--items",
                       str(tmp_path / "items.jsonl"), "--model", "s", "--setting", "oracle")
    report = json.loads(out)
    assert code == 0
    expected = sum(it.correct_index == 0 for it in items) / len(items) * 100
    assert report["corpus"]["overall"] == pytest.approx(expected)
    code, out, _ = run(capsys, "--config", cfg, "eval-bench", "--items", str(tmp_path / "items.jsonl"),
                       "--model", "s", "--setting", "open", "--retriever", "embedding", "--embed", "e", "--topn", "2")
    assert code == 0
    assert all(r["gold_retrieved"] is not None for r in json.loads(out)["items"])


# ------------------------------------------------------------ format-rcvit


def test_format_rcvit_command(capsys, tmp_path):
    src = tmp_path / "req.jsonl"
    img = image("Rex, a rescue.", categories=["dog"])
    src.write_text(json.dumps({"schema_version": 1, "item_id": "a", "image": img.to_dict(),
                               "instruction": "Describe."}) + "\n")
    code, out, _ = run(capsys, "format-rcvit", "--input", str(src))
    row = json.loads(out)
    assert code == 0 and row["item_id"] == "a"
    assert row["prompt"] == "<image>\nThe dog located at [0, 10, 50, 90] in the image:Rex, a rescue.\nDescribe."
    code, out, _ = run(capsys, "--format", "table", "format-rcvit", "--input", str(src))
    assert out == row["prompt"] + "\n"


# --------------------------------------------------------------- correlate


def test_correlate_from_report_and_map(capsys, tmp_path):
    report = json.loads((GOLDEN / "rcid_report.json").read_text())
    finals = {it["item_id"]: it["final"] for it in report["items"]}
    ranked = sorted(finals, key=finals.get)
    ratings = [HumanRating(i, 1 + n * 5 // len(ranked)) for n, i in enumerate(ranked)]
    write_jsonl(tmp_path / "ratings.jsonl", ratings)
    code, out, _ = run(capsys, "correlate", "--scores", str(GOLDEN / "rcid_report.json"),
                       "--ratings", str(tmp_path / "ratings.jsonl"))
    result = json.loads(out)
    assert code == 0 and result["metric"] == "final"
    assert result["corpus"]["tau"] > 0.8 and result["corpus"]["n"] == 20
    (tmp_path / "flat.json").write_text(json.dumps({i: 1.0 for i in finals}))
    code, _, err = run(capsys, "correlate", "--scores", str(tmp_path / "flat.json"),
                       "--ratings", str(tmp_path / "ratings.jsonl"))
    assert code == 2 and "constant" in err


# ---------------------------------------------------------- build / stats


PIPELINE_SCRIPT = {
    "rules": [
        {"template_id": "pipeline.profile", "response": "Known as {category}-{index}, who lives in town {index}.",
         "format": True},
        {"template_id": "pipeline.extract_facts", "match": {"source_kind": "context"},
         "response": "identity: {source_text}", "format": True},
        {"template_id": "pipeline.extract_facts", "response": "appearance: seen in photo", "format": False},
        {"template_id": "pipeline.generate_qa", "match": {"target_modality": "context"},
         "response": "Q: Where does {{REF}} live?\nA: in a town", "format": True},
        {"template_id": "pipeline.generate_qa", "response": "Q: What is {{REF}} doing?\nA: standing still",
         "format": True},
        {"template_id": "pipeline.contextual_expression", "response": "the {category} known by {facts}",
         "format": True},
        {"template_id": "pipeline.rcid_cite", "response": "{description} [1]", "format": True},
        {"template_id": "pipeline.rcid_merge", "response": "{description} With background.", "format": True},
    ],
    "defaults": {"pipeline.profile_screen": "no", "pipeline.score_validity": "9",
                 "pipeline.score_informativeness": "9"},
}


def test_build_dataset_and_stats(capsys, tmp_path):
    cfg = write_config(tmp_path, PIPELINE_SCRIPT, "[pipeline]\nprofiles_per_category = 3\n")
    write_jsonl(tmp_path / "src.jsonl", source_corpus(5))
    out_dir = tmp_path / "ds"
    code, out, err = run(capsys, "--config", cfg, "--seed", "4", "--out", str(out_dir), "build-dataset",
                         "--source", str(tmp_path / "src.jsonl"), "--llm", "s", "--embed", "e")
    assert code == 0, err
    stats = json.loads(out)["corpus"]
    assert stats["images"] == 5 and stats["descriptions"] == 5 and stats["profiles"] == 9
    assert stats["quadruples_per_cell"]["UA_C2V"] > 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["command"] == "build-dataset" and manifest["seed"] == 4
    code, out, _ = run(capsys, "--format", "table", "stats", "--dataset", str(out_dir))
    assert code == 0 and "quadruples" in out
    code, out2, _ = run(capsys, "stats", "--dataset", str(out_dir))
    assert json.loads(out2)["corpus"] == stats
    assert run(capsys, "stats", "--dataset", str(tmp_path / "nope"))[0] == 2


def test_build_dataset_needs_out(capsys, tmp_path):
    cfg = write_config(tmp_path, PIPELINE_SCRIPT)
    write_jsonl(tmp_path / "src.jsonl", source_corpus(2))
    assert run(capsys, "--config", cfg, "build-dataset", "--source", str(tmp_path / "src.jsonl"), "--llm", "s",
               "--embed", "e")[0] == 2

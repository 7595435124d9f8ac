"""Command-line entry point: ``rcmu <command> [options]``.

Exit status is 0 on success, 1 when the run finished but some items were excluded,
and 2 for configuration or input errors (including bad flags).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from ._pool import ordered_map
from .backends import (
    BackendClient,
    BackendError,
    ConfigurationError,
    EmbeddingClient,
    Settings,
    load_settings,
    make_client,
    make_embedder,
)
from .citations import MODES, CitedResponse, evaluate_citations
from .core import DescriptionRecord, HumanRating, MCQItem, RCVQAItem, RecordError, read_json, read_jsonl
from .rcid import DEFAULT_CLIP_WEIGHT, evaluate_rcid
from .report import FORMATS, build_manifest, render_report, timestamp
from .stats import DegenerateInputError, correlate
from .vqa import (
    SETTINGS,
    AnswerRecord,
    EmbeddingRetriever,
    OracleRetriever,
    ScriptedRetriever,
    answer_bench_item,
    bench_accuracy,
    entity_store,
    evaluate_rcvqa,
    fill_retrieval,
    run_retrieval,
)

log = logging.getLogger("rcmu")

COMMANDS = ("eval-rcid", "eval-rcvqa", "eval-citations", "eval-bench", "build-dataset", "format-rcvit",
            "correlate", "stats")
DEFAULT_METRIC = {"rcid": "final", "citations": "recall"}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- parser


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS defaults let the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="TOML settings file (backends, cache, pipeline)")
    p.add_argument("--cache-dir", default=S, help="response cache directory (overrides config)")
    p.add_argument("--seed", type=int, default=S, help="random seed (overrides config)")
    p.add_argument("--workers", type=int, default=S, help="parallel backend calls (overrides config)")
    p.add_argument("--format", choices=FORMATS, default=S, help="output format (default json)")
    p.add_argument("--figures", default=S, metavar="DIR", help="also write PNG figures to DIR")
    p.add_argument("--out", default=S, help="write output here instead of stdout")
    p.add_argument("-v", "--verbose", action="count", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="rcmu", parents=[common],
                                     description="Region-level context-aware multimodal evaluation tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    p = add("eval-rcid", "Score contextualized descriptions with RCIDScore.")
    p.add_argument("--input", required=True, help="descriptions JSONL")
    p.add_argument("--judge", required=True, help="text judge backend (coverage)")
    p.add_argument("--mllm-judge", help="multimodal judge backend (accuracy, consistency); default --judge")
    p.add_argument("--llm", help="backend that strips context before the visual score; default --judge")
    p.add_argument("--embed", required=True, help="embedding backend for the visual score")
    p.add_argument("--clip-weight", type=float, default=DEFAULT_CLIP_WEIGHT)

    p = add("eval-rcvqa", "Judge RCVQA answers and report the four-cell accuracy table.")
    p.add_argument("--items", required=True, help="RCVQA items JSONL")
    p.add_argument("--answers", required=True, help="answer records JSONL")
    p.add_argument("--judge", required=True)

    p = add("eval-citations", "Citation recall, precision and F1.")
    p.add_argument("--input", required=True, help="cited responses JSONL")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--judge", required=True, help="multimodal entailment judge backend")

    p = add("eval-bench", "Score multiple-choice benchmark runs under one setting.")
    p.add_argument("--items", required=True, help="MCQ items JSONL")
    p.add_argument("--answers", help="answer records JSONL (or use --model to produce them)")
    p.add_argument("--model", help="completion backend that answers the questions")
    p.add_argument("--setting", choices=SETTINGS, required=True)
    p.add_argument("--retriever", choices=("oracle", "scripted", "embedding"),
                   help="fill missing retrieval lists with this retriever")
    p.add_argument("--topn", type=int, default=1)
    p.add_argument("--embed", help="embedding backend for --retriever embedding")
    p.add_argument("--retrieval-map", help="JSON object item_id -> [entity ids] for --retriever scripted")

    p = add("build-dataset", "Build RCVQA quadruples, cited descriptions and training records.")
    p.add_argument("--source", required=True, help="source records JSONL")
    p.add_argument("--llm", required=True, help="generation backend")
    p.add_argument("--scorer", help="QA scoring backend; default --llm")
    p.add_argument("--screen", help="profile leak-screening backend; default --llm")
    p.add_argument("--embed", required=True, help="embedding backend for expression dedup")

    p = add("format-rcvit", "Serialize images and instructions into training prompts.")
    p.add_argument("--input", required=True,
                   help="JSONL with an image and an instruction (or question) per line")

    p = add("correlate", "Kendall tau-b between metric scores and human ratings.")
    p.add_argument("--scores", required=True, help="report JSON, or a JSON object item_id -> score")
    p.add_argument("--ratings", required=True, help="human ratings JSONL")
    p.add_argument("--metric", help="per-item field to correlate (default depends on report kind)")

    p = add("stats", "Statistics table for a built dataset directory.")
    p.add_argument("--dataset", required=True, help="directory written by build-dataset")
    return parser


# ------------------------------------------------------------------ context


class Run:
    """Settings plus lazily-built backend clients for one command."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.settings: Settings = load_settings(getattr(args, "config", None))
        if getattr(args, "cache_dir", None):
            self.settings.cache_dir = Path(args.cache_dir)
        self.seed = args.seed if getattr(args, "seed", None) is not None else self.settings.seed
        self.workers = args.workers if getattr(args, "workers", None) is not None else self.settings.workers
        if self.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        self.templates = self.settings.templates()
        self.cache = self.settings.cache()
        self._clients: dict[str, Any] = {}
        self.started_at = timestamp()

    def client(self, name: str) -> BackendClient:
        if name not in self._clients:
            self._clients[name] = make_client(self.settings, name, self.templates, self.cache)
        return self._clients[name]

    def embedder(self, name: str) -> EmbeddingClient:
        if name not in self._clients:
            self._clients[name] = make_embedder(self.settings, name, self.cache)
        return self._clients[name]

    def manifest(self, excluded: int = 0, **extra: Any) -> dict[str, Any]:
        used_templates = self.templates.digests() if any(
            isinstance(c, BackendClient) for c in self._clients.values()) else {}
        return build_manifest(self.args.command, config_digest=self.settings.digest, seed=self.seed,
                              clients=list(self._clients.values()), templates=used_templates,
                              started_at=self.started_at, excluded=excluded, extra=extra)


def _emit(run: Run, report: dict[str, Any], text: str | None = None) -> None:
    fmt = getattr(run.args, "format", None) or "json"
    text = text if text is not None else render_report(report, fmt)
    out = getattr(run.args, "out", None)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    figures = getattr(run.args, "figures", None)
    if figures and report.get("kind"):
        from .plotting import render_figures

        stem = Path(out).stem if out else report["kind"]
        for path in render_figures(report, figures, stem):
            log.info("wrote %s", path)


def _finish(run: Run, report: dict[str, Any], n_excluded: int, **extra: Any) -> int:
    report["manifest"] = run.manifest(n_excluded, **extra)
    _emit(run, report)
    return 1 if n_excluded else 0


# ----------------------------------------------------------------- commands


def cmd_eval_rcid(run: Run) -> int:
    a = run.args
    descriptions = read_jsonl(a.input, DescriptionRecord)
    judge = run.client(a.judge)
    report = evaluate_rcid(descriptions, judge, run.client(a.mllm_judge or a.judge), run.embedder(a.embed),
                           a.clip_weight, run.workers, run.client(a.llm) if a.llm else None)
    return _finish(run, report, len(report["excluded"]))


def cmd_eval_rcvqa(run: Run) -> int:
    a = run.args
    items = read_jsonl(a.items, RCVQAItem)
    answers = read_jsonl(a.answers, AnswerRecord)
    report = evaluate_rcvqa(items, answers, run.client(a.judge), run.workers)
    return _finish(run, report, len(report["excluded"]))


def cmd_eval_citations(run: Run) -> int:
    a = run.args
    responses = read_jsonl(a.input, CitedResponse)
    report = evaluate_citations(responses, run.client(a.judge), a.mode, run.workers)
    return _finish(run, report, len(report["excluded"]))


def _retriever(run: Run):
    a = run.args
    if a.retriever == "oracle":
        return OracleRetriever()
    if a.retriever == "scripted":
        if not a.retrieval_map:
            raise UsageError("--retriever scripted needs --retrieval-map")
        mapping = read_json(a.retrieval_map)
        if not isinstance(mapping, dict):
            raise UsageError("--retrieval-map must hold a JSON object")
        return ScriptedRetriever(mapping)
    if a.retriever == "embedding":
        if not a.embed:
            raise UsageError("--retriever embedding needs --embed")
        return EmbeddingRetriever(run.embedder(a.embed))
    return None


def cmd_eval_bench(run: Run) -> int:
    a = run.args
    if a.topn < 1:
        raise UsageError("--topn must be >= 1")
    if not a.answers and not a.model:
        raise UsageError("eval-bench needs --answers or --model")
    items = read_jsonl(a.items, MCQItem)
    retriever = _retriever(run)
    if a.answers:
        records = read_jsonl(a.answers, AnswerRecord)
        if retriever is not None:
            records = fill_retrieval(items, records, retriever, a.topn, a.setting)
    else:
        store = entity_store(items)
        model = run.client(a.model)

        def answer(item: MCQItem) -> AnswerRecord:
            retrieved = None
            if a.setting != "oracle":
                if retriever is None:
                    raise UsageError(f"--model in the {a.setting} setting needs --retriever")
                retrieved = run_retrieval(item, store, retriever, a.topn)
            return answer_bench_item(item, a.setting, model, store, retrieved)

        records = ordered_map(answer, items, run.workers)
    report = bench_accuracy(items, records, a.setting)
    report["metadata"]["retriever"] = a.retriever
    report["metadata"]["topn"] = a.topn
    return _finish(run, report, 0)


def cmd_build_dataset(run: Run) -> int:
    from .pipeline import PipelineConfig, SourceRecord, build_dataset

    a = run.args
    out_dir = getattr(a, "out", None)
    if not out_dir:
        raise UsageError("build-dataset needs --out DIR")
    cfg = PipelineConfig.from_mapping(run.settings.pipeline)
    sources = read_jsonl(a.source, SourceRecord)
    dataset = build_dataset(sources, cfg, run.client(a.llm), run.embedder(a.embed), run.seed,
                            run.client(a.scorer) if a.scorer else None,
                            run.client(a.screen) if a.screen else None, run.workers)
    stats = dataset.save(out_dir)
    skipped = len(dataset.metadata["skipped"])
    report = {"kind": "stats", "corpus": stats["stats"], "metadata": stats["metadata"]}
    report["manifest"] = run.manifest(skipped)
    manifest_text = json.dumps(report["manifest"], indent=2, sort_keys=True) + "\n"
    (Path(out_dir) / "manifest.json").write_text(manifest_text, encoding="utf-8")
    # --out names the dataset directory here, so the statistics go to stdout
    run.args.out = None
    _emit(run, report)
    return 1 if skipped else 0


class _FormatRequest:
    def __init__(self, item_id: str, image, instruction: str):
        self.item_id, self.image, self.instruction = item_id, image, instruction

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "_FormatRequest":
        from .core import AnnotatedImage

        instruction = d.get("instruction", d.get("question"))
        if instruction is None:
            raise KeyError("instruction")
        return cls(str(d.get("item_id", "")), AnnotatedImage.from_dict(d["image"]), instruction)


def cmd_format_rcvit(run: Run) -> int:
    from .pipeline import format_rcvit

    requests = read_jsonl(run.args.input, _FormatRequest)
    prompts = [(r.item_id, format_rcvit(r.image, r.instruction)) for r in requests]
    if (getattr(run.args, "format", None) or "json") == "json":
        text = "".join(json.dumps({"item_id": i, "prompt": p}, ensure_ascii=False, sort_keys=True) + "\n"
                       for i, p in prompts)
    else:
        text = "\n\n".join(p for _, p in prompts) + "\n"
    _emit(run, {}, text)
    return 0


def _load_scores(path: str, metric: str | None) -> tuple[dict[str, float], str]:
    data = read_json(path)
    if isinstance(data, dict) and "items" in data and "kind" in data:
        metric = metric or DEFAULT_METRIC.get(data["kind"])
        if metric is None:
            raise UsageError(f"--metric required for {data['kind']} reports")
        scores = {}
        for it in data["items"]:
            value = it.get(metric)
            if value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise UsageError(f"item {it.get('item_id')}: {metric} is not numeric")
            scores[str(it["item_id"])] = float(value)
        return scores, metric
    if isinstance(data, dict) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                      for v in data.values()):
        return {str(k): float(v) for k, v in data.items()}, metric or "score"
    raise UsageError("--scores must be a report or a JSON object of item_id -> number")


def cmd_correlate(run: Run) -> int:
    a = run.args
    scores, metric = _load_scores(a.scores, a.metric)
    ratings = read_jsonl(a.ratings, HumanRating)
    result = correlate(scores, ratings)
    by_id = {r.item_id: r.level for r in ratings}
    pairs = [{"item_id": i, "score": scores[i], "rating": by_id[i]} for i in sorted(set(scores) & set(by_id))]
    report = {"kind": "correlate", "metric": metric, "corpus": result, "items": pairs, "excluded": [],
              "metadata": {"variant": "tau-b", "join": "inner on item_id"}}
    return _finish(run, report, 0)


def cmd_stats(run: Run) -> int:
    from .pipeline import Dataset, corpus_stats

    path = Path(run.args.dataset)
    if not path.is_dir():
        raise UsageError(f"{path} is not a directory")
    ds = Dataset.load(path)
    report = {"kind": "stats", "corpus": corpus_stats(ds), "metadata": ds.metadata}
    return _finish(run, report, 0)


HANDLERS: dict[str, Callable[[Run], int]] = {
    "eval-rcid": cmd_eval_rcid,
    "eval-rcvqa": cmd_eval_rcvqa,
    "eval-citations": cmd_eval_citations,
    "eval-bench": cmd_eval_bench,
    "build-dataset": cmd_build_dataset,
    "format-rcvit": cmd_format_rcvit,
    "correlate": cmd_correlate,
    "stats": cmd_stats,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    verbosity = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.WARNING - 10 * min(verbosity, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](Run(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rcmu: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, RecordError, BackendError, DegenerateInputError, ValueError, KeyError,
            OSError) as exc:
        print(f"rcmu {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

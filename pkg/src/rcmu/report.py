"""Report rendering (key-sorted JSON or aligned text tables) and run manifests."""

from __future__ import annotations

import json
import os
import time
from typing import Any, Mapping, Sequence

from . import __version__

FORMATS = ("json", "table")

# (column header, key in report["corpus"] or in corpus["cells"])
_COLUMNS: dict[str, list[tuple[str, str]]] = {
    "rcid": [("CC", "cc"), ("CA", "ca"), ("CVC", "cvc"), ("RCIDS_ctx", "ctx"), ("CLIPS", "clip"),
             ("RCIDS", "final")],
    "rcvqa": [("V2C", "cells.V2C"), ("C2V", "cells.C2V"), ("UA V2C", "cells.UA_V2C"),
              ("UA C2V", "cells.UA_C2V"), ("Overall", "overall")],
    "bench": [("V2C", "cells.V2C"), ("C2V", "cells.C2V"), ("Overall", "overall")],
    "citations": [("Recall", "recall"), ("Precision", "precision"), ("F1", "f1")],
    "correlate": [("tau", "tau"), ("tau x100", "tau_x100"), ("n", "n"), ("C", "concordant"),
                  ("D", "discordant")],
}


def _lookup(corpus: Mapping[str, Any], path: str) -> Any:
    cur: Any = corpus
    for part in path.split("."):
        if not isinstance(cur, Mapping) or part not in cur:
            return None
        cur = cur[part]
    return cur


def fmt_cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def aligned(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def table_columns(kind: str) -> list[str]:
    return [h for h, _ in _COLUMNS[kind]]


def table_row(report: Mapping[str, Any]) -> dict[str, Any]:
    """Header -> value for the report's headline row."""
    corpus = report.get("corpus", {})
    return {h: _lookup(corpus, key) for h, key in _COLUMNS[report["kind"]]}


def _stats_table(report: Mapping[str, Any]) -> str:
    stats = report["corpus"]
    rows = []
    for key, value in stats.items():
        if isinstance(value, Mapping):
            rows += [[f"{key}.{k}", fmt_cell(v)] for k, v in value.items()]
        else:
            rows.append([key, fmt_cell(value)])
    return aligned(["statistic", "value"], rows)


def _footer(report: Mapping[str, Any]) -> list[str]:
    corpus = report.get("corpus", {})
    bits = []
    for key in ("n_items", "n_excluded", "n_no_citation", "unparseable"):
        if key in corpus:
            bits.append(f"{key}={corpus[key]}")
    pe = corpus.get("parse_errors")
    if isinstance(pe, Mapping):
        bits.append("parse_errors=" + ",".join(f"{k}:{v}" for k, v in sorted(pe.items())))
    elif pe is not None:
        bits.append(f"parse_errors={pe}")
    return [" ".join(bits)] if bits else []


def render_table(report: Mapping[str, Any], label: str | None = None) -> str:
    kind = report["kind"]
    if kind == "stats":
        return _stats_table(report) + "\n"
    row = table_row(report)
    header = list(row)
    cells = [fmt_cell(v) for v in row.values()]
    if label is not None:
        header, cells = ["Model", *header], [label, *cells]
    title = {"bench": f"bench ({report.get('setting')})", "citations": f"citations ({report.get('mode')})"}
    lines = [title.get(kind, kind), aligned(header, [cells])]
    if kind == "citations":
        c = report["corpus"]
        lines.append(aligned(["variant", "Recall", "Precision", "F1"], [
            ["uncited as 0", fmt_cell(c.get("recall")), fmt_cell(c.get("precision_na_as_zero")),
             fmt_cell(c.get("f1_na_as_zero"))],
            ["pooled", fmt_cell(c.get("recall_pooled")), fmt_cell(c.get("precision_pooled")),
             fmt_cell(c.get("f1_pooled"))],
        ]))
    lines += _footer(report)
    return "\n".join(lines) + "\n"


def render_json(report: Mapping[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render_report(report: Mapping[str, Any], fmt: str = "json") -> str:
    if fmt == "json":
        return render_json(report)
    if fmt == "table":
        return render_table(report)
    raise ValueError(f"format must be one of {FORMATS}")


def timestamp() -> str:
    """UTC time, pinned by SOURCE_DATE_EPOCH when that is set (reproducible builds)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch and epoch.strip().isdigit() else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def build_manifest(command: str, *, config_digest: str, seed: int, clients: Sequence[Any] = (),
                   templates: Mapping[str, str] | None = None, started_at: str, excluded: int = 0,
                   extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    seen, backends = set(), []
    for c in clients:
        if c is None or id(c) in seen:
            continue
        seen.add(id(c))
        backends.append(c.manifest())
    backends.sort(key=lambda b: b["backend_id"])
    return {
        "command": command,
        "tool_version": __version__,
        "config_digest": config_digest,
        "seed": seed,
        "backends": backends,
        "template_digests": dict(sorted((templates or {}).items())),
        "started_at": started_at,
        "finished_at": timestamp(),
        "cache_hits": sum(b.get("cache_hits", 0) for b in backends),
        "cache_misses": sum(b.get("cache_misses", 0) for b in backends),
        "live_calls": sum(b.get("live_calls", 0) for b in backends),
        "excluded_items": excluded,
        **dict(extra or {}),
    }

"""Figures written next to reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import table_row  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def _bars(labels, values, title: str, ylabel: str, ylim: tuple[float, float] | None = (0, 100)):
    fig, ax = plt.subplots(figsize=(1.2 * max(len(labels), 3) + 1.5, 3.2))
    shown = [0.0 if v is None else float(v) for v in values]
    bars = ax.bar(range(len(labels)), shown, color="#4c72b0")
    for bar, v in zip(bars, values):
        ax.annotate("n/a" if v is None else f"{v:.2f}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if ylim:
        ax.set_ylim(*ylim)
    fig.tight_layout()
    return fig


def _item_histogram(report: Mapping[str, Any], key: str, title: str):
    values = [it[key] for it in report.get("items", []) if isinstance(it.get(key), (int, float))]
    if not values:
        return None
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.hist(values, bins=min(20, max(5, len(values) // 2)), range=(0, 100), color="#55a868")
    ax.set_xlabel(key)
    ax.set_ylabel("items")
    ax.set_title(title)
    fig.tight_layout()
    return fig


def render_figures(report: Mapping[str, Any], out_dir: str | Path, stem: str | None = None) -> list[Path]:
    """Write the figures that fit ``report``'s kind; returns the paths written."""
    out = Path(out_dir)
    kind = report["kind"]
    stem = stem or kind
    written: list[Path] = []
    if kind in ("rcid", "rcvqa", "bench", "citations"):
        row = table_row(report)
        title = {"bench": f"bench, {report.get('setting')} setting"}.get(kind, kind)
        written.append(_save(_bars(list(row), list(row.values()), title, "score (%)"), out / f"{stem}_summary.png"))
    if kind == "rcid":
        fig = _item_histogram(report, "final", "per-item RCIDScore")
        if fig is not None:
            written.append(_save(fig, out / f"{stem}_items.png"))
    elif kind == "citations":
        fig = _item_histogram(report, "recall", "per-response citation recall")
        if fig is not None:
            written.append(_save(fig, out / f"{stem}_items.png"))
    elif kind == "correlate":
        pairs = report.get("items", [])
        if pairs:
            fig, ax = plt.subplots(figsize=(4.5, 3.5))
            ax.scatter([p["rating"] for p in pairs], [p["score"] for p in pairs], s=12, alpha=0.7)
            ax.set_xlabel("human rating")
            ax.set_ylabel(report.get("metric", "score"))
            ax.set_title(f"Kendall tau-b = {report['corpus']['tau']:.3f}")
            fig.tight_layout()
            written.append(_save(fig, out / f"{stem}_scatter.png"))
    elif kind == "stats":
        cells = report["corpus"].get("quadruples_per_cell", {})
        if cells:
            fig = _bars([c.replace("_", " ") for c in cells], list(cells.values()), "quadruples per cell",
                        "count", None)
            written.append(_save(fig, out / f"{stem}_cells.png"))
    return written

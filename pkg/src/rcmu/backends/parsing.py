"""Turn raw judge text into verdict payloads. Pure functions of the text."""

from __future__ import annotations

import re
import string

from .base import VerdictParseError

_BINARY = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_TERNARY = re.compile(r"\b(consistent|inconsistent|uncertain)\b", re.IGNORECASE)
_NUMBER = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?)(?![\w])")


def parse_binary(raw: str) -> bool:
    m = _BINARY.search(raw)
    if not m:
        raise VerdictParseError("binary", raw)
    return m.group(1).lower() == "yes"


def parse_ternary(raw: str) -> str:
    m = _TERNARY.search(raw)
    if not m:
        raise VerdictParseError("ternary", raw)
    return m.group(1).lower()


def parse_score(raw: str, low: float = 0.0, high: float = 10.0) -> float:
    for m in _NUMBER.finditer(raw):
        value = float(m.group(1))
        if low <= value <= high:
            return value
    raise VerdictParseError("score", raw)


def parse_choice(raw: str, n_options: int | None = None) -> int:
    """First standalone option letter (A, B, ...) or 1-based option number, as a 0-based index."""
    n = n_options or 26
    letters = string.ascii_uppercase[:n]
    pattern = re.compile(rf"(?<![A-Za-z0-9])(?:([{letters}])|(\d+))(?![A-Za-z0-9])")
    for m in pattern.finditer(raw):
        if m.group(1):
            return letters.index(m.group(1))
        idx = int(m.group(2)) - 1
        if 0 <= idx < n:
            return idx
    raise VerdictParseError("choice", raw)


def parse_verdict(kind: str, raw: str, n_options: int | None = None):
    if kind == "binary":
        return parse_binary(raw)
    if kind == "ternary":
        return parse_ternary(raw)
    if kind == "score":
        return parse_score(raw)
    if kind == "choice":
        return parse_choice(raw, n_options)
    raise ValueError(f"unknown verdict kind {kind!r}")

"""Citation extraction and citation recall / precision / F1.

Citations are bracketed context keys, ``[2]``, ``[1][3]`` or ``[1,3]``, placed
at the end of the sentence they support. Every sentence also cites the image
implicitly, so a purely visual sentence needs no marker to be supported.

Precision follows the usual attributed-generation protocol: an explicit
citation ``c`` of sentence ``s`` is precise iff ``s`` is supported by its full
citation set and it is not the case that ``c`` alone fails to support ``s``
while the remaining citations still do. The image takes part in every check.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from ._pool import ordered_map
from .backends import BackendClient, BackendError
from .core import AnnotatedImage

log = logging.getLogger(__name__)

IMAGE = "IMAGE"
MODES = ("rcvqa", "rcid")

_GROUP = r"\[\s*\d+(?:\s*,\s*\d+)*\s*\]"
MARKER_RE = re.compile(rf"\s*{_GROUP}")
_MARKER_RUN = rf"(?:\s*{_GROUP})*"
_SENTENCE_RE = re.compile(rf"(.*?[.!?]+{_MARKER_RUN})(?=\s|$)|(.+?{_MARKER_RUN})$", re.DOTALL)


def strip_markers(text: str) -> str:
    return MARKER_RE.sub("", text)


@dataclass(frozen=True)
class CitedSentence:
    text: str                               # sentence with markers removed
    cited_keys: tuple[Any, ...]             # explicit keys in first-seen order, then IMAGE
    position: int
    markers: tuple[tuple[int, str], ...] = ()   # (offset in text, marker text incl. leading space)
    separator: str = ""                     # whitespace that followed the sentence
    invalid_keys: tuple[int, ...] = ()
    misplaced: bool = False                 # rcvqa mode: markers before the final sentence

    @property
    def explicit_keys(self) -> tuple[int, ...]:
        return tuple(k for k in self.cited_keys if k != IMAGE)

    @property
    def valid_keys(self) -> tuple[int, ...]:
        return tuple(k for k in self.explicit_keys if k not in self.invalid_keys)

    def raw(self) -> str:
        out, last = [], 0
        for offset, marker in self.markers:
            out.append(self.text[last:offset])
            out.append(marker)
            last = offset
        out.append(self.text[last:])
        return "".join(out)


def _split(text: str) -> list[tuple[str, str]]:
    """Sentences paired with the whitespace that follows each; leading whitespace is its own entry."""
    out = []
    pos = 0
    lead = len(text) - len(text.lstrip())
    if lead:
        out.append(("", text[:lead]))
        pos = lead
    while pos < len(text):
        m = _SENTENCE_RE.match(text, pos)
        if not m:  # pragma: no cover - second branch always matches a non-empty tail
            break
        body = m.group(0)
        end = m.end()
        ws_end = end
        while ws_end < len(text) and text[ws_end].isspace():
            ws_end += 1
        out.append((body, text[end:ws_end]))
        pos = ws_end
    return out


def _sentence(raw: str, separator: str, position: int, k: int) -> CitedSentence:
    markers, keys, invalid = [], [], []
    clean = []
    last = 0
    for m in MARKER_RE.finditer(raw):
        clean.append(raw[last:m.start()])
        offset = sum(len(c) for c in clean)
        markers.append((offset, m.group(0)))
        for key in (int(x) for x in re.findall(r"\d+", m.group(0))):
            if key not in keys:
                keys.append(key)
                if not 1 <= key <= k:
                    invalid.append(key)
        last = m.end()
    clean.append(raw[last:])
    return CitedSentence("".join(clean), tuple(keys) + (IMAGE,), position, tuple(markers), separator,
                         tuple(invalid))


def segment_and_extract(response_text: str, mode: str = "rcid", k: int | None = None) -> list[CitedSentence]:
    """Split a response into sentences and bind each marker run to the sentence it terminates.

    Keys outside ``1..k`` are kept and flagged in ``invalid_keys``; with ``k`` unknown no key is invalid.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not response_text.strip():
        raise ValueError("empty response")
    bound = k if k is not None else 10 ** 9
    sentences = []
    leading = ""
    for raw, sep in _split(response_text):
        if not raw:
            leading = sep
            continue
        sentences.append(_sentence(raw, sep, len(sentences), bound))
    if leading:
        first = sentences[0]
        shift = len(leading)
        sentences[0] = CitedSentence(leading + first.text, first.cited_keys, 0,
                                     tuple((o + shift, m) for o, m in first.markers), first.separator,
                                     first.invalid_keys)
    if mode == "rcvqa":
        last = len(sentences) - 1
        sentences = [
            s if i == last or not s.explicit_keys else
            CitedSentence(s.text, s.cited_keys, s.position, s.markers, s.separator, s.invalid_keys, True)
            for i, s in enumerate(sentences)
        ]
    return sentences


def reassemble(sentences: Sequence[CitedSentence]) -> str:
    return "".join(s.raw() + s.separator for s in sentences)


def response_unit(sentences: Sequence[CitedSentence], question: str = "") -> CitedSentence:
    """Whole-response unit for rcvqa mode: one claim citing the union of all keys."""
    keys, invalid = [], []
    for s in sentences:
        for key in s.explicit_keys:
            if key not in keys:
                keys.append(key)
                if key in s.invalid_keys:
                    invalid.append(key)
    text = "".join(s.text + s.separator for s in sentences).strip()
    if question:
        text = f"Question: {question}\nAnswer: {text}"
    return CitedSentence(text, tuple(keys) + (IMAGE,), 0, (), "", tuple(invalid))


# ------------------------------------------------------------------ judging


class SupportJudge:
    """Memoised entailment checks ``claim <- image + passages(keys)`` for one response."""

    def __init__(self, image: AnnotatedImage, judge: BackendClient):
        self.image = image
        self.judge = judge
        self.by_key = image.by_key()
        self.calls: dict[tuple[str, tuple[int, ...]], bool] = {}
        self.parse_errors = 0

    def passages(self, keys: Sequence[int]) -> str:
        if not keys:
            return "(no passages; rely on the image only)"
        return "\n".join(f"[{k}] {self.by_key[k].info_text}" for k in sorted(keys))

    def supported(self, claim: str, keys: Sequence[int]) -> bool:
        memo_key = (claim, tuple(sorted(set(keys))))
        if memo_key not in self.calls:
            verdict, _ = self.judge.try_judge(
                "citation.entailment", {"passages": self.passages(memo_key[1]), "sentence": claim},
                [self.image.image_ref])
            if verdict is None:
                self.parse_errors += 1
            self.calls[memo_key] = bool(verdict and verdict.value)
        return self.calls[memo_key]


@dataclass
class UnitResult:
    sentence: CitedSentence
    supported: bool
    citation_verdicts: dict[int, bool] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "position": self.sentence.position,
            "sentence": self.sentence.text,
            "cited_keys": [k for k in self.sentence.cited_keys],
            "invalid_keys": list(self.sentence.invalid_keys),
            "misplaced": self.sentence.misplaced,
            "supported": self.supported,
            "citation_verdicts": {str(k): v for k, v in self.citation_verdicts.items()},
        }


def _units(sentences: Sequence[CitedSentence], mode: str, question: str = "") -> list[CitedSentence]:
    return [response_unit(sentences, question)] if mode == "rcvqa" else list(sentences)


def _precise(unit: CitedSentence, key: int, oracle: SupportJudge) -> bool:
    if key in unit.invalid_keys:
        return False
    valid = unit.valid_keys
    if not oracle.supported(unit.text, valid):
        return False
    if oracle.supported(unit.text, [key]):
        return True
    rest = [k for k in valid if k != key]
    return not oracle.supported(unit.text, rest)


def evaluate_units(sentences: Sequence[CitedSentence], oracle: SupportJudge, mode: str = "rcid",
                   question: str = "") -> list[UnitResult]:
    out = []
    for unit in _units(sentences, mode, question):
        supported = oracle.supported(unit.text, unit.valid_keys)
        verdicts = {key: _precise(unit, key, oracle) for key in unit.explicit_keys}
        out.append(UnitResult(unit, supported, verdicts))
    return out


def citation_recall(sentences: Sequence[CitedSentence], contexts: AnnotatedImage, image_ref: str | None,
                    judge: BackendClient, mode: str = "rcid") -> float:
    image = contexts if image_ref is None else AnnotatedImage(image_ref, contexts.width, contexts.height,
                                                              contexts.objects)
    oracle = SupportJudge(image, judge)
    units = _units(sentences, mode)
    if not units:
        return 0.0
    return 100.0 * sum(oracle.supported(u.text, u.valid_keys) for u in units) / len(units)


def citation_precision(sentences: Sequence[CitedSentence], contexts: AnnotatedImage, image_ref: str | None,
                       judge: BackendClient, mode: str = "rcid") -> float | None:
    """Percentage of precise explicit citations, ``None`` when the response cites nothing."""
    image = contexts if image_ref is None else AnnotatedImage(image_ref, contexts.width, contexts.height,
                                                              contexts.objects)
    oracle = SupportJudge(image, judge)
    total = precise = 0
    for unit in _units(sentences, mode):
        for key in unit.explicit_keys:
            total += 1
            precise += _precise(unit, key, oracle)
    return None if total == 0 else 100.0 * precise / total


def citation_f1(recall: float, precision: float) -> float:
    if recall + precision == 0:
        return 0.0
    return 2 * recall * precision / (recall + precision)


# ---------------------------------------------------------------- responses


@dataclass(frozen=True)
class CitedResponse:
    """A model response to score for citation quality (an answer or a description)."""

    item_id: str
    image: AnnotatedImage
    response_text: str
    question: str = ""
    source_model: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"item_id": self.item_id, "image": self.image.to_dict(), "response_text": self.response_text,
                "question": self.question, "source_model": self.source_model}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CitedResponse":
        text = d.get("response_text", d.get("description_text"))
        if text is None:
            raise KeyError("response_text")
        return cls(str(d["item_id"]), AnnotatedImage.from_dict(d["image"]), text, d.get("question", ""),
                   d.get("source_model", ""))


@dataclass
class ResponseScore:
    item_id: str
    units: list[UnitResult]
    parse_errors: int = 0

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_supported(self) -> int:
        return sum(u.supported for u in self.units)

    @property
    def n_citations(self) -> int:
        return sum(len(u.citation_verdicts) for u in self.units)

    @property
    def n_precise(self) -> int:
        return sum(sum(u.citation_verdicts.values()) for u in self.units)

    @property
    def recall(self) -> float:
        return 100.0 * self.n_supported / self.n_units if self.units else 0.0

    @property
    def precision(self) -> float | None:
        return None if self.n_citations == 0 else 100.0 * self.n_precise / self.n_citations

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "recall": self.recall,
            "precision": self.precision,
            "n_units": self.n_units,
            "n_supported": self.n_supported,
            "n_citations": self.n_citations,
            "n_precise": self.n_precise,
            "parse_errors": self.parse_errors,
            "per_sentence": [u.to_dict() for u in self.units],
        }


def score_response(response: CitedResponse, judge: BackendClient, mode: str) -> ResponseScore:
    sentences = segment_and_extract(response.response_text, mode, response.image.k)
    oracle = SupportJudge(response.image, judge)
    units = evaluate_units(sentences, oracle, mode, response.question)
    return ResponseScore(response.item_id, units, oracle.parse_errors)


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def evaluate_citations(responses: Sequence[CitedResponse], judge: BackendClient, mode: str,
                       workers: int = 1) -> dict[str, Any]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not responses:
        raise ValueError("no items")

    def run(resp: CitedResponse):
        try:
            return score_response(resp, judge, mode), None
        except (BackendError, ValueError, KeyError) as exc:
            log.warning("citation scoring failed for %s: %s", resp.item_id, exc)
            return None, f"{type(exc).__name__}: {exc}"

    results = ordered_map(run, responses, workers)
    scores = [s for s, _ in results if s is not None]
    excluded = [{"item_id": r.item_id, "reason": err} for r, (s, err) in zip(responses, results) if s is None]
    scores.sort(key=lambda s: s.item_id)
    recalls = [s.recall for s in scores]
    precisions = [s.precision for s in scores if s.precision is not None]
    precisions_zero = [s.precision or 0.0 for s in scores]
    units = sum(s.n_units for s in scores)
    cites = sum(s.n_citations for s in scores)
    recall = _mean(recalls)
    precision = _mean(precisions)
    corpus = {
        "recall": recall,
        "precision": precision,
        "f1": citation_f1(recall, precision) if recall is not None and precision is not None else None,
        "precision_na_as_zero": _mean(precisions_zero),
        "recall_pooled": 100.0 * sum(s.n_supported for s in scores) / units if units else None,
        "precision_pooled": 100.0 * sum(s.n_precise for s in scores) / cites if cites else None,
        "n_items": len(scores),
        "n_excluded": len(excluded),
        "n_no_citation": sum(1 for s in scores if s.precision is None),
        "parse_errors": sum(s.parse_errors for s in scores),
    }
    pz = corpus["precision_na_as_zero"]
    corpus["f1_na_as_zero"] = citation_f1(recall, pz) if recall is not None and pz is not None else None
    rp, pp = corpus["recall_pooled"], corpus["precision_pooled"]
    corpus["f1_pooled"] = citation_f1(rp, pp) if rp is not None and pp is not None else None
    return {
        "kind": "citations",
        "mode": mode,
        "corpus": corpus,
        "items": [s.to_dict() for s in scores],
        "excluded": sorted(excluded, key=lambda e: e["item_id"]),
        "metadata": {
            "implicit_image_citation": True,
            "precision_macro_excludes_uncited_responses": True,
            "parse_error_fallback": "unsupported",
        },
    }

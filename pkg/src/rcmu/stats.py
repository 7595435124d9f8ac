"""Kendall rank correlation (tau-b) between metric scores and human ratings."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .core import HumanRating


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class TauResult:
    tau: float
    n: int
    concordant: int
    discordant: int
    ties_x: int      # pairs tied in x (including pairs tied in both)
    ties_y: int
    ties_both: int

    def to_dict(self) -> dict[str, Any]:
        return {"tau": self.tau, "tau_x100": 100.0 * self.tau, "n": self.n, "concordant": self.concordant,
                "discordant": self.discordant, "ties_x": self.ties_x, "ties_y": self.ties_y,
                "ties_both": self.ties_both, "variant": "tau-b"}


def _tied_pairs(values) -> int:
    return sum(c * (c - 1) // 2 for c in Counter(values).values())


def _count_inversions(seq: list) -> int:
    """Strict inversions (i < j, seq[i] > seq[j]) by merge sort; sorts ``seq`` in place."""
    n = len(seq)
    if n < 2:
        return 0
    buf = seq[:]
    inv = 0
    width = 1
    src, dst = seq, buf
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    inv += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            dst[k:hi] = src[i:mid] if i < mid else src[j:hi]
        src, dst = dst, src
        width *= 2
    if src is not seq:
        seq[:] = src
    return inv


def kendall_counts(xs: Sequence[float], ys: Sequence[float]) -> TauResult:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise ValueError("need at least 2 observations")
    pairs = sorted(zip(xs, ys))
    total = n * (n - 1) // 2
    ties_x = _tied_pairs(x for x, _ in pairs)
    ties_y = _tied_pairs(y for _, y in pairs)
    ties_both = _tied_pairs(pairs)
    discordant = _count_inversions([y for _, y in pairs])
    concordant = total - ties_x - ties_y + ties_both - discordant
    if total == ties_x or total == ties_y:
        raise DegenerateInputError("tau undefined: one variable is constant")
    tau = (concordant - discordant) / math.sqrt((total - ties_x) * (total - ties_y))
    return TauResult(tau, n, concordant, discordant, ties_x, ties_y, ties_both)


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-corrected Kendall tau-b in [-1, 1]."""
    return kendall_counts(xs, ys).tau


def correlate(metric_scores: Mapping[str, float], ratings: Sequence[HumanRating]) -> dict[str, Any]:
    """Inner-join scores and ratings on item id, then tau-b."""
    for r in ratings:
        if not 1 <= r.level <= 5:
            raise ValueError(f"rating level {r.level} for {r.item_id} outside 1..5")
    rated = {r.item_id: r.level for r in ratings}
    common = sorted(set(metric_scores) & set(rated))
    if len(common) < 2:
        raise ValueError(f"need >= 2 overlapping item ids, got {len(common)}")
    result = kendall_counts([metric_scores[i] for i in common], [rated[i] for i in common])
    return {**result.to_dict(), "n_scores": len(metric_scores), "n_ratings": len(rated)}

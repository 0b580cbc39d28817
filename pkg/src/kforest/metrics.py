"""Evaluation measures: nDCG, macro-averaged F1, and edge precision/recall."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet, Hashable, Iterable, Sequence

from .errors import NoActiveLabels


@dataclass(frozen=True)
class RankedPrediction:
    """Items ordered best first, with non-increasing scores."""

    items: tuple[Hashable, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.items) != len(self.scores):
            raise ValueError("items and scores must have equal length")
        if len(set(self.items)) != len(self.items):
            raise ValueError("ranked items must be unique")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be non-increasing")


def ndcg(ranked: "RankedPrediction | Sequence[Hashable]", gold: AbstractSet, k: int) -> float:
    """Normalized discounted cumulative gain at k with binary relevance.

    Defined as 1.0 when the gold set is empty.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not gold:
        return 1.0
    items = ranked.items if isinstance(ranked, RankedPrediction) else tuple(ranked)
    dcg = sum(1.0 / math.log2(i + 2) for i, item in enumerate(items[:k]) if item in gold)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(gold))))
    return dcg / idcg


def macro_f(
    predicted: Sequence[AbstractSet],
    gold: Sequence[AbstractSet],
    universe: Iterable[Hashable],
) -> float:
    """Unweighted mean of per-label F1 over labels that occur in either the
    predictions or the gold sets; labels absent from both are excluded."""
    if len(predicted) != len(gold):
        raise ValueError("predicted and gold must have equal length")
    active = [
        label
        for label in sorted(set(universe), key=repr)
        if any(label in p for p in predicted) or any(label in g for g in gold)
    ]
    if not active:
        raise NoActiveLabels("no label occurs in predictions or gold sets")
    total = 0.0
    for label in active:
        tp = sum(1 for p, g in zip(predicted, gold) if label in p and label in g)
        fp = sum(1 for p, g in zip(predicted, gold) if label in p and label not in g)
        fn = sum(1 for p, g in zip(predicted, gold) if label not in p and label in g)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        total += 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return total / len(active)


def prf(predicted: AbstractSet, gold: AbstractSet) -> tuple[float, float, float]:
    """Direction-sensitive precision, recall and F1 over ordered edge sets.

    Both sets empty counts as a vacuous exact match (1, 1, 1).
    """
    if not predicted and not gold:
        return (1.0, 1.0, 1.0)
    hits = len(set(predicted) & set(gold))
    precision = hits / len(predicted) if predicted else 0.0
    recall = hits / len(gold) if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return (precision, recall, f1)

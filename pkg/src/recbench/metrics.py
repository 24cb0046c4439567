"""HR@N / NDCG@N over sampled candidate rankings, and round aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptyAggregate

METRICS = ("hr", "ndcg")


def ndcg_at_n(topn, test_items, n: int) -> float:
    """Binary-gain NDCG; the ideal ranking places min(n, |test|) hits first."""
    test_items = set(test_items)
    if not test_items:
        return 0.0
    dcg = sum(1.0 / math.log2(pos + 2) for pos, item in enumerate(list(topn)[:n]) if item in test_items)
    idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(n, len(test_items))))
    return dcg / idcg


def hr_at_n(topn, test_items, n: int) -> float:
    """1.0 when any test item appears in the top ``n``."""
    test_items = set(test_items)
    return 1.0 if any(item in test_items for item in list(topn)[:n]) else 0.0


@dataclass
class EvalResult:
    metric: str
    cutoff: int
    per_user: dict[int, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        if not self.per_user:
            return 0.0
        return float(np.mean(list(self.per_user.values())))


def evaluate_rankings(rankings: Mapping[int, np.ndarray], targets: Mapping[int, Iterable[int]],
                      cutoffs=(5, 10)) -> dict[tuple[str, int], EvalResult]:
    """Score per-user rankings (best first) against their target items.

    Users without targets are skipped, never counted as zero.
    """
    out = {(m, n): EvalResult(m, n) for m in METRICS for n in cutoffs}
    for user, ranked in rankings.items():
        items = set(int(i) for i in targets.get(user, ()))
        if not items:
            continue
        for n in cutoffs:
            out[("hr", n)].per_user[user] = hr_at_n(ranked, items, n)
            out[("ndcg", n)].per_user[user] = ndcg_at_n(ranked, items, n)
    return out


def aggregate_rounds(means: Iterable[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    values = [float(v) for v in means]
    if not values:
        raise EmptyAggregate("nothing to aggregate")
    mean = math.fsum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)

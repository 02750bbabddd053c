"""Filtered ranking with random tie placement, and MRR / Hits@n aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_HITS = (1, 3, 10)
FEW_SHOT_HITS = (1, 5, 10)


def score_vector(n_entities: int, candidates: Iterable[tuple[int, float]]) -> np.ndarray:
    """Dense scores over all entities; entities never generated get -inf."""
    scores = np.full(n_entities, -np.inf)
    for eid, s in candidates:
        scores[eid] = s
    return scores


def query_rng(seed: int, query_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, query_index])


def filtered_rank(scores: np.ndarray, target: int, filtered: Iterable[int],
                  rng: np.random.Generator) -> int:
    """Rank of ``target`` after removing ``filtered`` entities.

    Entities scoring exactly as the target are shuffled with ``rng`` and the
    target takes its place within that group.
    """
    scores = np.asarray(scores, dtype=float)
    keep = np.ones(len(scores), dtype=bool)
    filtered = list(filtered)
    if filtered:
        keep[filtered] = False
    assert keep[target], "target must not be in its own filter set"
    s = scores[keep]
    t = scores[target]
    better = int(np.count_nonzero(s > t))
    tied = np.flatnonzero(keep & (scores == t))
    order = rng.permutation(tied)
    return 1 + better + int(np.flatnonzero(order == target)[0])


@dataclass
class Metrics:
    mrr: float
    hits: dict[int, float] = field(default_factory=dict)
    n: int = 0

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], hits_at: Iterable[int] = DEFAULT_HITS) -> "Metrics":
        r = np.asarray(ranks, dtype=float)
        if len(r) == 0:
            return cls(float("nan"), {k: float("nan") for k in hits_at}, 0)
        return cls(float(np.mean(1.0 / r)), {k: float(np.mean(r <= k)) for k in hits_at}, len(r))

    def report(self) -> str:
        lines = [f"mrr={self.mrr:.6f}"] + [f"hits@{k}={v:.6f}" for k, v in sorted(self.hits.items())]
        return "\n".join(lines) + "\n"

    def tsv(self) -> str:
        lines = ["metric\tvalue", f"mrr\t{self.mrr:.6f}"]
        lines += [f"hits@{k}\t{v:.6f}" for k, v in sorted(self.hits.items())]
        return "\n".join(lines) + "\n"


def random_baseline_mrr(domain_sizes: Iterable[int]) -> float:
    """Expected MRR when each query ranks its target uniformly in a domain of size n."""
    vals = []
    for n in domain_sizes:
        vals.append(float(np.sum(1.0 / np.arange(1, n + 1)) / n))
    return float(np.mean(vals)) if vals else float("nan")

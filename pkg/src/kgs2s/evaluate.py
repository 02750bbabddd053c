"""Split evaluation: decode both query directions, rank under the filtered protocol."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Iterable

from kgs2s.data import SPLITS, Direction, KnowledgeGraph, KnownTrueIndex, Query, answer_of, build_known_true_index
from kgs2s.decode import CandidateList, Predictor
from kgs2s.metrics import DEFAULT_HITS, Metrics, filtered_rank, query_rng, score_vector


@dataclass
class RankOutcome:
    query_index: int
    direction: Direction
    target: int
    rank: int
    candidates: CandidateList


def split_queries(graph: KnowledgeGraph, split: str) -> list[tuple[int, Query, int]]:
    """``(query_index, query, target)``: tail query at 2i, head query at 2i + 1."""
    out = []
    for i, fact in enumerate(graph.splits[split]):
        for j, direction in enumerate((Direction.TAIL, Direction.HEAD)):
            out.append((2 * i + j, Query.from_fact(fact, direction), answer_of(fact, direction)))
    return out


def rank_query(predictor: Predictor, query: Query, target: int, query_index: int, K: int,
               constrained: bool, filter_index: KnownTrueIndex, block_index: KnownTrueIndex | None,
               seed: int) -> RankOutcome:
    cands = predictor.predict(query, K, constrained, block_index, target)
    scores = score_vector(predictor.graph.n_entities, cands.items)
    filtered = filter_index[query] - {target}
    rank = filtered_rank(scores, target, filtered, query_rng(seed, query_index))
    return RankOutcome(query_index, query.direction, target, rank, cands)


def evaluate_split(predictor: Predictor, graph: KnowledgeGraph, split: str, K: int = 40,
                   constrained: bool = True, filter_index: KnownTrueIndex | None = None,
                   block_splits: Iterable[str] | None = SPLITS, hits_at=DEFAULT_HITS,
                   seed: int = 0, threads: int = 1) -> tuple[Metrics, list[RankOutcome]]:
    """Rank every head and tail query of ``split``.

    ``block_splits`` picks the known answers kept out of constrained
    decoding (``None`` disables blocking); ``filter_index`` (default: all
    splits) drives the filtered ranks.
    """
    if filter_index is None:
        filter_index = build_known_true_index(graph, SPLITS)
    block_index = None
    if constrained and block_splits is not None:
        block_splits = tuple(block_splits)
        if set(block_splits) == set(filter_index.splits):
            block_index = filter_index
        else:
            block_index = build_known_true_index(graph, block_splits)

    jobs = split_queries(graph, split)

    def run(job):
        qi, query, target = job
        return rank_query(predictor, query, target, qi, K, constrained, filter_index, block_index, seed)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]
    return Metrics.from_ranks([o.rank for o in outcomes], hits_at), outcomes


def write_predictions(outcomes: Iterable[RankOutcome], graph: KnowledgeGraph, out: IO[str]) -> None:
    for o in outcomes:
        cands = ",".join(f"{graph.entity_key(e)}:{s:.6f}" for e, s in o.candidates.items)
        out.write(f"{o.query_index}\t{o.direction.value}\t{graph.entity_key(o.target)}\t{o.rank}\t{cands}\n")

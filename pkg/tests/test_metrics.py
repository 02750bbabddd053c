import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgs2s.data import Direction, Entity, Fact, KnowledgeGraph, build_known_true_index
from kgs2s.decode import CandidateList
from kgs2s.evaluate import evaluate_split, split_queries
from kgs2s.metrics import Metrics, filtered_rank, query_rng, random_baseline_mrr, score_vector

from oracles import mrr_hits_brute, rank_with_rng_brute, random_score_table, tie_block

NEG = float("-inf")


def test_rank_examples():
    rng = np.random.default_rng(0)
    assert filtered_rank(np.array([-1.0, -2.0, -3.0]), 2, {1}, rng) == 2
    scores = score_vector(10, [(4, -0.5)])
    assert filtered_rank(scores, 4, set(), rng) == 1


def test_mrr_hits_examples():
    m = Metrics.from_ranks([1, 2, 4])
    assert m.mrr == pytest.approx((1 + 0.5 + 0.25) / 3, abs=1e-15)
    assert m.hits == pytest.approx({1: 1 / 3, 3: 2 / 3, 10: 1.0})
    assert m.report() == "mrr=0.583333\nhits@1=0.333333\nhits@3=0.666667\nhits@10=1.000000\n"
    assert m.tsv().splitlines()[1] == "mrr\t0.583333"
    assert Metrics.from_ranks([1, 2], (1, 5, 10)).hits == {1: 0.5, 5: 1.0, 10: 1.0}


def test_tie_mean_monte_carlo():
    # two entities above the target, target tied at -inf with five others
    scores = np.array([0.0, -1.0] + [NEG] * 6)
    ranks = [filtered_rank(scores, 7, set(), np.random.default_rng(s)) for s in range(10_000)]
    lo, hi = tie_block(list(scores), 7, set())
    assert (lo, hi) == (3, 8)
    assert abs(np.mean(ranks) - (lo + hi) / 2) <= 0.1
    assert set(ranks) == set(range(lo, hi + 1))


def test_brute_force_tables():
    rng = np.random.default_rng(42)
    for qi in range(100):
        n = int(rng.integers(2, 30))
        scores = random_score_table(rng, n, int(rng.integers(0, n + 1)))
        target = int(rng.integers(n))
        filtered = {int(e) for e in rng.choice(n, size=int(rng.integers(0, n)), replace=False)} - {target}
        got = filtered_rank(np.array(scores), target, filtered, query_rng(7, qi))
        assert got == rank_with_rng_brute(scores, target, filtered, query_rng(7, qi))
        lo, hi = tie_block(scores, target, filtered)
        assert lo <= got <= hi


class TablePredictor:
    """Stand-in predictor answering each query from a fixed candidate table."""

    def __init__(self, graph, table):
        self.graph = graph
        self.table = table

    def predict(self, query, K, constrained=True, block_index=None, target=None, **kw):
        return CandidateList(list(self.table[query.key()]))


def _table_graph(rng, n_ent=12, n_facts=8):
    ents = [Entity(i, f"n{i}", "", f"e{i}") for i in range(n_ent)]
    facts = set()
    while len(facts) < n_facts:
        h, t = rng.choice(n_ent, size=2, replace=False)
        facts.add(Fact(int(h), int(rng.integers(2)), int(t)))
    facts = sorted(facts, key=lambda f: (f.head, f.rel, f.tail))
    return KnowledgeGraph(ents, ["r0", "r1"], {"train": facts[:5], "test": facts[5:]})


def test_evaluate_split_matches_oracle():
    rng = np.random.default_rng(3)
    for trial in range(100):
        g = _table_graph(rng)
        table = {}
        for _, q, _ in split_queries(g, "test"):
            scores = random_score_table(rng, g.n_entities, int(rng.integers(0, 6)))
            table[q.key()] = sorted(((e, s) for e, s in enumerate(scores) if s != NEG), key=lambda x: -x[1])
        metrics, outcomes = evaluate_split(TablePredictor(g, table), g, "test", seed=trial)
        idx = build_known_true_index(g)
        ranks = []
        for qi, q, target in split_queries(g, "test"):
            scores = [NEG] * g.n_entities
            for e, s in table[q.key()]:
                scores[e] = s
            ranks.append(rank_with_rng_brute(scores, target, idx[q] - {target}, query_rng(trial, qi)))
        assert [o.rank for o in outcomes] == ranks
        mrr, hits = mrr_hits_brute(ranks, (1, 3, 10))
        assert metrics.mrr == pytest.approx(mrr, abs=1e-12)
        assert metrics.hits == pytest.approx(hits, abs=1e-12)
        assert metrics.mrr == pytest.approx(np.mean([1 / o.rank for o in outcomes]), abs=1e-15)


def test_evaluate_split_threads_identical():
    rng = np.random.default_rng(5)
    g = _table_graph(rng, n_facts=12)
    table = {q.key(): [(int(e), -1.0) for e in rng.choice(g.n_entities, 3, replace=False)]
             for _, q, _ in split_queries(g, "test")}
    one = evaluate_split(TablePredictor(g, table), g, "test", seed=1)
    four = evaluate_split(TablePredictor(g, table), g, "test", seed=1, threads=4)
    assert [o.rank for o in one[1]] == [o.rank for o in four[1]]
    assert one[0].report() == four[0].report()


tables = st.integers(2, 15).flatmap(lambda n: st.tuples(
    st.lists(st.one_of(st.just(NEG), st.integers(-4, 0).map(float)), min_size=n, max_size=n),
    st.integers(0, n - 1), st.sets(st.integers(0, n - 1)), st.integers(0, 2**31)))


@settings(max_examples=150, deadline=None)
@given(tables)
def test_filtering_monotone(case):
    scores, target, filtered, seed = case
    filtered = filtered - {target}
    s = np.array(scores)
    for extra in range(len(scores)):
        if extra == target:
            continue
        # the tie slot is random, so compare the worst case of the tie block
        _, hi0 = tie_block(scores, target, filtered)
        _, hi1 = tie_block(scores, target, filtered | {extra})
        assert hi1 <= hi0
        lo1, _ = tie_block(scores, target, filtered | {extra})
        lo0, _ = tie_block(scores, target, filtered)
        assert lo1 <= lo0
    # with no ties the rank itself is monotone
    distinct = np.array([float(i) for i in range(len(scores))])
    r0 = filtered_rank(distinct, target, filtered, np.random.default_rng(seed))
    for extra in set(range(len(scores))) - filtered - {target}:
        assert filtered_rank(distinct, target, filtered | {extra}, np.random.default_rng(seed)) <= r0
    assert 1 <= filtered_rank(s, target, filtered, np.random.default_rng(seed)) <= len(scores) - len(filtered)


@settings(max_examples=150, deadline=None)
@given(tables, st.integers(-50, 50).map(float))
def test_translation_invariance(case, c):
    scores, target, filtered, seed = case
    filtered = filtered - {target}
    shifted = np.array([x + c for x in scores])
    a = filtered_rank(np.array(scores), target, filtered, np.random.default_rng(seed))
    b = filtered_rank(shifted, target, filtered, np.random.default_rng(seed))
    assert a == b


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=40))
def test_hits_monotone_and_mrr_bounds(ranks):
    m = Metrics.from_ranks(ranks, (1, 3, 5, 10, 50))
    vals = [m.hits[n] for n in sorted(m.hits)]
    assert vals == sorted(vals)
    assert 0 < m.mrr <= 1


def test_random_baseline():
    assert random_baseline_mrr([1]) == 1.0
    assert random_baseline_mrr([4]) == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4) / 4)
    # closed form equals the expectation of 1/rank under a uniform rank
    n = 7
    assert random_baseline_mrr([n, n]) == pytest.approx(sum(1 / r for r in range(1, n + 1)) / n)
    assert math.isnan(random_baseline_mrr([]))

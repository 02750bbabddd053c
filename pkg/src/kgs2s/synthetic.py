"""Seeded synthetic knowledge graphs for tests and demos."""

from __future__ import annotations

import itertools

import numpy as np

from kgs2s.data import Entity, Fact, KnowledgeGraph

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def word_pool(n: int, rng: np.random.Generator) -> list[str]:
    """``n`` distinct pronounceable two-syllable words."""
    sylls = [o + v for o, v in itertools.product(_ONSETS, _VOWELS)]
    words = [a + b for a, b in itertools.product(sylls, sylls)]
    idx = rng.choice(len(words), size=n, replace=False)
    return [words[i] for i in idx]


def random_names(n: int, rng: np.random.Generator, pool: list[str], lo: int, hi: int) -> list[str]:
    names: list[str] = []
    seen = set()
    while len(names) < n:
        k = int(rng.integers(lo, hi + 1))
        name = " ".join(rng.choice(pool, size=k))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def random_graph(n_entities: int = 50, n_relations: int = 5, n_train: int = 200,
                 n_valid: int = 0, n_test: int = 0, name_len=(3, 8), desc_len=(3, 8),
                 n_words: int = 120, seed: int = 0) -> KnowledgeGraph:
    """Entities with random multi-token names and descriptions, random facts."""
    rng = np.random.default_rng(seed)
    pool = word_pool(n_words, rng)
    names = random_names(n_entities, rng, pool, *name_len)
    descs = [" ".join(rng.choice(pool, size=int(rng.integers(desc_len[0], desc_len[1] + 1))))
             for _ in range(n_entities)]
    entities = [Entity(i, names[i], descs[i], f"e{i}") for i in range(n_entities)]
    relations = [f"rel {w}" for w in word_pool(n_relations, rng)]

    total = n_train + n_valid + n_test
    facts: list[Fact] = []
    seen = set()
    while len(facts) < total:
        h, t = rng.choice(n_entities, size=2, replace=False)
        f = Fact(int(h), int(rng.integers(n_relations)), int(t))
        if f not in seen:
            seen.add(f)
            facts.append(f)
    splits = {"train": facts[:n_train], "valid": facts[n_train:n_train + n_valid],
              "test": facts[n_train + n_valid:]}
    return KnowledgeGraph(entities, relations, splits)


def compositional_graph(n_a: int = 40, n_b: int = 8, n_c: int = 8, held_out: float = 0.2,
                        seed: int = 0, name_len=(2, 3), desc_len=(2, 3)) -> KnowledgeGraph:
    """Three entity layers with ``r0: A -> B`` and ``r1: B -> C``.

    ``r0`` is a balanced many-to-one map (every b has about ``n_a / n_b``
    preimages) and ``r1`` a balanced map onto C.  ``r2(a, c)`` holds iff
    ``r0(a, b)`` and ``r1(b, c)`` for some ``b``.  A fraction ``held_out`` of
    the ``r2`` facts forms the test split; all ``r0``/``r1`` facts and the
    remaining ``r2`` facts are training data.  Names and descriptions are
    random, so they carry no information about the rule.
    """
    if not n_a >= n_b >= n_c >= 1:
        raise ValueError("need n_a >= n_b >= n_c >= 1")
    rng = np.random.default_rng(seed)
    n = n_a + n_b + n_c
    pool = word_pool(2 * n + 20, rng)
    names = random_names(n, rng, pool, *name_len)
    descs = [" ".join(rng.choice(pool, size=int(rng.integers(desc_len[0], desc_len[1] + 1))))
             for _ in range(n)]
    entities = [Entity(i, names[i], descs[i], f"e{i}") for i in range(n)]
    relations = ["first hop", "second hop", "two hops"]
    b_of_a = n_a + rng.permutation(np.arange(n_a) % n_b)
    c_of_b = n_a + n_b + rng.permutation(np.arange(n_b) % n_c)
    r0 = [Fact(a, 0, int(b_of_a[a])) for a in range(n_a)]
    r1 = [Fact(n_a + j, 1, int(c_of_b[j])) for j in range(n_b)]
    r2 = [Fact(a, 2, int(c_of_b[b_of_a[a] - n_a])) for a in range(n_a)]
    order = rng.permutation(n_a)
    n_test = int(round(held_out * n_a))
    test = [r2[i] for i in sorted(order[:n_test])]
    train_r2 = [r2[i] for i in sorted(order[n_test:])]
    return KnowledgeGraph(entities, relations, {"train": r0 + r1 + train_r2, "valid": [], "test": test})

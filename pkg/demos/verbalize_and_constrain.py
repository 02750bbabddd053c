"""
Verbalized queries and prefix-constrained decoding
==================================================

Builds a four-entity graph in memory, shows how a tail query and a head
query look as flat token text, and walks the entity trie to see which
next tokens survive once a known answer is blocked.
"""

from kgs2s import (
    CountedTrie,
    Direction,
    Entity,
    Fact,
    KnowledgeGraph,
    Query,
    allowed_next,
    build_entity_trie,
    build_known_true_index,
    build_vocab,
    verbalize_answer,
    verbalize_query,
)
from kgs2s.trie import END, build_block_trie

entities = [
    Entity(0, "LeBron James", "is an American NBA star"),
    Entity(1, "Grammy Award for Best Rock Song", "music award"),
    Entity(2, "Grammy Award for Best Music Video", "music award"),
    Entity(3, "Bruce Springsteen", "American singer"),
]
graph = KnowledgeGraph(entities, ["is the winner of"],
                       {"train": [Fact(3, 0, 1)], "test": [Fact(3, 0, 2)]})
vocab = build_vocab(graph, desc_len=10)

# the same fact asked in both directions
fact = graph.test[0]
for direction in (Direction.TAIL, Direction.HEAD):
    q = verbalize_query(graph, vocab, fact, 10, direction)
    print(direction.value.ljust(4), vocab.decode(q.ids))
print("answer", vocab.decode(verbalize_answer(vocab, entities[2], 10).ids))

# Only name tokens, description tokens and relation tokens may be dropped
# by seq2seq dropout; wrappers and prompt slots never are.
q = verbalize_query(graph, vocab, fact, 10, Direction.TAIL)
print("maskable", " ".join(t for t, m in zip(vocab.decode(q.ids).split(), q.maskable) if m))

trie = build_entity_trie(graph, vocab)
prefix = vocab.encode("Grammy Award for Best")
show = lambda toks: sorted("END" if t == END else vocab.tokens[t] for t in toks)
print("\nafter 'Grammy Award for Best':", show(allowed_next(trie, CountedTrie(), prefix)))

# (Bruce Springsteen, is the winner of, ?) already has the Rock Song
# answer in train, so when ranking the Music Video target it is blocked.
index = build_known_true_index(graph)
query = Query.from_fact(fact, Direction.TAIL)
block = build_block_trie(graph, vocab, query, index, target=fact.tail)
print("with the known answer blocked:", show(allowed_next(trie, block, prefix)))
print("\ntrie dump:")
print(trie.dump(vocab), end="")

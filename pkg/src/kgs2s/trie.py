"""Token-prefix tries with per-node entity counts.

One trie over all entity names is built once and shared.  Each query gets
a small block trie of answers that must not be generated; the allowed next
tokens at a prefix are those whose entity count exceeds the blocked count.
"""

from __future__ import annotations

from typing import Iterable

from kgs2s.data import KnowledgeGraph, KnownTrueIndex, Query
from kgs2s.text import Vocab

# Pseudo-token for "the name ends here"; never a vocabulary id.
END = -1


class TrieNode:
    __slots__ = ("children", "terminals", "count")

    def __init__(self):
        self.children: dict[int, TrieNode] = {}
        self.terminals: list[int] = []
        self.count = 0


class CountedTrie:
    def __init__(self, entries: Iterable[tuple[Iterable[int], int]] = ()):
        self.root = TrieNode()
        for tokens, eid in entries:
            self.insert(tokens, eid)

    def insert(self, tokens, entity_id: int) -> bool:
        """Insert one name; re-inserting the same entity id is a no-op."""
        tokens = list(tokens)
        node = self.root
        for tok in tokens:
            node = node.children.get(tok)
            if node is None:
                break
        else:
            if entity_id in node.terminals:
                return False
        node = self.root
        node.count += 1
        for tok in tokens:
            child = node.children.get(tok)
            if child is None:
                child = node.children[tok] = TrieNode()
            child.count += 1
            node = child
        node.terminals.append(entity_id)
        return True

    def find(self, prefix) -> TrieNode | None:
        node = self.root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def count(self, prefix) -> int:
        node = self.find(prefix)
        return 0 if node is None else node.count

    def __len__(self):
        return self.root.count

    def __contains__(self, tokens):
        node = self.find(tokens)
        return node is not None and bool(node.terminals)

    def iter_nodes(self):
        """Preorder ``(depth, token, node)``; children visited in token-id order."""
        stack = [(0, None, self.root)]
        while stack:
            depth, tok, node = stack.pop()
            yield depth, tok, node
            for t in sorted(node.children, reverse=True):
                stack.append((depth + 1, t, node.children[t]))

    def dump(self, vocab: Vocab | None = None) -> str:
        """Preorder ``depth TAB token TAB count TAB terminal_ids`` lines."""
        lines = []
        for depth, tok, node in self.iter_nodes():
            if tok is None:
                surface = "<root>"
            else:
                surface = vocab.tokens[tok] if vocab is not None else str(tok)
            ids = ",".join(str(i) for i in node.terminals)
            lines.append(f"{depth}\t{surface}\t{node.count}\t{ids}")
        return "\n".join(lines) + "\n"


def build_entity_trie(graph: KnowledgeGraph, vocab: Vocab) -> CountedTrie:
    return CountedTrie((vocab.encode(e.name), e.id) for e in graph.entities)


def build_block_trie(graph: KnowledgeGraph, vocab: Vocab, query: Query,
                     known_true: KnownTrueIndex, target: int | None = None) -> CountedTrie:
    """Trie over the query's known answers, leaving out ``target``."""
    return CountedTrie((vocab.encode(graph.entities[e].name), e)
                       for e in sorted(known_true[query]) if e != target)


def _free_terminals(node: TrieNode | None, blocked: TrieNode | None) -> int:
    if node is None:
        return 0
    if blocked is None:
        return len(node.terminals)
    return len(set(node.terminals) - set(blocked.terminals))


def allowed_next(entity_trie: CountedTrie, block_trie: CountedTrie | None, prefix) -> set[int]:
    """Tokens that can extend ``prefix`` toward a non-blocked entity name.

    The result contains ``END`` when a non-blocked name ends exactly at
    ``prefix``.
    """
    node = entity_trie.find(prefix)
    if node is None:
        return set()
    bnode = block_trie.find(prefix) if block_trie is not None and len(block_trie) else None
    out = set()
    for tok, child in node.children.items():
        blocked = bnode.children[tok].count if bnode is not None and tok in bnode.children else 0
        if child.count - blocked > 0:
            out.add(tok)
    if _free_terminals(node, bnode) > 0:
        out.add(END)
    return out

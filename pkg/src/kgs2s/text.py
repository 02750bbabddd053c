"""Closed whitespace vocabulary and the flat text layout for queries and answers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kgs2s.data import Direction, Entity, Fact, KnowledgeGraph, Query, SPLITS, answer_of

PAD, BOS, EOS, MASK, SEP, LB, RB, P1, P2, P3, P4 = range(11)
RESERVED = ("<pad>", "<bos>", "<eos>", "<mask>", "|", "[", "]", "<p1>", "<p2>", "<p3>", "<p4>")
N_RESERVED = len(RESERVED)
PROMPT_IDS = (P1, P2, P3, P4)
# Positions holding these ids are never hit by seq2seq dropout.
PROTECTED_IDS = frozenset({BOS, EOS, MASK, SEP, P1, P2, P3, P4})


class UnknownTokenError(KeyError):
    pass


class SequenceTooLongError(ValueError):
    pass


class Vocab:
    """Token inventory; ids 0..10 are the reserved tokens in ``RESERVED`` order."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:N_RESERVED]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.tokens = tokens
        self.index = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token {tok!r}")
            self.index[tok] = i

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[tok] for tok in text.split()]
        except KeyError as exc:
            raise UnknownTokenError(f"token {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def dumps(self) -> str:
        return "".join(tok + "\n" for tok in self.tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(text: str) -> list[str]:
    return text.split()


def truncate(text: str, n: int) -> list[str]:
    return text.split()[:n]


def build_vocab(graph: KnowledgeGraph, desc_len: int) -> Vocab:
    """Reserved tokens, then every token of names, truncated descriptions,
    relation names and meta texts in first-occurrence order."""
    if desc_len < 0:
        raise ValueError("desc_len must be >= 0")
    tokens = list(RESERVED)
    seen = set(RESERVED)

    def add(words, what):
        for w in words:
            if w in seen:
                if w in RESERVED:
                    raise ValueError(f"{what} contains reserved token {w!r}")
                continue
            seen.add(w)
            tokens.append(w)

    for e in graph.entities:
        add(tokenize(e.name), f"entity {e.id} name")
        add(truncate(e.description, desc_len), f"entity {e.id} description")
    for i, name in enumerate(graph.relations):
        add(tokenize(name), f"relation {i} name")
    for split in SPLITS:
        for f in graph.splits[split]:
            if f.meta is not None:
                add(tokenize(f.meta.text), "meta text")
    return Vocab(tokens)


@dataclass(frozen=True)
class TokenSeq:
    ids: np.ndarray
    mask: np.ndarray

    @classmethod
    def of(cls, ids) -> "TokenSeq":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(ids, np.ones(len(ids), dtype=np.int8))

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class VerbalizedQuery:
    tokens: TokenSeq
    rel: int
    maskable: np.ndarray  # bool per position

    @property
    def ids(self) -> np.ndarray:
        return self.tokens.ids


def _entity_block(vocab: Vocab, entity: Entity, desc_len: int) -> tuple[list[int], list[bool]]:
    ids = vocab.encode(entity.name)
    maskable = [True] * len(ids)
    desc = truncate(entity.description, desc_len)
    if desc:
        d = vocab.encode(" ".join(desc))
        ids += [LB] + d + [RB]
        maskable += [False] + [True] * len(d) + [False]
    return ids, maskable


def verbalize_query(graph: KnowledgeGraph, vocab: Vocab, query: Query | Fact, desc_len: int,
                    direction: Direction | None = None, max_len: int | None = None) -> VerbalizedQuery:
    """Render a query as ``<bos> A | <p3> rel <p4> | B [| meta] <eos>``.

    The known entity, wrapped as ``<p1> name [desc] <p2>``, sits in the
    head slot for tail queries and in the tail slot for head queries; the
    other slot holds ``<mask>``.
    """
    if isinstance(query, Fact):
        if direction is None:
            raise ValueError("direction is required when verbalizing a fact")
        query = Query.from_fact(query, direction)
    ent_ids, ent_mask = _entity_block(vocab, graph.entities[query.known], desc_len)
    known = [P1] + ent_ids + [P2]
    known_mask = [False] + ent_mask + [False]
    rel_ids = vocab.encode(graph.relations[query.rel])
    rel = [P3] + rel_ids + [P4]
    rel_mask = [False] + [True] * len(rel_ids) + [False]

    if query.direction is Direction.TAIL:
        ids = [BOS] + known + [SEP] + rel + [SEP] + [MASK]
        maskable = [False] + known_mask + [False] + rel_mask + [False, False]
    else:
        ids = [BOS, MASK, SEP] + rel + [SEP] + known
        maskable = [False, False, False] + rel_mask + [False] + known_mask
    if query.meta is not None:
        m = vocab.encode(query.meta.text)
        ids += [SEP] + m
        maskable += [False] + [True] * len(m)
    ids.append(EOS)
    maskable.append(False)
    if max_len is not None and len(ids) > max_len:
        raise SequenceTooLongError(f"query needs {len(ids)} tokens, max_len is {max_len}")
    return VerbalizedQuery(TokenSeq.of(ids), query.rel, np.array(maskable, dtype=bool))


def verbalize_answer(vocab: Vocab, entity: Entity, desc_len: int, max_len: int | None = None) -> TokenSeq:
    ids, _ = _entity_block(vocab, entity, desc_len)
    ids = [BOS, MASK] + ids + [EOS]
    if max_len is not None and len(ids) > max_len:
        raise SequenceTooLongError(f"answer needs {len(ids)} tokens, max_len is {max_len}")
    return TokenSeq.of(ids)


def parse_prediction(vocab: Vocab, tokens) -> str | None:
    ids = tokens.ids if isinstance(tokens, TokenSeq) else tokens
    kept = []
    for i in ids:
        i = int(i)
        if i == LB:
            break
        if i in (BOS, MASK, EOS, PAD):
            continue
        kept.append(i)
    return vocab.decode(kept) if kept else None


def max_entity_name_len(graph: KnowledgeGraph) -> int:
    return max((len(tokenize(e.name)) for e in graph.entities), default=0)


def training_answer(graph: KnowledgeGraph, vocab: Vocab, fact: Fact, direction: Direction,
                    desc_len: int, max_len: int | None = None) -> TokenSeq:
    return verbalize_answer(vocab, graph.entities[answer_of(fact, direction)], desc_len, max_len)

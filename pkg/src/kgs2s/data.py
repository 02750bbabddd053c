"""Knowledge-graph loading, preprocessing helpers and the known-true answer index."""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class GraphFormatError(ValueError):
    """Raised when graph files are missing or malformed."""


class MetaKind(str, enum.Enum):
    NONE = "none"
    TIMESTAMP = "timestamp"
    TYPING = "typing"


class Direction(str, enum.Enum):
    # TAIL: (h, r, ?, m) asks for the tail; HEAD: (?, r, t, m) asks for the head.
    TAIL = "tail"
    HEAD = "head"


@dataclass(frozen=True)
class Meta:
    kind: MetaKind
    text: str


@dataclass(frozen=True)
class Entity:
    id: int
    name: str
    description: str = ""
    key: str = ""


@dataclass(frozen=True)
class Fact:
    head: int
    rel: int
    tail: int
    meta: Meta | None = None


@dataclass(frozen=True)
class Query:
    """A fact with one entity replaced by ``?``.

    ``known`` is the entity that stays visible; ``direction`` says which
    side is asked for.
    """

    direction: Direction
    known: int
    rel: int
    meta: Meta | None = None

    @classmethod
    def from_fact(cls, fact: Fact, direction: Direction) -> "Query":
        known = fact.head if direction is Direction.TAIL else fact.tail
        return cls(direction, known, fact.rel, fact.meta)

    def key(self) -> tuple:
        return (self.direction, self.known, self.rel, self.meta)


def answer_of(fact: Fact, direction: Direction) -> int:
    return fact.tail if direction is Direction.TAIL else fact.head


@dataclass
class KnowledgeGraph:
    entities: list[Entity]
    relations: list[str]
    splits: dict[str, list[Fact]] = field(default_factory=dict)
    meta_kind: MetaKind = MetaKind.NONE
    relation_keys: list[str] = field(default_factory=list)

    def __post_init__(self):
        for s in SPLITS:
            self.splits.setdefault(s, [])
        if not self.relation_keys:
            self.relation_keys = [str(i) for i in range(len(self.relations))]
        self._by_key = {e.key or str(e.id): e.id for e in self.entities}
        self._rel_by_key = {k: i for i, k in enumerate(self.relation_keys)}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def train(self) -> list[Fact]:
        return self.splits["train"]

    @property
    def valid(self) -> list[Fact]:
        return self.splits["valid"]

    @property
    def test(self) -> list[Fact]:
        return self.splits["test"]

    def entity_id(self, key: str) -> int:
        return self._by_key[key]

    def relation_id(self, key: str) -> int:
        return self._rel_by_key[key]

    def entity_key(self, eid: int) -> str:
        e = self.entities[eid]
        return e.key or str(e.id)

    def name_collisions(self) -> dict[str, list[int]]:
        """Map tokenized names shared by more than one entity to their ids."""
        by_name: dict[str, list[int]] = defaultdict(list)
        for e in self.entities:
            by_name[" ".join(e.name.split())].append(e.id)
        return {n: ids for n, ids in by_name.items() if len(ids) > 1}


def _read_tsv(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise GraphFormatError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            rows.append(line.split("\t"))
    return rows


def load_graph(data_dir: str | Path, meta_kind: MetaKind | str = MetaKind.NONE) -> KnowledgeGraph:
    """Load ``entities.tsv``, ``relations.tsv`` and the three split files.

    Dense ids follow file line order.  The first column of the entity and
    relation files is an opaque key that fact lines refer to.
    """
    data_dir = Path(data_dir)
    meta_kind = MetaKind(meta_kind)

    entities: list[Entity] = []
    ent_ids: dict[str, int] = {}
    for lineno, row in enumerate(_read_tsv(data_dir / "entities.tsv"), 1):
        if len(row) != 3:
            raise GraphFormatError(f"entities.tsv:{lineno}: expected 3 fields, got {len(row)}")
        key, name, desc = row
        if key in ent_ids:
            raise GraphFormatError(f"entities.tsv:{lineno}: duplicate entity id {key!r}")
        if not name.split():
            raise GraphFormatError(f"entities.tsv:{lineno}: empty entity name")
        ent_ids[key] = len(entities)
        entities.append(Entity(len(entities), name, desc, key))

    relations: list[str] = []
    rel_ids: dict[str, int] = {}
    for lineno, row in enumerate(_read_tsv(data_dir / "relations.tsv"), 1):
        if len(row) != 2:
            raise GraphFormatError(f"relations.tsv:{lineno}: expected 2 fields, got {len(row)}")
        key, name = row
        if key in rel_ids:
            raise GraphFormatError(f"relations.tsv:{lineno}: duplicate relation id {key!r}")
        rel_ids[key] = len(relations)
        relations.append(name)

    n_fields = 3 if meta_kind is MetaKind.NONE else 4
    splits: dict[str, list[Fact]] = {}
    for split in SPLITS:
        facts: list[Fact] = []
        seen: set[Fact] = set()
        for lineno, row in enumerate(_read_tsv(data_dir / f"{split}.tsv"), 1):
            where = f"{split}.tsv:{lineno}"
            if len(row) != n_fields:
                raise GraphFormatError(f"{where}: expected {n_fields} fields, got {len(row)}")
            h, r, t = row[:3]
            for k in (h, t):
                if k not in ent_ids:
                    raise GraphFormatError(f"{where}: unknown entity {k!r}")
            if r not in rel_ids:
                raise GraphFormatError(f"{where}: unknown relation {r!r}")
            meta = None if meta_kind is MetaKind.NONE else Meta(meta_kind, row[3])
            fact = Fact(ent_ids[h], rel_ids[r], ent_ids[t], meta)
            if fact in seen:
                raise GraphFormatError(f"{where}: duplicate fact in {split}")
            seen.add(fact)
            facts.append(fact)
        splits[split] = facts

    graph = KnowledgeGraph(entities, relations, splits, meta_kind, list(rel_ids))
    collisions = graph.name_collisions()
    if collisions:
        log.warning("%d entity names are shared by several ids: %s",
                    len(collisions), ", ".join(sorted(collisions)[:5]))
    return graph


def write_graph(graph: KnowledgeGraph, data_dir: str | Path) -> None:
    """Write ``graph`` in the on-disk layout read by :func:`load_graph`."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    with open(data_dir / "entities.tsv", "w", encoding="utf-8") as f:
        for e in graph.entities:
            f.write(f"{graph.entity_key(e.id)}\t{e.name}\t{e.description}\n")
    with open(data_dir / "relations.tsv", "w", encoding="utf-8") as f:
        for key, name in zip(graph.relation_keys, graph.relations):
            f.write(f"{key}\t{name}\n")
    for split in SPLITS:
        with open(data_dir / f"{split}.tsv", "w", encoding="utf-8") as f:
            for fact in graph.splits[split]:
                cols = [graph.entity_key(fact.head), graph.relation_keys[fact.rel],
                        graph.entity_key(fact.tail)]
                if fact.meta is not None:
                    cols.append(fact.meta.text)
                f.write("\t".join(cols) + "\n")


def build_icews_descriptions(sector: str, country: str) -> str:
    return ", ".join(part for part in (sector.strip(), country.strip()) if part)


def reformat_nell_name(raw: str) -> str:
    """Capitalize every word that starts with a letter (``4th`` stays as is)."""
    return " ".join(w[0].upper() + w[1:] if w[0].isalpha() else w for w in raw.split())


def validate_zero_shot_split(graph: KnowledgeGraph) -> set[int]:
    """Relation ids that occur in train and also in valid or test."""
    train_rels = {f.rel for f in graph.train}
    held_rels = {f.rel for f in graph.valid} | {f.rel for f in graph.test}
    return train_rels & held_rels


class KnownTrueIndex(Mapping):
    """Known answers per ``(direction, known entity, relation, meta)`` key."""

    def __init__(self, table: dict[tuple, frozenset[int]], splits: tuple[str, ...]):
        self._table = table
        self.splits = splits

    def __getitem__(self, key) -> frozenset[int]:
        if isinstance(key, Query):
            key = key.key()
        return self._table.get(key, frozenset())

    def __iter__(self):
        return iter(self._table)

    def __len__(self):
        return len(self._table)


def build_known_true_index(graph: KnowledgeGraph, splits: Iterable[str] = SPLITS) -> KnownTrueIndex:
    splits = tuple(splits)
    for s in splits:
        if s not in SPLITS:
            raise ValueError(f"unknown split {s!r}")
    table: dict[tuple, set[int]] = defaultdict(set)
    for s in splits:
        for f in graph.splits[s]:
            table[(Direction.TAIL, f.head, f.rel, f.meta)].add(f.tail)
            table[(Direction.HEAD, f.tail, f.rel, f.meta)].add(f.head)
    return KnownTrueIndex({k: frozenset(v) for k, v in table.items()}, splits)

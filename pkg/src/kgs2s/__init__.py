"""Generative knowledge-graph completion with a small sequence-to-sequence transformer.

Queries are verbalized into flat token text, a numpy encoder-decoder with
relation soft prompts generates target-entity names, and a counted prefix
trie keeps decoding on valid entity names.  Ranking follows the filtered
protocol with random tie-breaking.
"""

from kgs2s.data import (
    Direction,
    Entity,
    Fact,
    KnowledgeGraph,
    KnownTrueIndex,
    Meta,
    MetaKind,
    Query,
    build_icews_descriptions,
    build_known_true_index,
    load_graph,
    reformat_nell_name,
    validate_zero_shot_split,
)
from kgs2s.text import Vocab, build_vocab, parse_prediction, verbalize_answer, verbalize_query
from kgs2s.model import ModelConfig, init_params, param_count
from kgs2s.trie import CountedTrie, allowed_next, build_block_trie, build_entity_trie
from kgs2s.metrics import Metrics, filtered_rank


__all__ = [
    "CountedTrie",
    "Direction",
    "Entity",
    "Fact",
    "KnowledgeGraph",
    "KnownTrueIndex",
    "Metrics",
    "Meta",
    "MetaKind",
    "ModelConfig",
    "Query",
    "Vocab",
    "allowed_next",
    "build_block_trie",
    "build_entity_trie",
    "build_icews_descriptions",
    "build_known_true_index",
    "build_vocab",
    "filtered_rank",
    "init_params",
    "load_graph",
    "param_count",
    "parse_prediction",
    "reformat_nell_name",
    "validate_zero_shot_split",
    "verbalize_answer",
    "verbalize_query",
]

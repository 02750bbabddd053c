import numpy as np
import pytest

from kgs2s.data import Entity, Fact, KnowledgeGraph
from kgs2s.model import ModelConfig, init_params
from kgs2s.synthetic import random_graph
from kgs2s.text import build_vocab


def write_dir(root, entities, relations, splits):
    root.mkdir(parents=True, exist_ok=True)
    (root / "entities.tsv").write_text("".join("\t".join(r) + "\n" for r in entities), encoding="utf-8")
    (root / "relations.tsv").write_text("".join("\t".join(r) + "\n" for r in relations), encoding="utf-8")
    for name in ("train", "valid", "test"):
        rows = splits.get(name, [])
        (root / f"{name}.tsv").write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return root


@pytest.fixture
def tiny_dir(tmp_path):
    return write_dir(tmp_path / "kg",
                     [("a", "LeBron James", "is an American NBA star"), ("b", "Lakers", "an NBA team")],
                     [("r0", "is the winner of")],
                     {"train": [("a", "r0", "b")]})


@pytest.fixture
def lebron_graph():
    ents = [Entity(0, "LeBron James", "is an American NBA star", "0"),
            Entity(1, "Lakers", "an NBA team", "1"),
            Entity(2, "Stan Lee", "", "2")]
    return KnowledgeGraph(ents, ["is the winner of"], {"train": [Fact(0, 0, 1)]})


@pytest.fixture(scope="session")
def small_setup():
    """A random 12-entity graph with a random-weight d=16 model."""
    graph = random_graph(n_entities=12, n_relations=3, n_train=30, n_valid=4, n_test=4,
                         name_len=(1, 3), desc_len=(0, 3), n_words=15, seed=3)
    vocab = build_vocab(graph, 3)
    cfg = ModelConfig(len(vocab), graph.n_relations, d_model=16, n_heads=2, n_enc_layers=1,
                      n_dec_layers=1, d_ff=32, max_len=32, seed=1)
    params = init_params(cfg)
    rng = np.random.default_rng(11)
    for k in params:
        params[k] = params[k] + rng.normal(0, 0.5, params[k].shape)
    return graph, vocab, cfg, params


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])

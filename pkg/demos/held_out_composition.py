"""
Answering held-out facts of a two-hop rule
==========================================

In the synthetic graph every ``two hops`` fact is implied by a
``first hop`` and a ``second hop`` fact.  A fifth of the ``two hops``
facts are held out; the model never sees them, only the one-hop facts
and the other two-hop facts.  Entity names are random, so nothing in the
text gives the answer away.
"""

from kgs2s import ModelConfig, build_known_true_index, build_vocab
from kgs2s.decode import Predictor
from kgs2s.evaluate import evaluate_split, split_queries
from kgs2s.metrics import random_baseline_mrr
from kgs2s.synthetic import compositional_graph
from kgs2s.train import TrainPlan, train

graph = compositional_graph(n_a=40, n_b=8, n_c=8, held_out=0.2, seed=0)
vocab = build_vocab(graph, 0)
print(len(graph.train), "training facts,", len(graph.test), "held-out facts")

cfg = ModelConfig(len(vocab), graph.n_relations, d_model=64, n_heads=4, n_enc_layers=2,
                  n_dec_layers=2, d_ff=256, max_len=40)
plan = TrainPlan(batch_size=32, lr=1e-3, desc_len=0, max_epochs=100)
result = train(graph, vocab, cfg, plan, select_split="valid")  # empty split: keep the last weights

pred = Predictor(result.last.params, cfg, vocab, graph, 0)
metrics, outcomes = evaluate_split(pred, graph, "test", K=40)
index = build_known_true_index(graph)
baseline = random_baseline_mrr(graph.n_entities - len(index[q] - {t}) for _, q, t in split_queries(graph, "test"))
print(metrics.report(), end="")
print(f"uniform-guess mrr={baseline:.6f}")

for o in outcomes[:4]:
    top = graph.entities[o.candidates.items[0][0]].name if o.candidates.items else "-"
    print(f"{o.direction.value:4s} gold={graph.entities[o.target].name!r:24s} rank={o.rank:2d} top={top!r}")

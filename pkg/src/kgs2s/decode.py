"""Beam search, sampling and candidate collection over entity-name tokens.

Decoding always starts from the answer wrapper ``<bos> <mask>``; what
follows is the entity name.  The name ends when the model emits ``[``
(description follows) or ``<eos>``, which together form the end-of-name
action.  A hypothesis score is the sum of the log-probabilities of its
name tokens and of its end-of-name action.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from kgs2s.data import KnowledgeGraph, KnownTrueIndex, Query
from kgs2s.model import ModelConfig, decode, encode, log_softmax
from kgs2s.text import BOS, EOS, LB, MASK, N_RESERVED, Vocab, max_entity_name_len, parse_prediction, verbalize_query
from kgs2s.trie import END, CountedTrie, allowed_next, build_block_trie, build_entity_trie

log = logging.getLogger(__name__)

# step_fn(prefixes) -> (n, V + 1) log-probs; the last column is end-of-name.
StepFn = Callable[[Sequence[tuple[int, ...]]], np.ndarray]
AllowedFn = Callable[[tuple[int, ...]], set]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool = False


@dataclass
class CandidateList:
    items: list[tuple[int, float]] = field(default_factory=list)
    discarded: int = 0

    def ids(self) -> list[int]:
        return [e for e, _ in self.items]

    def __len__(self):
        return len(self.items)


def _action_mask(n_actions: int, prefix: tuple[int, ...], max_len: int,
                 allowed: AllowedFn | None) -> np.ndarray | None:
    at_budget = len(prefix) >= max_len
    if allowed is None:
        if not at_budget:
            return None
        m = np.zeros(n_actions, dtype=bool)
        m[-1] = True
        return m
    m = np.zeros(n_actions, dtype=bool)
    for tok in allowed(prefix):
        if tok == END:
            m[-1] = True
        elif not at_budget:
            m[tok] = True
    return m


def _masked_actions(lp: np.ndarray, prefixes, max_len, allowed) -> np.ndarray:
    lp = lp.copy()
    for i, prefix in enumerate(prefixes):
        m = _action_mask(lp.shape[1], prefix, max_len, allowed)
        if m is not None:
            lp[i, ~m] = -np.inf
    return lp


def beam_search(step_fn: StepFn, K: int, max_len: int, allowed: AllowedFn | None = None) -> list[Hypothesis]:
    """Length-synchronous beam search without length normalization.

    Returns at most ``K`` finished hypotheses, best first.  Names never grow
    past ``max_len`` tokens: at the budget only end-of-name is available.
    """
    if K < 1 or max_len < 1:
        raise ValueError("K and max_len must be >= 1")
    alive = [Hypothesis((), 0.0)]
    finished: list[Hypothesis] = []
    while alive:
        prefixes = [h.tokens for h in alive]
        lp = _masked_actions(np.asarray(step_fn(prefixes), dtype=float), prefixes, max_len, allowed)
        n_act = lp.shape[1]
        total = lp + np.array([h.logprob for h in alive])[:, None]
        flat = total.ravel()
        order = np.argsort(-flat, kind="stable")
        new_alive = []
        for rank, j in enumerate(order):
            s = flat[j]
            if not np.isfinite(s):
                break
            i, a = divmod(int(j), n_act)
            if a == n_act - 1:
                if rank < K:
                    finished.append(Hypothesis(alive[i].tokens, float(s), True))
            else:
                new_alive.append(Hypothesis(alive[i].tokens + (a,), float(s)))
                if len(new_alive) == K:
                    break
        alive = new_alive
        if len(finished) >= K:
            worst = sorted(h.logprob for h in finished)[-K]
            if all(h.logprob <= worst for h in alive):
                break
    finished.sort(key=lambda h: -h.logprob)
    return finished[:K]


def random_sample(step_fn: StepFn, K: int, max_len: int, rng: np.random.Generator,
                  temperature: float = 1.0, allowed: AllowedFn | None = None) -> list[Hypothesis]:
    """``K`` independent ancestral samples, drawn from the tempered softmax.

    Scores accumulate the untempered log-probabilities of the sampled actions.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    alive = [Hypothesis((), 0.0) for _ in range(K)]
    done: list[Hypothesis] = []
    while alive:
        prefixes = [h.tokens for h in alive]
        lp = _masked_actions(np.asarray(step_fn(prefixes), dtype=float), prefixes, max_len, allowed)
        nxt = []
        for i, h in enumerate(alive):
            row = lp[i]
            ok = np.isfinite(row)
            if not ok.any():
                continue
            z = np.where(ok, row / temperature, -np.inf)
            z = np.exp(z - z[ok].max())
            a = int(rng.choice(len(row), p=z / z.sum()))
            s = h.logprob + float(row[a])
            if a == len(row) - 1:
                done.append(Hypothesis(h.tokens, s, True))
            else:
                nxt.append(Hypothesis(h.tokens + (a,), s))
        alive = nxt
    return done


class Predictor:
    """Generates scored entity candidates for queries from fixed parameters."""

    def __init__(self, params: dict, cfg: ModelConfig, vocab: Vocab, graph: KnowledgeGraph,
                 desc_len: int):
        self.params = params
        self.cfg = cfg
        self.vocab = vocab
        self.graph = graph
        self.desc_len = desc_len
        self.entity_trie = build_entity_trie(graph, vocab)
        if len(self.entity_trie) == 0:
            raise ValueError("entity trie is empty")
        self.max_name_len = max_entity_name_len(graph)
        self.name_ids: dict[str, list[int]] = {}
        for e in graph.entities:
            self.name_ids.setdefault(" ".join(e.name.split()), []).append(e.id)

    def _encode(self, query: Query):
        vq = verbalize_query(self.graph, self.vocab, query, self.desc_len, max_len=self.cfg.max_len)
        src = vq.ids[None, :]
        mask = np.ones(src.shape, dtype=bool)
        enc_out, _ = encode(self.params, self.cfg, src, mask, np.array([vq.rel]))
        return enc_out, mask

    def step_fn(self, query: Query) -> StepFn:
        enc_out, mask = self._encode(query)
        V = self.cfg.vocab_size

        def step(prefixes):
            n = len(prefixes)
            dec_in = np.array([(BOS, MASK) + tuple(p) for p in prefixes], dtype=np.int64)
            h, _ = decode(self.params, self.cfg, np.broadcast_to(enc_out, (n,) + enc_out.shape[1:]),
                          np.broadcast_to(mask, (n, mask.shape[1])), dec_in)
            lp = log_softmax(h[:, -1] @ self.params["tok_emb"].T)
            out = np.empty((n, V + 1))
            out[:, :V] = lp
            out[:, :N_RESERVED] = -np.inf
            out[:, V] = np.logaddexp(lp[:, LB], lp[:, EOS])
            return out

        return step

    def allowed_fn(self, block_trie: CountedTrie | None) -> AllowedFn:
        return lambda prefix: allowed_next(self.entity_trie, block_trie, prefix)

    def block_trie(self, query: Query, index: KnownTrueIndex | None, target: int | None = None):
        if index is None:
            return None
        return build_block_trie(self.graph, self.vocab, query, index, target)

    def beam_search(self, query: Query, K: int, constrained: bool = True,
                    block_trie: CountedTrie | None = None) -> list[Hypothesis]:
        allowed = self.allowed_fn(block_trie) if constrained else None
        return beam_search(self.step_fn(query), K, self.max_name_len, allowed)

    def random_sample(self, query: Query, K: int, rng: np.random.Generator, temperature: float = 1.0,
                      constrained: bool = False, block_trie: CountedTrie | None = None) -> list[Hypothesis]:
        allowed = self.allowed_fn(block_trie) if constrained else None
        return random_sample(self.step_fn(query), K, self.max_name_len, rng, temperature, allowed)

    def sequence_logprob(self, query: Query, name_tokens: Sequence[int]) -> float:
        """Teacher-forced score of one name, computed in a single decoder pass."""
        enc_out, mask = self._encode(query)
        dec_in = np.array([(BOS, MASK) + tuple(name_tokens)], dtype=np.int64)
        h, _ = decode(self.params, self.cfg, enc_out, mask, dec_in)
        lp = log_softmax(h[0, 1:] @ self.params["tok_emb"].T)
        total = sum(lp[i, t] for i, t in enumerate(name_tokens))
        return float(total + np.logaddexp(lp[-1, LB], lp[-1, EOS]))

    def collect_candidates(self, hyps: Sequence[Hypothesis], constrained: bool,
                           blocked: set[int] | None = None) -> CandidateList:
        return collect_candidates(hyps, self.vocab, self.name_ids, constrained, blocked)

    def predict(self, query: Query, K: int, constrained: bool = True,
                block_index: KnownTrueIndex | None = None, target: int | None = None,
                method: str = "beam", rng: np.random.Generator | None = None,
                temperature: float = 1.0) -> CandidateList:
        block = self.block_trie(query, block_index, target) if constrained else None
        if method == "beam":
            hyps = self.beam_search(query, K, constrained, block)
        elif method == "sample":
            hyps = self.random_sample(query, K, rng if rng is not None else np.random.default_rng(0),
                                      temperature, constrained, block)
        else:
            raise ValueError(f"unknown decoding method {method!r}")
        blocked = None
        if block is not None and block_index is not None:
            blocked = set(block_index[query]) - {target}
        return self.collect_candidates(hyps, constrained, blocked)


def collect_candidates(hyps: Sequence[Hypothesis], vocab: Vocab, name_ids: dict[str, list[int]],
                       constrained: bool, blocked: set[int] | None = None) -> CandidateList:
    """Map generated names to entity ids, keeping each entity's best score.

    Texts that name no entity are dropped and counted in ``discarded``.
    A name shared by several entities gives all of them the same score.
    """
    best: dict[int, float] = {}
    discarded = 0
    for h in hyps:
        text = parse_prediction(vocab, (BOS, MASK) + tuple(h.tokens) + (EOS,))
        ids = name_ids.get(text) if text is not None else None
        if not ids:
            discarded += 1
            continue
        if len(ids) > 1:
            log.warning("generated name %r maps to %d entities", text, len(ids))
        for e in ids:
            if blocked and e in blocked:
                continue
            if e not in best or h.logprob > best[e]:
                best[e] = h.logprob
    if constrained and discarded:
        raise AssertionError("constrained decoding produced a non-entity name")
    items = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return CandidateList(items, discarded)


def predict_topk(predictor: Predictor, query: Query, K: int, constrained: bool = True,
                 block_index: KnownTrueIndex | None = None, target: int | None = None) -> CandidateList:
    return predictor.predict(query, K, constrained, block_index, target)

"""Adam, training pairs and the training loop with best-valid-MRR selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from kgs2s.checkpoint import Checkpoint, OptimState
from kgs2s.data import SPLITS, Direction, KnowledgeGraph, build_known_true_index
from kgs2s.decode import Predictor
from kgs2s.evaluate import evaluate_split
from kgs2s.model import ModelConfig, init_params, loss_and_grads, make_batch
from kgs2s.text import TokenSeq, VerbalizedQuery, Vocab, training_answer, verbalize_query

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainPlan:
    batch_size: int = 32
    lr: float = 1e-3
    desc_len: int = 10
    seq2seq_dropout_p: float = 0.0
    max_epochs: int = 10
    eval_every: int = 1
    beam_width_for_valid: int = 10
    seed: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState) -> None:
    """One bias-corrected Adam update, applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def make_training_pairs(graph: KnowledgeGraph, vocab: Vocab, desc_len: int,
                        max_len: int | None = None, split: str = "train") -> list[tuple[VerbalizedQuery, TokenSeq]]:
    """Tail-query and head-query pair for every fact, in fact order."""
    pairs = []
    for fact in graph.splits[split]:
        for direction in (Direction.TAIL, Direction.HEAD):
            q = verbalize_query(graph, vocab, fact, desc_len, direction, max_len)
            pairs.append((q, training_answer(graph, vocab, fact, direction, desc_len, max_len)))
    return pairs


def epoch_rngs(seed: int, epoch: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(shuffle rng, dropout rng) for one epoch."""
    return np.random.default_rng([seed, epoch, 0]), np.random.default_rng([seed, epoch, 1])


def run_epoch(params, cfg: ModelConfig, state: OptimState, pairs, plan: TrainPlan, epoch: int) -> float:
    shuffle_rng, drop_rng = epoch_rngs(plan.seed, epoch)
    order = shuffle_rng.permutation(len(pairs))
    losses = []
    for start in range(0, len(order), plan.batch_size):
        idx = order[start:start + plan.batch_size]
        batch = make_batch([pairs[i][0] for i in idx], [pairs[i][1] for i in idx],
                           plan.seq2seq_dropout_p, drop_rng)
        loss, grads = loss_and_grads(params, cfg, batch, train_mode=True)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        adam_step(params, grads, state)
        losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def best_mrr(self) -> float:
        return float(self.best.extra.get("valid_mrr", "nan"))


def _snapshot(cfg, vocab, params, state, epoch, plan, mrr=None) -> Checkpoint:
    extra = {"desc_len": str(plan.desc_len)}
    if mrr is not None:
        extra["valid_mrr"] = repr(mrr)
    return Checkpoint(cfg, vocab.digest(), {k: a.copy() for k, a in params.items()},
                      state.copy(), epoch, extra)


def _improves(mrr: float, best: float) -> bool:
    """Strictly better, so ties keep the earlier checkpoint; NaN never wins."""
    if math.isnan(mrr):
        return False
    return math.isnan(best) or mrr > best


def train(graph: KnowledgeGraph, vocab: Vocab, cfg: ModelConfig, plan: TrainPlan,
          select_split: str = "valid", resume: Checkpoint | None = None,
          log_path: str | Path | None = None, threads: int = 1,
          on_epoch: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Train and keep the checkpoint with the highest MRR on ``select_split``.

    Validation runs before the first epoch, every ``eval_every`` epochs and
    after the last one.  On equal MRR the earlier checkpoint is kept.
    """
    cfg = replace(cfg, seq2seq_dropout_p=plan.seq2seq_dropout_p)
    pairs = make_training_pairs(graph, vocab, plan.desc_len, cfg.max_len)
    filter_index = build_known_true_index(graph, SPLITS)

    if resume is not None:
        params = {k: a.copy() for k, a in resume.params.items()}
        state = resume.optim.copy() if resume.optim is not None else OptimState.zeros_like(params, lr=plan.lr)
        start = resume.epoch
    else:
        params = init_params(cfg)
        state = OptimState.zeros_like(params, lr=plan.lr)
        start = 0

    def validate():
        if not graph.splits[select_split]:
            return float("nan")
        pred = Predictor(params, cfg, vocab, graph, plan.desc_len)
        metrics, _ = evaluate_split(pred, graph, select_split, K=plan.beam_width_for_valid,
                                    filter_index=filter_index, seed=plan.seed, threads=threads)
        return metrics.mrr

    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    history = []
    try:
        mrr = validate()
        best = _snapshot(cfg, vocab, params, state, start, plan, mrr)
        history.append((start, float("nan"), mrr))
        if log_file:
            log_file.write(f"{start}\t-\t{mrr:.6f}\n")
        for epoch in range(start + 1, plan.max_epochs + 1):
            loss = run_epoch(params, cfg, state, pairs, plan, epoch)
            mrr = float("nan")
            if epoch % plan.eval_every == 0 or epoch == plan.max_epochs:
                mrr = validate()
                if _improves(mrr, float(best.extra["valid_mrr"])):
                    best = _snapshot(cfg, vocab, params, state, epoch, plan, mrr)
            history.append((epoch, loss, mrr))
            log.info("epoch %d loss %.6f valid_mrr %.6f", epoch, loss, mrr)
            if log_file:
                mrr_s = "-" if math.isnan(mrr) else f"{mrr:.6f}"
                log_file.write(f"{epoch}\t{loss:.6f}\t{mrr_s}\n")
                log_file.flush()
            if on_epoch:
                on_epoch(epoch, loss, mrr)
    finally:
        if log_file:
            log_file.close()
    last = _snapshot(cfg, vocab, params, state, max(start, plan.max_epochs), plan,
                     history[-1][2] if history else None)
    return TrainResult(best, last, history)

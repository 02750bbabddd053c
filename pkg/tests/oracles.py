"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations

import math

import numpy as np

END = -1


def allowed_next_brute(names: dict[int, tuple[int, ...]], blocked: set[int], prefix) -> set[int]:
    """Next tokens of any non-blocked name extending ``prefix``, plus END for exact matches."""
    prefix = tuple(prefix)
    n = len(prefix)
    out = set()
    for eid, name in names.items():
        if eid in blocked or name[:n] != prefix:
            continue
        out.add(name[n] if len(name) > n else END)
    return out


def all_prefixes(names) -> set[tuple[int, ...]]:
    return {tuple(name[:i]) for name in names for i in range(len(name) + 1)}


def random_name_table(rng: np.random.Generator, n: int, max_len: int = 6, alphabet: int = 6,
                      first_id: int = 11) -> dict[int, tuple[int, ...]]:
    """Entity id -> token tuple; a small alphabet forces shared prefixes and some exact clashes."""
    table = {}
    for eid in range(n):
        k = int(rng.integers(1, max_len + 1))
        table[eid] = tuple(int(t) + first_id for t in rng.integers(0, alphabet, size=k))
    return table


def rank_brute(scores, target: int, filtered, tie_perm_position: int) -> int:
    """Rank with the target placed at a given slot inside its tie block.

    Entities in ``filtered`` (other than the target) are removed from the
    ranking; ties compare by exact float equality, so -inf ties with -inf.
    """
    s_t = scores[target]
    better = 0
    for e, s in enumerate(scores):
        if e == target or e in filtered:
            continue
        if s > s_t:
            better += 1
    return better + 1 + tie_perm_position


def tie_block(scores, target: int, filtered) -> tuple[int, int]:
    """(lo, hi) rank bounds of the target's tie block."""
    s_t = scores[target]
    better = sum(1 for e, s in enumerate(scores) if e != target and e not in filtered and s > s_t)
    equal = sum(1 for e, s in enumerate(scores) if e != target and e not in filtered and s == s_t)
    return better + 1, better + 1 + equal


def mrr_hits_brute(ranks, ns):
    mrr = sum(1.0 / r for r in ranks) / len(ranks)
    hits = {n: sum(1 for r in ranks if r <= n) / len(ranks) for n in ns}
    return mrr, hits


def log_softmax_brute(row):
    m = max(row)
    z = math.log(sum(math.exp(x - m) for x in row)) + m
    return [x - z for x in row]


def rank_with_rng_brute(scores, target: int, filtered, rng) -> int:
    """Pure-Python filtered rank; the tie slot comes from ``rng.permutation`` of tied ids in id order."""
    s_t = scores[target]
    tied = [e for e, s in enumerate(scores) if (e == target or e not in filtered) and s == s_t]
    order = [int(x) for x in rng.permutation(tied)]
    return rank_brute(scores, target, filtered, order.index(target))


def random_score_table(rng: np.random.Generator, n: int, n_finite: int, n_levels: int = 4) -> list[float]:
    """Scores with -inf for non-generated entities and deliberate exact ties among finite ones."""
    scores = [float("-inf")] * n
    levels = [-float(x) for x in rng.integers(0, 8, size=n_levels)]
    for e in rng.choice(n, size=n_finite, replace=False):
        scores[int(e)] = levels[int(rng.integers(n_levels))]
    return scores


def finite_difference(loss_fn, params: dict, name: str, coords=None, h: float = 1e-4) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``params[name]`` (at ``coords`` or everywhere)."""
    arr = params[name]
    num = np.zeros_like(arr)
    for idx in (coords if coords is not None else np.ndindex(arr.shape)):
        old = arr[idx]
        arr[idx] = old + h
        lp = loss_fn()
        arr[idx] = old - h
        lm = loss_fn()
        arr[idx] = old
        num[idx] = (lp - lm) / (2 * h)
    return num


def group_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a|| + ||n||, floor); the floor covers groups whose true gradient is zero."""
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor))


def nll_brute(logits_row, target: int) -> float:
    return -log_softmax_brute(list(logits_row))[target]


class TableModel:
    """A step function backed by per-prefix log-probability rows over V tokens plus END.

    Rows are drawn once per prefix from a seeded generator, so the model is a
    fixed (if arbitrary) conditional distribution.
    """

    def __init__(self, V: int, seed: int = 0, end_bias: float = 0.0):
        self.V = V
        self.seed = seed
        self.end_bias = end_bias
        self.rows: dict[tuple[int, ...], np.ndarray] = {}
        self.calls = 0

    def row(self, prefix) -> np.ndarray:
        prefix = tuple(prefix)
        if prefix not in self.rows:
            rng = np.random.default_rng([self.seed, len(prefix)] + list(prefix))
            z = rng.normal(0, 2, self.V + 1)
            z[-1] += self.end_bias
            self.rows[prefix] = np.array(log_softmax_brute(list(z)))
        return self.rows[prefix]

    def __call__(self, prefixes):
        self.calls += 1
        return np.stack([self.row(p) for p in prefixes])


def enumerate_paths(model: TableModel, max_len: int, allowed=None):
    """Every complete path with its score: tokens, then END; only END at the budget."""
    out = []

    def rec(prefix, score):
        row = model.row(prefix)
        ok = allowed(prefix) if allowed is not None else set(range(model.V)) | {END}
        if END in ok:
            out.append((prefix, score + row[-1]))
        if len(prefix) < max_len:
            for t in range(model.V):
                if t in ok:
                    rec(prefix + (t,), score + row[t])

    rec((), 0.0)
    out.sort(key=lambda x: -x[1])
    return out


def greedy(model: TableModel, max_len: int, allowed=None):
    prefix, score = (), 0.0
    while True:
        row = model.row(prefix).copy()
        ok = allowed(prefix) if allowed is not None else set(range(model.V)) | {END}
        mask = np.full(len(row), -np.inf)
        for t in ok:
            if t == END:
                mask[-1] = 0.0
            elif len(prefix) < max_len:
                mask[t] = 0.0
        if len(prefix) >= max_len:
            mask[:-1] = -np.inf
        row = row + mask
        a = int(np.argmax(row))
        score += row[a]
        if a == len(row) - 1:
            return prefix, score
        prefix = prefix + (a,)

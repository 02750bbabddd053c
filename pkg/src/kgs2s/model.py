"""Small pre-LN encoder-decoder transformer in numpy with analytic gradients.

Relation soft prompts replace the embeddings at the four placeholder
positions of each encoder input.  Seq2seq dropout zeroes encoder attention
mask bits; the same mask gates encoder self-attention and decoder
cross-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from kgs2s.text import N_RESERVED, PAD, PROMPT_IDS, TokenSeq, VerbalizedQuery

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_relations: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_len: int = 64
    seq2seq_dropout_p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "n_relations", "d_model", "n_heads", "n_enc_layers",
                     "n_dec_layers", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.vocab_size < N_RESERVED:
            raise ConfigError(f"vocab_size must cover the {N_RESERVED} reserved tokens")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if not 0.0 <= self.seq2seq_dropout_p <= 1.0:
            raise ConfigError("seq2seq_dropout_p must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _attn_shapes(prefix, d):
    return [(f"{prefix}.w{k}", (d, d)) if i % 2 == 0 else (f"{prefix}.b{k}", (d,))
            for k in "qkvo" for i in range(2)]


def _ln_shapes(prefix, d):
    return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]


def _ff_shapes(prefix, d, d_ff):
    return [(f"{prefix}.w1", (d, d_ff)), (f"{prefix}.b1", (d_ff,)),
            (f"{prefix}.w2", (d_ff, d)), (f"{prefix}.b2", (d,))]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter array in enumeration (and checkpoint) order."""
    d = cfg.d_model
    shapes = [("tok_emb", (cfg.vocab_size, d)), ("pos_emb", (cfg.max_len, d)),
              ("prompt", (cfg.n_relations, 4, d))]
    for i in range(cfg.n_enc_layers):
        p = f"enc{i}"
        shapes += _ln_shapes(f"{p}.ln1", d) + _attn_shapes(f"{p}.attn", d)
        shapes += _ln_shapes(f"{p}.ln2", d) + _ff_shapes(f"{p}.ff", d, cfg.d_ff)
    shapes += _ln_shapes("enc.ln", d)
    for i in range(cfg.n_dec_layers):
        p = f"dec{i}"
        shapes += _ln_shapes(f"{p}.ln1", d) + _attn_shapes(f"{p}.self", d)
        shapes += _ln_shapes(f"{p}.ln2", d) + _attn_shapes(f"{p}.cross", d)
        shapes += _ln_shapes(f"{p}.ln3", d) + _ff_shapes(f"{p}.ff", d, cfg.d_ff)
    shapes += _ln_shapes("dec.ln", d)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    ln = 2 * d
    attn = 4 * (d * d + d)
    ff = d * f + f + f * d + d
    enc_layer = 2 * ln + attn + ff
    dec_layer = 3 * ln + 2 * attn + ff
    return ((cfg.vocab_size + cfg.max_len) * d + 4 * d * cfg.n_relations
            + cfg.n_enc_layers * enc_layer + ln + cfg.n_dec_layers * dec_layer + ln)


def growth(cfg: ModelConfig, d_relations: int = 0, d_entities: int = 0) -> int:
    """Parameter delta from adding relations/entities at a fixed vocabulary.

    Entities only ever add vocabulary tokens, so at fixed vocabulary they add
    nothing; ``d_entities`` is accepted to make that explicit.
    """
    from dataclasses import replace
    return param_count(replace(cfg, n_relations=cfg.n_relations + d_relations)) - param_count(cfg)


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape)
    return params


def apply_seq2seq_dropout(query: VerbalizedQuery | np.ndarray, p: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Attention-mask bits with each maskable position dropped with probability ``p``."""
    maskable = query.maskable if isinstance(query, VerbalizedQuery) else np.asarray(query, bool)
    bits = np.ones(len(maskable), dtype=np.int8)
    if p > 0:
        drop = maskable & (rng.random(len(maskable)) < p)
        bits[drop] = 0
    return bits


@dataclass
class Batch:
    src: np.ndarray        # (B, S) token ids
    src_valid: np.ndarray  # (B, S) bool, False at padding
    src_mask: np.ndarray   # (B, S) bool, src_valid after seq2seq dropout
    rel: np.ndarray        # (B,)
    dec_in: np.ndarray     # (B, T)
    target: np.ndarray     # (B, T), PAD where ignored

    def __len__(self):
        return len(self.src)


def make_batch(queries: list[VerbalizedQuery], answers: list[TokenSeq] | None = None,
               dropout_p: float = 0.0, rng: np.random.Generator | None = None) -> Batch:
    B = len(queries)
    S = max(len(q.ids) for q in queries)
    src = np.full((B, S), PAD, dtype=np.int64)
    valid = np.zeros((B, S), dtype=bool)
    mask = np.zeros((B, S), dtype=bool)
    for b, q in enumerate(queries):
        n = len(q.ids)
        src[b, :n] = q.ids
        valid[b, :n] = True
        if dropout_p > 0:
            mask[b, :n] = apply_seq2seq_dropout(q, dropout_p, rng).astype(bool)
        else:
            mask[b, :n] = True
    rel = np.array([q.rel for q in queries], dtype=np.int64)
    if answers is None:
        dec_in = np.zeros((B, 0), dtype=np.int64)
        target = dec_in.copy()
    else:
        T = max(len(a.ids) for a in answers) - 1
        dec_in = np.full((B, T), PAD, dtype=np.int64)
        target = np.full((B, T), PAD, dtype=np.int64)
        for b, a in enumerate(answers):
            n = len(a.ids) - 1
            dec_in[b, :n] = a.ids[:-1]
            target[b, :n] = a.ids[1:]
    return Batch(src, valid, mask, rel, dec_in, target)


# ---- primitives: each *_fwd returns (out, cache), each *_bwd consumes the cache


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_bwd(dy, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(x):
    t = np.tanh(GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_bwd(dy, cache):
    x, t = cache
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _outer_sum(a, b):
    """sum over batch and time of a[..., i] * b[..., j]."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _split_heads(x, H):
    B, T, d = x.shape
    return x.reshape(B, T, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _attn_fwd(P, pre, xq, xkv, allow, H):
    """Multi-head attention; ``allow`` broadcasts to (B, 1, Tq, Tk)."""
    q = _split_heads(xq @ P[pre + ".wq"] + P[pre + ".bq"], H)
    k = _split_heads(xkv @ P[pre + ".wk"] + P[pre + ".bk"], H)
    v = _split_heads(xkv @ P[pre + ".wv"] + P[pre + ".bv"], H)
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = np.where(allow, (q @ k.transpose(0, 1, 3, 2)) * scale, -np.inf)
    s = s - s.max(-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(-1, keepdims=True)
    ctx = _merge_heads(a @ v)
    out = ctx @ P[pre + ".wo"] + P[pre + ".bo"]
    return out, (pre, xq, xkv, q, k, v, a, ctx, scale, H)


def _attn_bwd(dout, cache, P, G):
    pre, xq, xkv, q, k, v, a, ctx, scale, H = cache
    G[pre + ".wo"] += _outer_sum(ctx, dout)
    G[pre + ".bo"] += dout.sum((0, 1))
    dctx = _split_heads(dout @ P[pre + ".wo"].T, H)
    da = dctx @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ dctx
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
    dq = _merge_heads(ds @ k)
    dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)
    G[pre + ".wq"] += _outer_sum(xq, dq)
    G[pre + ".bq"] += dq.sum((0, 1))
    G[pre + ".wk"] += _outer_sum(xkv, dk)
    G[pre + ".bk"] += dk.sum((0, 1))
    G[pre + ".wv"] += _outer_sum(xkv, dv)
    G[pre + ".bv"] += dv.sum((0, 1))
    dxq = dq @ P[pre + ".wq"].T
    dxkv = dk @ P[pre + ".wk"].T + dv @ P[pre + ".wv"].T
    return dxq, dxkv


def _ff_fwd(P, pre, x):
    h = x @ P[pre + ".w1"] + P[pre + ".b1"]
    g, gcache = _gelu_fwd(h)
    return g @ P[pre + ".w2"] + P[pre + ".b2"], (pre, x, g, gcache)


def _ff_bwd(dout, cache, P, G):
    pre, x, g, gcache = cache
    G[pre + ".w2"] += _outer_sum(g, dout)
    G[pre + ".b2"] += dout.sum((0, 1))
    dh = _gelu_bwd(dout @ P[pre + ".w2"].T, gcache)
    G[pre + ".w1"] += _outer_sum(x, dh)
    G[pre + ".b1"] += dh.sum((0, 1))
    return dh @ P[pre + ".w1"].T


# ---- encoder / decoder


def _embed_source(P, src, rel, substitute_prompts=True):
    S = src.shape[1]
    x = P["tok_emb"][src]
    prompt_pos = None
    if substitute_prompts:
        prompt_pos = []
        for k, pid in enumerate(PROMPT_IDS):
            bi, si = np.nonzero(src == pid)
            x[bi, si] = P["prompt"][rel[bi], k]
            prompt_pos.append((bi, si))
    return x + P["pos_emb"][:S], prompt_pos


def encode(P, cfg: ModelConfig, src, src_mask, rel, substitute_prompts=True, keep_cache=False):
    B, S = src.shape
    if S > cfg.max_len:
        raise ValueError(f"source length {S} exceeds max_len {cfg.max_len}")
    x, prompt_pos = _embed_source(P, src, rel, substitute_prompts)
    allow = src_mask[:, None, None, :]
    caches = []
    for i in range(cfg.n_enc_layers):
        p = f"enc{i}"
        h, c1 = _ln_fwd(x, P[p + ".ln1.g"], P[p + ".ln1.b"])
        a, c2 = _attn_fwd(P, p + ".attn", h, h, allow, cfg.n_heads)
        x = x + a
        h, c3 = _ln_fwd(x, P[p + ".ln2.g"], P[p + ".ln2.b"])
        f, c4 = _ff_fwd(P, p + ".ff", h)
        x = x + f
        if keep_cache:
            caches.append((c1, c2, c3, c4))
    out, cf = _ln_fwd(x, P["enc.ln.g"], P["enc.ln.b"])
    return out, (src, rel, prompt_pos, caches, cf)


def decode(P, cfg: ModelConfig, enc_out, src_mask, dec_in, keep_cache=False):
    """Decoder hidden states after the final norm, shape (B, T, d)."""
    B, T = dec_in.shape
    if T > cfg.max_len:
        raise ValueError(f"target length {T} exceeds max_len {cfg.max_len}")
    y = P["tok_emb"][dec_in] + P["pos_emb"][:T]
    causal = np.tril(np.ones((T, T), dtype=bool))[None, None]
    cross_allow = src_mask[:, None, None, :]
    caches = []
    for i in range(cfg.n_dec_layers):
        p = f"dec{i}"
        h, c1 = _ln_fwd(y, P[p + ".ln1.g"], P[p + ".ln1.b"])
        a, c2 = _attn_fwd(P, p + ".self", h, h, causal, cfg.n_heads)
        y = y + a
        h, c3 = _ln_fwd(y, P[p + ".ln2.g"], P[p + ".ln2.b"])
        a, c4 = _attn_fwd(P, p + ".cross", h, enc_out, cross_allow, cfg.n_heads)
        y = y + a
        h, c5 = _ln_fwd(y, P[p + ".ln3.g"], P[p + ".ln3.b"])
        f, c6 = _ff_fwd(P, p + ".ff", h)
        y = y + f
        if keep_cache:
            caches.append((c1, c2, c3, c4, c5, c6))
    out, cf = _ln_fwd(y, P["dec.ln.g"], P["dec.ln.b"])
    return out, (dec_in, caches, cf)


def forward(P, cfg: ModelConfig, batch: Batch, train_mode: bool = False,
            substitute_prompts: bool = True, keep_cache: bool = False):
    """Logits of shape (B, T, vocab_size).

    In train mode the dropped mask ``batch.src_mask`` gates attention to
    the encoder input; in eval mode only padding is masked.
    """
    mask = batch.src_mask if train_mode else batch.src_valid
    enc_out, enc_cache = encode(P, cfg, batch.src, mask, batch.rel, substitute_prompts, keep_cache)
    dec_out, dec_cache = decode(P, cfg, enc_out, mask, batch.dec_in, keep_cache)
    logits = dec_out @ P["tok_emb"].T
    if keep_cache:
        return logits, (mask, enc_out, enc_cache, dec_out, dec_cache)
    return logits


def log_softmax(x):
    m = x.max(-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def loss_cross_entropy(logits, targets, pad_id: int = PAD) -> float:
    valid = targets != pad_id
    n = int(valid.sum())
    if n == 0:
        raise ValueError("all target positions are padding")
    lp = log_softmax(logits)
    picked = np.take_along_axis(lp, targets[..., None], -1)[..., 0]
    return float(-(picked * valid).sum() / n)


def loss_and_grads(P, cfg: ModelConfig, batch: Batch, train_mode: bool = True,
                   substitute_prompts: bool = True):
    """Mean token cross-entropy and its exact gradient for every parameter."""
    logits, (mask, enc_out, enc_cache, dec_out, dec_cache) = forward(
        P, cfg, batch, train_mode, substitute_prompts, keep_cache=True)
    loss = loss_cross_entropy(logits, batch.target)
    G = {name: np.zeros_like(arr) for name, arr in P.items()}

    valid = batch.target != PAD
    n = valid.sum()
    dlogits = np.exp(log_softmax(logits))
    np.put_along_axis(dlogits, batch.target[..., None],
                      np.take_along_axis(dlogits, batch.target[..., None], -1) - 1.0, -1)
    dlogits *= valid[..., None] / n

    G["tok_emb"] += _outer_sum(dlogits, dec_out)
    ddec = dlogits @ P["tok_emb"]

    # decoder
    dec_in, dcaches, dcf = dec_cache
    dy, dg, db = _ln_bwd(ddec, dcf)
    G["dec.ln.g"] += dg
    G["dec.ln.b"] += db
    denc = np.zeros_like(enc_out)
    for i in reversed(range(cfg.n_dec_layers)):
        p = f"dec{i}"
        c1, c2, c3, c4, c5, c6 = dcaches[i]
        dh = _ff_bwd(dy, c6, P, G)
        dx, dg, db = _ln_bwd(dh, c5)
        G[p + ".ln3.g"] += dg
        G[p + ".ln3.b"] += db
        dy = dy + dx
        dh, dkv = _attn_bwd(dy, c4, P, G)
        denc += dkv
        dx, dg, db = _ln_bwd(dh, c3)
        G[p + ".ln2.g"] += dg
        G[p + ".ln2.b"] += db
        dy = dy + dx
        dq, dkv = _attn_bwd(dy, c2, P, G)
        dx, dg, db = _ln_bwd(dq + dkv, c1)
        G[p + ".ln1.g"] += dg
        G[p + ".ln1.b"] += db
        dy = dy + dx
    T = dec_in.shape[1]
    np.add.at(G["tok_emb"], dec_in, dy)
    G["pos_emb"][:T] += dy.sum(0)

    # encoder
    src, rel, prompt_pos, ecaches, ecf = enc_cache
    dx, dg, db = _ln_bwd(denc, ecf)
    G["enc.ln.g"] += dg
    G["enc.ln.b"] += db
    for i in reversed(range(cfg.n_enc_layers)):
        p = f"enc{i}"
        c1, c2, c3, c4 = ecaches[i]
        dh = _ff_bwd(dx, c4, P, G)
        d2, dg, db = _ln_bwd(dh, c3)
        G[p + ".ln2.g"] += dg
        G[p + ".ln2.b"] += db
        dx = dx + d2
        dq, dkv = _attn_bwd(dx, c2, P, G)
        d1, dg, db = _ln_bwd(dq + dkv, c1)
        G[p + ".ln1.g"] += dg
        G[p + ".ln1.b"] += db
        dx = dx + d1
    S = src.shape[1]
    G["pos_emb"][:S] += dx.sum(0)
    tok_rows = np.ones(src.shape, dtype=bool)
    if prompt_pos is not None:
        for k, (bi, si) in enumerate(prompt_pos):
            np.add.at(G["prompt"], (rel[bi], k), dx[bi, si])
            tok_rows[bi, si] = False
    np.add.at(G["tok_emb"], src[tok_rows], dx[tok_rows])
    return loss, G

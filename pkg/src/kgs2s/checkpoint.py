"""Binary checkpoint container.

Layout: the magic line ``kgs2s-ckpt v1``, a length-prefixed ``key=value``
text block, the 64-character hex vocabulary digest, an array count, then
each array as a length-prefixed run of little-endian float64 values.
Parameters come first in enumeration order, followed by the Adam first
and second moments when optimizer state is stored.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kgs2s.model import ModelConfig, param_shapes
from kgs2s.text import Vocab

MAGIC = b"kgs2s-ckpt v1\n"
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **hyper) -> "OptimState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, **hyper)

    def copy(self) -> "OptimState":
        return OptimState({k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()},
                          self.step, self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab_digest: str
    params: dict[str, np.ndarray]
    optim: OptimState | None = None
    epoch: int = 0
    extra: dict[str, str] = field(default_factory=dict)


def _config_block(ckpt: Checkpoint) -> str:
    items = dict(ckpt.config.to_dict())
    items["epoch"] = ckpt.epoch
    if ckpt.optim is not None:
        o = ckpt.optim
        items.update(optim_step=o.step, lr=repr(o.lr), beta1=repr(o.beta1),
                     beta2=repr(o.beta2), eps=repr(o.eps))
    for k, v in ckpt.extra.items():
        items[f"extra.{k}"] = v
    return "".join(f"{k}={v}\n" for k, v in items.items())


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    text = _config_block(ckpt).encode("utf-8")
    buf.write(_U64.pack(len(text)))
    buf.write(text)
    digest = ckpt.vocab_digest.encode("ascii")
    if len(digest) != 64:
        raise CheckpointError("vocab digest must be 64 hex characters")
    buf.write(digest)
    names = [n for n, _ in param_shapes(ckpt.config)]
    arrays = [ckpt.params[n] for n in names]
    if ckpt.optim is not None:
        arrays += [ckpt.optim.m[n] for n in names] + [ckpt.optim.v[n] for n in names]
    buf.write(_U64.pack(len(arrays)))
    for a in arrays:
        data = np.ascontiguousarray(a, dtype="<f8").tobytes()
        buf.write(_U64.pack(len(data)))
        buf.write(data)
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


_INT_KEYS = {"vocab_size", "n_relations", "d_model", "n_heads", "n_enc_layers",
             "n_dec_layers", "d_ff", "max_len", "seed"}


def load_checkpoint(path: str | Path, vocab: Vocab | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC[:len("kgs2s-ckpt")]):
        raise CheckpointError("not a kgs2s checkpoint")
    if not data.startswith(MAGIC):
        raise CheckpointError("unsupported checkpoint version: "
                              + data.split(b"\n", 1)[0].decode("ascii", "replace"))
    r = _Reader(data)
    r.take(len(MAGIC))
    text = r.take(r.u64()).decode("utf-8")
    items = dict(line.split("=", 1) for line in text.splitlines() if line)
    digest = r.take(64).decode("ascii")
    if vocab is not None and vocab.digest() != digest:
        raise CheckpointError("vocabulary digest mismatch")

    cfg_kwargs = {}
    for k in ModelConfig.__dataclass_fields__:
        if k not in items:
            raise CheckpointError(f"config key {k!r} missing")
        cfg_kwargs[k] = int(items[k]) if k in _INT_KEYS else float(items[k])
    cfg = ModelConfig(**cfg_kwargs)
    shapes = param_shapes(cfg)

    n_arrays = r.u64()
    has_optim = "optim_step" in items
    expected = len(shapes) * (3 if has_optim else 1)
    if n_arrays != expected:
        raise CheckpointError(f"expected {expected} arrays, header says {n_arrays}")
    arrays = []
    for i in range(n_arrays):
        name, shape = shapes[i % len(shapes)]
        nbytes = r.u64()
        if nbytes != 8 * int(np.prod(shape)):
            raise CheckpointError(f"array {name} has {nbytes} bytes, expected shape {shape}")
        arrays.append(np.frombuffer(r.take(nbytes), dtype="<f8").astype(np.float64).reshape(shape))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last array")

    n = len(shapes)
    params = {name: arrays[i] for i, (name, _) in enumerate(shapes)}
    optim = None
    if has_optim:
        optim = OptimState({name: arrays[n + i] for i, (name, _) in enumerate(shapes)},
                           {name: arrays[2 * n + i] for i, (name, _) in enumerate(shapes)},
                           int(items["optim_step"]), float(items["lr"]), float(items["beta1"]),
                           float(items["beta2"]), float(items["eps"]))
    extra = {k[len("extra."):]: v for k, v in items.items() if k.startswith("extra.")}
    return Checkpoint(cfg, digest, params, optim, int(items.get("epoch", 0)), extra)

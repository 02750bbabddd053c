"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from kgs2s.data import SPLITS, MetaKind
from kgs2s.model import ModelConfig
from kgs2s.train import TrainPlan


class ConfigFileError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _split_list(s: str) -> tuple[str, ...]:
    out = tuple(x for x in s.replace(",", " ").split())
    for x in out:
        if x not in SPLITS:
            raise ValueError(f"unknown split {x!r}")
    return out


def _split(s: str) -> str:
    if s not in SPLITS:
        raise ValueError(f"unknown split {s!r}")
    return s


@dataclass
class RunConfig:
    data_dir: Path
    out_dir: Path
    meta_kind: MetaKind = MetaKind.NONE
    # model
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_len: int = 64
    seq2seq_dropout_p: float = 0.0
    # training
    batch_size: int = 32
    lr: float = 1e-3
    desc_len: int = 10
    max_epochs: int = 10
    eval_every: int = 1
    beam_width_for_valid: int = 10
    select_split: str = "valid"
    # inference / evaluation
    beam_width: int = 40
    constrained: bool = True
    block_splits: tuple[str, ...] = SPLITS
    metrics_n: tuple[int, ...] = (1, 3, 10)
    eval_split: str = "test"
    sweep_widths: tuple[int, ...] = (1, 5, 10, 40)
    threads: int = 1
    seed: int = 0

    def model_config(self, vocab_size: int, n_relations: int) -> ModelConfig:
        return ModelConfig(vocab_size, n_relations, self.d_model, self.n_heads, self.n_enc_layers,
                           self.n_dec_layers, self.d_ff, self.max_len, self.seq2seq_dropout_p, self.seed)

    def train_plan(self) -> TrainPlan:
        return TrainPlan(self.batch_size, self.lr, self.desc_len, self.seq2seq_dropout_p,
                         self.max_epochs, self.eval_every, self.beam_width_for_valid, self.seed)


_PARSERS = {
    "data_dir": Path, "out_dir": Path, "meta_kind": MetaKind,
    "d_model": int, "n_heads": int, "n_enc_layers": int, "n_dec_layers": int, "d_ff": int,
    "max_len": int, "seq2seq_dropout_p": float, "batch_size": int, "lr": float, "desc_len": int,
    "max_epochs": int, "eval_every": int, "beam_width_for_valid": int, "select_split": _split,
    "beam_width": int, "constrained": _parse_bool, "block_splits": _split_list,
    "metrics_n": _int_list, "eval_split": _split, "sweep_widths": _int_list, "threads": int,
    "seed": int,
}
_REQUIRED = ("data_dir", "out_dir")


def parse_config_text(text: str, base_dir: Path | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigFileError(f"line {lineno}: bad value for {key}: {val!r} ({exc})") from None
    for key in _REQUIRED:
        if key not in values:
            raise ConfigFileError(f"missing required key {key!r}")
    if base_dir is not None:
        for key in ("data_dir", "out_dir"):
            if not values[key].is_absolute():
                values[key] = base_dir / values[key]
    cfg = RunConfig(**values)
    for name in ("d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff", "max_len",
                 "batch_size", "eval_every",
                 "beam_width_for_valid", "beam_width", "threads"):
        if getattr(cfg, name) < 1:
            raise ConfigFileError(f"{name} must be >= 1")
    if cfg.max_epochs < 0 or cfg.desc_len < 0:
        raise ConfigFileError("max_epochs and desc_len must be >= 0")
    if not 0.0 <= cfg.seq2seq_dropout_p <= 1.0:
        raise ConfigFileError("seq2seq_dropout_p must lie in [0, 1]")
    return cfg


def parse_config(path: str | Path) -> RunConfig:
    """Read a config file; relative paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), path.parent)


def config_keys() -> list[str]:
    return [f.name for f in fields(RunConfig)]

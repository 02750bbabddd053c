"""Command-line entry point: ``kgs2s <subcommand> --config run.cfg``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from kgs2s.checkpoint import load_checkpoint, save_checkpoint
from kgs2s.config import RunConfig, parse_config
from kgs2s.data import (
    Direction,
    KnowledgeGraph,
    Meta,
    Query,
    build_icews_descriptions,
    build_known_true_index,
    load_graph,
    reformat_nell_name,
    validate_zero_shot_split,
)
from kgs2s.decode import Predictor
from kgs2s.evaluate import evaluate_split, write_predictions
from kgs2s.text import Vocab, build_vocab
from kgs2s.train import train

log = logging.getLogger("kgs2s")


class UsageError(ValueError):
    pass


def _load(cfg: RunConfig) -> KnowledgeGraph:
    return load_graph(cfg.data_dir, cfg.meta_kind)


def _vocab(cfg: RunConfig, graph: KnowledgeGraph) -> Vocab:
    path = cfg.out_dir / "vocab.txt"
    if path.is_file():
        return Vocab.load(path)
    vocab = build_vocab(graph, cfg.desc_len)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    return vocab


def _predictor(cfg: RunConfig, args, graph: KnowledgeGraph) -> Predictor:
    vocab = Vocab.load(cfg.out_dir / "vocab.txt")
    path = Path(args.checkpoint) if args.checkpoint else cfg.out_dir / "best.ckpt"
    ckpt = load_checkpoint(path, vocab)
    desc_len = int(ckpt.extra.get("desc_len", cfg.desc_len))
    return Predictor(ckpt.params, ckpt.config, vocab, graph, desc_len)


def cmd_preprocess(cfg: RunConfig, args) -> int:
    out = Path(args.output) if args.output else cfg.data_dir / "entities.tsv"
    with open(args.input, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE))
    if args.skip_header:
        rows = rows[1:]
    lines = []
    for row in rows:
        if not row:
            continue
        key, name = row[args.id_col], row[args.name_col]
        if args.kind == "icews":
            sector = row[args.sector_col] if args.sector_col < len(row) else ""
            country = row[args.country_col] if args.country_col < len(row) else ""
            desc = build_icews_descriptions(sector, country)
        else:
            name = reformat_nell_name(name)
            desc = row[args.desc_col] if args.desc_col is not None and args.desc_col < len(row) else ""
        lines.append(f"{key}\t{' '.join(name.split())}\t{' '.join(desc.split())}\n")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines), encoding="utf-8")
    log.info("wrote %d entities to %s", len(lines), out)
    if args.validate_zero_shot:
        bad = validate_zero_shot_split(_load(cfg))
        if bad:
            print(f"zero-shot split violated by relation ids: {sorted(bad)}", file=sys.stderr)
            return 1
    return 0


def cmd_build_vocab(cfg: RunConfig, args) -> int:
    graph = _load(cfg)
    vocab = build_vocab(graph, cfg.desc_len)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(cfg.out_dir / "vocab.txt")
    for name, ids in sorted(graph.name_collisions().items()):
        print(f"name collision: {name!r} -> {ids}", file=sys.stderr)
    log.info("vocabulary of %d tokens", len(vocab))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    graph = _load(cfg)
    vocab = _vocab(cfg, graph)
    model_cfg = cfg.model_config(len(vocab), graph.n_relations)
    resume = load_checkpoint(args.resume, vocab) if args.resume else None
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.out_dir / "train.log"
    if resume is None and log_path.exists():
        log_path.unlink()
    result = train(graph, vocab, model_cfg, cfg.train_plan(), select_split=cfg.select_split,
                   resume=resume, log_path=log_path, threads=cfg.threads)
    save_checkpoint(cfg.out_dir / "best.ckpt", result.best)
    save_checkpoint(cfg.out_dir / "last.ckpt", result.last)
    log.info("best epoch %d, %s mrr %.6f", result.best.epoch, cfg.select_split, result.best_mrr)
    return 0


def _evaluate(cfg: RunConfig, pred: Predictor, graph: KnowledgeGraph, K: int):
    return evaluate_split(pred, graph, cfg.eval_split, K=K, constrained=cfg.constrained,
                          block_splits=cfg.block_splits, hits_at=cfg.metrics_n,
                          seed=cfg.seed, threads=cfg.threads)


def cmd_eval(cfg: RunConfig, args) -> int:
    graph = _load(cfg)
    pred = _predictor(cfg, args, graph)
    metrics, outcomes = _evaluate(cfg, pred, graph, cfg.beam_width)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "metrics.txt").write_text(metrics.report(), encoding="utf-8")
    (cfg.out_dir / "metrics.tsv").write_text(metrics.tsv(), encoding="utf-8")
    with open(cfg.out_dir / "predictions.tsv", "w", encoding="utf-8") as f:
        write_predictions(outcomes, graph, f)
    sys.stdout.write(metrics.report())
    return 0


def _parse_query(text: str, graph: KnowledgeGraph) -> Query:
    parts = text.split(",", 3)
    if len(parts) < 3:
        raise UsageError("query must look like 'h,r,?,m' or '?,r,t,m'")
    h, r, t = (p.strip() for p in parts[:3])
    m = parts[3].strip() if len(parts) == 4 else ""
    if (h == "?") == (t == "?"):
        raise UsageError("exactly one of head and tail must be '?'")
    meta = Meta(graph.meta_kind, m) if m else None
    rel = graph.relation_id(r)
    if t == "?":
        return Query(Direction.TAIL, graph.entity_id(h), rel, meta)
    return Query(Direction.HEAD, graph.entity_id(t), rel, meta)


def cmd_predict(cfg: RunConfig, args) -> int:
    graph = _load(cfg)
    pred = _predictor(cfg, args, graph)
    try:
        query = _parse_query(args.query, graph)
    except KeyError as exc:
        raise UsageError(f"unknown id in query: {exc.args[0]}") from None
    block_index = build_known_true_index(graph, cfg.block_splits) if cfg.constrained else None
    cands = pred.predict(query, cfg.beam_width, cfg.constrained, block_index)
    row = ",".join(f"{graph.entity_key(e)}:{s:.6f}" for e, s in cands.items)
    sys.stdout.write(f"0\t{query.direction.value}\t-\t-\t{row}\n")
    return 0


def cmd_sweep_beam(cfg: RunConfig, args) -> int:
    graph = _load(cfg)
    pred = _predictor(cfg, args, graph)
    blocks, rows = [], ["beam_width\tmetric\tvalue"]
    for K in cfg.sweep_widths:
        metrics, outcomes = _evaluate(cfg, pred, graph, K)
        most = max((len(o.candidates) for o in outcomes), default=0)
        blocks.append(f"beam_width={K}\n{metrics.report()}max_candidates={most}\n")
        rows.append(f"{K}\tmrr\t{metrics.mrr:.6f}")
        rows += [f"{K}\thits@{n}\t{v:.6f}" for n, v in sorted(metrics.hits.items())]
        rows.append(f"{K}\tmax_candidates\t{most}")
    report = "\n".join(blocks)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "sweep_beam.txt").write_text(report, encoding="utf-8")
    (cfg.out_dir / "sweep_beam.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    sys.stdout.write(report)
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep-beam": cmd_sweep_beam,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgs2s", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        return p

    p = add("preprocess", "write entities.tsv from a raw ICEWS or NELL entity table")
    p.add_argument("--kind", choices=["icews", "nell"], required=True)
    p.add_argument("--input", required=True, help="raw TSV file")
    p.add_argument("--output", help="destination (default: <data_dir>/entities.tsv)")
    p.add_argument("--id-col", type=int, default=0)
    p.add_argument("--name-col", type=int, default=1)
    p.add_argument("--sector-col", type=int, default=2, help="ICEWS sector column")
    p.add_argument("--country-col", type=int, default=3, help="ICEWS country column")
    p.add_argument("--desc-col", type=int, help="NELL description column, if any")
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--validate-zero-shot", action="store_true",
                   help="fail if any valid/test relation also occurs in train")

    add("build-vocab", "build <out_dir>/vocab.txt")
    p = add("train", "train and write best.ckpt, last.ckpt and train.log")
    p.add_argument("--resume", help="checkpoint to continue from")
    for name, help in (("eval", "evaluate eval_split and write metrics and predictions"),
                       ("sweep-beam", "evaluate at each beam width in sweep_widths")):
        p = add(name, help)
        p.add_argument("--checkpoint", help="checkpoint (default: <out_dir>/best.ckpt)")
    p = add("predict", "print top-K candidates for one query")
    p.add_argument("--query", required=True, help="'h,r,?,m' or '?,r,t,m' using file ids")
    p.add_argument("--checkpoint", help="checkpoint (default: <out_dir>/best.ckpt)")
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"kgs2s {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

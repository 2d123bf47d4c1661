"""Operator surface: build, search, eval, train, mine, bench, inspect.

Exit codes: 0 success, 2 usage/config error, 3 data or format error,
4 numeric/training error.  Every command is deterministic given --seed;
all file paths resolve against --workdir (or $SIDR_WORKDIR).  Flag values
override the config file, which overrides built-in defaults.  The config
file uses key=value sections named after the subcommands:

    [search]
    pipeline = beta
    topk = 20
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from . import bench as bench_mod
from . import bm25 as bm25_mod
from .encoder import (EmbeddingStore, EncoderConfig, FileProvider, ToyEncoderParams,
                      ToyProvider)
from .errors import EngineError, UsageError
from .eval import (ABLATION_VARIANTS, mrr_at_10, ndcg_at_10_with_counts, read_qrels_tsv,
                   run_ablation, topk_accuracy)
from .index import (BotIndex, ParamIndex, build_bot_index, build_param_index, load_index,
                    read_corpus_jsonl, save_index)
from .pipelines import (CostLedger, RerankConfig, read_queries_jsonl, read_results_jsonl,
                        run_beta, run_full, run_late, write_ledger_json,
                        write_results_jsonl)
from .train import (MinerConfig, mine_negatives, read_train_jsonl, train_toy,
                    write_metrics_csv)
from .vocab import load_vocab, tokenize

DEFAULTS: dict[str, dict] = {
    "build-index": {"type": "bot", "provider": "toy", "k_doc": 768, "k1": 0.9, "b": 0.4},
    "search": {"pipeline": "beta", "topk": 10, "m": 100, "provider": "toy",
               "k_query": 768, "workers": 1, "batch_size": 0,
               "include_zeros": False, "no_cache": False, "query_tf": False},
    "eval": {"metric": "top-k", "k": "1,5,20", "topk": 20, "k_doc": 768,
             "k_query": 768, "ndcg_gain": "exp"},
    "train-toy": {"epochs": 50, "lr": 0.05, "seed": 0, "dim": 8, "k_doc": 768,
                  "k_query": 768, "miner_m": 0, "batch_size": 0},
    "mine-negatives": {"m": 20, "seed": 0, "k_query": 768, "provider": "toy"},
    "bench": {"stage": "all", "m": 20, "topk": 10, "workers": 1, "seed": 0,
              "dim": 8, "k_doc": 768, "k_query": 768, "index_type": "bot"},
    "inspect": {},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise UsageError(f"cannot read {raw!r} as a boolean")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _resolve(args: argparse.Namespace) -> None:
    """Fill unset options from the config file, then from DEFAULTS."""
    section = args.command
    defaults = DEFAULTS.get(section, {})
    file_values: dict[str, str] = {}
    if args.config:
        cfg = configparser.ConfigParser()
        read = cfg.read(args.config)
        if not read:
            raise UsageError(f"config file {args.config} not found")
        if cfg.has_section(section):
            for key, value in cfg.items(section):
                file_values[key.replace("-", "_")] = value
    for dest, default in defaults.items():
        if getattr(args, dest, None) is None:
            if dest in file_values:
                setattr(args, dest, _coerce(file_values[dest], default))
            else:
                setattr(args, dest, default)


def _wpath(args, p):
    if p is None or str(p) == "-":
        return p
    path = Path(p)
    return path if path.is_absolute() else Path(args.workdir) / path


def _load_vocab(args):
    if not args.vocab:
        raise UsageError("--vocab is required")
    return load_vocab(_wpath(args, args.vocab))


def _make_provider(args, vocab, k: int):
    if args.provider == "file":
        if not args.embeddings:
            raise UsageError("--embeddings is required with --provider file")
        return FileProvider(EmbeddingStore.load(_wpath(args, args.embeddings)))
    if not args.params:
        raise UsageError("--params is required with --provider toy")
    params = ToyEncoderParams.load(_wpath(args, args.params))
    return ToyProvider(params, vocab, k)


def _emit_json(obj, args, attr="out"):
    path = getattr(args, attr, None)
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(_wpath(args, path), "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# --- commands --------------------------------------------------------------


def cmd_build_index(args) -> int:
    corpus = read_corpus_jsonl(_wpath(args, args.corpus))
    vocab = _load_vocab(args)
    out = _wpath(args, args.out)
    if args.type == "bot":
        save_index(build_bot_index(corpus, vocab), out)
    elif args.type == "param":
        provider = _make_provider(args, vocab, args.k_doc)
        save_index(build_param_index(corpus, provider, k_doc=args.k_doc), out)
    elif args.type == "bm25":
        bm25_mod.save_bm25(bm25_mod.build_bm25(corpus, vocab, k1=args.k1, b=args.b), out)
    else:
        raise UsageError(f"unknown index type {args.type!r}")
    return 0


def cmd_search(args) -> int:
    vocab = load_vocab(_wpath(args, args.vocab)) if args.vocab else None
    queries = read_queries_jsonl(args.queries if str(args.queries) == "-"
                                 else _wpath(args, args.queries))
    batch = args.batch_size or None
    if args.pipeline == "bm25":
        if vocab is None:
            raise UsageError("--vocab is required with --pipeline bm25")
        ix = bm25_mod.load_bm25(_wpath(args, args.index))
        bm25_mod.check_vocab_compatible(ix, vocab)
        results = {q.id: bm25_mod.score_bm25(ix, tokenize(vocab, q.text), args.topk,
                                             query_tf=args.query_tf or False,
                                             include_zeros=args.include_zeros)
                   for q in queries}
        ledger = CostLedger()  # term-based scoring embeds nothing
        _write_search_outputs(args, results, ledger)
        return 0
    ix = load_index(_wpath(args, args.index))
    if args.provider == "toy" and vocab is None:
        raise UsageError("--vocab is required with --provider toy")
    provider = _make_provider(args, vocab, args.k_query)
    if args.pipeline == "full":
        if not isinstance(ix, ParamIndex):
            raise UsageError("--pipeline full needs a parametric index file")
        results, ledger = run_full(queries, ix, provider, args.topk,
                                   include_zeros=args.include_zeros,
                                   batch_size=batch, workers=args.workers)
    elif args.pipeline == "beta":
        if not isinstance(ix, BotIndex):
            raise UsageError("--pipeline beta needs a bag-of-tokens index file")
        results, ledger = run_beta(queries, ix, provider, args.topk,
                                   include_zeros=args.include_zeros,
                                   batch_size=batch, workers=args.workers)
    elif args.pipeline == "late":
        if not isinstance(ix, BotIndex):
            raise UsageError("--pipeline late needs a bag-of-tokens index file")
        if args.save_cache and args.no_cache:
            raise UsageError("--save-cache needs the embedding cache enabled")
        cfg = RerankConfig(m=args.m, cache_passage_embeddings=not args.no_cache)
        cache_out = {} if args.save_cache else None
        doc_provider = None
        if args.doc_embeddings:
            doc_provider = FileProvider(
                EmbeddingStore.load(_wpath(args, args.doc_embeddings)))
        results, ledger = run_late(queries, ix, provider, cfg, args.topk,
                                   include_zeros=args.include_zeros,
                                   batch_size=batch, workers=args.workers,
                                   cache_out=cache_out, doc_provider=doc_provider)
        if args.save_cache:
            EmbeddingStore(provider.vocab_size, cache_out).save(
                _wpath(args, args.save_cache))
    else:
        raise UsageError(f"unknown pipeline {args.pipeline!r}")
    _write_search_outputs(args, results, ledger)
    return 0


def _write_search_outputs(args, results, ledger) -> None:
    if args.out:
        write_results_jsonl(results, _wpath(args, args.out))
    else:
        for qid, ranking in results.items():
            sys.stdout.write(json.dumps(
                {"query_id": qid,
                 "ranking": [{"passage_id": p, "score": s} for p, s in ranking]}) + "\n")
    if args.ledger:
        write_ledger_json(ledger, _wpath(args, args.ledger))


def _require(args, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def cmd_eval(args) -> int:
    if args.ablation:
        if args.ablation not in ABLATION_VARIANTS:
            raise UsageError(f"unknown ablation variant {args.ablation!r}")
        _require(args, "corpus", "queries")
        corpus = read_corpus_jsonl(_wpath(args, args.corpus))
        vocab = _load_vocab(args)
        provider = _make_provider(args, vocab, args.k_query)
        queries = read_queries_jsonl(_wpath(args, args.queries))
        ks = tuple(int(k) for k in str(args.k).split(","))
        out = run_ablation(args.ablation, corpus, vocab, provider, queries,
                           topk=args.topk, ks=ks, k_doc=args.k_doc)
        _emit_json(out["metrics"], args)
        return 0
    _require(args, "results")
    results = read_results_jsonl(_wpath(args, args.results))
    if args.metric == "top-k":
        _require(args, "queries", "corpus")
        queries = read_queries_jsonl(_wpath(args, args.queries))
        corpus = read_corpus_jsonl(_wpath(args, args.corpus))
        contents = {p.id: p.content for p in corpus}
        ks = tuple(int(k) for k in str(args.k).split(","))
        metrics = {"metric": "top-k",
                   "accuracy": {f"top{k}": topk_accuracy(results, queries, contents, k)
                                for k in ks}}
    elif args.metric == "mrr":
        _require(args, "qrels")
        qrels = read_qrels_tsv(_wpath(args, args.qrels))
        metrics = {"metric": "mrr@10", "value": mrr_at_10(results, qrels)}
    elif args.metric == "ndcg":
        _require(args, "qrels")
        qrels = read_qrels_tsv(_wpath(args, args.qrels))
        value, skipped = ndcg_at_10_with_counts(results, qrels, gain=args.ndcg_gain)
        metrics = {"metric": "ndcg@10", "value": value, "skipped_queries": skipped,
                   "gain": args.ndcg_gain}
    else:
        raise UsageError(f"unknown metric {args.metric!r}")
    _emit_json(metrics, args)
    return 0


def cmd_train_toy(args) -> int:
    corpus = read_corpus_jsonl(_wpath(args, args.corpus))
    vocab = _load_vocab(args)
    ix = build_bot_index(corpus, vocab)
    examples = read_train_jsonl(_wpath(args, args.train))
    heldout = read_train_jsonl(_wpath(args, args.heldout)) if args.heldout else None
    cfg = EncoderConfig(vocab_size=vocab.size, k_doc=min(args.k_doc, vocab.size),
                        k_query=min(args.k_query, vocab.size))
    params, history = train_toy(
        examples, ix, vocab, epochs=args.epochs, lr=args.lr, seed=args.seed,
        d=args.dim, cfg=cfg, miner_m=args.miner_m or None, heldout=heldout,
        batch_size=args.batch_size or None)
    params.save(_wpath(args, args.out))
    if args.log:
        write_metrics_csv(history, _wpath(args, args.log))
    if args.figure:
        from .plots import plot_training_curves
        plot_training_curves(history, _wpath(args, args.figure))
    last = history[-1]
    sys.stdout.write(json.dumps({"epochs": len(history), "l_final": last.l_final,
                                 "heldout_beta_top1": last.heldout_beta_top1}) + "\n")
    return 0


def cmd_mine_negatives(args) -> int:
    ix = load_index(_wpath(args, args.index))
    if not isinstance(ix, BotIndex):
        raise UsageError("mine-negatives needs a bag-of-tokens index file")
    vocab = load_vocab(_wpath(args, args.vocab)) if args.vocab else None
    if args.provider == "toy" and vocab is None:
        raise UsageError("--vocab is required with --provider toy")
    provider = _make_provider(args, vocab, args.k_query)
    queries = read_queries_jsonl(_wpath(args, args.queries))
    cfg = MinerConfig(index=ix, m=args.m, seed=args.seed)
    rows = []
    for q in queries:
        neg = mine_negatives(q, cfg, provider)
        rows.append({"query_id": q.id, "negative_id": neg.id,
                     "title": neg.title, "text": neg.text})
    if args.out:
        with open(_wpath(args, args.out), "w", encoding="utf-8", newline="\n") as f:
            for row in rows:
                f.write(json.dumps(row) + "\n")
    else:
        for row in rows:
            sys.stdout.write(json.dumps(row) + "\n")
    return 0


def cmd_bench(args) -> int:
    corpus = read_corpus_jsonl(_wpath(args, args.corpus))
    vocab = _load_vocab(args)
    if args.params:
        params = ToyEncoderParams.load(_wpath(args, args.params))
    else:
        params = ToyEncoderParams.init(vocab.size, args.dim, args.seed)
    k_doc = min(args.k_doc, vocab.size)
    k_query = min(args.k_query, vocab.size)
    provider = ToyProvider(params, vocab, k_doc)
    qprovider = ToyProvider(params, vocab, k_query)
    queries = read_queries_jsonl(_wpath(args, args.queries)) if args.queries else []
    stages = bench_mod.STAGES if args.stage == "all" else tuple(args.stage.split(","))
    bot_ix = param_ix = None
    if "score" in stages or "rerank_embed" in stages:
        bot_ix = build_bot_index(corpus, vocab)
        if args.index_type == "param" and "score" in stages:
            param_ix = build_param_index(corpus, provider, k_doc=k_doc)
    reports = []
    for stage in stages:
        reports.append(bench_mod.bench_stage(
            stage, passages=corpus, vocab=vocab,
            provider=qprovider if stage in ("embed_queries", "score") else provider,
            queries=queries, bot_index=bot_ix,
            param_index=param_ix if (stage == "score" and args.index_type == "param") else None,
            m=args.m, topk=args.topk, workers=args.workers))
    if args.out:
        bench_mod.write_report_json(reports, _wpath(args, args.out))
    if args.csv:
        bench_mod.write_stage_table_csv(reports, _wpath(args, args.csv))
    if args.figure:
        from .plots import plot_stage_latency
        plot_stage_latency(reports, _wpath(args, args.figure))
    for r in reports:
        sys.stdout.write(json.dumps({"stage": r.stage, "mean_seconds": r.mean_seconds,
                                     "items_per_sec": r.items_per_sec}) + "\n")
    return 0


def cmd_inspect(args) -> int:
    path = _wpath(args, args.index)
    with open(path, "rb") as f:
        magic = f.read(8)
    stats: dict = {"file_bytes": os.path.getsize(path), "magic": magic.decode("ascii", "replace")}
    if magic == bm25_mod.BM25_MAGIC:
        ix = bm25_mod.load_bm25(path)
        stats.update(type="bm25", vocab_size=ix.vocab_size, passages=len(ix),
                     avg_doc_length=ix.avg_doc_length, k1=ix.k1, b=ix.b,
                     distinct_dims=len(ix.postings))
    else:
        ix = load_index(path)
        if isinstance(ix, BotIndex):
            nnz = sum(len(d) for d in ix.bot_dims)
            stats.update(type="bot", vocab_size=ix.vocab_size, passages=len(ix),
                         total_postings=nnz,
                         avg_nnz=(nnz / len(ix) if len(ix) else 0.0),
                         distinct_dims=len(ix.postings))
        else:
            nnz = sum(len(d) for d in ix.vec_dims)
            stats.update(type="param", vocab_size=ix.vocab_size, passages=len(ix),
                         total_postings=nnz,
                         avg_nnz=(nnz / len(ix) if len(ix) else 0.0),
                         distinct_dims=len(ix.postings))
    sys.stdout.write(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return 0


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semidx",
                                     description="semi-parametric sparse retrieval engine")
    parser.add_argument("--workdir", default=os.environ.get("SIDR_WORKDIR", "."),
                        help="base directory for relative paths (default: $SIDR_WORKDIR or .)")
    parser.add_argument("--config", help="key=value config file with one section per command")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="build and persist an index")
    p.add_argument("--type", choices=["bot", "param", "bm25"])
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", choices=["toy", "file"])
    p.add_argument("--params")
    p.add_argument("--embeddings")
    p.add_argument("--k-doc", type=int, dest="k_doc")
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("search", help="run a search pipeline over a prepared index")
    p.add_argument("--pipeline", choices=["full", "beta", "late", "bm25"])
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="queries JSONL; '-' reads stdin")
    p.add_argument("--topk", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--query-tf", action="store_true", default=None, dest="query_tf",
                   help="honor query term multiplicity for the bm25 pipeline")
    p.add_argument("--provider", choices=["toy", "file"])
    p.add_argument("--params")
    p.add_argument("--embeddings")
    p.add_argument("--doc-embeddings", dest="doc_embeddings",
                   help="file-backed store for the late-stage passage encoder")
    p.add_argument("--vocab")
    p.add_argument("--k-query", type=int, dest="k_query")
    p.add_argument("--out")
    p.add_argument("--ledger")
    p.add_argument("--workers", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--include-zeros", action="store_true", default=None,
                   dest="include_zeros")
    p.add_argument("--no-cache", action="store_true", default=None, dest="no_cache",
                   help="disable the per-run passage embedding cache (late pipeline)")
    p.add_argument("--save-cache", dest="save_cache",
                   help="persist re-ranked passage embeddings to this store file")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score results against answers or qrels")
    p.add_argument("--metric", choices=["top-k", "mrr", "ndcg"])
    p.add_argument("--results")
    p.add_argument("--queries")
    p.add_argument("--corpus")
    p.add_argument("--qrels")
    p.add_argument("--k")
    p.add_argument("--ndcg-gain", choices=["exp", "linear"], dest="ndcg_gain")
    p.add_argument("--ablation", choices=list(ABLATION_VARIANTS))
    p.add_argument("--vocab")
    p.add_argument("--provider", choices=["toy", "file"])
    p.add_argument("--params")
    p.add_argument("--embeddings")
    p.add_argument("--topk", type=int)
    p.add_argument("--k-doc", type=int, dest="k_doc")
    p.add_argument("--k-query", type=int, dest="k_query")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="train the toy encoder at desk scale")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--heldout")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--k-doc", type=int, dest="k_doc")
    p.add_argument("--k-query", type=int, dest="k_query")
    p.add_argument("--miner-m", type=int, dest="miner_m",
                   help="mine negatives from the top-m (0 disables the miner)")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("mine-negatives", help="mine one negative per query")
    p.add_argument("--index", required=True)
    p.add_argument("--vocab")
    p.add_argument("--queries", required=True)
    p.add_argument("--provider", choices=["toy", "file"])
    p.add_argument("--params")
    p.add_argument("--embeddings")
    p.add_argument("--k-query", type=int, dest="k_query")
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mine_negatives)

    p = sub.add_parser("bench", help="measure per-stage latency")
    p.add_argument("--stage", help="comma list of stages or 'all'")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--queries")
    p.add_argument("--params")
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--k-doc", type=int, dest="k_doc")
    p.add_argument("--k-query", type=int, dest="k_query")
    p.add_argument("--m", type=int)
    p.add_argument("--topk", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--index-type", choices=["bot", "param"], dest="index_type")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="dump index statistics")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _resolve(args)
        return args.func(args)
    except EngineError as e:
        print(f"semidx: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Retrieval quality metrics and representation-variant ablation drivers.

Answer matching uses one normalization rule everywhere (here and in the
negative miner): lowercase, collapse runs of whitespace, then exact
substring containment.  Divergent rules would silently skew accuracy and
mining against each other.
"""

from __future__ import annotations

import math
from typing import Iterable

from .encoder import binarize, lex_mask
from .errors import ContractError, FormatError
from .index import (Passage, RankedList, build_bot_index, build_param_index,
                    search_bot, search_param)
from .pipelines import Query
from .sparsevec import as_sparse, bot_encode
from .vocab import Vocabulary, tokenize

ABLATION_VARIANTS = ("full", "beta", "lex_doc", "bin_doc", "lex_query", "bin_query",
                     "bot_overlap")


def normalize_match_text(s: str) -> str:
    """Lowercase and collapse whitespace; the shared answer-matching rule."""
    return " ".join(s.lower().split())


def contains_answer(content: str, answers: Iterable[str]) -> bool:
    haystack = normalize_match_text(content)
    return any(normalize_match_text(a) in haystack for a in answers if a)


def topk_accuracy(results: dict[str, RankedList], queries: list[Query],
                  contents: dict[str, str], k: int) -> float:
    """Fraction of queries whose top-k holds a passage containing an answer."""
    if not queries:
        raise ContractError("topk_accuracy needs at least one query")
    hits = 0
    for q in queries:
        if not q.answers:
            raise FormatError(f"query {q.id!r} carries no answer strings")
        ranking = results.get(q.id)
        if ranking is None:
            raise FormatError(f"no result row for query {q.id!r}")
        for pid, _ in ranking[:k]:
            if pid not in contents:
                raise FormatError(f"result for query {q.id!r} names unknown passage {pid!r}")
            if contains_answer(contents[pid], q.answers):
                hits += 1
                break
    return hits / len(queries)


Qrels = dict[str, dict[str, int]]


def read_qrels_tsv(path) -> Qrels:
    """Tab-separated: query_id <tab> passage_id <tab> grade."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, pid, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise FormatError(f"{path}:{lineno}: negative grade")
            qrels.setdefault(qid, {})[pid] = g
    return qrels


def _check_known(results: dict[str, RankedList], qrels: Qrels) -> None:
    for qid in results:
        if qid not in qrels:
            raise FormatError(f"results contain unknown query {qid!r}")


def mrr_at_10(results: dict[str, RankedList], qrels: Qrels) -> float:
    """Mean reciprocal rank of the first relevant passage within the top 10."""
    _check_known(results, qrels)
    if not results:
        raise ContractError("mrr_at_10 needs at least one result row")
    total = 0.0
    for qid, ranking in results.items():
        graded = qrels[qid]
        for rank, (pid, _) in enumerate(ranking[:10], start=1):
            if graded.get(pid, 0) > 0:
                total += 1.0 / rank
                break
    return total / len(results)


def ndcg_at_10(results: dict[str, RankedList], qrels: Qrels,
               gain: str = "exp") -> float:
    value, _ = ndcg_at_10_with_counts(results, qrels, gain)
    return value


def ndcg_at_10_with_counts(results: dict[str, RankedList], qrels: Qrels,
                           gain: str = "exp") -> tuple[float, int]:
    """NDCG@10 with 2^rel - 1 gains (or linear) and log2 rank discounts.
    Queries whose ideal gain is zero are skipped; the count is returned."""
    if gain not in ("exp", "linear"):
        raise ContractError(f"unknown gain {gain!r}")
    _check_known(results, qrels)
    if not results:
        raise ContractError("ndcg_at_10 needs at least one result row")

    def g(rel: int) -> float:
        return float(2 ** rel - 1) if gain == "exp" else float(rel)

    total, scored, skipped = 0.0, 0, 0
    for qid, ranking in results.items():
        graded = qrels[qid]
        ideal = sorted((r for r in graded.values() if r > 0), reverse=True)[:10]
        idcg = sum(g(r) / math.log2(i + 1) for i, r in enumerate(ideal, start=1))
        if idcg == 0.0:
            skipped += 1
            continue
        dcg = sum(g(graded.get(pid, 0)) / math.log2(rank + 1)
                  for rank, (pid, _) in enumerate(ranking[:10], start=1))
        total += dcg / idcg
        scored += 1
    return (total / scored if scored else 0.0), skipped


# --- ablation drivers -----------------------------------------------------


class _DocVariantProvider:
    """Wraps a base provider and reshapes the passage-side representation."""

    def __init__(self, base, vocab: Vocabulary, variant: str):
        self.base = base
        self.vocab = vocab
        self.variant = variant

    @property
    def vocab_size(self) -> int:
        return self.base.vocab_size

    def encode(self, item_id: str, text: str):
        vec = self.base.encode(item_id, text)
        if self.variant == "lex_doc":
            bot = bot_encode(tokenize(self.vocab, text), self.vocab.size)
            masked = lex_mask(vec, bot)
            assert set(masked.dims) <= set(bot.dims)
            return masked
        if self.variant == "bin_doc":
            return binarize(vec)
        return vec


def ablation_query_vec(variant: str, provider, vocab: Vocabulary, q: Query):
    vec = provider.encode(q.id, q.text)
    if variant == "lex_query":
        return lex_mask(vec, bot_encode(tokenize(vocab, q.text), vocab.size))
    if variant == "bin_query":
        return binarize(vec)
    if variant == "bot_overlap":
        return as_sparse(bot_encode(tokenize(vocab, q.text), vocab.size))
    return vec


def run_ablation(variant: str, corpus: list[Passage], vocab: Vocabulary, provider,
                 queries: list[Query], topk: int, ks: tuple[int, ...] = (1, 5, 20),
                 k_doc: int = 768) -> dict:
    """Wire the representation pairing for the named variant and report
    answer-based top-k accuracy at each requested cutoff."""
    if variant not in ABLATION_VARIANTS:
        raise ContractError(f"unknown ablation variant {variant!r}")
    doc_side_param = variant in ("full", "lex_doc", "bin_doc")
    if doc_side_param:
        doc_provider = _DocVariantProvider(provider, vocab, variant)
        ix = build_param_index(corpus, doc_provider, k_doc=k_doc)
        search = lambda vec: search_param(ix, vec, topk)
    else:
        ix = build_bot_index(corpus, vocab)
        search = lambda vec: search_bot(ix, vec, topk)
    results: dict[str, RankedList] = {}
    for q in queries:
        results[q.id] = search(ablation_query_vec(variant, provider, vocab, q))
    contents = {p.id: p.content for p in corpus}
    metrics = {"variant": variant,
               "accuracy": {f"top{k}": topk_accuracy(results, queries, contents, k)
                            for k in ks}}
    return {"metrics": metrics, "results": results}

"""End-to-end search pipelines and embedding cost accounting.

Three pipelines share one query surface:

  full  — encode the query, score against the parametric index.
  beta  — encode the query, score against the bag-of-tokens index.
  late  — beta search for top-m candidates, embed those candidates on the
          fly, and re-rank them by the parametric inner product.  Re-rank
          scores replace stage-1 scores; results are always a subset of the
          stage-1 candidates (no backfill).

Every query is processed independently; batch size and worker count are
throughput knobs with no effect on results.  The CostLedger counts text
chunks pushed through the neural encoder, the currency of indexing cost.
"""

from __future__ import annotations

import json
import sys
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

from .encoder import quantize_f32
from .errors import BuildError, ContractError, FormatError
from .index import BotIndex, ParamIndex, RankedList, search_bot, search_param
from .sparsevec import dot


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    answers: tuple[str, ...] = ()


@dataclass(frozen=True)
class RerankConfig:
    m: int
    cache_passage_embeddings: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ContractError("rerank candidate count m must be >= 1")


@dataclass
class CostLedger:
    query_embeds: int = 0
    passage_embeds: int = 0
    distinct_passage_embeds: int = 0
    _seen: set = field(default_factory=set, repr=False)

    def count_query(self) -> None:
        self.query_embeds += 1

    def count_passage(self, passage_id: str) -> None:
        self.passage_embeds += 1
        self._seen.add(passage_id)
        self.distinct_passage_embeds = len(self._seen)

    def to_dict(self) -> dict:
        return {"query_embeds": self.query_embeds,
                "passage_embeds": self.passage_embeds,
                "distinct_passage_embeds": self.distinct_passage_embeds}


def read_queries_jsonl(path) -> list[Query]:
    """JSON lines {id, query, answers?}; '-' reads from stdin."""
    if str(path) == "-":
        lines = sys.stdin.read().splitlines()
        source = "<stdin>"
    else:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
        source = str(path)
    queries = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{source}:{lineno}: invalid JSON: {e}") from None
        try:
            answers = tuple(str(a) for a in obj.get("answers", []))
            queries.append(Query(id=str(obj["id"]), text=str(obj["query"]), answers=answers))
        except KeyError as e:
            raise FormatError(f"{source}:{lineno}: missing field {e}") from None
    return queries


def write_results_jsonl(results: dict[str, RankedList], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, ranking in results.items():
            obj = {"query_id": qid,
                   "ranking": [{"passage_id": pid, "score": score} for pid, score in ranking]}
            f.write(json.dumps(obj) + "\n")


def read_results_jsonl(path) -> dict[str, RankedList]:
    results: dict[str, RankedList] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                results[str(obj["query_id"])] = [(str(e["passage_id"]), float(e["score"]))
                                                 for e in obj["ranking"]]
            except (json.JSONDecodeError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: bad results record: {e}") from None
    return results


def write_ledger_json(ledger: CostLedger, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(ledger.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def _encode_query(provider, q: Query, ledger: CostLedger):
    try:
        vec = provider.encode(q.id, q.text)
    except Exception as e:
        raise BuildError(f"encoder failed for query {q.id!r}: {e}") from e
    ledger.count_query()
    return vec


def _map_queries(fn, queries, batch_size, workers):
    """Apply fn per query; chunking and threading never change the output."""
    out = []
    step = batch_size if batch_size and batch_size > 0 else len(queries) or 1
    for start in range(0, len(queries), step):
        chunk = queries[start:start + step]
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                out.extend(pool.map(fn, chunk))
        else:
            out.extend(fn(q) for q in chunk)
    return out


def run_full(queries: list[Query], ix: ParamIndex, provider, topk: int,
             include_zeros: bool = False, batch_size: int | None = None,
             workers: int = 1) -> tuple[dict[str, RankedList], CostLedger]:
    ledger = CostLedger()
    ledger.passage_embeds = ix.embed_calls  # the datastore was embedded at build
    vecs = [_encode_query(provider, q, ledger) for q in queries]
    rankings = _map_queries(
        lambda iq: search_param(ix, vecs[iq], topk, include_zeros),
        list(range(len(queries))), batch_size, workers)
    return {q.id: r for q, r in zip(queries, rankings)}, ledger


def run_beta(queries: list[Query], ix: BotIndex, provider, topk: int,
             include_zeros: bool = False, batch_size: int | None = None,
             workers: int = 1) -> tuple[dict[str, RankedList], CostLedger]:
    ledger = CostLedger()
    vecs = [_encode_query(provider, q, ledger) for q in queries]
    rankings = _map_queries(
        lambda iq: search_bot(ix, vecs[iq], topk, include_zeros),
        list(range(len(queries))), batch_size, workers)
    return {q.id: r for q, r in zip(queries, rankings)}, ledger


def run_late(queries: list[Query], bot_ix: BotIndex, provider, cfg: RerankConfig,
             topk: int, include_zeros: bool = False, batch_size: int | None = None,
             workers: int = 1, cache_out: dict | None = None, doc_provider=None
             ) -> tuple[dict[str, RankedList], CostLedger]:
    """Beta-search top-m candidates, embed them, re-rank by f(V(q), V(p)).

    The query and passage encoder slots are separate; by default the same
    provider serves both, and passing doc_provider pairs the first stage
    with any other second-stage model (typically file-backed embeddings).
    With cache_out given (requires caching enabled), the per-run passage
    embedding cache is copied into it after the run, ready to persist as an
    embedding store for later runs.
    """
    if cache_out is not None and not cfg.cache_passage_embeddings:
        raise ContractError("cache_out requires cache_passage_embeddings")
    if doc_provider is None:
        doc_provider = provider
    ledger = CostLedger()
    cache: dict[str, Future] = {}
    lock = threading.Lock()

    def encode_one(pid: str, ordinal: int):
        try:
            vec = doc_provider.encode(pid, bot_ix.content(ordinal))
        except Exception as e:
            raise BuildError(f"encoder failed for passage {pid!r}: {e}") from e
        vec = quantize_f32(vec)
        with lock:
            ledger.count_passage(pid)
        return vec

    def embed_passage(ordinal: int):
        pid = bot_ix.passage_ids[ordinal]
        if not cfg.cache_passage_embeddings:
            return encode_one(pid, ordinal)
        with lock:
            fut = cache.get(pid)
            owner = fut is None
            if owner:
                fut = cache[pid] = Future()
        if owner:
            try:
                fut.set_result(encode_one(pid, ordinal))
            except BaseException as e:
                fut.set_exception(e)
        return fut.result()

    qvecs = [_encode_query(provider, q, ledger) for q in queries]

    def one(iq: int) -> RankedList:
        candidates = search_bot(bot_ix, qvecs[iq], cfg.m, include_zeros)
        scored = []
        for pid, _ in candidates:
            ordinal = bot_ix.ordinal_of(pid)
            pvec = embed_passage(ordinal)
            scored.append((ordinal, dot(qvecs[iq], pvec)))
        scored.sort(key=lambda t: (-t[1], t[0]))
        out: RankedList = []
        for ordinal, s in scored:
            if s == 0.0 and not include_zeros:
                continue
            out.append((bot_ix.passage_ids[ordinal], s))
            if len(out) == topk:
                break
        return out

    rankings = _map_queries(one, list(range(len(queries))), batch_size, workers)
    if cache_out is not None:
        cache_out.update({pid: fut.result() for pid, fut in cache.items()})
    return {q.id: r for q, r in zip(queries, rankings)}, ledger

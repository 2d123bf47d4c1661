"""Stage-decomposed latency measurement.

Each stage runs 10 times; the maximum and minimum samples are dropped and
the mean of the remaining 8 is reported.  Timers wrap pure compute only:
inputs are materialized before the clock starts and nothing is written
inside a timed section.  Absolute numbers are hardware-bound; the useful
outputs are the per-stage ordering and throughput ratios.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import ContractError, UsageError
from .index import BotIndex, ParamIndex, search_bot, search_param
from .vocab import Vocabulary, tokenize

STAGES = ("tokenize_corpus", "embed_corpus", "embed_queries", "score", "rerank_embed")
STAGE_LABELS = {"tokenize_corpus": "T(D)", "embed_corpus": "E(D)",
                "embed_queries": "E(q)", "score": "f(q,D)", "rerank_embed": "E(p)"}
REPETITIONS = 10
TRIM_RULE = "drop max and min, mean of the rest"


@dataclass
class StageReport:
    stage: str
    samples: list[float]
    trimmed_samples: list[float]
    mean_seconds: float
    items: int
    items_per_sec: float
    peak_memory_bytes: int
    corpus_fingerprint: str
    repetitions: int = REPETITIONS
    trim_rule: str = TRIM_RULE
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "samples": self.samples,
                "trimmed_samples": self.trimmed_samples, "mean_seconds": self.mean_seconds,
                "items": self.items, "items_per_sec": self.items_per_sec,
                "peak_memory_bytes": self.peak_memory_bytes,
                "corpus_fingerprint": self.corpus_fingerprint,
                "repetitions": self.repetitions, "trim_rule": self.trim_rule,
                **self.extra}


def corpus_fingerprint(passages) -> str:
    h = hashlib.sha256()
    for p in passages:
        h.update(p.id.encode("utf-8"))
        h.update(b"\x00")
        h.update(p.content.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()[:16]


def trimmed_mean(samples: list[float]) -> tuple[list[float], float]:
    if len(samples) < 3:
        raise ContractError("trimmed mean needs at least three samples")
    ordered = sorted(samples)
    trimmed = ordered[1:-1]
    return trimmed, sum(trimmed) / len(trimmed)


def _measure(fn, items: int, stage: str, fingerprint: str, extra=None) -> StageReport:
    samples = []
    for _ in range(REPETITIONS):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    trimmed, mean = trimmed_mean(samples)
    tracemalloc.start()
    fn()
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    return StageReport(stage=stage, samples=samples, trimmed_samples=trimmed,
                       mean_seconds=mean, items=items,
                       items_per_sec=(items / mean if mean > 0 else float("inf")),
                       peak_memory_bytes=int(peak), corpus_fingerprint=fingerprint,
                       extra=extra or {})


def bench_stage(stage: str, *, passages=None, vocab: Vocabulary | None = None,
                provider=None, queries=None, bot_index: BotIndex | None = None,
                param_index: ParamIndex | None = None, m: int = 20, topk: int = 10,
                workers: int = 1) -> StageReport:
    """Measure one pipeline stage under the 10-run trimmed-mean protocol."""
    if stage not in STAGES:
        raise UsageError(f"unknown bench stage {stage!r}; choose from {', '.join(STAGES)}")

    if stage == "tokenize_corpus":
        if passages is None or vocab is None:
            raise UsageError("tokenize_corpus needs a corpus and a vocabulary")
        contents = [p.content for p in passages]
        fp = corpus_fingerprint(passages)
        return _measure(lambda: [tokenize(vocab, c) for c in contents],
                        len(contents), stage, fp)

    if stage == "embed_corpus":
        if passages is None or provider is None:
            raise UsageError("embed_corpus needs a corpus and a provider")
        pairs = [(p.id, p.content) for p in passages]
        fp = corpus_fingerprint(passages)
        return _measure(lambda: [provider.encode(pid, c) for pid, c in pairs],
                        len(pairs), stage, fp)

    if stage == "embed_queries":
        if queries is None or provider is None:
            raise UsageError("embed_queries needs queries and a provider")
        pairs = [(q.id, q.text) for q in queries]
        return _measure(lambda: [provider.encode(qid, t) for qid, t in pairs],
                        len(pairs), stage, fingerprint_of_queries(queries))

    if stage == "score":
        ix = param_index if param_index is not None else bot_index
        if ix is None or queries is None or provider is None:
            raise UsageError("score needs an index, queries, and a provider")
        vecs = [provider.encode(q.id, q.text) for q in queries]
        search = search_param if param_index is not None else search_bot
        fp = hashlib.sha256(",".join(ix.passage_ids).encode()).hexdigest()[:16]

        def sequential():
            return [search(ix, v, topk) for v in vecs]

        if workers > 1:
            def parallel():
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    return list(pool.map(lambda v: search(ix, v, topk), vecs))
            if parallel() != sequential():
                raise ContractError("parallel search diverged from sequential results")
            return _measure(parallel, len(vecs), stage, fp, extra={"workers": workers})
        return _measure(sequential, len(vecs), stage, fp)

    # rerank_embed: embed each query's stage-1 candidate set
    if bot_index is None or queries is None or provider is None:
        raise UsageError("rerank_embed needs a bag-of-tokens index, queries, and a provider")
    vecs = [provider.encode(q.id, q.text) for q in queries]
    candidate_sets = [search_bot(bot_index, v, m) for v in vecs]
    jobs = [(pid, bot_index.content(bot_index.ordinal_of(pid)))
            for cands in candidate_sets for pid, _ in cands]
    fp = hashlib.sha256(",".join(bot_index.passage_ids).encode()).hexdigest()[:16]
    return _measure(lambda: [provider.encode(pid, c) for pid, c in jobs],
                    len(jobs), stage, fp, extra={"m": m})


def fingerprint_of_queries(queries) -> str:
    h = hashlib.sha256()
    for q in queries:
        h.update(q.id.encode("utf-8"))
        h.update(b"\x00")
        h.update(q.text.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()[:16]


def write_report_json(reports: list[StageReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump([r.to_dict() for r in reports], f, indent=2)
        f.write("\n")


def write_stage_table_csv(reports: list[StageReport], path) -> None:
    """Delimited pivot: one column per pipeline stage, one row of trimmed
    means (seconds) and one of throughputs."""
    by_stage = {r.stage: r for r in reports}
    cols = [s for s in STAGES if s in by_stage]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row"] + [STAGE_LABELS[s] for s in cols])
        w.writerow(["mean_seconds"] + [repr(by_stage[s].mean_seconds) for s in cols])
        w.writerow(["items_per_sec"] + [repr(by_stage[s].items_per_sec) for s in cols])

"""BM25 term-weighting baseline over any vocabulary.

Uses the Lucene-flavored formulation: idf(t) = ln(1 + (N - df + 0.5) /
(df + 0.5)), which is non-negative, and tf saturation tf*(k1+1) /
(tf + k1*(1 - b + b*len/avglen)).  Defaults k1=0.9, b=0.4; pass 1.2/0.75
for the classic parameterization.  Query terms score once each regardless
of multiplicity (set semantics) unless query_tf is enabled.

Because the tokenizer is an argument, the same index machinery covers both
word-level vocabularies and the sub-word vocabulary shared with the neural
path, which makes controlled weighting/expansion comparisons possible.
"""

from __future__ import annotations

import math
import struct
from typing import Iterable

import numpy as np

from .errors import BuildError, ContractError, FormatError
from .index import (BM25_MAGIC, INDEX_VERSION, RankedList, Passage, _Reader,
                    _read_id_table, _write_id_table, rank_from_scores)
from .vocab import TokenSeq, Vocabulary, tokenize


class Bm25Index:
    def __init__(self, vocab_size: int, passage_ids: list[str], titles: list[str],
                 texts: list[str], doc_lengths: np.ndarray,
                 postings: dict[int, tuple[np.ndarray, np.ndarray]],
                 k1: float = 0.9, b: float = 0.4):
        if len(passage_ids) == 0:
            raise BuildError("BM25 index requires a non-empty corpus")
        self.vocab_size = vocab_size
        self.passage_ids = passage_ids
        self.titles = titles
        self.texts = texts
        self.doc_lengths = doc_lengths.astype(np.float64)
        self.postings = postings  # dim -> (ordinals, term frequencies)
        self.k1 = float(k1)
        self.b = float(b)
        self.avg_doc_length = float(self.doc_lengths.sum() / len(passage_ids))

    def __len__(self) -> int:
        return len(self.passage_ids)

    def doc_frequency(self, dim: int) -> int:
        entry = self.postings.get(dim)
        return 0 if entry is None else len(entry[0])

    def idf(self, dim: int) -> float:
        n = len(self)
        df = self.doc_frequency(dim)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def build_bm25(corpus: Iterable[Passage], vocab: Vocabulary,
               k1: float = 0.9, b: float = 0.4) -> Bm25Index:
    passages = list(corpus)
    if not passages:
        raise BuildError("cannot build BM25 over an empty corpus")
    seen: dict[str, int] = {}
    for i, p in enumerate(passages):
        if p.id in seen:
            raise BuildError(f"duplicate passage id {p.id!r} (records {seen[p.id]} and {i})")
        seen[p.id] = i
    lengths = np.zeros(len(passages), dtype=np.uint32)
    ords: dict[int, list[int]] = {}
    tfs: dict[int, list[int]] = {}
    for ordinal, p in enumerate(passages):
        seq = tokenize(vocab, p.content)
        lengths[ordinal] = len(seq)
        counts: dict[int, int] = {}
        for t in seq.ids:
            counts[t] = counts.get(t, 0) + 1
        for t in sorted(counts):
            ords.setdefault(t, []).append(ordinal)
            tfs.setdefault(t, []).append(counts[t])
    postings = {d: (np.asarray(ords[d], dtype=np.int64),
                    np.asarray(tfs[d], dtype=np.float64)) for d in ords}
    return Bm25Index(vocab.size, [p.id for p in passages], [p.title for p in passages],
                     [p.text for p in passages], lengths, postings, k1, b)


def score_bm25(ix: Bm25Index, q: TokenSeq, topk: int, query_tf: bool = False,
               include_zeros: bool = False) -> RankedList:
    """Sum of per-term saturated tf*idf contributions over matched documents."""
    scores = np.zeros(len(ix), dtype=np.float64)
    norm = ix.k1 * (1.0 - ix.b + ix.b * ix.doc_lengths / ix.avg_doc_length)
    counts: dict[int, int] = {}
    for t in q.ids:
        counts[t] = counts.get(t, 0) + 1
    for t in sorted(counts):
        entry = ix.postings.get(t)
        if entry is None:
            continue
        ordinals, tf = entry
        idf = ix.idf(t)
        contrib = idf * tf * (ix.k1 + 1.0) / (tf + norm[ordinals])
        if query_tf:
            contrib = contrib * counts[t]
        scores[ordinals] += contrib
    return rank_from_scores(ix.passage_ids, scores, topk, include_zeros)


def save_bm25(ix: Bm25Index, path) -> None:
    with open(path, "wb") as f:
        f.write(BM25_MAGIC)
        f.write(struct.pack("<III", INDEX_VERSION, ix.vocab_size, len(ix)))
        _write_id_table(f, ix.passage_ids, ix.titles, ix.texts)
        f.write(struct.pack("<dd", ix.k1, ix.b))
        f.write(ix.doc_lengths.astype("<u4").tobytes())
        dims = sorted(ix.postings)
        f.write(struct.pack("<I", len(dims)))
        for d in dims:
            ordinals, tf = ix.postings[d]
            f.write(struct.pack("<II", d, len(ordinals)))
            f.write(ordinals.astype("<u4").tobytes())
            f.write(tf.astype("<u4").tobytes())


def load_bm25(path) -> Bm25Index:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != BM25_MAGIC:
        raise FormatError(f"unrecognized BM25 magic in {path}")
    r = _Reader(data, path)
    r.off = 8
    version, vocab_size, count = r.take("<III")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version} in {path}")
    ids, titles, texts = _read_id_table(r, count)
    k1, b = r.take("<dd")
    lengths = r.take_array("<u4", count).copy()
    (n_dims,) = r.take("<I")
    postings: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    prev = -1
    for _ in range(n_dims):
        d, length = r.take("<II")
        if d <= prev:
            raise FormatError(f"postings dims not ascending in {path}")
        prev = d
        ordinals = r.take_array("<u4", length).astype(np.int64)
        tf = r.take_array("<u4", length).astype(np.float64)
        if (tf < 1).any():
            raise FormatError(f"term frequency below 1 in {path}")
        postings[d] = (ordinals, tf)
    if r.off != len(data):
        raise FormatError(f"trailing bytes in index file {path}")
    return Bm25Index(vocab_size, ids, titles, texts, lengths, postings, k1, b)


def check_vocab_compatible(ix: Bm25Index, vocab: Vocabulary) -> None:
    if ix.vocab_size != vocab.size:
        raise ContractError("BM25 index and vocabulary disagree on vocab size")

"""Build, persist, load, and search the two index types.

BotIndex stores, per passage, the binary set of token dimensions produced by
the tokenizer alone.  ParamIndex stores encoder-weighted sparse vectors.
Both keep dim-major postings for scoring and are immutable once built.

Search is term-at-a-time: query dimensions are visited in ascending order
and each posting adds into a float64 accumulator, so scores are bit-for-bit
equal to a dense inner product evaluated dimension-by-dimension.  Ranking
sorts by descending score with ties broken by ascending passage ordinal.

File framing (little-endian) is shared by every index type:

    magic[8] | u32 version | u32 vocab_size | u32 passage_count
    per passage: u16 id_len + id | u32 title_len + title | u32 text_len + text
    u32 n_dims, then per dim: u32 dim | u32 len | len x u32 ordinals
        (+ len x f32 weights for the parametric index,
         + len x u32 term frequencies for the BM25 index)

Passage title and text travel inside the index file so that negative mining
and external readers need no side channel back to the corpus.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .encoder import quantize_f32
from .errors import BuildError, ContractError, FormatError
from .sparsevec import BotVec, SparseVec
from .vocab import Vocabulary, tokenize

BOT_MAGIC = b"SIDRBOT1"
PAR_MAGIC = b"SIDRPAR1"
BM25_MAGIC = b"SIDRB251"
INDEX_VERSION = 1

RankedList = list[tuple[str, float]]


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str

    @property
    def content(self) -> str:
        return self.title + " " + self.text


def read_corpus_jsonl(path) -> list[Passage]:
    """One JSON object per line with fields id, title, text."""
    passages = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {e}") from None
            try:
                passages.append(Passage(id=str(obj["id"]), title=str(obj.get("title", "")),
                                        text=str(obj["text"])))
            except KeyError as e:
                raise FormatError(f"{path}:{lineno}: missing field {e}") from None
    return passages


def write_corpus_jsonl(passages: Iterable[Passage], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in passages:
            f.write(json.dumps({"id": p.id, "title": p.title, "text": p.text}) + "\n")


class BotIndex:
    def __init__(self, vocab_size: int, passage_ids: list[str], titles: list[str],
                 texts: list[str], bot_dims: list[np.ndarray]):
        self.vocab_size = vocab_size
        self.passage_ids = passage_ids
        self.titles = titles
        self.texts = texts
        self.bot_dims = bot_dims  # per passage, ascending uint32
        self.postings = _postings_from_rows(bot_dims)
        self._ordinal = {pid: i for i, pid in enumerate(passage_ids)}

    def __len__(self) -> int:
        return len(self.passage_ids)

    def ordinal_of(self, passage_id: str) -> int:
        return self._ordinal[passage_id]

    def content(self, ordinal: int) -> str:
        return self.titles[ordinal] + " " + self.texts[ordinal]

    def bot_vec(self, ordinal: int) -> BotVec:
        return BotVec(tuple(int(d) for d in self.bot_dims[ordinal]), self.vocab_size)


class ParamIndex:
    def __init__(self, vocab_size: int, passage_ids: list[str], titles: list[str],
                 texts: list[str], vec_dims: list[np.ndarray], vec_weights: list[np.ndarray],
                 embed_calls: int):
        self.vocab_size = vocab_size
        self.passage_ids = passage_ids
        self.titles = titles
        self.texts = texts
        self.vec_dims = vec_dims          # per passage, ascending uint32
        self.vec_weights = vec_weights    # per passage, float64 on the f32 grid
        self.embed_calls = embed_calls
        self.postings = _weighted_postings_from_rows(vec_dims, vec_weights)
        self._ordinal = {pid: i for i, pid in enumerate(passage_ids)}

    def __len__(self) -> int:
        return len(self.passage_ids)

    def ordinal_of(self, passage_id: str) -> int:
        return self._ordinal[passage_id]

    def sparse_vec(self, ordinal: int) -> SparseVec:
        return SparseVec(tuple(int(d) for d in self.vec_dims[ordinal]),
                         tuple(float(w) for w in self.vec_weights[ordinal]),
                         self.vocab_size)


def _postings_from_rows(rows: list[np.ndarray]) -> dict[int, np.ndarray]:
    lists: dict[int, list[int]] = {}
    for ordinal, dims in enumerate(rows):
        for d in dims:
            lists.setdefault(int(d), []).append(ordinal)
    return {d: np.asarray(ords, dtype=np.int64) for d, ords in lists.items()}


def _weighted_postings_from_rows(rows, weight_rows) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    ords: dict[int, list[int]] = {}
    wts: dict[int, list[float]] = {}
    for ordinal, (dims, weights) in enumerate(zip(rows, weight_rows)):
        for d, w in zip(dims, weights):
            ords.setdefault(int(d), []).append(ordinal)
            wts.setdefault(int(d), []).append(float(w))
    return {d: (np.asarray(ords[d], dtype=np.int64), np.asarray(wts[d], dtype=np.float64))
            for d in ords}


def _check_unique_ids(passages: list[Passage]) -> None:
    seen: dict[str, int] = {}
    for i, p in enumerate(passages):
        if p.id in seen:
            raise BuildError(f"duplicate passage id {p.id!r} (records {seen[p.id]} and {i})")
        seen[p.id] = i


def build_bot_index(corpus: Iterable[Passage], vocab: Vocabulary) -> BotIndex:
    passages = list(corpus)
    _check_unique_ids(passages)
    rows = []
    for p in passages:
        seq = tokenize(vocab, p.content)
        rows.append(np.asarray(sorted(set(seq.ids)), dtype=np.uint32))
    return BotIndex(vocab.size, [p.id for p in passages], [p.title for p in passages],
                    [p.text for p in passages], rows)


def build_param_index(corpus: Iterable[Passage], provider, k_doc: int = 768) -> ParamIndex:
    """Embed every passage through the provider; weights land on the f32 grid."""
    passages = list(corpus)
    _check_unique_ids(passages)
    vec_dims, vec_weights = [], []
    calls = 0
    for p in passages:
        try:
            vec = provider.encode(p.id, p.content)
        except Exception as e:
            raise BuildError(f"provider failed for passage {p.id!r}: {e}") from e
        calls += 1
        if vec.vocab_size != provider.vocab_size:
            raise BuildError(f"provider returned mismatched vocab_size for passage {p.id!r}")
        if vec.nnz > k_doc:
            raise BuildError(f"passage {p.id!r}: nnz {vec.nnz} exceeds k_doc {k_doc}")
        for w in vec.weights:
            if w <= 0.0:
                raise BuildError(f"passage {p.id!r}: non-positive weight {w}")
        vec = quantize_f32(vec)
        vec_dims.append(np.asarray(vec.dims, dtype=np.uint32))
        vec_weights.append(np.asarray(vec.weights, dtype=np.float64))
    return ParamIndex(provider.vocab_size, [p.id for p in passages],
                      [p.title for p in passages], [p.text for p in passages],
                      vec_dims, vec_weights, calls)


def rank_from_scores(passage_ids: list[str], scores: np.ndarray, topk: int,
                     include_zeros: bool = False) -> RankedList:
    """Descending score, ties by ascending ordinal; zero scores dropped unless
    include_zeros is set."""
    order = np.argsort(-scores, kind="stable")
    out: RankedList = []
    for ordinal in order:
        s = float(scores[ordinal])
        if s == 0.0 and not include_zeros:
            continue
        out.append((passage_ids[ordinal], s))
        if len(out) == topk:
            break
    return out


def bot_scores(ix: BotIndex, q: SparseVec) -> np.ndarray:
    if q.vocab_size != ix.vocab_size:
        raise ContractError("query and index disagree on vocab_size")
    scores = np.zeros(len(ix), dtype=np.float64)
    for d, w in zip(q.dims, q.weights):
        ords = ix.postings.get(d)
        if ords is not None:
            scores[ords] += w
    return scores


def param_scores(ix: ParamIndex, q: SparseVec) -> np.ndarray:
    if q.vocab_size != ix.vocab_size:
        raise ContractError("query and index disagree on vocab_size")
    scores = np.zeros(len(ix), dtype=np.float64)
    for d, w in zip(q.dims, q.weights):
        entry = ix.postings.get(d)
        if entry is not None:
            ords, wts = entry
            scores[ords] += w * wts
    return scores


def search_bot(ix: BotIndex, q: SparseVec, topk: int, include_zeros: bool = False) -> RankedList:
    return rank_from_scores(ix.passage_ids, bot_scores(ix, q), topk, include_zeros)


def search_param(ix: ParamIndex, q: SparseVec, topk: int,
                 include_zeros: bool = False) -> RankedList:
    return rank_from_scores(ix.passage_ids, param_scores(ix, q), topk, include_zeros)


# --- persistence ---------------------------------------------------------


def _write_id_table(f, ids: list[str], titles: list[str], texts: list[str]) -> None:
    for pid, title, text in zip(ids, titles, texts):
        id_b = pid.encode("utf-8")
        title_b = title.encode("utf-8")
        text_b = text.encode("utf-8")
        if len(id_b) > 0xFFFF:
            raise ContractError(f"passage id {pid!r} longer than 65535 bytes")
        f.write(struct.pack("<H", len(id_b)))
        f.write(id_b)
        f.write(struct.pack("<I", len(title_b)))
        f.write(title_b)
        f.write(struct.pack("<I", len(text_b)))
        f.write(text_b)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, fmt: str):
        try:
            vals = struct.unpack_from(fmt, self.data, self.off)
        except struct.error:
            raise FormatError(f"truncated index file {self.path}") from None
        self.off += struct.calcsize(fmt)
        return vals

    def take_bytes(self, n: int) -> bytes:
        if len(self.data) < self.off + n:
            raise FormatError(f"truncated index file {self.path}")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def take_array(self, dtype, count: int) -> np.ndarray:
        nbytes = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take_bytes(nbytes), dtype=dtype)


def _read_id_table(r: _Reader, count: int):
    ids, titles, texts = [], [], []
    for _ in range(count):
        (id_len,) = r.take("<H")
        ids.append(r.take_bytes(id_len).decode("utf-8"))
        (title_len,) = r.take("<I")
        titles.append(r.take_bytes(title_len).decode("utf-8"))
        (text_len,) = r.take("<I")
        texts.append(r.take_bytes(text_len).decode("utf-8"))
    return ids, titles, texts


def save_index(ix, path) -> None:
    if isinstance(ix, BotIndex):
        magic, weighted = BOT_MAGIC, False
    elif isinstance(ix, ParamIndex):
        magic, weighted = PAR_MAGIC, True
    else:
        raise ContractError(f"cannot save object of type {type(ix).__name__}")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<III", INDEX_VERSION, ix.vocab_size, len(ix)))
        _write_id_table(f, ix.passage_ids, ix.titles, ix.texts)
        dims = sorted(ix.postings)
        f.write(struct.pack("<I", len(dims)))
        for d in dims:
            if weighted:
                ords, wts = ix.postings[d]
            else:
                ords = ix.postings[d]
            f.write(struct.pack("<II", d, len(ords)))
            f.write(ords.astype("<u4").tobytes())
            if weighted:
                f.write(wts.astype("<f4").tobytes())


def load_index(path):
    """Load a BotIndex or ParamIndex; the magic decides which."""
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:8]
    if magic == BOT_MAGIC:
        weighted = False
    elif magic == PAR_MAGIC:
        weighted = True
    else:
        raise FormatError(f"unrecognized index magic {magic!r} in {path}")
    r = _Reader(data, path)
    r.off = 8
    version, vocab_size, count = r.take("<III")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version} in {path}")
    ids, titles, texts = _read_id_table(r, count)
    (n_dims,) = r.take("<I")
    row_dims: list[list[int]] = [[] for _ in range(count)]
    row_wts: list[list[float]] = [[] for _ in range(count)]
    prev_dim = -1
    for _ in range(n_dims):
        d, length = r.take("<II")
        if d <= prev_dim:
            raise FormatError(f"postings dims not ascending in {path}")
        prev_dim = d
        ords = r.take_array("<u4", length)
        if weighted:
            wts = r.take_array("<f4", length).astype(np.float64)
        for i, o in enumerate(ords):
            o = int(o)
            if o >= count:
                raise FormatError(f"ordinal {o} out of range in {path}")
            row_dims[o].append(d)
            if weighted:
                row_wts[o].append(float(wts[i]))
    if r.off != len(data):
        raise FormatError(f"trailing bytes in index file {path}")
    if weighted:
        vec_dims = [np.asarray(ds, dtype=np.uint32) for ds in row_dims]
        vec_weights = [np.asarray(ws, dtype=np.float64) for ws in row_wts]
        for ws in vec_weights:
            if (ws <= 0.0).any():
                raise FormatError(f"non-positive weight in {path}")
        return ParamIndex(vocab_size, ids, titles, texts, vec_dims, vec_weights,
                          embed_calls=count)
    rows = [np.asarray(ds, dtype=np.uint32) for ds in row_dims]
    return BotIndex(vocab_size, ids, titles, texts, rows)

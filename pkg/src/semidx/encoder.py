"""Parametric text encoders producing vocabulary-space sparse vectors.

Two interchangeable providers feed the search pipelines:

  * ToyProvider — a trainable desk-scale encoder.  Per token it computes
    context-free logits (embedding row times projection matrix), applies
    elu1p, max-pools across the sequence, and keeps the top-k dimensions.
  * FileProvider — pre-computed vectors loaded from a binary embeddings
    file, for plugging in any external model.

Passage-side vectors always pass through the float32 persistence grid (see
quantize_f32) so scores do not depend on whether a vector came from a live
encoder or from an index file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError
from .sparsevec import BotVec, SparseVec
from .vocab import TokenSeq, Vocabulary, tokenize

EMB_MAGIC = b"SIDREMB1"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    k_doc: int = 768
    k_query: int = 768

    def __post_init__(self):
        if self.k_doc < 1 or self.k_query < 1:
            raise ContractError("k_doc and k_query must be >= 1")


class ToyEncoderParams:
    """Trainable parameters: embed (|V| x d) and project (d x |V|), float64."""

    def __init__(self, embed: np.ndarray, project: np.ndarray):
        embed = np.asarray(embed, dtype=np.float64)
        project = np.asarray(project, dtype=np.float64)
        if embed.ndim != 2 or project.ndim != 2:
            raise ContractError("embed and project must be matrices")
        if embed.shape[1] != project.shape[0] or embed.shape[0] != project.shape[1]:
            raise ContractError("embed (|V| x d) and project (d x |V|) shapes disagree")
        if not (np.isfinite(embed).all() and np.isfinite(project).all()):
            raise ContractError("parameters must be finite")
        self.embed = embed
        self.project = project

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def dims(self) -> int:
        return self.embed.shape[1]

    @classmethod
    def init(cls, vocab_size: int, d: int, seed: int) -> "ToyEncoderParams":
        """Uniform [-0.5, 0.5] init keeps elu1p in its mixed-branch regime."""
        if d < 1:
            raise ContractError("d must be >= 1")
        rng = np.random.default_rng(seed)
        embed = rng.uniform(-0.5, 0.5, size=(vocab_size, d))
        project = rng.uniform(-0.5, 0.5, size=(d, vocab_size))
        return cls(embed, project)

    def copy(self) -> "ToyEncoderParams":
        return ToyEncoderParams(self.embed.copy(), self.project.copy())

    def save(self, path) -> None:
        np.savez(path, embed=self.embed, project=self.project)

    @classmethod
    def load(cls, path) -> "ToyEncoderParams":
        with np.load(path) as z:
            return cls(z["embed"], z["project"])


def _elu1p_array(x: np.ndarray) -> np.ndarray:
    # exp only sees the negative branch, so large positives cannot overflow
    return np.where(x >= 0.0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def toy_forward_dense(params: ToyEncoderParams, ids) -> np.ndarray:
    """Pooled activations over the full vocabulary, before sparsification."""
    logits = params.embed[list(ids)] @ params.project  # (n, |V|)
    return _elu1p_array(logits).max(axis=0)


def _topk_dense(pooled: np.ndarray, k: int, vocab_size: int) -> SparseVec:
    if k >= pooled.size:
        keep = np.arange(pooled.size)
    else:
        order = np.lexsort((np.arange(pooled.size), -pooled))
        keep = np.sort(order[:k])
    # elu1p is strictly positive, but float64 underflow can round an extreme
    # activation to exactly 0.0; canonical vectors never store those
    keep = [int(d) for d in keep if pooled[d] > 0.0]
    return SparseVec(tuple(keep), tuple(float(pooled[d]) for d in keep), vocab_size)


def toy_encode(params: ToyEncoderParams, seq: TokenSeq, k: int) -> SparseVec:
    """elu1p + max-pool + top-k over context-free per-token logits."""
    if len(seq) == 0:
        raise ContractError("toy_encode requires a non-empty token sequence")
    for i in seq.ids:
        if not 0 <= i < params.vocab_size:
            raise ContractError(f"token id {i} out of range for vocab size {params.vocab_size}")
    if k < 1:
        raise ContractError("k must be >= 1")
    pooled = toy_forward_dense(params, seq.ids)
    return _topk_dense(pooled, k, params.vocab_size)


def lex_mask(v: SparseVec, bot: BotVec) -> SparseVec:
    """Keep only the entries of v whose dimension appears in bot."""
    if v.vocab_size != bot.vocab_size:
        raise ContractError("lex_mask requires matching vocab_size")
    active = set(bot.dims)
    pairs = [(d, w) for d, w in zip(v.dims, v.weights) if d in active]
    return SparseVec(tuple(d for d, _ in pairs), tuple(w for _, w in pairs), v.vocab_size)


def binarize(v: SparseVec) -> SparseVec:
    """Same support, all weights 1.0."""
    return SparseVec(v.dims, (1.0,) * v.nnz, v.vocab_size)


def quantize_f32(v: SparseVec) -> SparseVec:
    """Round weights through float32 (the persisted precision), dropping any
    entry that rounds to zero, so in-memory and loaded vectors agree."""
    w32 = np.asarray(v.weights, dtype=np.float32).astype(np.float64)
    pairs = [(d, w) for d, w in zip(v.dims, w32) if w != 0.0]
    return SparseVec(tuple(d for d, _ in pairs), tuple(float(w) for _, w in pairs), v.vocab_size)


class EmbeddingStore:
    """Read-only id -> SparseVec mapping backed by the embeddings file format."""

    def __init__(self, vocab_size: int, vectors: dict[str, SparseVec]):
        self.vocab_size = vocab_size
        self._vectors = dict(vectors)

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._vectors

    def ids(self):
        return self._vectors.keys()

    def get(self, item_id: str) -> SparseVec:
        try:
            return self._vectors[item_id]
        except KeyError:
            raise ContractError(f"id {item_id!r} not present in embedding store") from None

    def save(self, path) -> None:
        save_embeddings(path, self.vocab_size, self._vectors)

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        vocab_size, vectors = load_embeddings(path)
        return cls(vocab_size, vectors)


def file_encode(store: EmbeddingStore, item_id: str) -> SparseVec:
    return store.get(item_id)


def save_embeddings(path, vocab_size: int, vectors: dict[str, SparseVec]) -> None:
    """Binary, little-endian: magic, u32 vocab_size, u32 count, then per
    record u16 id-length + id bytes + u32 nnz + nnz x (u32 dim, f32 weight)."""
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", vocab_size, len(vectors)))
        for item_id, vec in vectors.items():
            if vec.vocab_size != vocab_size:
                raise ContractError(f"vector for {item_id!r} has mismatched vocab_size")
            vec = quantize_f32(vec)
            id_bytes = item_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ContractError(f"id {item_id!r} longer than 65535 bytes")
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(struct.pack("<I", vec.nnz))
            for d, w in zip(vec.dims, vec.weights):
                f.write(struct.pack("<If", d, w))


def load_embeddings(path) -> tuple[int, dict[str, SparseVec]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != EMB_MAGIC:
        raise FormatError(f"bad embeddings magic in {path}")
    off = 8
    try:
        vocab_size, count = struct.unpack_from("<II", data, off)
        off += 8
        vectors: dict[str, SparseVec] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", data, off)
            off += 2
            if len(data) < off + id_len:
                raise struct.error("truncated id")
            item_id = data[off:off + id_len].decode("utf-8")
            off += id_len
            (nnz,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = []
            weights = []
            prev = -1
            for _ in range(nnz):
                d, w = struct.unpack_from("<If", data, off)
                off += 8
                if d <= prev:
                    raise FormatError(f"dims not ascending for id {item_id!r} in {path}")
                if w <= 0.0:
                    raise FormatError(f"non-positive weight for id {item_id!r} in {path}")
                prev = d
                dims.append(d)
                weights.append(float(np.float64(np.float32(w))))
            if item_id in vectors:
                raise FormatError(f"duplicate id {item_id!r} in {path}")
            vectors[item_id] = SparseVec(tuple(dims), tuple(weights), vocab_size)
    except struct.error as e:
        raise FormatError(f"truncated embeddings file {path}: {e}") from None
    return vocab_size, vectors


class ToyProvider:
    """Encodes raw text with the toy encoder; usable on either side."""

    def __init__(self, params: ToyEncoderParams, vocab: Vocabulary, k: int):
        if params.vocab_size != vocab.size:
            raise ContractError("params and vocabulary disagree on vocab size")
        self.params = params
        self.vocab = vocab
        self.k = k

    @property
    def vocab_size(self) -> int:
        return self.vocab.size

    def encode(self, item_id: str, text: str) -> SparseVec:
        seq = tokenize(self.vocab, text)
        return toy_encode(self.params, seq, self.k)


class FileProvider:
    """Looks vectors up by id in an EmbeddingStore; the text is ignored."""

    def __init__(self, store: EmbeddingStore):
        self.store = store

    @property
    def vocab_size(self) -> int:
        return self.store.vocab_size

    def encode(self, item_id: str, text: str) -> SparseVec:
        return file_encode(self.store, item_id)

"""Vocabulary-space vector algebra.

SparseVec holds learned term weights, BotVec the binary bag-of-tokens set.
Both are canonical: dimensions strictly ascending, no zero weights stored,
so structural equality is value equality.  All arithmetic accumulates in
64-bit floats and iterates dimensions in ascending order, which makes every
downstream score reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ContractError
from .vocab import TokenSeq


@dataclass(frozen=True)
class SparseVec:
    dims: tuple[int, ...]
    weights: tuple[float, ...]
    vocab_size: int

    def __post_init__(self):
        if len(self.dims) != len(self.weights):
            raise ContractError("dims and weights length mismatch")
        prev = -1
        for d in self.dims:
            if d <= prev:
                raise ContractError("dims must be strictly increasing")
            prev = d
        if prev >= self.vocab_size:
            raise ContractError(f"dim {prev} out of range for vocab size {self.vocab_size}")
        for w in self.weights:
            if not math.isfinite(w):
                raise ContractError("weights must be finite")
            if w == 0.0:
                raise ContractError("zero weights are never stored")

    @property
    def nnz(self) -> int:
        return len(self.dims)

    @classmethod
    def from_pairs(cls, pairs, vocab_size: int) -> "SparseVec":
        """Build from unordered (dim, weight) pairs, dropping zero weights."""
        kept = sorted((d, w) for d, w in pairs if w != 0.0)
        dims = tuple(d for d, _ in kept)
        weights = tuple(float(w) for _, w in kept)
        return cls(dims, weights, vocab_size)

    @classmethod
    def empty(cls, vocab_size: int) -> "SparseVec":
        return cls((), (), vocab_size)


@dataclass(frozen=True)
class BotVec:
    """Set of active dimensions with implicit weight 1, 0 elsewhere."""

    dims: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        prev = -1
        for d in self.dims:
            if d <= prev:
                raise ContractError("dims must be strictly increasing")
            prev = d
        if prev >= self.vocab_size:
            raise ContractError(f"dim {prev} out of range for vocab size {self.vocab_size}")

    @property
    def nnz(self) -> int:
        return len(self.dims)


def elu1p(x: float) -> float:
    """x+1 on [0, inf), e^x below; continuous at 0 and strictly positive."""
    return x + 1.0 if x >= 0.0 else math.exp(x)


def elu1p_prime(x: float) -> float:
    return 1.0 if x >= 0.0 else math.exp(x)


def bot_encode(seq: TokenSeq, vocab_size: int) -> BotVec:
    """Distinct token ids of the sequence; duplicates collapse (max pooling
    over one-hot rows)."""
    for i in seq.ids:
        if not 0 <= i < vocab_size:
            raise ContractError(f"token id {i} out of range for vocab size {vocab_size}")
    return BotVec(tuple(sorted(set(seq.ids))), vocab_size)


def maxpool(vectors: list[SparseVec]) -> SparseVec:
    """Per-dimension maximum over the present entries of the inputs."""
    if not vectors:
        raise ContractError("maxpool needs at least one vector")
    vs = vectors[0].vocab_size
    for v in vectors[1:]:
        if v.vocab_size != vs:
            raise ContractError("maxpool inputs must share vocab_size")
    acc: dict[int, float] = {}
    for v in vectors:
        for d, w in zip(v.dims, v.weights):
            cur = acc.get(d)
            if cur is None or w > cur:
                acc[d] = w
    return SparseVec.from_pairs(acc.items(), vs)


def topk_sparsify(v: SparseVec, k: int) -> SparseVec:
    """Keep the k largest weights; equal weights keep the lower dimension."""
    if k < 0:
        raise ContractError("k must be >= 0")
    if v.nnz <= k:
        return v
    order = sorted(range(v.nnz), key=lambda i: (-v.weights[i], v.dims[i]))
    keep = sorted(order[:k])
    return SparseVec(tuple(v.dims[i] for i in keep),
                     tuple(v.weights[i] for i in keep), v.vocab_size)


def dot(a: SparseVec, b: SparseVec) -> float:
    """Inner product over shared dimensions, accumulated in ascending order."""
    if a.vocab_size != b.vocab_size:
        raise ContractError("dot requires matching vocab_size")
    s = 0.0
    i = j = 0
    while i < a.nnz and j < b.nnz:
        da, db = a.dims[i], b.dims[j]
        if da == db:
            s += a.weights[i] * b.weights[j]
            i += 1
            j += 1
        elif da < db:
            i += 1
        else:
            j += 1
    return s


def dot_bot(a: SparseVec, b: BotVec) -> float:
    """Sum of a's weights on the dimensions active in b."""
    if a.vocab_size != b.vocab_size:
        raise ContractError("dot_bot requires matching vocab_size")
    s = 0.0
    i = j = 0
    while i < a.nnz and j < b.nnz:
        da, db = a.dims[i], b.dims[j]
        if da == db:
            s += a.weights[i]
            i += 1
            j += 1
        elif da < db:
            i += 1
        else:
            j += 1
    return s


def as_sparse(b: BotVec) -> SparseVec:
    """BotVec viewed as a weight-1 SparseVec."""
    return SparseVec(b.dims, (1.0,) * len(b.dims), b.vocab_size)

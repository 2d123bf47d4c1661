import itertools
import string
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from semidx.index import Passage
from semidx.sparsevec import SparseVec
from semidx.vocab import Vocabulary


def make_word_vocab(n_words: int) -> Vocabulary:
    """A vocabulary of distinct two-letter words plus [UNK]; every word
    tokenizes to exactly one id, so generated corpora stay predictable."""
    words = ["".join(pair) for pair in itertools.product(string.ascii_lowercase, repeat=2)]
    if n_words > len(words):
        raise ValueError("not enough two-letter words")
    return Vocabulary(tuple(words[:n_words]) + ("[UNK]",))


def word_of(vocab: Vocabulary, dim: int) -> str:
    return vocab.tokens[dim]


def random_corpus(vocab: Vocabulary, n_passages: int, rng: np.random.Generator,
                  min_tokens: int = 3, max_tokens: int = 12) -> list[Passage]:
    """Passages whose text is a space-joined sample of vocabulary words."""
    n_words = vocab.size - 1  # exclude [UNK]
    passages = []
    for i in range(n_passages):
        length = int(rng.integers(min_tokens, max_tokens + 1))
        dims = rng.integers(0, n_words, size=length)
        text = " ".join(vocab.tokens[d] for d in dims)
        passages.append(Passage(id=f"p{i}", title="", text=text))
    return passages


def random_sparse_vec(vocab_size: int, nnz: int, rng: np.random.Generator,
                      low: float = 0.05, high: float = 4.0) -> SparseVec:
    nnz = min(nnz, vocab_size)
    dims = np.sort(rng.choice(vocab_size, size=nnz, replace=False))
    weights = rng.uniform(low, high, size=nnz)
    return SparseVec(tuple(int(d) for d in dims), tuple(float(w) for w in weights),
                     vocab_size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

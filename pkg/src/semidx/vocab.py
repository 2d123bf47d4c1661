"""Vocabulary loading and sub-word tokenization.

The tokenizer is deliberately self-contained: lowercase the input, split on
whitespace, split every non-alphanumeric character into its own piece, then
segment each word by greedy longest-match against the vocabulary, marking
word-internal pieces with the continuation prefix ("##" by convention).
A word longer than 100 characters, or one with no matching segmentation,
collapses to the unknown token.  Normalization beyond lowercasing (accent
stripping, CJK specifics) is intentionally not performed; these are the
rules, documented rather than inherited from any external tokenizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ContractError, FormatError

MAX_WORD_CHARS = 100
MAX_SEQ_TOKENS = 256


@dataclass(frozen=True)
class Vocabulary:
    """Dense string<->id mapping; line number in the vocab file is the id."""

    tokens: tuple[str, ...]
    continuation_prefix: str = "##"
    unknown_token: str = "[UNK]"
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = {}
        for i, tok in enumerate(self.tokens):
            if tok in ids:
                raise FormatError(f"duplicate token {tok!r} at lines {ids[tok]} and {i}")
            ids[tok] = i
        if self.unknown_token not in ids:
            raise FormatError(f"vocabulary is missing the unknown token {self.unknown_token!r}")
        object.__setattr__(self, "_ids", ids)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def unknown_id(self) -> int:
        return self._ids[self.unknown_token]

    def id_of(self, token: str) -> int | None:
        return self._ids.get(token)

    def __contains__(self, token: str) -> bool:
        return token in self._ids


@dataclass(frozen=True)
class TokenSeq:
    """Token ids in input order plus the character count of the source text."""

    ids: tuple[int, ...]
    source_len: int

    def __len__(self) -> int:
        return len(self.ids)


def load_vocab(path, unknown_token: str = "[UNK]", continuation_prefix: str = "##") -> Vocabulary:
    """Read a UTF-8, one-token-per-line vocabulary file (LF endings)."""
    with open(path, "r", encoding="utf-8") as f:
        tokens = [line.rstrip("\n") for line in f]
    if tokens and tokens[-1] == "":
        tokens.pop()  # trailing newline produces one empty tail entry
    return Vocabulary(tuple(tokens), continuation_prefix=continuation_prefix,
                      unknown_token=unknown_token)


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for tok in vocab.tokens:
            f.write(tok + "\n")


def _split_words(text: str) -> list[str]:
    """Lowercase, then break into word chunks; every char that is neither
    alphanumeric nor whitespace becomes its own chunk."""
    words: list[str] = []
    buf: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if buf:
                words.append("".join(buf))
                buf = []
        elif ch.isalnum():
            buf.append(ch)
        else:
            if buf:
                words.append("".join(buf))
                buf = []
            words.append(ch)
    if buf:
        words.append("".join(buf))
    return words


def _segment_word(vocab: Vocabulary, word: str) -> list[int] | None:
    """Greedy longest-match segmentation; None when the word cannot be covered."""
    pieces: list[int] = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        hit = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = vocab.continuation_prefix + piece
            tid = vocab.id_of(piece)
            if tid is not None:
                hit = tid
                break
            end -= 1
        if hit is None:
            return None
        pieces.append(hit)
        start = end
    return pieces


def tokenize(vocab: Vocabulary, text: str, max_tokens: int = MAX_SEQ_TOKENS) -> TokenSeq:
    """Pure function of (vocab, text); never raises on any input string."""
    out: list[int] = []
    unk = vocab.unknown_id
    for word in _split_words(text):
        if len(word) > MAX_WORD_CHARS:
            out.append(unk)
            continue
        pieces = _segment_word(vocab, word)
        if pieces is None:
            out.append(unk)
        else:
            out.extend(pieces)
        if len(out) >= max_tokens:
            break
    return TokenSeq(tuple(out[:max_tokens]), source_len=len(text))


def check_ids(seq: TokenSeq, vocab_size: int) -> None:
    for i in seq.ids:
        if not 0 <= i < vocab_size:
            raise ContractError(f"token id {i} out of range for vocab size {vocab_size}")

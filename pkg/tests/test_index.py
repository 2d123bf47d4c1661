import numpy as np
import pytest

from conftest import make_word_vocab, random_corpus, random_sparse_vec
from oracles import dense_search_oracle, rank_oracle
from semidx.encoder import ToyEncoderParams, ToyProvider, quantize_f32
from semidx.errors import BuildError, ContractError, FormatError
from semidx.index import (BotIndex, ParamIndex, Passage, build_bot_index,
                          build_param_index, load_index, read_corpus_jsonl, save_index,
                          search_bot, search_param, write_corpus_jsonl)
from semidx.sparsevec import SparseVec
from semidx.vocab import Vocabulary


def sv(pairs, vs=16):
    return SparseVec.from_pairs(pairs, vs)


def bot_index_from_rows(rows, vocab_size):
    ids = [f"p{i}" for i in range(len(rows))]
    dims = [np.asarray(sorted(r), dtype=np.uint32) for r in rows]
    return BotIndex(vocab_size, ids, [""] * len(rows), [""] * len(rows), dims)


def param_index_from_vecs(vecs, vocab_size):
    ids = [f"p{i}" for i in range(len(vecs))]
    dims = [np.asarray(v.dims, dtype=np.uint32) for v in vecs]
    wts = [np.asarray(v.weights, dtype=np.float64) for v in vecs]
    return ParamIndex(vocab_size, ids, [""] * len(vecs), [""] * len(vecs), dims, wts,
                      embed_calls=len(vecs))


class TestBuild:
    def test_shared_token_postings(self):
        vocab = Vocabulary(("cat", "dog", "[UNK]"))
        corpus = [Passage("a", "", "cat dog"), Passage("b", "", "cat")]
        ix = build_bot_index(corpus, vocab)
        assert ix.postings[0].tolist() == [0, 1]
        assert ix.postings[1].tolist() == [0]

    def test_empty_corpus_is_valid(self):
        vocab = Vocabulary(("cat", "[UNK]"))
        ix = build_bot_index([], vocab)
        assert len(ix) == 0
        assert search_bot(ix, sv([(0, 1.0)], 2), 5) == []

    def test_all_unk_passage_is_searchable(self):
        vocab = Vocabulary(("cat", "[UNK]"))
        ix = build_bot_index([Passage("a", "", "xyzzy qwerty")], vocab)
        assert ix.bot_dims[0].tolist() == [vocab.unknown_id]
        got = search_bot(ix, sv([(1, 2.0)], 2), 5)
        assert got == [("a", 2.0)]

    def test_duplicate_id_rejected(self):
        vocab = Vocabulary(("cat", "[UNK]"))
        with pytest.raises(BuildError):
            build_bot_index([Passage("a", "", "cat"), Passage("a", "", "cat")], vocab)

    def test_param_build_counts_embed_calls(self, rng):
        vocab = make_word_vocab(8)
        corpus = random_corpus(vocab, 3, rng)
        provider = ToyProvider(ToyEncoderParams.init(vocab.size, 2, 0), vocab, k=4)
        ix = build_param_index(corpus, provider, k_doc=4)
        assert ix.embed_calls == 3

    def test_param_build_rejects_oversized_vectors(self, rng):
        vocab = make_word_vocab(8)
        corpus = random_corpus(vocab, 3, rng)
        provider = ToyProvider(ToyEncoderParams.init(vocab.size, 2, 0), vocab, k=8)
        with pytest.raises(BuildError):
            build_param_index(corpus, provider, k_doc=4)

    def test_param_build_reports_failing_passage(self):
        class Boom:
            vocab_size = 4

            def encode(self, pid, text):
                raise RuntimeError("nope")

        with pytest.raises(BuildError, match="p0"):
            build_param_index([Passage("p0", "", "x")], Boom(), k_doc=4)

    def test_deterministic_rebuild_is_byte_identical(self, tmp_path, rng):
        vocab = make_word_vocab(12)
        corpus = random_corpus(vocab, 10, rng)
        provider = ToyProvider(ToyEncoderParams.init(vocab.size, 3, 1), vocab, k=6)
        for builder, name in [(lambda: build_bot_index(corpus, vocab), "bot"),
                              (lambda: build_param_index(corpus, provider, 6), "par")]:
            p1, p2 = tmp_path / f"{name}1.bin", tmp_path / f"{name}2.bin"
            save_index(builder(), p1)
            save_index(builder(), p2)
            assert p1.read_bytes() == p2.read_bytes()


class TestSearchBot:
    def test_hand_sum(self):
        ix = bot_index_from_rows([[1], [1, 2]], 16)
        got = search_bot(ix, sv([(1, 2.0), (2, 1.0)]), 5)
        assert got == [("p1", 3.0), ("p0", 2.0)]

    def test_disjoint_query_yields_empty(self):
        ix = bot_index_from_rows([[1], [2]], 16)
        assert search_bot(ix, sv([(5, 1.0)]), 5) == []

    def test_include_zeros_flag(self):
        ix = bot_index_from_rows([[1], [2]], 16)
        got = search_bot(ix, sv([(1, 1.0)]), 5, include_zeros=True)
        assert got == [("p0", 1.0), ("p1", 0.0)]

    def test_matches_dense_oracle_exactly(self, rng):
        vocab_size = 64
        rows = [sorted(set(int(d) for d in rng.choice(vocab_size, rng.integers(1, 12))))
                for _ in range(200)]
        ix = bot_index_from_rows(rows, vocab_size)
        for _ in range(10):
            q = random_sparse_vec(vocab_size, int(rng.integers(1, 16)), rng)
            doc_dense = [{d: 1.0 for d in row} for row in rows]
            expect_scores = dense_search_oracle(doc_dense, dict(zip(q.dims, q.weights)),
                                                vocab_size)
            expect = rank_oracle(ix.passage_ids, expect_scores, 20)
            got = search_bot(ix, q, 20)
            assert got == expect  # bit-exact scores and identical order


class TestSearchParam:
    def test_hand_example(self):
        ix = param_index_from_vecs([sv([(1, 2.0)]), sv([(1, 1.0), (3, 4.0)])], 16)
        got = search_param(ix, sv([(1, 1.0), (3, 1.0)]), 5)
        assert got == [("p1", 5.0), ("p0", 2.0)]

    def test_empty_query(self):
        ix = param_index_from_vecs([sv([(1, 2.0)])], 16)
        assert search_param(ix, SparseVec.empty(16), 5) == []

    def test_matches_dense_oracle_exactly(self, rng):
        vocab_size = 48
        vecs = [quantize_f32(random_sparse_vec(vocab_size, int(rng.integers(1, 10)), rng))
                for _ in range(150)]
        ix = param_index_from_vecs(vecs, vocab_size)
        for _ in range(10):
            q = random_sparse_vec(vocab_size, int(rng.integers(1, 12)), rng)
            doc_dense = [dict(zip(v.dims, v.weights)) for v in vecs]
            scores = dense_search_oracle(doc_dense, dict(zip(q.dims, q.weights)), vocab_size)
            assert search_param(ix, q, 25) == rank_oracle(ix.passage_ids, scores, 25)

    def test_vocab_size_mismatch(self):
        ix = param_index_from_vecs([sv([(1, 2.0)])], 16)
        with pytest.raises(ContractError):
            search_param(ix, sv([(1, 1.0)], 8), 5)

    def test_tie_breaks_by_ordinal(self):
        ix = param_index_from_vecs([sv([(1, 2.0)]), sv([(1, 2.0)])], 16)
        got = search_param(ix, sv([(1, 1.0)]), 5)
        assert got == [("p0", 2.0), ("p1", 2.0)]

    def test_topk_monotonicity(self, rng):
        vecs = [quantize_f32(random_sparse_vec(32, 6, rng)) for _ in range(50)]
        ix = param_index_from_vecs(vecs, 32)
        q = random_sparse_vec(32, 8, rng)
        small = search_param(ix, q, 5)
        large = search_param(ix, q, 30)
        assert large[:len(small)] == small


class TestPersistence:
    def _structurally_equal(self, a, b):
        assert type(a) is type(b)
        assert a.vocab_size == b.vocab_size
        assert a.passage_ids == b.passage_ids
        assert a.titles == b.titles and a.texts == b.texts
        if isinstance(a, BotIndex):
            assert all(np.array_equal(x, y) for x, y in zip(a.bot_dims, b.bot_dims))
        else:
            assert all(np.array_equal(x, y) for x, y in zip(a.vec_dims, b.vec_dims))
            assert all(np.array_equal(x, y) for x, y in zip(a.vec_weights, b.vec_weights))
        assert set(a.postings) == set(b.postings)

    def test_bot_round_trip(self, tmp_path, rng):
        vocab = make_word_vocab(10)
        ix = build_bot_index(random_corpus(vocab, 12, rng), vocab)
        save_index(ix, tmp_path / "ix.bin")
        self._structurally_equal(ix, load_index(tmp_path / "ix.bin"))

    def test_param_round_trip(self, tmp_path, rng):
        vocab = make_word_vocab(10)
        provider = ToyProvider(ToyEncoderParams.init(vocab.size, 3, 2), vocab, k=5)
        ix = build_param_index(random_corpus(vocab, 12, rng), provider, 5)
        save_index(ix, tmp_path / "ix.bin")
        loaded = load_index(tmp_path / "ix.bin")
        self._structurally_equal(ix, loaded)
        # postings reconstruct the stored vectors exactly
        for i in range(len(ix)):
            assert loaded.sparse_vec(i) == ix.sparse_vec(i)

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "ix.bin"
        path.write_bytes(b"BADMAGIC" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_index(path)

    def test_truncated_file(self, tmp_path, rng):
        vocab = make_word_vocab(10)
        ix = build_bot_index(random_corpus(vocab, 5, rng), vocab)
        path = tmp_path / "ix.bin"
        save_index(ix, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_index(path)

    def test_bot_file_smaller_than_param_file(self, tmp_path, rng):
        vocab = make_word_vocab(40)
        corpus = random_corpus(vocab, 60, rng, min_tokens=5, max_tokens=15)
        avg_distinct = np.mean([len(set(p.text.split())) for p in corpus])
        k_doc = int(np.ceil(avg_distinct)) + 4
        provider = ToyProvider(ToyEncoderParams.init(vocab.size, 4, 3), vocab, k=k_doc)
        bot_path, par_path = tmp_path / "bot.bin", tmp_path / "par.bin"
        save_index(build_bot_index(corpus, vocab), bot_path)
        save_index(build_param_index(corpus, provider, k_doc), par_path)
        assert bot_path.stat().st_size < par_path.stat().st_size

    def test_corpus_jsonl_round_trip(self, tmp_path):
        corpus = [Passage("a", "T", "hello world"), Passage("b", "", "x")]
        write_corpus_jsonl(corpus, tmp_path / "c.jsonl")
        assert read_corpus_jsonl(tmp_path / "c.jsonl") == corpus

    def test_corpus_jsonl_rejects_bad_json(self, tmp_path):
        (tmp_path / "c.jsonl").write_text('{"id": "a", "text": "x"}\nnot json\n')
        with pytest.raises(FormatError):
            read_corpus_jsonl(tmp_path / "c.jsonl")

import numpy as np
import pytest

from oracles import dense_encode_oracle
from semidx.encoder import (EmbeddingStore, EncoderConfig, FileProvider, ToyEncoderParams,
                            ToyProvider, binarize, file_encode, lex_mask, load_embeddings,
                            quantize_f32, save_embeddings, toy_encode)
from semidx.errors import ContractError, FormatError
from semidx.sparsevec import BotVec, SparseVec, elu1p
from semidx.vocab import TokenSeq, Vocabulary


def sv(pairs, vs=16):
    return SparseVec.from_pairs(pairs, vs)


class TestToyEncode:
    def test_uniform_logits_tie_break(self):
        # all logits 0 -> elu1p gives 1 everywhere -> top-2 keeps dims 0 and 1
        params = ToyEncoderParams(np.ones((4, 1)), np.zeros((1, 4)))
        out = toy_encode(params, TokenSeq((2, 3), 2), 2)
        assert out == SparseVec((0, 1), (1.0, 1.0), 4)

    def test_single_token_full_k_is_elu1p_of_logits(self):
        rng = np.random.default_rng(7)
        params = ToyEncoderParams(rng.uniform(-0.5, 0.5, (6, 3)),
                                  rng.uniform(-0.5, 0.5, (3, 6)))
        out = toy_encode(params, TokenSeq((4,), 1), 6)
        logits = params.embed[4] @ params.project
        assert out.dims == tuple(range(6))
        for d, w in zip(out.dims, out.weights):
            assert w == pytest.approx(elu1p(logits[d]), abs=1e-15)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        v, d = int(rng.integers(4, 64)), int(rng.integers(1, 16))
        params = ToyEncoderParams(rng.uniform(-0.5, 0.5, (v, d)),
                                  rng.uniform(-0.5, 0.5, (d, v)))
        ids = tuple(int(t) for t in rng.integers(0, v, size=3))
        k = 4
        got = toy_encode(params, TokenSeq(ids, 3), k)
        expect = dense_encode_oracle(params.embed.tolist(), params.project.tolist(), ids, k)
        assert got.dims == tuple(sorted(expect))
        for dim, w in zip(got.dims, got.weights):
            assert abs(w - expect[dim]) <= 1e-12

    def test_weights_positive_and_bounded_nnz(self):
        rng = np.random.default_rng(3)
        params = ToyEncoderParams(rng.uniform(-0.5, 0.5, (20, 4)),
                                  rng.uniform(-0.5, 0.5, (4, 20)))
        for k in (1, 5, 20, 50):
            out = toy_encode(params, TokenSeq((1, 2, 3), 3), k)
            assert out.nnz == min(k, 20)
            assert all(w > 0.0 for w in out.weights)

    def test_empty_sequence_rejected(self):
        params = ToyEncoderParams(np.ones((4, 1)), np.zeros((1, 4)))
        with pytest.raises(ContractError):
            toy_encode(params, TokenSeq((), 0), 2)

    def test_init_is_seeded(self):
        a = ToyEncoderParams.init(8, 3, seed=11)
        b = ToyEncoderParams.init(8, 3, seed=11)
        c = ToyEncoderParams.init(8, 3, seed=12)
        assert np.array_equal(a.embed, b.embed) and np.array_equal(a.project, b.project)
        assert not np.array_equal(a.embed, c.embed)

    def test_save_load_round_trip(self, tmp_path):
        params = ToyEncoderParams.init(8, 3, seed=5)
        params.save(tmp_path / "p.npz")
        loaded = ToyEncoderParams.load(tmp_path / "p.npz")
        assert np.array_equal(params.embed, loaded.embed)
        assert np.array_equal(params.project, loaded.project)


class TestEmbeddingStore:
    def test_lookup(self):
        store = EmbeddingStore(16, {"q1": sv([(2, 1.5)])})
        assert file_encode(store, "q1") == sv([(2, 1.5)])

    def test_missing_id(self):
        store = EmbeddingStore(16, {"q1": sv([(2, 1.5)])})
        with pytest.raises(ContractError):
            file_encode(store, "q9")

    def test_file_round_trip(self, tmp_path, rng):
        from conftest import random_sparse_vec
        vectors = {f"id{i}": quantize_f32(random_sparse_vec(64, 8, rng)) for i in range(10)}
        path = tmp_path / "emb.bin"
        save_embeddings(path, 64, vectors)
        vocab_size, loaded = load_embeddings(path)
        assert vocab_size == 64
        assert loaded == vectors

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "emb.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "emb.bin"
        save_embeddings(path, 8, {"a": sv([(1, 1.0)], 8)})
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(FormatError):
            load_embeddings(path)


class TestMaskingOps:
    def test_lex_mask(self):
        v = sv([(0, 2.0), (5, 1.0)])
        assert lex_mask(v, BotVec((5,), 16)) == sv([(5, 1.0)])

    def test_lex_mask_full_support_identity(self):
        v = sv([(0, 2.0), (5, 1.0)])
        assert lex_mask(v, BotVec((0, 5), 16)) == v

    def test_lex_mask_empty_bot(self):
        assert lex_mask(sv([(0, 2.0)]), BotVec((), 16)) == SparseVec.empty(16)

    def test_lex_mask_size_mismatch(self):
        with pytest.raises(ContractError):
            lex_mask(sv([(0, 2.0)], 8), BotVec((0,), 16))

    def test_binarize(self):
        assert binarize(sv([(1, 3.2), (7, 0.1)])) == sv([(1, 1.0), (7, 1.0)])

    def test_binarize_empty(self):
        assert binarize(SparseVec.empty(8)) == SparseVec.empty(8)

    def test_binarize_idempotent(self):
        v = sv([(1, 3.2), (7, 0.1)])
        assert binarize(binarize(v)) == binarize(v)

    def test_quantize_f32_drops_underflow(self):
        v = SparseVec((0, 1), (1e-60, 2.0), 8)
        q = quantize_f32(v)
        assert q.dims == (1,)
        assert q.weights[0] == float(np.float32(2.0))


class TestProviders:
    def test_toy_provider_tokenizes_and_encodes(self):
        vocab = Vocabulary(("aa", "bb", "[UNK]"))
        params = ToyEncoderParams.init(3, 2, seed=1)
        p = ToyProvider(params, vocab, k=3)
        direct = toy_encode(params, TokenSeq((0, 1), 5), 3)
        assert p.encode("x", "aa bb") == direct

    def test_file_provider_ignores_text(self):
        store = EmbeddingStore(16, {"a": sv([(2, 1.5)])})
        p = FileProvider(store)
        assert p.encode("a", "whatever") == sv([(2, 1.5)])

    def test_config_validates(self):
        with pytest.raises(ContractError):
            EncoderConfig(vocab_size=8, k_doc=0)

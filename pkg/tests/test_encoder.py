import numpy as np
import pytest

from inceptive.encoder import (
    EncoderConfig,
    embed,
    encode,
    encode_forward,
    encode_backward,
    embed_backward,
    init_encoder_params,
    load_embeddings,
    save_embeddings,
)
from inceptive.errors import ConfigError, FormatError, VocabularyError
from inceptive.tensor import Rng, grad_check


@pytest.fixture
def small_cfg():
    return EncoderConfig(vocab_size=11, d=8, n_layers=1, n_heads=2, ffn_size=12, max_len=6)


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigError):
            EncoderConfig(vocab_size=10, d=10, n_heads=3)


class TestEmbed:
    def test_zero_tables_give_zero_output(self, small_cfg):
        store = init_encoder_params(small_cfg, Rng(0))
        store.value("encoder.tok_embed")[...] = 0.0
        store.value("encoder.pos_embed")[...] = 0.0
        out = embed(small_cfg, store, np.zeros((2, 4), dtype=int))
        assert not out.any()

    def test_repeated_token_differs_only_by_position(self, small_cfg):
        store = init_encoder_params(small_cfg, Rng(1))
        ids = np.full((1, 4), 5)
        out = embed(small_cfg, store, ids)
        pos = store.value("encoder.pos_embed")[:4]
        rows = out[0] - pos
        for i in range(1, 4):
            np.testing.assert_allclose(rows[i], rows[0])

    def test_batch_shape_at_full_width(self):
        cfg = EncoderConfig(vocab_size=50, d=768, n_layers=0, n_heads=2, max_len=128)
        store = init_encoder_params(cfg, Rng(2))
        out = embed(cfg, store, np.zeros((32, 128), dtype=int))
        assert out.shape == (32, 128, 768)

    def test_out_of_vocabulary_id_rejected(self, small_cfg):
        store = init_encoder_params(small_cfg, Rng(3))
        ids = np.zeros((1, 3), dtype=int)
        ids[0, 1] = 11
        with pytest.raises(VocabularyError, match="11"):
            embed(small_cfg, store, ids)

    def test_backward_scatters_into_tables(self, small_cfg):
        store = init_encoder_params(small_cfg, Rng(4))
        ids = np.array([[1, 1, 2]])
        dx = np.ones((1, 3, 8))
        embed_backward(small_cfg, store, ids, dx)
        dtok = store.grad("encoder.tok_embed")
        np.testing.assert_allclose(dtok[1], 2.0)  # id 1 appears twice
        np.testing.assert_allclose(dtok[2], 1.0)
        assert not dtok[3:].any()


class TestEncode:
    def test_zero_layers_is_identity(self):
        cfg = EncoderConfig(vocab_size=5, d=4, n_layers=0, n_heads=2, max_len=4)
        store = init_encoder_params(cfg, Rng(0))
        x = Rng(1).normal((2, 3, 4))
        assert np.array_equal(encode(cfg, store, x), x)

    def test_output_shape_for_any_depth(self):
        for n_layers in (0, 1, 3):
            cfg = EncoderConfig(vocab_size=5, d=8, n_layers=n_layers, n_heads=2, ffn_size=8, max_len=4)
            store = init_encoder_params(cfg, Rng(0))
            out = encode(cfg, store, Rng(1).normal((2, 4, 8)))
            assert out.shape == (2, 4, 8)

    def test_single_token_attention_weight_is_one(self, small_cfg):
        store = init_encoder_params(small_cfg, Rng(5))
        _, cache = encode_forward(small_cfg, store, Rng(6).normal((2, 1, 8)))
        np.testing.assert_allclose(cache.last_attention_weights, 1.0)

    def test_deterministic(self, small_cfg):
        store = init_encoder_params(small_cfg, Rng(7))
        x = Rng(8).normal((2, 4, 8))
        assert np.array_equal(encode(small_cfg, store, x), encode(small_cfg, store, x))

    def test_backward_matches_finite_differences(self, small_cfg):
        rng = Rng(9)
        store = init_encoder_params(small_cfg, rng.child("params"))
        x = rng.child("x").normal((2, 4, 8))
        proj = rng.child("proj").normal((2, 4, 8))

        def f(params):
            return float((encode(small_cfg, params, x) * proj).sum())

        h, cache = encode_forward(small_cfg, store, x)
        store.zero_grads()
        encode_backward(small_cfg, store, cache, proj)
        assert grad_check(f, store, 1e-5) < 1e-4


class TestEmbeddingFile:
    def test_round_trip_class_labels(self, tmp_path):
        h = Rng(0).normal((2, 4, 3))
        labels = np.array([1, 0])
        path = tmp_path / "e.iemb"
        save_embeddings(path, h, labels, n_classes=2)
        h2, labels2 = load_embeddings(path)
        np.testing.assert_array_equal(h2, h.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(labels2, labels)

    def test_round_trip_multilabel(self, tmp_path):
        h = Rng(1).normal((3, 2, 4))
        labels = np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=float)
        path = tmp_path / "e.iemb"
        save_embeddings(path, h, labels, n_classes=3)
        h2, labels2 = load_embeddings(path)
        assert h2.shape == (3, 2, 4)
        np.testing.assert_array_equal(labels2, labels)

    def test_truncated_payload_detected(self, tmp_path):
        path = tmp_path / "e.iemb"
        save_embeddings(path, np.ones((2, 4, 3)), np.array([0, 1]), n_classes=2)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 4])  # drop one float: 23 of 24 remain
        with pytest.raises(FormatError, match="truncated payload"):
            load_embeddings(path)

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        path = tmp_path / "e.iemb"
        path.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(FormatError, match="offset 0"):
            load_embeddings(path)

    def test_wide_hidden_states_accepted(self, tmp_path):
        path = tmp_path / "e.iemb"
        save_embeddings(path, np.zeros((1, 2, 768)), np.array([0]), n_classes=2)
        h, _ = load_embeddings(path)
        assert h.shape == (1, 2, 768)

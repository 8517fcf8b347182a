"""Patch embedding, attention stack, pooling, head, and their gradients."""

import numpy as np
import pytest

from eegadapt.encoder import (
    BfmConfig,
    EmbeddingBatch,
    bfm_grad,
    classify,
    encode,
    encoder_forward_batch,
    init_encoder_params,
    patchify,
)
from eegadapt.errors import ConfigurationError, DimensionError
from eegadapt.nnops import gelu, layer_norm_forward, softmax_last


def small_config(**overrides):
    base = dict(num_channels=23, num_classes=4, patch_len=16, embed_dim=16,
                num_layers=2, num_heads=4, channel_vocab=23, max_patches=8)
    base.update(overrides)
    return BfmConfig(**base)


class TestConfig:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ConfigurationError):
            small_config(embed_dim=30, num_heads=4)

    def test_vocab_must_cover_channels(self):
        with pytest.raises(ConfigurationError):
            small_config(num_channels=64, channel_vocab=23)


class TestPatchify:
    def test_token_count(self):
        cfg = small_config()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        tokens = patchify(np.zeros((23, 64)), params, cfg)
        assert tokens.shape == (92, cfg.embed_dim)

    def test_zero_input_isolates_embedding_tables(self):
        cfg = small_config()
        params = init_encoder_params(cfg, np.random.default_rng(1))
        params.patch_b[:] = 0.0
        tokens = patchify(np.zeros((23, 32)), params, cfg)
        p = 2
        for c in range(23):
            for j in range(p):
                expected = params.channel_embed[c] + params.temporal_embed[j]
                np.testing.assert_allclose(tokens[c * p + j], expected, atol=0)

    def test_matches_per_patch_oracle(self):
        cfg = small_config()
        rng = np.random.default_rng(2)
        params = init_encoder_params(cfg, rng)
        x = rng.normal(size=(23, 48))
        tokens = patchify(x, params, cfg)
        p = 3
        for c in range(23):
            for j in range(p):
                patch = x[c, j * 16 : (j + 1) * 16]
                expected = (params.patch_w @ patch + params.patch_b
                            + params.channel_embed[c] + params.temporal_embed[j])
                np.testing.assert_allclose(tokens[c * p + j], expected, atol=1e-10)

    def test_divisibility_enforced(self):
        cfg = small_config()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            patchify(np.zeros((23, 60)), params, cfg)


class TestEncode:
    def test_single_token_matches_manual_block(self):
        cfg = small_config(num_layers=1)
        rng = np.random.default_rng(4)
        params = init_encoder_params(cfg, rng)
        token = rng.normal(size=(1, cfg.embed_dim))
        pooled = encode(token, params, cfg)

        # With one token, attention mixes the token with itself only.
        bp = params.blocks[0]
        h1, _ = layer_norm_forward(token, bp.ln1_g, bp.ln1_b)
        v = h1 @ bp.wv + bp.bv
        attn_out = v @ bp.wo + bp.bo
        x2 = token + attn_out
        h2, _ = layer_norm_forward(x2, bp.ln2_g, bp.ln2_b)
        x3 = x2 + gelu(h2 @ bp.w1 + bp.b1) @ bp.w2 + bp.b2
        hf, _ = layer_norm_forward(x3, params.final_g, params.final_b)
        np.testing.assert_allclose(pooled, hf[0], atol=1e-12)

    def test_attention_rows_normalize(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=(2, 4, 9, 9)) * 3.0
        attn = softmax_last(scores)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)

    def test_token_permutation_leaves_pooling_unchanged(self):
        cfg = small_config()
        rng = np.random.default_rng(6)
        params = init_encoder_params(cfg, rng)
        tokens = rng.normal(size=(40, cfg.embed_dim))
        pooled = encode(tokens, params, cfg)
        perm = rng.permutation(40)
        pooled_perm = encode(tokens[perm], params, cfg)
        np.testing.assert_allclose(pooled_perm, pooled, atol=1e-9)

    def test_forward_is_deterministic(self):
        cfg = small_config()
        rng = np.random.default_rng(7)
        params = init_encoder_params(cfg, rng)
        x = rng.normal(size=(3, 23, 32))
        a, pa, _ = encoder_forward_batch(x, params, cfg)
        b, pb, _ = encoder_forward_batch(x, params, cfg)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(pa, pb)


class TestClassify:
    def test_zero_head(self):
        cfg = small_config()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        logits = classify(np.ones(cfg.embed_dim), params)
        np.testing.assert_array_equal(logits, np.zeros(cfg.num_classes))

    def test_one_hot_head_selects_component(self):
        cfg = small_config()
        params = init_encoder_params(cfg, np.random.default_rng(0))
        params.head_w[:] = 0.0
        params.head_w[5, 2] = 1.0
        emb = np.arange(cfg.embed_dim, dtype=float)
        logits = classify(emb, params)
        assert logits[2] == emb[5]
        assert logits[0] == 0.0

    def test_matches_dot_product_oracle(self):
        cfg = small_config()
        rng = np.random.default_rng(8)
        params = init_encoder_params(cfg, rng)
        params.head_w[:] = rng.normal(size=params.head_w.shape)
        params.head_b[:] = rng.normal(size=params.head_b.shape)
        emb = rng.normal(size=cfg.embed_dim)
        logits = classify(emb, params)
        for k in range(cfg.num_classes):
            expected = sum(emb[d] * params.head_w[d, k]
                           for d in range(cfg.embed_dim)) + params.head_b[k]
            assert abs(logits[k] - expected) <= 1e-12


class TestGradients:
    def test_matches_finite_differences(self):
        cfg = small_config(num_channels=6, channel_vocab=23, patch_len=8,
                           max_patches=3)
        rng = np.random.default_rng(9)
        params = init_encoder_params(cfg, rng)
        params.head_w[:] = rng.normal(0, 0.3, params.head_w.shape)
        params.head_b[:] = rng.normal(0, 0.1, params.head_b.shape)
        x = rng.normal(size=(6, 24))
        upstream = rng.normal(size=cfg.num_classes)
        grads, dx = bfm_grad(x, params, cfg, upstream)

        def objective():
            logits, _, _ = encoder_forward_batch(x[None], params, cfg)
            return float(np.sum(logits[0] * upstream))

        h = 1e-5
        worst = 0.0
        for name, arr in params.named_arrays():
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(8, flat.size), replace=False)
            for idx in picks:
                orig = flat[idx]
                flat[idx] = orig + h
                plus = objective()
                flat[idx] = orig - h
                minus = objective()
                flat[idx] = orig
                numeric = (plus - minus) / (2 * h)
                analytic = grads[name].reshape(-1)[idx]
                worst = max(worst, abs(analytic - numeric)
                            / max(abs(analytic), abs(numeric), 1e-4))
        flat_x = x.reshape(-1)
        for idx in rng.choice(flat_x.size, size=30, replace=False):
            orig = flat_x[idx]
            flat_x[idx] = orig + h
            plus = objective()
            flat_x[idx] = orig - h
            minus = objective()
            flat_x[idx] = orig
            numeric = (plus - minus) / (2 * h)
            analytic = dx.reshape(-1)[idx]
            worst = max(worst, abs(analytic - numeric)
                        / max(abs(analytic), abs(numeric), 1e-4))
        assert worst <= 1e-4

    def test_zero_upstream_zero_gradients(self):
        cfg = small_config(num_channels=4, patch_len=8, max_patches=2)
        rng = np.random.default_rng(10)
        params = init_encoder_params(cfg, rng)
        grads, dx = bfm_grad(rng.normal(size=(4, 16)), params, cfg,
                             np.zeros(cfg.num_classes))
        assert np.all(dx == 0)
        for g in grads.values():
            assert np.all(g == 0)

    def test_unused_channel_rows_get_zero_gradient(self):
        cfg = small_config(num_channels=4, channel_vocab=23, patch_len=8,
                           max_patches=2)
        rng = np.random.default_rng(11)
        params = init_encoder_params(cfg, rng)
        params.head_w[:] = rng.normal(0, 0.3, params.head_w.shape)
        grads, _ = bfm_grad(rng.normal(size=(4, 16)), params, cfg,
                            rng.normal(size=cfg.num_classes))
        assert np.all(grads["channel_embed"][4:] == 0.0)
        assert np.any(grads["channel_embed"][:4] != 0.0)


class TestEmbeddingBatch:
    def test_alignment_enforced(self):
        with pytest.raises(DimensionError):
            EmbeddingBatch(embeddings=np.zeros((3, 4)), labels=np.zeros(2),
                           subject_ids=["a", "b", "c"])

    def test_valid_batch(self):
        batch = EmbeddingBatch(embeddings=np.zeros((2, 4)),
                               labels=np.array([0, 1]),
                               subject_ids=["a", "b"])
        assert batch.embeddings.shape == (2, 4)

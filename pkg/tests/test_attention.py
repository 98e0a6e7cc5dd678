"""Attention patterns against brute-force oracles, cost bookkeeping, gradients."""

import numpy as np
import pytest

from conftest import (
    allowed_masked_full,
    allowed_spatial,
    allowed_temporal,
    attention_oracle,
)
from mono2stereo.attention import (
    FULL_ATTENTION_TOKEN_GUARD,
    PATTERNS,
    AttentionParams,
    attend,
    attend_full,
    attend_masked_full,
    attend_spatial,
    attend_temporal,
    attention_backward,
    attention_weight_rows,
    max_gradient_relative_error,
    predicted_cost,
)
from mono2stereo.core import ValidationError


def make_instance(rng, n=None, h=None, w=None, c=None):
    n = n or int(rng.integers(1, 4))
    h = h or int(rng.integers(1, 4))
    w = w or int(rng.integers(1, 4))
    c = c or int(rng.integers(2, 6))
    x = rng.standard_normal((n, h, w, c))
    p = AttentionParams.random(c, rng)
    return x, p


class TestForwardAgainstOracle:
    def test_single_token_is_value_projection(self):
        rng = np.random.default_rng(0)
        x, p = make_instance(rng, 1, 1, 1, 4)
        for fn in (attend_spatial, attend_temporal, attend_full):
            out, _ = fn(x, p)
            assert np.allclose(out[0, 0, 0], x[0, 0, 0] @ p.w_v, atol=1e-12)

    def test_spatial_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        x, p = make_instance(rng, 2, 2, 2, 3)
        out, _ = attend_spatial(x, p)
        expected = attention_oracle(x, p.w_q, p.w_k, p.w_v, allowed_spatial(2, 2, 2))
        assert np.allclose(out, expected, atol=1e-12)

    def test_temporal_matches_bruteforce(self):
        rng = np.random.default_rng(2)
        x, p = make_instance(rng, 3, 1, 1, 4)
        out, _ = attend_temporal(x, p)
        expected = attention_oracle(x, p.w_q, p.w_k, p.w_v, allowed_temporal(3, 1, 1))
        assert np.allclose(out, expected, atol=1e-12)

    def test_full_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        x, p = make_instance(rng, 2, 2, 2, 3)
        out, _ = attend_full(x, p)
        expected = attention_oracle(
            x, p.w_q, p.w_k, p.w_v, np.ones((8, 8), dtype=bool)
        )
        assert np.allclose(out, expected, atol=1e-12)

    def test_masked_full_rows_match_bruteforce(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            x, p = make_instance(rng)
            n, h, w, _ = x.shape
            mask = (rng.random((n, h, w)) < 0.4).astype(np.uint8)
            out, _ = attend_masked_full(x, p, mask)
            expected = attention_oracle(
                x, p.w_q, p.w_k, p.w_v, allowed_masked_full(n, h, w, mask)
            )
            assert np.allclose(out, expected, atol=1e-12)

    def test_single_masked_token_mixes_row_sources(self):
        rng = np.random.default_rng(5)
        x, p = make_instance(rng, 2, 2, 2, 3)
        mask = np.zeros((2, 2, 2), dtype=np.uint8)
        mask[1, 0, 1] = 1
        out, _ = attend_masked_full(x, p, mask)
        full, _ = attend_full(x, p)
        spatial, _ = attend_spatial(x, p)
        flat_out = out.reshape(-1, 3)
        flat_full = full.reshape(-1, 3)
        flat_spatial = spatial.reshape(-1, 3)
        masked_idx = 1 * 4 + 0 * 2 + 1
        for i in range(8):
            if i == masked_idx:
                assert np.allclose(flat_out[i], flat_full[i], atol=1e-12)
            else:
                assert np.allclose(flat_out[i], flat_spatial[i], atol=1e-12)

    def test_full_equals_spatial_for_single_frame(self):
        rng = np.random.default_rng(6)
        x, p = make_instance(rng, 1, 3, 2, 4)
        out_full, _ = attend_full(x, p)
        out_spatial, _ = attend_spatial(x, p)
        assert np.array_equal(out_full, out_spatial)

    def test_temporal_single_frame_is_value_projection(self):
        rng = np.random.default_rng(7)
        x, p = make_instance(rng, 1, 2, 3, 4)
        out, _ = attend_temporal(x, p)
        assert np.allclose(out, x @ p.w_v, atol=1e-12)


class TestPatternReduction:
    def test_empty_mask_bit_identical_to_spatial(self):
        rng = np.random.default_rng(10)
        for _ in range(25):
            x, p = make_instance(rng)
            n, h, w, _ = x.shape
            out_m, cost_m = attend_masked_full(x, p, np.zeros((n, h, w), dtype=np.uint8))
            out_s, cost_s = attend_spatial(x, p)
            assert np.array_equal(out_m, out_s)
            assert cost_m.qk_dot_products == cost_s.qk_dot_products

    def test_full_mask_bit_identical_to_full(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            x, p = make_instance(rng)
            n, h, w, _ = x.shape
            out_m, cost_m = attend_masked_full(x, p, np.ones((n, h, w), dtype=np.uint8))
            out_f, cost_f = attend_full(x, p)
            assert np.array_equal(out_m, out_f)
            assert cost_m.qk_dot_products == cost_f.qk_dot_products


class TestCosts:
    def test_closed_forms_over_dimension_sweep(self):
        rng = np.random.default_rng(12)
        c = 2
        for n in range(1, 5):
            for h in range(1, 5):
                for w in range(1, 5):
                    x = rng.standard_normal((n, h, w, c))
                    p = AttentionParams.random(c, rng)
                    mask = (rng.random((n, h, w)) < 0.3).astype(np.uint8)
                    m = int(mask.sum())
                    _, r = attend_spatial(x, p)
                    assert r.qk_dot_products == n * (h * w) ** 2
                    _, r = attend_temporal(x, p)
                    assert r.qk_dot_products == n * n * h * w
                    _, r = attend_full(x, p)
                    assert r.qk_dot_products == n * n * h * h * w * w
                    _, r = attend_masked_full(x, p, mask)
                    assert r.qk_dot_products == (n * h * w - m) * h * w + m * n * h * w
                    for pattern, masked in (
                        ("spatial", 0), ("temporal", 0), ("full", 0), ("masked_full", m),
                    ):
                        assert predicted_cost(pattern, n, h, w, masked) >= 0

    def test_worked_cost_examples(self):
        rng = np.random.default_rng(30)
        x = rng.standard_normal((2, 2, 2, 2))
        p = AttentionParams.random(2, rng)
        _, r = attend_spatial(x, p)
        assert r.qk_dot_products == 32  # 2 frames x (2*2)^2
        _, r = attend_temporal(x, p)
        assert r.qk_dot_products == 16  # 2^2 frames x 4 locations
        _, r = attend_full(x, p)
        assert r.qk_dot_products == 64  # (2*2*2)^2

    def test_factorized_total_matches_sum(self):
        for n in range(1, 5):
            for h in range(1, 5):
                for w in range(1, 5):
                    total = predicted_cost("spatial", n, h, w) + predicted_cost(
                        "temporal", n, h, w
                    )
                    assert total == n * h * h * w * w + n * n * h * w

    def test_sparse_mask_overhead_stays_small(self):
        # at <= 5% masked tokens and modest frame counts the masked pattern
        # costs at most 1.5x the plain spatial pass; the ratio is
        # 1 + frac*(N-1), so this bound needs N <= 11
        for n, h, w in ((2, 8, 8), (4, 8, 8), (8, 4, 8), (8, 8, 8)):
            tokens = n * h * w
            assert tokens >= 64
            m = int(0.05 * tokens)
            masked_cost = predicted_cost("masked_full", n, h, w, m)
            spatial_cost = predicted_cost("spatial", n, h, w)
            assert masked_cost <= 1.5 * spatial_cost

    def test_dense_guard_rejects_large_grids(self):
        rng = np.random.default_rng(13)
        c = 2
        n, h, w = 2, 64, 33  # 4224 tokens > 4096
        assert n * h * w > FULL_ATTENTION_TOKEN_GUARD
        x = rng.standard_normal((n, h, w, c))
        p = AttentionParams.random(c, rng)
        with pytest.raises(ValidationError, match="guard"):
            attend_full(x, p)


class TestProperties:
    def test_rows_are_stochastic(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            x, p = make_instance(rng)
            n, h, w, c = x.shape
            tokens = x.reshape(-1, c)
            weights = attention_weight_rows(tokens, tokens, p)
            assert np.all(np.abs(weights.sum(axis=1) - 1.0) < 1e-12)

    def test_full_attention_permutation_equivariance(self):
        rng = np.random.default_rng(15)
        x, p = make_instance(rng, 2, 2, 2, 3)
        tokens = x.reshape(-1, 3)
        perm = rng.permutation(8)
        x_perm = tokens[perm].reshape(2, 2, 2, 3)
        out, _ = attend_full(x, p)
        out_perm, _ = attend_full(x_perm, p)
        assert np.allclose(out_perm.reshape(-1, 3), out.reshape(-1, 3)[perm], atol=1e-12)

    def test_masked_full_permutation_equivariance(self):
        rng = np.random.default_rng(16)
        x, p = make_instance(rng, 2, 2, 2, 3)
        mask = (rng.random((2, 2, 2)) < 0.5).astype(np.uint8)
        out, _ = attend_masked_full(x, p, mask)
        # the pattern is frame-structured, so the equivariance group is
        # frame permutations composed with within-frame shuffles (with the
        # mask permuted the same way), not arbitrary token permutations
        perm = np.array([1, 0])
        out_perm, _ = attend_masked_full(x[perm], p, mask[perm])
        assert np.allclose(out_perm, out[perm], atol=1e-12)
        spatial_perm = rng.permutation(4)
        x_flat = x.reshape(2, 4, 3)[:, spatial_perm].reshape(2, 2, 2, 3)
        m_flat = mask.reshape(2, 4)[:, spatial_perm].reshape(2, 2, 2)
        out_spatial, _ = attend_masked_full(x_flat, p, m_flat)
        assert np.allclose(
            out_spatial.reshape(2, 4, 3),
            out.reshape(2, 4, 3)[:, spatial_perm],
            atol=1e-12,
        )


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(20)
        x, p = make_instance(rng, 2, 2, 2, 3)
        mask = np.zeros((2, 2, 2), dtype=np.uint8)
        mask[0, 0, 0] = 1
        for pattern in PATTERNS:
            g = attention_backward(x, p, pattern, np.zeros_like(x),
                                   mask if pattern == "masked_full" else None)
            assert np.all(g.d_x == 0)
            assert np.all(g.d_wq == 0)
            assert np.all(g.d_wk == 0)
            assert np.all(g.d_wv == 0)

    def test_single_token_reduces_to_linear_map(self):
        rng = np.random.default_rng(21)
        x, p = make_instance(rng, 1, 1, 1, 4)
        upstream = rng.standard_normal(x.shape)
        g = attention_backward(x, p, "spatial", upstream)
        # out = x W_v, so dL/dx = g W_v^T and dL/dW_v = x^T g
        assert np.allclose(g.d_x[0, 0, 0], upstream[0, 0, 0] @ p.w_v.T, atol=1e-12)
        assert np.allclose(g.d_wv, np.outer(x[0, 0, 0], upstream[0, 0, 0]), atol=1e-12)
        assert np.allclose(g.d_wq, 0, atol=1e-12)
        assert np.allclose(g.d_wk, 0, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(22)
        worst = 0.0
        for trial in range(20):
            n, h, w = rng.integers(1, 4, 3)
            c = int(rng.integers(2, 9))
            x = rng.standard_normal((int(n), int(h), int(w), c))
            p = AttentionParams.random(c, rng)
            upstream = rng.standard_normal(x.shape)
            mask = (rng.random((int(n), int(h), int(w))) < 0.4).astype(np.uint8)
            pattern = PATTERNS[trial % 4]
            err = max_gradient_relative_error(
                x, p, pattern, upstream, mask if pattern == "masked_full" else None
            )
            worst = max(worst, err)
        assert worst < 1e-4

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(23)
        x, p = make_instance(rng, 2, 2, 2, 3)
        with pytest.raises(ValidationError):
            attention_backward(x, p, "spatial", np.zeros((1, 2, 2, 3)))
        with pytest.raises(ValidationError):
            attend(x, p, "masked_full", None)

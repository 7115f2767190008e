"""Tests for the kNN graph, EdgeConv, attention, and the layer stack."""

import numpy as np
import pytest

from tsad import autodiff as ad
from tsad.autodiff import ShapeError, Tensor, backward
from tsad.encoder import (
    EncoderLayerParams,
    KnnGraph,
    attention_block,
    edgeconv_forward,
    encode,
    knn_graph,
)

from gradcheck_utils import assert_grads_close, central_diff


def brute_force_knn(points, k):
    """Independent oracle: per-pair distances, stable sort, take k."""
    n = len(points)
    rows = []
    for i in range(n):
        d = np.sqrt(((points - points[i]) ** 2).sum(axis=1))
        rows.append(np.argsort(d, kind="stable")[:k])
    return np.stack(rows)


class TestKnnGraph:
    def test_k1_is_self_only(self):
        pts = np.random.default_rng(0).normal(size=(7, 3))
        graph = knn_graph(pts, 1)
        np.testing.assert_array_equal(graph.neighbor_indices[:, 0], np.arange(7))

    def test_collinear_hand_case(self):
        pts = np.array([[0.0], [1.0], [10.0]])
        graph = knn_graph(pts, 2)
        np.testing.assert_array_equal(graph.neighbor_indices[1], [1, 0])

    def test_duplicates_tie_break_to_lower_index(self):
        pts = np.array([[0.0], [0.0], [5.0]])
        graph = knn_graph(pts, 2)
        np.testing.assert_array_equal(graph.neighbor_indices[0], [0, 1])
        np.testing.assert_array_equal(graph.neighbor_indices[1], [0, 1])

    def test_self_loop_present(self):
        pts = np.random.default_rng(1).normal(size=(20, 4))
        graph = knn_graph(pts, 5)
        for i in range(20):
            assert i in graph.neighbor_indices[i]

    def test_matches_brute_force_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 64))
            d = int(rng.integers(1, 6))
            k = int(rng.integers(1, n + 1))
            pts = rng.normal(size=(n, d))
            graph = knn_graph(pts, k)
            np.testing.assert_array_equal(graph.neighbor_indices, brute_force_knn(pts, k))

    def test_duplicate_flood_matches_oracle(self):
        # many exact duplicates: the tie fallback path must agree too
        pts = np.array([[1.0], [1.0], [1.0], [2.0], [1.0]])
        for k in (1, 2, 3, 4, 5):
            np.testing.assert_array_equal(
                knn_graph(pts, k).neighbor_indices, brute_force_knn(pts, k)
            )

    def test_k_out_of_range(self):
        pts = np.zeros((3, 2))
        for k in (0, 4):
            with pytest.raises(ValueError):
                knn_graph(pts, k)


class TestEdgeConv:
    def test_self_only_collapses_to_phi(self):
        rng = np.random.default_rng(0)
        h = Tensor(rng.normal(size=(5, 3)))
        theta = Tensor(rng.normal(size=(3, 4)))
        phi = Tensor(rng.normal(size=(3, 4)))
        graph = knn_graph(h.data, 1)
        out = edgeconv_forward(h, graph, theta, phi)
        np.testing.assert_allclose(out.data, np.maximum(h.data @ phi.data, 0.0), atol=1e-12)

    def test_zero_theta_ignores_graph(self):
        rng = np.random.default_rng(1)
        h = Tensor(rng.normal(size=(6, 3)))
        theta = Tensor(np.zeros((3, 2)))
        phi = Tensor(rng.normal(size=(3, 2)))
        out_k2 = edgeconv_forward(h, knn_graph(h.data, 2), theta, phi)
        out_k5 = edgeconv_forward(h, knn_graph(h.data, 5), theta, phi)
        np.testing.assert_allclose(out_k2.data, out_k5.data, atol=1e-12)
        np.testing.assert_allclose(out_k2.data, np.maximum(h.data @ phi.data, 0.0), atol=1e-12)

    def test_hand_case_matches_exhaustive_oracle(self):
        h = np.array([[1.0], [2.0], [4.0]])
        theta = np.array([[3.0]])
        phi = np.array([[0.5]])
        graph = knn_graph(h, 2)
        out = edgeconv_forward(Tensor(h), graph, Tensor(theta), Tensor(phi)).data
        expect = np.empty((3, 1))
        for i in range(3):
            vals = [
                max(theta[0, 0] * (h[j, 0] - h[i, 0]) + phi[0, 0] * h[i, 0], 0.0)
                for j in graph.neighbor_indices[i]
            ]
            expect[i, 0] = max(vals)
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        h = rng.normal(size=(10, 3))
        theta = Tensor(rng.normal(size=(3, 4)))
        phi = Tensor(rng.normal(size=(3, 4)))
        base = edgeconv_forward(Tensor(h), knn_graph(h, 3), theta, phi).data
        perm = rng.permutation(10)
        permuted = edgeconv_forward(Tensor(h[perm]), knn_graph(h[perm], 3), theta, phi).data
        np.testing.assert_allclose(permuted, base[perm], atol=1e-12)

    def test_graph_size_mismatch(self):
        h = Tensor(np.zeros((4, 2)))
        bad = KnnGraph(neighbor_indices=np.zeros((3, 1), dtype=np.int64))
        with pytest.raises(ShapeError):
            edgeconv_forward(h, bad, Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))))


def naive_attention(x, params):
    """Loop-based oracle for the attention block (numpy only)."""
    s, l_w, h = x.shape
    nh = params.head_count
    dk = h // nh
    out = np.empty_like(x)
    for si in range(s):
        q = x[si] @ params.w_q.data
        k = x[si] @ params.w_k.data
        v = x[si] @ params.w_v.data
        heads = []
        for hi in range(nh):
            qs = q[:, hi * dk : (hi + 1) * dk]
            ks = k[:, hi * dk : (hi + 1) * dk]
            vs = v[:, hi * dk : (hi + 1) * dk]
            scores = qs @ ks.T / np.sqrt(dk)
            w = np.exp(scores - scores.max(axis=1, keepdims=True))
            w = w / w.sum(axis=1, keepdims=True)
            assert np.allclose(w.sum(axis=1), 1.0, atol=1e-9)
            heads.append(w @ vs)
        merged = np.concatenate(heads, axis=1) @ params.w_o.data
        r1 = _ln(x[si] + merged, params.ln1_gamma.data, params.ln1_beta.data)
        ffn = np.maximum(r1 @ params.ffn_w1.data + params.ffn_b1.data, 0.0) @ params.ffn_w2.data
        ffn = ffn + params.ffn_b2.data
        out[si] = _ln(r1 + ffn, params.ln2_gamma.data, params.ln2_beta.data)
    return out


def _ln(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


class TestAttentionBlock:
    def test_matches_naive_loop_single_head(self):
        rng = np.random.default_rng(3)
        params = EncoderLayerParams.create(d_in=4, d_out=4, head_count=1, rng=rng)
        x = rng.normal(size=(3, 2, 4))
        out = attention_block(Tensor(x), params).data
        np.testing.assert_allclose(out, naive_attention(x, params), atol=1e-10)

    def test_matches_naive_loop_multi_head(self):
        rng = np.random.default_rng(4)
        params = EncoderLayerParams.create(d_in=6, d_out=6, head_count=3, rng=rng)
        x = rng.normal(size=(2, 5, 6))
        out = attention_block(Tensor(x), params).data
        np.testing.assert_allclose(out, naive_attention(x, params), atol=1e-10)

    def test_single_timestep_weights_collapse_to_one(self):
        rng = np.random.default_rng(5)
        params = EncoderLayerParams.create(d_in=4, d_out=4, head_count=2, rng=rng)
        x = rng.normal(size=(2, 1, 4))
        out = attention_block(Tensor(x), params).data
        # with one timestep the value path passes through unmixed
        v = x @ params.w_v.data
        r1 = _ln(x + v @ params.w_o.data, params.ln1_gamma.data, params.ln1_beta.data)
        ffn = np.maximum(r1 @ params.ffn_w1.data + params.ffn_b1.data, 0.0) @ params.ffn_w2.data
        expect = _ln(r1 + ffn + params.ffn_b2.data, params.ln2_gamma.data, params.ln2_beta.data)
        np.testing.assert_allclose(out, expect, atol=1e-10)

    def test_sensors_do_not_mix(self):
        rng = np.random.default_rng(6)
        params = EncoderLayerParams.create(d_in=4, d_out=4, head_count=2, rng=rng)
        x = rng.normal(size=(3, 4, 4))
        base = attention_block(Tensor(x), params).data
        perturbed = x.copy()
        perturbed[1] += 10.0
        out = attention_block(Tensor(perturbed), params).data
        np.testing.assert_allclose(out[0], base[0], atol=1e-12)
        np.testing.assert_allclose(out[2], base[2], atol=1e-12)
        assert not np.allclose(out[1], base[1])

    def test_width_mismatch_rejected(self):
        params = EncoderLayerParams.create(d_in=4, d_out=4, head_count=2,
                                           rng=np.random.default_rng(0))
        with pytest.raises(ShapeError):
            attention_block(Tensor(np.zeros((2, 3, 6))), params)

    def test_indivisible_heads_rejected_at_create(self):
        with pytest.raises(ValueError, match="not divisible"):
            EncoderLayerParams.create(d_in=4, d_out=6, head_count=4,
                                      rng=np.random.default_rng(0))


def toy_layers(dims=(5, 6, 4), d0=3, heads=1, seed=7):
    rng = np.random.default_rng(seed)
    layers = []
    d_in = d0
    for d in dims:
        layers.append(EncoderLayerParams.create(d_in, d, heads, rng))
        d_in = d
    return layers


class TestEncode:
    def test_output_shapes(self):
        rng = np.random.default_rng(8)
        layers = toy_layers()
        emb = Tensor(rng.normal(size=(4, 2, 3)))
        outs = encode(emb, layers, k=3)
        assert [o.shape for o in outs] == [(2, 4, 5), (2, 4, 6), (2, 4, 4)]

    def test_edgeconv_mixes_sensors_unlike_attention(self):
        rng = np.random.default_rng(9)
        layers = toy_layers(dims=(5,), seed=10)
        emb = rng.normal(size=(4, 3, 3))
        base = encode(Tensor(emb), layers, k=4)[0].data
        bumped = emb.copy()
        bumped[:, 0, :] += 5.0
        out = encode(Tensor(bumped), layers, k=4)[0].data
        assert not np.allclose(out[1], base[1])  # EdgeConv drags sensor 1 along

    def test_no_edgeconv_ablation_is_linear_projection(self):
        rng = np.random.default_rng(11)
        layers = toy_layers(dims=(5,), seed=12)
        emb = rng.normal(size=(4, 2, 3))
        out = encode(Tensor(emb), layers, k=2, ablation="no_edgeconv")[0].data
        flat = emb.reshape(8, 3) @ layers[0].phi.data
        expect = attention_block(
            Tensor(flat.reshape(4, 2, 5).transpose(1, 0, 2)), layers[0]
        ).data
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_no_transformer_ablation_is_edgeconv_reshaped(self):
        rng = np.random.default_rng(13)
        layers = toy_layers(dims=(5,), seed=14)
        emb = rng.normal(size=(4, 2, 3))
        out = encode(Tensor(emb), layers, k=3, ablation="no_transformer")[0].data
        flat = emb.reshape(8, 3)
        graph = knn_graph(flat, 3)
        expect = (
            edgeconv_forward(Tensor(flat), graph, layers[0].theta, layers[0].phi)
            .data.reshape(4, 2, 5)
            .transpose(1, 0, 2)
        )
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_encoder_gradient_check_toy_window(self):
        rng = np.random.default_rng(15)
        layers = toy_layers(dims=(4, 4), d0=3, heads=2, seed=16)
        window = rng.normal(size=(4, 2, 3))
        weights = rng.normal(size=(2, 4, 4))

        def loss_fn():
            outs = encode(Tensor(window), layers, k=2)
            return ad.reduce_sum(ad.mul(outs[-1], Tensor(weights)))

        loss = loss_fn()
        backward(loss)
        for layer_idx, layer in enumerate(layers):
            for name, p in layer.parameters().items():
                analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

                def f():
                    with ad.no_grad():
                        return float(loss_fn().data)

                numeric = central_diff(f, p.data)
                assert_grads_close(analytic, numeric, what=f"layer{layer_idx}.{name}")

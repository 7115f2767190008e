"""Tests for Time2Vec embedding and the positional-encoding ablation."""

import numpy as np
import pytest

from tsad import autodiff as ad
from tsad.autodiff import AdamState, ShapeError, Tensor, adam_step, backward
from tsad.embedding import (
    PositionalEmbedParams,
    Time2VecParams,
    embed_window,
    embed_window_positional,
    sinusoidal_pe,
    time2vec_forward,
)


class TestTime2VecForward:
    def test_zero_params_zero_embedding(self):
        x = np.linspace(-1, 1, 8)
        out = time2vec_forward(x, np.zeros(5), np.zeros(5))
        np.testing.assert_array_equal(out.data, np.zeros((8, 5)))

    def test_sine_quarter_phase(self):
        omega = np.array([0.0, 1.0])
        phi = np.array([0.0, np.pi / 2])
        out = time2vec_forward(np.array([0.0]), omega, phi)
        assert out.data[0, 1] == pytest.approx(1.0)

    def test_periodicity_of_periodic_components(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            r = np.random.default_rng(seed)
            m = 4
            omega = r.uniform(0.2, 3.0, size=m + 1)
            phi = r.uniform(0, 1, size=m + 1)
            x = r.normal(size=6)
            base = time2vec_forward(x, omega, phi).data
            for j in range(1, m + 1):
                shifted = time2vec_forward(x + 2 * np.pi / omega[j], omega, phi).data
                np.testing.assert_allclose(shifted[:, j], base[:, j], atol=1e-9)

    def test_linear_component_is_affine(self):
        rng = np.random.default_rng(1)
        omega, phi = rng.uniform(0, 1, 4), rng.uniform(0, 1, 4)
        x = rng.normal(size=5)
        a = 3.7
        t2v = lambda v: time2vec_forward(np.asarray(v), omega, phi).data
        zero = t2v(np.zeros(5))
        np.testing.assert_allclose(
            t2v(a * x)[:, 0] - zero[:, 0], a * (t2v(x)[:, 0] - zero[:, 0]), atol=1e-12
        )


class TestEmbedWindow:
    def test_output_shape(self):
        params = Time2VecParams.create(sensor_count=3, m=6, rng=np.random.default_rng(0))
        out = embed_window(np.random.default_rng(1).normal(size=(10, 3)), params)
        assert out.shape == (10, 3, 7)

    def test_single_sensor_reduces_to_forward(self):
        rng = np.random.default_rng(2)
        params = Time2VecParams.create(sensor_count=1, m=4, rng=rng)
        window = np.random.default_rng(3).normal(size=(6, 1))
        whole = embed_window(window, params).data[:, 0, :]
        single = time2vec_forward(window[:, 0], params.omega.data[0], params.phi.data[0]).data
        np.testing.assert_allclose(whole, single, atol=1e-12)

    def test_sensor_permutation_permutes_slices(self):
        rng = np.random.default_rng(4)
        params = Time2VecParams.create(sensor_count=4, m=3, rng=rng)
        window = np.random.default_rng(5).normal(size=(5, 4))
        base = embed_window(window, params).data
        perm = np.array([2, 0, 3, 1])
        permuted_params = Time2VecParams(
            omega=Tensor(params.omega.data[perm]), phi=Tensor(params.phi.data[perm]), m=3
        )
        permuted = embed_window(window[:, perm], permuted_params).data
        np.testing.assert_allclose(permuted, base[:, perm, :], atol=1e-12)

    def test_sensor_count_mismatch(self):
        params = Time2VecParams.create(sensor_count=3, m=4)
        with pytest.raises(ShapeError):
            embed_window(np.zeros((5, 2)), params)

    def test_no_nan_for_finite_input(self):
        params = Time2VecParams.create(sensor_count=2, m=8, rng=np.random.default_rng(6))
        window = np.random.default_rng(7).normal(size=(20, 2)) * 100
        assert np.isfinite(embed_window(window, params).data).all()

    def test_gradients_reach_omega_and_phi(self):
        params = Time2VecParams.create(sensor_count=2, m=4, rng=np.random.default_rng(8))
        window = np.random.default_rng(9).normal(size=(6, 2))
        before = params.omega.data.copy()
        loss = ad.mse_loss(
            ad.reshape(embed_window(window, params), (6, 10)), Tensor(np.zeros((6, 10)))
        )
        backward(loss)
        plist = [params.omega, params.phi]
        adam_step(plist, None, AdamState.for_params(plist, lr=1e-2))
        assert np.linalg.norm(params.omega.data - before) > 0


class TestSinusoidalPe:
    def test_position_zero(self):
        pe = sinusoidal_pe(5, 8)
        np.testing.assert_array_equal(pe[0, 0::2], np.zeros(4))
        np.testing.assert_array_equal(pe[0, 1::2], np.ones(4))

    def test_bounded(self):
        pe = sinusoidal_pe(50, 16)
        assert np.all(pe >= -1.0) and np.all(pe <= 1.0)

    def test_content_independent(self):
        np.testing.assert_array_equal(sinusoidal_pe(7, 6), sinusoidal_pe(7, 6))

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            sinusoidal_pe(5, 7)


class TestPositionalAblation:
    def test_shape_and_pe_added(self):
        params = PositionalEmbedParams.create(d=6, rng=np.random.default_rng(0))
        window = np.zeros((4, 3))
        out = embed_window_positional(window, params).data
        assert out.shape == (4, 3, 6)
        # zero window: output is bias + PE, identical across sensors
        pe = sinusoidal_pe(4, 6)
        for s in range(3):
            np.testing.assert_allclose(out[:, s, :], pe + params.proj_b.data, atol=1e-12)

    def test_positional_part_identical_across_windows(self):
        # subtracting two embeddings cancels the PE term exactly
        params = PositionalEmbedParams.create(d=6, rng=np.random.default_rng(1))
        rng = np.random.default_rng(2)
        w1, w2 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        diff = embed_window_positional(w1, params).data - embed_window_positional(w2, params).data
        expected = (w1 - w2)[:, :, None] * params.proj_w.data[0][None, None, :]
        np.testing.assert_allclose(diff, expected, atol=1e-12)

"""Tests for the assembled model: shapes, checkpoints, gradients, training."""

import numpy as np
import pytest

from tsad import autodiff as ad
from tsad.autodiff import AdamState, adam_step, backward, zero_grad
from tsad.model import ABLATIONS, ModelConfig, ReconstructionModel

from gradcheck_utils import full_model_gradient_check


def toy_config(sensors=2, **kw):
    defaults = dict(
        sensor_count=sensors,
        m=2,
        encoder_dims=(4, 4, 4, 4),
        head_count=2,
        knn_k=2,
        d_agg=4,
        fc_dims=(4, 4),
        dropout=0.2,
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestModelForward:
    def test_output_shape(self):
        model = ReconstructionModel(toy_config(), rng=np.random.default_rng(0))
        xhat, outs = model.forward(np.random.default_rng(1).normal(size=(6, 2)))
        assert xhat.shape == (6, 2)
        assert [o.shape for o in outs] == [(2, 6, 4)] * 4

    def test_sensor_mismatch_rejected(self):
        model = ReconstructionModel(toy_config(sensors=3))
        with pytest.raises(ad.ShapeError):
            model.forward(np.zeros((5, 2)))

    def test_inference_deterministic(self):
        model = ReconstructionModel(toy_config(), rng=np.random.default_rng(2))
        window = np.random.default_rng(3).normal(size=(5, 2))
        a, _ = model.forward(window)
        b, _ = model.forward(window)
        np.testing.assert_array_equal(a.data, b.data)

    @pytest.mark.parametrize("ablation", ABLATIONS)
    def test_all_ablations_run(self, ablation):
        model = ReconstructionModel(toy_config(ablation=ablation), rng=np.random.default_rng(4))
        xhat, _ = model.forward(np.random.default_rng(5).normal(size=(5, 2)))
        assert xhat.shape == (5, 2)
        assert np.isfinite(xhat.data).all()

    def test_no_time2vec_pads_embed_dim_even(self):
        cfg = toy_config(ablation="no_time2vec", m=2)
        assert cfg.embed_dim == 4  # 3 padded to 4

    def test_bad_ablation_rejected(self):
        with pytest.raises(ValueError, match="ablation"):
            toy_config(ablation="no_decoder")


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = ReconstructionModel(toy_config(), rng=np.random.default_rng(6))
        path = tmp_path / "model.npz"
        model.save(path)
        loaded = ReconstructionModel.load(path)
        for (name_a, a), (name_b, b) in zip(
            model.parameters().items(), loaded.parameters().items()
        ):
            assert name_a == name_b
            np.testing.assert_array_equal(a.data, b.data)
        window = np.random.default_rng(7).normal(size=(5, 2))
        np.testing.assert_array_equal(
            model.forward(window)[0].data, loaded.forward(window)[0].data
        )

    def test_config_restored(self, tmp_path):
        cfg = toy_config(knn_k=2, encoder_dims=(4, 6, 4, 6), head_count=2)
        model = ReconstructionModel(cfg, rng=np.random.default_rng(8))
        path = tmp_path / "model.npz"
        model.save(path)
        assert ReconstructionModel.load(path).config == cfg

    def test_parameter_registry_order_stable(self):
        a = ReconstructionModel(toy_config(), rng=np.random.default_rng(9))
        b = ReconstructionModel(toy_config(), rng=np.random.default_rng(10))
        assert list(a.parameters().keys()) == list(b.parameters().keys())


class TestFullModelGradients:
    def test_toy_window_matches_finite_differences(self):
        checked = full_model_gradient_check(seed=0)
        assert checked > 500  # every parameter element was exercised

    def test_gradient_reaches_every_parameter(self):
        model = ReconstructionModel(toy_config(dropout=0.0), rng=np.random.default_rng(11))
        window = np.random.default_rng(12).normal(size=(4, 2))
        backward(model.window_loss(window, training=False))
        for name, p in model.parameters().items():
            assert p.grad is not None, f"no gradient for {name}"


class TestTrainingImprovesLoss:
    def test_three_epochs_halve_training_mse(self):
        # 200 anomaly-free windows; small widths keep this fast
        from tsad.data import generate_synthetic, make_windows, normalize

        ds = normalize(generate_synthetic(3, 230, 120, [], seed=21))
        batch = make_windows(ds.train, l_w=16, l_s=1)
        windows = batch.windows[:200]
        assert len(windows) == 200
        cfg = ModelConfig(
            sensor_count=3, m=4, encoder_dims=(8, 8, 8, 8), head_count=2,
            knn_k=4, d_agg=8, fc_dims=(8, 8), dropout=0.1,
        )
        model = ReconstructionModel(cfg, rng=np.random.default_rng(22))
        params = model.parameter_list()
        state = AdamState.for_params(params, lr=1e-3)
        rng = np.random.default_rng(23)

        def mean_loss():
            with ad.no_grad():
                return float(
                    np.mean([model.window_loss(w, training=False).data for w in windows])
                )

        initial = mean_loss()
        batch_size = 8  # 200 windows x 3 epochs: smaller batches give Adam enough steps
        for _ in range(3):
            for start in range(0, len(windows), batch_size):
                chunk = windows[start : start + batch_size]
                zero_grad(params)
                loss, _ = model.batch_loss(chunk, training=True, rng=rng)
                backward(loss)
                adam_step(params, None, state)
        final = mean_loss()
        assert final <= 0.5 * initial, f"loss only moved {initial:.4f} -> {final:.4f}"

"""Shared finite-difference gradient oracle used across test modules.

The numeric side never touches the tape: it re-evaluates the scalar
through whatever callable it is given, perturbing raw numpy buffers with
central differences (h = 1e-5, float64).
"""

import numpy as np

H = 1e-5
REL_TOL = 1e-4


def central_diff(f, array: np.ndarray, h: float = H) -> np.ndarray:
    """Central finite differences of scalar-valued f w.r.t. `array` in place."""
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def assert_grads_close(analytic: np.ndarray, numeric: np.ndarray, tol: float = REL_TOL, what: str = ""):
    err = max_rel_err(analytic, numeric)
    assert err <= tol, f"gradient mismatch{' for ' + what if what else ''}: rel err {err:.3e} > {tol}"


def full_model_gradient_check(seed: int = 0, tol: float = REL_TOL) -> int:
    """Check every model parameter against central differences on a 4x2
    toy window (training mode, fixed dropout mask). Returns the number of
    scalar parameters checked."""
    from tsad import autodiff as ad
    from tsad.model import ModelConfig, ReconstructionModel

    cfg = ModelConfig(
        sensor_count=2, m=2, encoder_dims=(4, 4, 4, 4), head_count=2,
        knn_k=2, d_agg=4, fc_dims=(4, 4), dropout=0.2,
    )
    model = ReconstructionModel(cfg, rng=np.random.default_rng(100 + seed))
    window = np.random.default_rng(200 + seed).normal(size=(4, 2))
    mask_seed = 300 + seed

    def loss_value():
        with ad.no_grad():
            loss = model.window_loss(window, training=True,
                                     rng=np.random.default_rng(mask_seed))
        return float(loss.data)

    loss = model.window_loss(window, training=True, rng=np.random.default_rng(mask_seed))
    ad.backward(loss)
    checked = 0
    for name, p in model.parameters().items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        assert_grads_close(analytic, central_diff(loss_value, p.data),
                           tol=tol, what=f"model.{name} (seed {seed})")
        checked += p.data.size
    ad.zero_grad(model.parameter_list())
    return checked


def run_op_gradient_suite(n_seeds: int) -> int:
    """Finite-difference check every differentiable op over random shapes.

    Returns the number of (op, seed) cases exercised; raises on the first
    gradient disagreement beyond REL_TOL.
    """
    from tsad import autodiff as ad

    cases = 0
    for seed in range(n_seeds):
        rng = np.random.default_rng(1000 + seed)
        m, k, n = rng.integers(1, 5, size=3)
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, n))
        x = rng.normal(size=(int(rng.integers(2, 5)), int(rng.integers(2, 5)))) * 2.0
        gamma = rng.normal(size=x.shape[-1])
        beta = rng.normal(size=x.shape[-1])
        w = rng.normal(size=x.shape)

        def check(build, arrays, names):
            nonlocal cases
            tensors = [ad.Tensor(arr, requires_grad=True) for arr in arrays]
            loss = build(*tensors)
            ad.backward(loss)
            for t, arr, name in zip(tensors, arrays, names):

                def f():
                    ts = [ad.Tensor(v) for v in arrays]
                    return float(build(*ts).data)

                assert_grads_close(t.grad, central_diff(f, arr), what=f"{name} (seed {seed})")
                cases += 1

        check(lambda ta, tb: ad.reduce_sum(ad.matmul(ta, tb)), [a, b], ["matmul/a", "matmul/b"])
        check(lambda tx: ad.reduce_sum(ad.relu(tx)), [x + 0.05], ["relu"])
        check(lambda tx: ad.reduce_sum(ad.leaky_relu(tx, 0.01)), [x + 0.05], ["leaky_relu"])
        check(lambda tx: ad.reduce_sum(ad.sine(tx)), [x], ["sine"])
        check(lambda tx: ad.reduce_sum(ad.mul(ad.softmax(tx, axis=1), ad.Tensor(w))), [x], ["softmax"])
        check(
            lambda tx, tg, tb2: ad.reduce_sum(ad.mul(ad.layer_norm(tx, tg, tb2), ad.Tensor(w))),
            [x, gamma, beta],
            ["layer_norm/x", "layer_norm/gamma", "layer_norm/beta"],
        )
        check(lambda tx: ad.reduce_sum(ad.reduce_max(tx, axis=1)), [x], ["reduce_max"])
        check(lambda tx: ad.reduce_sum(ad.reduce_mean(tx, axis=0)), [x], ["reduce_mean"])
        check(lambda tx: ad.reduce_sum(ad.reduce_sum(tx, axis=1), axis=None), [x], ["reduce_sum"])
        check(lambda ta, tb: ad.mse_loss(ta, tb), [a.copy(), a + rng.normal(size=a.shape)],
              ["mse/xhat", "mse/x"])
        check(lambda ta, tb: ad.reduce_sum(ad.mul(ad.div(ta, tb), ad.Tensor(w))),
              [x.copy(), np.abs(w) + 1.5], ["div/num", "div/den"])
        check(lambda tx: ad.reduce_sum(ad.power(tx, 3.0)), [x.copy()], ["power"])

        # dropout: mask must be identical across FD re-evaluations
        def build_dropout(tx):
            return ad.reduce_sum(ad.dropout(tx, 0.4, True, np.random.default_rng(seed)))

        check(build_dropout, [x.copy()], ["dropout"])

        # gather + slice + concat + transpose composite
        idx = rng.integers(0, x.shape[0], size=(3, 2))

        def build_shapes(tx):
            g = ad.take(tx, idx)
            t = ad.transpose(g, (1, 0, 2))
            c = ad.concat([t, t], axis=1)
            return ad.reduce_sum(ad.mul(c[:, 1:, :], c[:, 1:, :]))

        check(build_shapes, [x.copy()], ["take/transpose/concat/slice"])
    return cases

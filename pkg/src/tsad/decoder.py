"""Decoder: multi-scale aggregation, sensor pooling, FC reconstruction
head, and the per-point reconstruction error.

The four encoder outputs are spliced on the feature axis (256+512+1024+
1024 = 2816 at default widths), reduced by an MLP, pooled over the sensor
axis by concatenated max+mean, and mapped back to the sensor dimension by
three fully connected layers (the last a pure linear projection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tsad import autodiff as ad
from tsad.autodiff import ShapeError, Tensor
from tsad.initializers import kaiming_uniform, ones, zeros

__all__ = [
    "DecoderParams",
    "aggregate_multiscale",
    "global_pool",
    "reconstruct",
    "reconstruction_error",
]


@dataclass
class DecoderParams:
    mlp_w: Tensor    # [sum(encoder dims), d_agg]
    mlp_b: Tensor
    fc1_w: Tensor    # [2 * d_agg, d_fc1]
    fc1_b: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    fc2_w: Tensor    # [d_fc1, d_fc2]
    fc2_b: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    head_w: Tensor   # [d_fc2, S]
    head_b: Tensor
    dropout_p: float = 0.2
    leaky_slope: float = 0.01

    @classmethod
    def create(cls, concat_dim: int, sensor_count: int, rng: np.random.Generator,
               d_agg: int = 512, d_fc1: int = 512, d_fc2: int = 256,
               dropout_p: float = 0.2, leaky_slope: float = 0.01,
               output_bias: float = 0.0):
        # output_bias seeds the head at the data midpoint (0.5 for
        # min-max-normalized series), so training starts from
        # "predict the mean" instead of uncalibrated noise
        return cls(
            mlp_w=kaiming_uniform(rng, (concat_dim, d_agg), fan_in=concat_dim),
            mlp_b=zeros(d_agg),
            fc1_w=kaiming_uniform(rng, (2 * d_agg, d_fc1), fan_in=2 * d_agg),
            fc1_b=zeros(d_fc1),
            ln1_gamma=ones(d_fc1),
            ln1_beta=zeros(d_fc1),
            fc2_w=kaiming_uniform(rng, (d_fc1, d_fc2), fan_in=d_fc1),
            fc2_b=zeros(d_fc2),
            ln2_gamma=ones(d_fc2),
            ln2_beta=zeros(d_fc2),
            head_w=Tensor(
                kaiming_uniform(rng, (d_fc2, sensor_count), fan_in=d_fc2).data * 0.05,
                requires_grad=True,
            ),
            head_b=Tensor(np.full(sensor_count, float(output_bias)), requires_grad=True),
            dropout_p=dropout_p,
            leaky_slope=leaky_slope,
        )

    def parameters(self, prefix: str = "dec.") -> dict:
        named = {}
        for name in ("mlp_w", "mlp_b", "fc1_w", "fc1_b", "ln1_gamma", "ln1_beta",
                     "fc2_w", "fc2_b", "ln2_gamma", "ln2_beta", "head_w", "head_b"):
            named[f"{prefix}{name}"] = getattr(self, name)
        return named


def aggregate_multiscale(layer_outputs, params: DecoderParams) -> Tensor:
    """Concatenate the encoder outputs on the feature axis and reduce.

    Concatenation order is layer 1..4 and stable across runs. Raises when
    the spliced width does not match the aggregation MLP.
    """
    widths = [o.shape[-1] for o in layer_outputs]
    expected = params.mlp_w.shape[0]
    if sum(widths) != expected:
        raise ShapeError(
            f"multi-scale widths {widths} sum to {sum(widths)}, aggregator expects {expected}"
        )
    spliced = ad.concat(list(layer_outputs), axis=-1)
    return ad.add(ad.matmul(spliced, params.mlp_w), params.mlp_b)


def global_pool(x: Tensor) -> Tensor:
    """Max- and mean-pool over the sensor axis, spliced on features.

    The sensor axis is the third-from-last: [S, l_w, d] -> [l_w, 2d], or
    batched [B, S, l_w, d] -> [B, l_w, 2d].
    """
    axis = x.ndim - 3
    return ad.concat([ad.reduce_max(x, axis=axis), ad.reduce_mean(x, axis=axis)], axis=-1)


def reconstruct(pooled: Tensor, params: DecoderParams, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """FC head: fc -> LeakyReLU -> LayerNorm -> dropout, twice, then a
    pure linear projection to the sensor dimension. [l_w,2d] -> [l_w,S]."""
    if training and rng is None:
        raise ValueError("training-mode reconstruct needs an rng for dropout")
    rng = rng or np.random.default_rng(0)
    z = ad.add(ad.matmul(pooled, params.fc1_w), params.fc1_b)
    z = ad.layer_norm(ad.leaky_relu(z, params.leaky_slope), params.ln1_gamma, params.ln1_beta)
    z = ad.dropout(z, params.dropout_p, training, rng)
    z = ad.add(ad.matmul(z, params.fc2_w), params.fc2_b)
    z = ad.layer_norm(ad.leaky_relu(z, params.leaky_slope), params.ln2_gamma, params.ln2_beta)
    z = ad.dropout(z, params.dropout_p, training, rng)
    return ad.add(ad.matmul(z, params.head_w), params.head_b)


def reconstruction_error(xhat, x) -> np.ndarray:
    """Elementwise absolute reconstruction error |xhat - x|, shape [l_w, S]."""
    xhat = xhat.data if isinstance(xhat, Tensor) else np.asarray(xhat)
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    if xhat.shape != x.shape:
        raise ShapeError(f"reconstruction_error: shapes {xhat.shape} and {x.shape} differ")
    return np.abs(xhat - x)

"""The full reconstruction model: embedding -> encoder stack -> decoder,
with a named-parameter registry and bit-exact checkpointing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from tsad import autodiff as ad
from tsad.autodiff import Tensor
from tsad.data import make_windows
from tsad.decoder import DecoderParams, aggregate_multiscale, global_pool, reconstruct
from tsad.embedding import (
    PositionalEmbedParams,
    Time2VecParams,
    embed_window,
    embed_window_batch,
    embed_window_positional,
    embed_window_positional_batch,
)
from tsad.encoder import EncoderLayerParams, encode, encode_batch

__all__ = ["ModelConfig", "ReconstructionModel", "ABLATIONS", "CHECKPOINT_VERSION"]

ABLATIONS = ("none", "no_time2vec", "no_edgeconv", "no_transformer")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Structural hyperparameters. Defaults follow the reference
    architecture: 64+1 embedding, encoder widths 256/512/1024/1024,
    8 heads, aggregation to 512, FC head 1024 -> 512 -> 256 -> S."""

    sensor_count: int
    m: int = 64
    encoder_dims: tuple = (256, 512, 1024, 1024)
    head_count: int = 8
    knn_k: int = 8
    d_agg: int = 512
    fc_dims: tuple = (512, 256)
    dropout: float = 0.2
    leaky_slope: float = 0.01
    output_bias: float = 0.5
    ablation: str = "none"

    def __post_init__(self):
        self.encoder_dims = tuple(self.encoder_dims)
        self.fc_dims = tuple(self.fc_dims)
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @property
    def embed_dim(self) -> int:
        if self.ablation == "no_time2vec":
            d = self.m + 1
            return d + (d % 2)  # pad to even for the sin/cos encoding
        return self.m + 1


class ReconstructionModel:
    """Window in, reconstructed window out.

    Wraps the embedding/encoder/decoder parameter sets, exposes them as a
    flat named registry (stable order), and round-trips through ``.npz``
    checkpoints bit-exactly.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.config = config
        if config.ablation == "no_time2vec":
            self.embedding = PositionalEmbedParams.create(d=config.embed_dim, rng=rng)
        else:
            self.embedding = Time2VecParams.create(config.sensor_count, m=config.m, rng=rng)
        self.layers = []
        d_in = config.embed_dim
        for d_out in config.encoder_dims:
            self.layers.append(EncoderLayerParams.create(d_in, d_out, config.head_count, rng))
            d_in = d_out
        self.decoder = DecoderParams.create(
            concat_dim=sum(config.encoder_dims),
            sensor_count=config.sensor_count,
            rng=rng,
            d_agg=config.d_agg,
            d_fc1=config.fc_dims[0],
            d_fc2=config.fc_dims[1],
            dropout_p=config.dropout,
            leaky_slope=config.leaky_slope,
            output_bias=config.output_bias,
        )

    # -- parameters ----------------------------------------------------
    def parameters(self) -> dict:
        named = dict(self.embedding.parameters())
        for i, layer in enumerate(self.layers):
            named.update(layer.parameters(prefix=f"enc{i}."))
        named.update(self.decoder.parameters())
        return named

    def parameter_list(self) -> list:
        return list(self.parameters().values())

    # -- forward -------------------------------------------------------
    def forward(self, window: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None):
        """Reconstruct one [l_w, S] window; returns (xhat, encoder outputs)."""
        window = np.asarray(window, dtype=np.float64)
        if window.shape[1] != self.config.sensor_count:
            raise ad.ShapeError(
                f"window has {window.shape[1]} sensors, model expects {self.config.sensor_count}"
            )
        if self.config.ablation == "no_time2vec":
            emb = embed_window_positional(window, self.embedding)
        else:
            emb = embed_window(window, self.embedding)
        outs = encode(emb, self.layers, self.config.knn_k, ablation=self.config.ablation)
        agg = aggregate_multiscale(outs, self.decoder)
        pooled = global_pool(agg)
        xhat = reconstruct(pooled, self.decoder, training=training, rng=rng)
        return xhat, outs

    def forward_batch(self, windows: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None):
        """Reconstruct stacked windows: [B, l_w, S] -> [B, l_w, S]."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.shape[2] != self.config.sensor_count:
            raise ad.ShapeError(
                f"windows have {windows.shape[2]} sensors, "
                f"model expects {self.config.sensor_count}"
            )
        if self.config.ablation == "no_time2vec":
            emb = embed_window_positional_batch(windows, self.embedding)
        else:
            emb = embed_window_batch(windows, self.embedding)
        outs = encode_batch(emb, self.layers, self.config.knn_k, ablation=self.config.ablation)
        agg = aggregate_multiscale(outs, self.decoder)
        pooled = global_pool(agg)
        return reconstruct(pooled, self.decoder, training=training, rng=rng)

    def window_loss(self, window: np.ndarray, training: bool = False,
                    rng: np.random.Generator | None = None):
        xhat, _ = self.forward(window, training=training, rng=rng)
        return ad.mse_loss(xhat, Tensor(np.asarray(window, dtype=np.float64)))

    def batch_loss(self, windows: np.ndarray, training: bool = False,
                   rng: np.random.Generator | None = None):
        """Mean per-window loss over a stack; returns (loss, xhat)."""
        xhat = self.forward_batch(windows, training=training, rng=rng)
        return ad.mse_loss(xhat, Tensor(np.asarray(windows, dtype=np.float64))), xhat

    def window_losses(self, windows: np.ndarray, chunk: int = 32) -> np.ndarray:
        """Inference-mode per-window losses over a stack (no tape)."""
        windows = np.asarray(windows, dtype=np.float64)
        out = np.empty(len(windows))
        with ad.no_grad():
            for s in range(0, len(windows), chunk):
                part = windows[s : s + chunk]
                xhat = self.forward_batch(part, training=False)
                diff = xhat.data - part
                out[s : s + chunk] = (diff * diff).sum(axis=(1, 2)) / part.shape[1]
        return out

    def mean_loss(self, series: np.ndarray, l_w: int, l_s: int) -> float:
        """Inference-mode mean window loss over a series (no tape)."""
        batch = make_windows(series, l_w, l_s)
        return float(self.window_losses(batch.windows).mean())

    # -- checkpointing ---------------------------------------------------
    def save(self, path):
        arrays = {name: t.data for name, t in self.parameters().items()}
        meta = dict(asdict(self.config))
        np.savez(
            path,
            __version__=np.array(CHECKPOINT_VERSION),
            __config__=np.array(json.dumps(meta)),
            **arrays,
        )

    @classmethod
    def load(cls, path) -> "ReconstructionModel":
        with np.load(path, allow_pickle=False) as blob:
            version = int(blob["__version__"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            meta = json.loads(str(blob["__config__"]))
            model = cls(ModelConfig(**meta), rng=np.random.default_rng(0))
            params = model.parameters()
            for name, tensor in params.items():
                stored = blob[name]
                if stored.shape != tensor.data.shape:
                    raise ValueError(
                        f"checkpoint array {name} has shape {stored.shape}, "
                        f"expected {tensor.data.shape}"
                    )
                tensor.data = stored.astype(np.float64)
        return model

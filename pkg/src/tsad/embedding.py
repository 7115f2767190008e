"""Input embeddings: per-sensor Time2Vec, plus the fixed sinusoidal
positional encoding used only by the embedding ablation.

Time2Vec maps each sensor's value series through one learnable linear
component (index 0) and m learnable sine components, so the embedded
window has shape [l_w, S, m+1]. Frequencies and phases are per-sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tsad import autodiff as ad
from tsad.autodiff import ShapeError, Tensor
from tsad.initializers import kaiming_uniform, zeros

__all__ = [
    "Time2VecParams",
    "PositionalEmbedParams",
    "time2vec_forward",
    "embed_window",
    "sinusoidal_pe",
    "embed_window_positional",
]


@dataclass
class Time2VecParams:
    """Learnable frequencies/slopes and phase shifts, one row per sensor."""

    omega: Tensor  # [S, m+1]
    phi: Tensor    # [S, m+1]
    m: int

    @classmethod
    def create(cls, sensor_count: int, m: int = 64, rng: np.random.Generator | None = None):
        # small positive init keeps the sine components alive
        rng = rng or np.random.default_rng(0)
        omega = Tensor(rng.uniform(0.0, 1.0, size=(sensor_count, m + 1)), requires_grad=True)
        phi = Tensor(rng.uniform(0.0, 1.0, size=(sensor_count, m + 1)), requires_grad=True)
        return cls(omega=omega, phi=phi, m=m)

    @property
    def sensor_count(self) -> int:
        return self.omega.shape[0]

    def parameters(self) -> dict:
        return {"t2v.omega": self.omega, "t2v.phi": self.phi}


def time2vec_forward(x, omega, phi) -> Tensor:
    """Embed one sensor's value series: [l_w] -> [l_w, m+1].

    Component 0 is omega_0 * x + phi_0; components 1..m are
    sin(omega_j * x + phi_j).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    omega = omega if isinstance(omega, Tensor) else Tensor(omega)
    phi = phi if isinstance(phi, Tensor) else Tensor(phi)
    l_w = x.shape[0]
    width = omega.shape[0]
    z = ad.add(ad.mul(ad.reshape(x, (l_w, 1)), ad.reshape(omega, (1, width))),
               ad.reshape(phi, (1, width)))
    return ad.concat([z[:, 0:1], ad.sine(z[:, 1:])], axis=1)


def embed_window(window, params: Time2VecParams) -> Tensor:
    """Embed a whole window: [l_w, S] -> [l_w, S, m+1], per-sensor independent."""
    window = window if isinstance(window, Tensor) else Tensor(window)
    l_w, s = window.shape
    if s != params.sensor_count:
        raise ShapeError(
            f"window has {s} sensors but embedding holds {params.sensor_count}"
        )
    width = params.m + 1
    om = ad.reshape(params.omega, (1, s, width))
    ph = ad.reshape(params.phi, (1, s, width))
    z = ad.add(ad.mul(ad.reshape(window, (l_w, s, 1)), om), ph)
    return ad.concat([z[:, :, 0:1], ad.sine(z[:, :, 1:])], axis=2)


def embed_window_batch(windows, params: Time2VecParams) -> Tensor:
    """Vectorized embedding of stacked windows: [B, l_w, S] -> [B, l_w, S, m+1]."""
    windows = windows if isinstance(windows, Tensor) else Tensor(windows)
    b, l_w, s = windows.shape
    if s != params.sensor_count:
        raise ShapeError(
            f"windows have {s} sensors but embedding holds {params.sensor_count}"
        )
    width = params.m + 1
    om = ad.reshape(params.omega, (1, 1, s, width))
    ph = ad.reshape(params.phi, (1, 1, s, width))
    z = ad.add(ad.mul(ad.reshape(windows, (b, l_w, s, 1)), om), ph)
    return ad.concat([z[:, :, :, 0:1], ad.sine(z[:, :, :, 1:])], axis=3)


def sinusoidal_pe(l_w: int, d: int) -> np.ndarray:
    """Fixed sin/cos positional encoding [l_w, d]; `d` must be even.

    Content-independent by construction: identical for every window.
    """
    if d % 2 != 0:
        raise ValueError(f"positional encoding dimension must be even, got {d}")
    pos = np.arange(l_w, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.empty((l_w, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


@dataclass
class PositionalEmbedParams:
    """Ablation path: learned scalar->d projection plus fixed positions.

    The main path's 65-dim embedding is padded to 66 here so the sin/cos
    encoding gets an even width; the main path is untouched.
    """

    proj_w: Tensor  # [1, d]
    proj_b: Tensor  # [d]
    d: int

    @classmethod
    def create(cls, d: int = 66, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        return cls(proj_w=kaiming_uniform(rng, (1, d), fan_in=1), proj_b=zeros(d), d=d)

    def parameters(self) -> dict:
        return {"pe.proj_w": self.proj_w, "pe.proj_b": self.proj_b}


def embed_window_positional(window, params: PositionalEmbedParams) -> Tensor:
    """Ablation embedding: project raw values to d dims and add PE(t)."""
    window = window if isinstance(window, Tensor) else Tensor(window)
    l_w, s = window.shape
    val = ad.matmul(ad.reshape(window, (l_w, s, 1)), params.proj_w)  # [l_w, S, d]
    val = ad.add(val, params.proj_b)
    pe = Tensor(sinusoidal_pe(l_w, params.d).reshape(l_w, 1, params.d))
    return ad.add(val, pe)


def embed_window_positional_batch(windows, params: PositionalEmbedParams) -> Tensor:
    """Batched ablation embedding: [B, l_w, S] -> [B, l_w, S, d]."""
    windows = windows if isinstance(windows, Tensor) else Tensor(windows)
    b, l_w, s = windows.shape
    val = ad.matmul(ad.reshape(windows, (b, l_w, s, 1)), params.proj_w)
    val = ad.add(val, params.proj_b)
    pe = Tensor(sinusoidal_pe(l_w, params.d).reshape(1, l_w, 1, params.d))
    return ad.add(val, pe)

"""Parameter initialization helpers."""

import numpy as np

from tsad.autodiff import Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Uniform(-b, b) with b = sqrt(6 / fan_in), as a trainable tensor."""
    bound = np.sqrt(6.0 / max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)

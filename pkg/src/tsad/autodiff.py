"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation returns a new :class:`Tensor` whose node remembers its
parents and a backward closure. :func:`backward` walks the recorded graph
once in reverse topological order, accumulates gradients into ``.grad``
for every tensor that requires them, and then clears the tape. There is
no support for higher-order gradients.

All buffers are float64. Tensors are treated as immutable values while a
graph is being recorded; parameter updates (``adam_step``) swap buffers
between tapes.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "activation",
    "relu",
    "leaky_relu",
    "sine",
    "identity",
    "softmax",
    "layer_norm",
    "reduce",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "dropout",
    "mse_loss",
    "matmul",
    "reshape",
    "transpose",
    "concat",
    "take",
    "backward",
    "AdamState",
    "adam_step",
    "zero_grad",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Temporarily disable graph recording (cheap inference passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense n-dimensional float64 array, optionally on the tape.

    ``requires_grad`` marks leaves whose gradient is wanted; interior
    nodes inherit it from their parents. After :func:`backward` runs,
    ``.grad`` holds the accumulated gradient (summed across repeated
    backward calls until :func:`zero_grad`).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return _slice(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _from_op(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _from_op(out, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        return (-g,)

    return _from_op(-a.data, (a,), bw)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _from_op(out, (a,), bw)


# ---------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style broadcasting of leading dims.

    Gradients of both operands are recorded; the inner dimensions must
    agree.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _from_op(out, (a, b), bw)


# ---------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------

def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0  # subgradient 0 at 0

    def bw(g):
        return (g * mask,)

    return _from_op(np.where(mask, x.data, 0.0), (x,), bw)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def bw(g):
        return (g * np.where(mask, 1.0, slope),)

    return _from_op(np.where(mask, x.data, slope * x.data), (x,), bw)


def sine(x) -> Tensor:
    x = _as_tensor(x)

    def bw(g):
        return (g * np.cos(x.data),)

    return _from_op(np.sin(x.data), (x,), bw)


def identity(x) -> Tensor:
    x = _as_tensor(x)

    def bw(g):
        return (g,)

    return _from_op(x.data, (x,), bw)


_ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "sine": sine, "identity": identity}


def activation(kind: str, x, slope: float = 0.01) -> Tensor:
    """Elementwise activation dispatcher: relu, leaky_relu, sine, identity."""
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


# ---------------------------------------------------------------------
# softmax / layer norm
# ---------------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtracted)."""
    x = _as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _from_op(y, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    `gamma` and `beta` must be 1-d with the size of the last axis.
    Variance is the population variance (1/D) with `eps` floor.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = gamma.data * xhat + beta.data

    def bw(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        gy = g * gamma.data
        dx = inv_std * (
            gy
            - gy.mean(axis=-1, keepdims=True)
            - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _from_op(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------

def _check_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for ndim {ndim}")
    return axis % ndim


def reduce_max(x, axis: int) -> Tensor:
    """Max along `axis` (removed). Gradient routes to the first argmax."""
    x = _as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    idx = np.argmax(x.data, axis=axis)  # first occurrence on ties
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _from_op(out, (x,), bw)


def reduce_mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size

        def bw_all(g):
            return (np.full_like(x.data, g / n),)

        return _from_op(x.data.mean(), (x,), bw_all)
    axis = _check_axis(axis, x.ndim)
    n = x.shape[axis]

    def bw(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _from_op(x.data.mean(axis=axis), (x,), bw)


def reduce_sum(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:

        def bw_all(g):
            return (np.full_like(x.data, g),)

        return _from_op(x.data.sum(), (x,), bw_all)
    axis = _check_axis(axis, x.ndim)
    n = x.shape[axis]

    def bw(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return _from_op(x.data.sum(axis=axis), (x,), bw)


_REDUCERS = {"max": reduce_max, "mean": reduce_mean, "sum": reduce_sum}


def reduce(kind: str, x, axis: int) -> Tensor:
    """Reduction dispatcher: max (argmax-routed gradient), mean, sum."""
    try:
        return _REDUCERS[kind](x, axis)
    except KeyError:
        raise ValueError(f"unknown reduce kind {kind!r}") from None


# ---------------------------------------------------------------------
# dropout / loss
# ---------------------------------------------------------------------

def dropout(x, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with prob `p`, scale survivors by 1/(1-p).

    Identity when `training` is false or `p` == 0. Requires 0 <= p < 1.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return identity(x)
    scale = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        return (g * scale,)

    return _from_op(x.data * scale, (x,), bw)


def mse_loss(xhat, x) -> Tensor:
    """Squared-error loss: sum over the sensor axis, mean over time rows.

    For a [l_w, S] window this is (1/l_w) * sum_t ||xhat_t - x_t||^2; a
    leading batch axis extends the mean over all time rows.
    """
    xhat, x = _as_tensor(xhat), _as_tensor(x)
    if xhat.shape != x.shape:
        raise ShapeError(f"mse_loss: shapes {xhat.shape} and {x.shape} differ")
    rows = max(1, xhat.data.size // xhat.shape[-1])
    diff = xhat.data - x.data
    out = (diff * diff).sum() / rows

    def bw(g):
        gd = (2.0 / rows) * diff * g
        return gd, -gd

    return _from_op(out, (xhat, x), bw)


# ---------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)

    def bw(g):
        return (g.reshape(x.shape),)

    return _from_op(x.data.reshape(shape), (x,), bw)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _from_op(x.data.transpose(axes), (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    axis = _check_axis(axis, tensors[0].ndim)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def take(x, indices) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate gradient."""
    x = _as_tensor(x)
    indices = np.asarray(indices)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, indices, g)
        return (gx,)

    return _from_op(x.data[indices], (x,), bw)


def _slice(x, key) -> Tensor:
    x = _as_tensor(x)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _from_op(x.data[key], (x,), bw)


# ---------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------

def backward(loss: Tensor):
    """Run reverse-mode accumulation from a scalar loss.

    Populates ``.grad`` (accumulating) on every requires_grad tensor
    reachable from `loss`, clears the tape, and returns a mapping from
    those tensors to their gradient arrays for this call.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    result = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
            result[node] = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    for node in order:  # clear the tape
        node._parents = ()
        node._backward = None
    return result


def zero_grad(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments for an ordered parameter list, with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params, grads, state: AdamState):
    """One Adam update. `grads` may be None to use each param's ``.grad``.

    Buffers are updated in place; the same parameter list is returned.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("adam_step: params, grads and state lengths differ")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params

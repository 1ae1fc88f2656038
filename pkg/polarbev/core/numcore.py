"""Minimal differentiable numeric core.

Dense float64 tensors plus the fixed set of kernels the detection pipeline
needs. Every kernel computes its forward value with numpy and, when a
:class:`Tape` is active, records a closure holding its analytic backward pass.
``Tape.backward(loss)`` replays the closures in reverse and accumulates into
``Tensor.grad``. Gradients are added, never overwritten: callers zero them
between optimisation steps.

Inputs that are plain numpy arrays (or Python scalars) are constants and never
receive gradients.
"""
from __future__ import annotations

import contextlib
from contextvars import ContextVar
from typing import Callable, Iterator, Sequence, Union

import numpy as np
from scipy.special import expit

from polarbev.core.errors import ConfigurationError, DimensionError, NumericError

SINUSOID_PERIOD = 10000.0

_CHECK_FINITE: ContextVar[bool] = ContextVar("polarbev_check_finite", default=True)
_TAPE: ContextVar["Tape | None"] = ContextVar("polarbev_tape", default=None)


class Tensor:
    """Dense row-major float64 array with an optional gradient slot"""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = True, grad: np.ndarray | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if _CHECK_FINITE.get() and not np.isfinite(arr).all():
            raise NumericError("tensor contains non-finite values", shape=arr.shape)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        if grad is not None:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != arr.shape:
                raise DimensionError("gradient shape differs from data shape",
                                     data=arr.shape, grad=grad.shape)
            self.grad = grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item() needs a single-element tensor", shape=self.shape)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = True) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad)

    @classmethod
    def constant(cls, data) -> "Tensor":
        return cls(data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


Operand = Union[Tensor, np.ndarray, float]


class Tape:
    """Records backward closures of the kernels run while it is active"""

    def __init__(self):
        self._backward: list[Callable[[], None]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._backward)

    def record(self, fn: Callable[[], None]) -> None:
        self._backward.append(fn)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise DimensionError("backward needs a scalar loss", shape=loss.shape)
        loss.accumulate(np.ones_like(loss.data))
        for fn in reversed(self._backward):
            fn()
        self._backward.clear()


@contextlib.contextmanager
def allow_nonfinite() -> Iterator[None]:
    """Disable the finiteness check (sentinel-poisoning tests only)"""
    token = _CHECK_FINITE.set(False)
    try:
        yield
    finally:
        _CHECK_FINITE.reset(token)


def data_of(x: Operand) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def needs_grad(x: Operand) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def push_grad(x: Operand, g: np.ndarray) -> None:
    if needs_grad(x):
        x.accumulate(_unbroadcast(g, x.shape))


def emit(value: np.ndarray, inputs: Sequence[Operand],
         backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = _TAPE.get()
    track = tape is not None and any(needs_grad(x) for x in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        def run() -> None:
            if out.grad is not None:
                backward(out.grad)
        tape.record(run)
    return out


# ---------------------------------------------------------------- affine

def linear(x: Operand, W: Operand, b: Operand | None = None) -> Tensor:
    """y = xW + b over the last axis of x"""
    xd, Wd = data_of(x), data_of(W)
    if Wd.ndim != 2 or xd.ndim < 1 or xd.shape[-1] != Wd.shape[0]:
        raise DimensionError("linear: inner extents disagree", x=xd.shape, W=Wd.shape)
    y = xd @ Wd
    if b is not None:
        bd = data_of(b)
        if bd.shape != (Wd.shape[1],):
            raise DimensionError("linear: bias extent disagrees", W=Wd.shape, b=bd.shape)
        y = y + bd

    def backward(dy: np.ndarray) -> None:
        k, m = Wd.shape
        push_grad(W, xd.reshape(-1, k).T @ dy.reshape(-1, m))
        if b is not None:
            push_grad(b, dy.reshape(-1, m).sum(axis=0))
        push_grad(x, dy @ Wd.T)

    return emit(y, (x, W) if b is None else (x, W, b), backward)


def matmul(a: Operand, b: Operand) -> Tensor:
    """Batched matrix product over the two trailing axes"""
    ad, bd = data_of(a), data_of(b)
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError("matmul: inner extents disagree", a=ad.shape, b=bd.shape)
    y = np.matmul(ad, bd)

    def backward(dy: np.ndarray) -> None:
        push_grad(a, np.matmul(dy, np.swapaxes(bd, -1, -2)))
        push_grad(b, np.matmul(np.swapaxes(ad, -1, -2), dy))

    return emit(y, (a, b), backward)


# ---------------------------------------------------------------- elementwise

def add(a: Operand, b: Operand) -> Tensor:
    ad, bd = data_of(a), data_of(b)

    def backward(dy: np.ndarray) -> None:
        push_grad(a, dy)
        push_grad(b, dy)

    return emit(ad + bd, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    ad, bd = data_of(a), data_of(b)

    def backward(dy: np.ndarray) -> None:
        push_grad(a, dy)
        push_grad(b, -dy)

    return emit(ad - bd, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    ad, bd = data_of(a), data_of(b)

    def backward(dy: np.ndarray) -> None:
        push_grad(a, dy * bd)
        push_grad(b, dy * ad)

    return emit(ad * bd, (a, b), backward)


def scale(x: Operand, s: float) -> Tensor:
    xd = data_of(x)
    return emit(xd * s, (x,), lambda dy: push_grad(x, dy * s))


def relu(x: Operand) -> Tensor:
    xd = data_of(x)
    active = xd > 0
    return emit(np.where(active, xd, 0.0), (x,), lambda dy: push_grad(x, dy * active))


def sigmoid(x: Operand) -> Tensor:
    y = expit(data_of(x))
    return emit(y, (x,), lambda dy: push_grad(x, dy * y * (1.0 - y)))


def absolute(x: Operand) -> Tensor:
    xd = data_of(x)
    return emit(np.abs(xd), (x,), lambda dy: push_grad(x, dy * np.sign(xd)))


def clip(x: Operand, lo, hi) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only strictly inside the bounds"""
    xd = data_of(x)
    inside = (xd > lo) & (xd < hi)
    return emit(np.clip(xd, lo, hi), (x,), lambda dy: push_grad(x, dy * inside))


def where(mask: np.ndarray, a: Operand, b: Operand) -> Tensor:
    """Select a where mask holds, else b; the mask is a constant"""
    mask = np.asarray(mask, dtype=bool)
    ad, bd = data_of(a), data_of(b)

    def backward(dy: np.ndarray) -> None:
        push_grad(a, np.where(mask, dy, 0.0))
        push_grad(b, np.where(mask, 0.0, dy))

    return emit(np.where(mask, ad, bd), (a, b), backward)


# ---------------------------------------------------------------- normalisation

def softmax(x: Operand, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-stabilised softmax; masked entries get weight exactly 0.

    A slice whose entries are all masked yields all zeros.
    """
    xd = data_of(x)
    if mask is None:
        shifted = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        m = np.where(mask, xd, -np.inf).max(axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(np.where(mask, xd, m) - m), 0.0)
        s = e.sum(axis=axis, keepdims=True)
        y = e / np.where(s > 0, s, 1.0)

    def backward(dy: np.ndarray) -> None:
        push_grad(x, y * (dy - (dy * y).sum(axis=axis, keepdims=True)))

    return emit(y, (x,), backward)


def layer_norm(x: Operand, gamma: Operand, beta: Operand, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift"""
    xd, gd, bd = data_of(x), data_of(gamma), data_of(beta)
    if gd.shape != (xd.shape[-1],) or bd.shape != gd.shape:
        raise DimensionError("layer_norm: affine extents disagree", x=xd.shape, gamma=gd.shape)
    mu = xd.mean(axis=-1, keepdims=True)
    centred = xd - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    y = xhat * gd + bd

    def backward(dy: np.ndarray) -> None:
        c = xd.shape[-1]
        push_grad(gamma, (dy * xhat).reshape(-1, c).sum(axis=0))
        push_grad(beta, dy.reshape(-1, c).sum(axis=0))
        dxhat = dy * gd
        push_grad(x, inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                       - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)))

    return emit(y, (x, gamma, beta), backward)


# ---------------------------------------------------------------- shape plumbing

def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    xd = data_of(x)
    return emit(xd.reshape(tuple(shape)), (x,), lambda dy: push_grad(x, dy.reshape(xd.shape)))


def transpose(x: Operand, axes: Sequence[int]) -> Tensor:
    xd = data_of(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return emit(np.transpose(xd, axes), (x,), lambda dy: push_grad(x, np.transpose(dy, inverse)))


def getitem(x: Operand, key) -> Tensor:
    """Basic (non-repeating) indexing"""
    xd = data_of(x)

    def backward(dy: np.ndarray) -> None:
        g = np.zeros_like(xd)
        g[key] += dy
        push_grad(x, g)

    return emit(np.array(xd[key]), (x,), backward)


def take(x: Operand, index: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    """Gather rows of x (axis 0); rows where ``valid`` is False read zeros.

    Invalid rows never touch x, so their index may point anywhere.
    """
    xd = data_of(x)
    index = np.asarray(index, dtype=np.int64)
    if valid is None:
        valid = np.ones(index.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    safe = np.where(valid, index, 0)
    if xd.shape[0] == 0 or (safe < 0).any() or (safe >= xd.shape[0]).any():
        raise DimensionError("take: index out of range", rows=xd.shape[0])
    trailing = (1,) * (xd.ndim - 1)
    gathered = np.where(valid.reshape(valid.shape + trailing), xd[safe], 0.0)

    def backward(dy: np.ndarray) -> None:
        g = np.zeros_like(xd)
        np.add.at(g, safe[valid], dy[valid])
        push_grad(x, g)

    return emit(gathered, (x,), backward)


def concat(xs: Sequence[Operand], axis: int = -1) -> Tensor:
    datas = [data_of(x) for x in xs]
    axis = axis % datas[0].ndim
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(dy: np.ndarray) -> None:
        for x, part in zip(xs, np.split(dy, bounds, axis=axis)):
            push_grad(x, part)

    return emit(np.concatenate(datas, axis=axis), tuple(xs), backward)


def stack(xs: Sequence[Operand], axis: int = 0) -> Tensor:
    datas = [data_of(x) for x in xs]
    y = np.stack(datas, axis=axis)
    axis = axis % y.ndim

    def backward(dy: np.ndarray) -> None:
        for i, x in enumerate(xs):
            push_grad(x, np.take(dy, i, axis=axis))

    return emit(y, tuple(xs), backward)


def reduce_sum(x: Operand, axis: int | None = None) -> Tensor:
    xd = data_of(x)

    def backward(dy: np.ndarray) -> None:
        g = dy if axis is None else np.expand_dims(dy, axis)
        push_grad(x, np.broadcast_to(g, xd.shape).copy())

    return emit(np.asarray(xd.sum(axis=axis)), (x,), backward)


def reduce_mean(x: Operand, axis: int | None = None) -> Tensor:
    xd = data_of(x)
    n = xd.size if axis is None else xd.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


# ---------------------------------------------------------------- embeddings

def sinusoidal_embed(pos: float, channels: int) -> Tensor:
    """[sin(pos/T^(2k/C)), cos(pos/T^(2k/C))] interleaved, T = 10000"""
    return Tensor.constant(sinusoidal_table(np.asarray([pos]), channels)[0])


def sinusoidal_table(positions: np.ndarray, channels: int) -> np.ndarray:
    """Sinusoidal embedding of every entry of ``positions`` -> positions.shape + (C,)"""
    if channels <= 0 or channels % 2:
        raise ConfigurationError("sinusoidal embedding needs an even channel count",
                                 channels=channels)
    positions = np.asarray(positions, dtype=np.float64)
    k = np.arange(channels // 2, dtype=np.float64)
    freq = SINUSOID_PERIOD ** (2.0 * k / channels)
    angles = positions[..., None] / freq
    table = np.empty(positions.shape + (channels,))
    table[..., 0::2] = np.sin(angles)
    table[..., 1::2] = np.cos(angles)
    return table

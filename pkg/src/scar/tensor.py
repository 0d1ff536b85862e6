"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a plain tape: every op wires a backward closure into the result
tensor. ``backward()`` on a scalar runs the reverse pass and then drops the
tape, so graphs are single-use.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .exceptions import ShapeError, StateError

_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (teacher forwards, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- reverse pass ------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar node.

        The tape is consumed: parent links are cleared afterwards, and a
        second call (or a call on a tensor that was never part of a recorded
        computation) raises ``StateError``.
        """
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        if self._backward is None and not self._parents:
            raise StateError("backward called without a recorded computation tape")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)

        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
            node._backward = None
            node._parents = ()

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by an inverse")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast axes so ``grad`` matches ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    out_data = np.where(mask, a.data, 0.0)

    def backward(g):
        _accum(a, g * mask)

    return _make(out_data, (a,), backward)


def texp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), backward)


def tlog(a) -> Tensor:
    a = _wrap(a)
    out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(out_data, (a,), backward)


def tsqrt(a) -> Tensor:
    a = _wrap(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def signed_pow(a, exponent: float) -> Tensor:
    """Element-wise sign(x)|x|^p. Gradient at exactly 0 is taken as 0."""
    a = _wrap(a)
    p = float(exponent)
    absx = np.abs(a.data)
    out_data = np.sign(a.data) * absx**p

    def backward(g):
        deriv = np.zeros_like(a.data)
        nz = absx > 0
        deriv[nz] = p * absx[nz] ** (p - 1.0)
        _accum(a, g * deriv)

    return _make(out_data, (a,), backward)


def tsum(a, axis=None) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def take_rows(a, index) -> Tensor:
    """Row-subset a 2-D tensor; backward scatter-adds into the source rows."""
    a = _wrap(a)
    idx = np.asarray(index, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return _make(out_data, (a,), backward)


def pick(a, columns) -> Tensor:
    """Per-row column selection from a 2-D tensor: out[i] = a[i, columns[i]]."""
    a = _wrap(a)
    cols = np.asarray(columns, dtype=np.intp)
    if a.data.ndim != 2 or cols.shape != (a.data.shape[0],):
        raise ShapeError(f"pick expects [N,K] tensor and N column ids, got {a.shape} / {cols.shape}")
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, cols]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, (rows, cols), g)

    return _make(out_data, (a,), backward)


def log_softmax(a) -> Tensor:
    """Row-wise log-softmax with log-sum-exp stabilization."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse
    softmax_data = np.exp(out_data)

    def backward(g):
        _accum(a, g - softmax_data * g.sum(axis=1, keepdims=True))

    return _make(out_data, (a,), backward)


# -- convolution path --------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """N,H,W,C (zero-padded for 'same') -> N,H,W,kh*kw*C patch matrix."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((n, h, w, kh * kw * c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, (i * kw + j) * c:(i * kw + j + 1) * c] = padded[:, i:i + h, j:j + w, :]
    return cols


def _col2im(cols: np.ndarray, shape: tuple[int, ...], kh: int, kw: int) -> np.ndarray:
    n, h, w, c = shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((n, h + 2 * ph, w + 2 * pw, c))
    for i in range(kh):
        for j in range(kw):
            padded[:, i:i + h, j:j + w, :] += cols[:, :, :, (i * kw + j) * c:(i * kw + j + 1) * c]
    return padded[:, ph:ph + h, pw:pw + w, :]


def conv2d(x, kernel, bias) -> Tensor:
    """Same-padding stride-1 convolution; x is N,H,W,Cin, kernel kh,kw,Cin,Cout."""
    x, kernel, bias = _wrap(x), _wrap(kernel), _wrap(bias)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} / {kernel.shape}")
    kh, kw, cin, cout = kernel.data.shape
    if x.data.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape[3]}, kernel {cin}")
    n, h, w, _ = x.data.shape
    cols = _im2col(x.data, kh, kw)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out_data = cols.reshape(n * h * w, -1) @ kmat + bias.data
    out_data = out_data.reshape(n, h, w, cout)

    def backward(g):
        gm = g.reshape(n * h * w, cout)
        _accum(kernel, (cols.reshape(n * h * w, -1).T @ gm).reshape(kernel.data.shape))
        _accum(bias, gm.sum(axis=0))
        gcols = (gm @ kmat.T).reshape(n, h, w, kh * kw * cin)
        _accum(x, _col2im(gcols, x.data.shape, kh, kw))

    return _make(out_data, (x, kernel, bias), backward)


def maxpool2d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pooling on N,H,W,C (H and W divisible by window)."""
    x = _wrap(x)
    n, h, w, c = x.data.shape
    if h % window or w % window:
        raise ShapeError(f"maxpool2d needs H,W divisible by {window}, got {x.shape}")
    oh, ow = h // window, w // window
    blocks = x.data.reshape(n, oh, window, ow, window, c)
    flat = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, oh, ow, c, window * window)
    arg = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(n, oh, ow, c, window, window).transpose(0, 1, 4, 2, 5, 3)
        _accum(x, gx.reshape(n, h, w, c))

    return _make(out_data, (x,), backward)


# -- exposed activations -----------------------------------------------------

def softmax(logits, temperature: float = 1.0):
    """Row-wise softmax of logits/temperature. Works on tensors and arrays."""
    if not float(temperature) > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if isinstance(logits, Tensor):
        return texp(log_softmax(mul(logits, 1.0 / float(temperature))))
    arr = np.asarray(logits, dtype=np.float64) / float(temperature)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N,K] logits, got {logits.shape}")
    k = logits.data.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    return -tmean(pick(log_softmax(logits), labels))

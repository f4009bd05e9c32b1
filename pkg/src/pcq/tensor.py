"""Minimal reverse-mode autodiff on float64 numpy arrays.

Only the operations needed by the quality model are provided. Every op
builds a node in a tape; ``Tensor.backward()`` walks the tape in reverse
topological order and accumulates gradients into ``.grad``.
"""

from __future__ import annotations

import numpy as np

# When enabled, every op asserts its output is finite. Costs a pass over
# the data, so the training loop may switch it off once debugged.
CHECK_FINITE = True


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite values in tensor")
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    # -- basics ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads = {id(self): _as_array(grad)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
            if t._backward is None:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if not p.requires_grad or pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return Tensor(self.data + other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, self.shape),
                                           _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return Tensor(self.data * other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g * other.data, self.shape),
                                           _unbroadcast(g * self.data, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return Tensor(self.data / other.data, _parents=(self, other),
                      _backward=lambda g: (
                          _unbroadcast(g / other.data, self.shape),
                          _unbroadcast(-g * self.data / other.data ** 2, other.shape)))

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p: float):
        return Tensor(self.data ** p, _parents=(self,),
                      _backward=lambda g: (g * p * self.data ** (p - 1),))

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = np.matmul(self.data, other.data)

        def bwd(g):
            a, b = self.data, other.data
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if a.ndim == 1:  # (d,) @ (..., d, m)
                ga = np.matmul(np.expand_dims(g, -2),
                               np.swapaxes(b, -1, -2))[..., 0, :]
                gb = np.matmul(np.expand_dims(a, -1), np.expand_dims(g, -2))
                return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
            if b.ndim == 1:  # (..., n, d) @ (d,)
                ga = np.matmul(np.expand_dims(g, -1), np.expand_dims(b, 0))
                gb = np.matmul(np.swapaxes(a, -1, -2),
                               np.expand_dims(g, -1))[..., 0]
                return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
            ga = np.matmul(g, np.swapaxes(b, -1, -2))
            gb = np.matmul(np.swapaxes(a, -1, -2), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor(out, _parents=(self, other), _backward=bwd)

    # -- elementwise -----------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g * out,))

    def log(self):
        return Tensor(np.log(self.data), _parents=(self,),
                      _backward=lambda g: (g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor(out, _parents=(self,), _backward=lambda g: (g / (2.0 * out),))

    def relu(self):
        mask = self.data > 0
        return Tensor(self.data * mask, _parents=(self,),
                      _backward=lambda g: (g * mask,))

    def sigmoid(self):
        x = self.data
        out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return Tensor(out, _parents=(self,),
                      _backward=lambda g: (g * out * (1.0 - out),))

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor(out, _parents=(self,), _backward=bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape manipulation ----------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(self.data.reshape(shape), _parents=(self,),
                      _backward=lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), _parents=(self,),
                      _backward=lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        out = self.data[idx]

        def bwd(g):
            gx = np.zeros_like(self.data)
            np.add.at(gx, idx, g)
            return (gx,)

        return Tensor(out, _parents=(self,), _backward=bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(tensors), _backward=bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:])
                   for t in tensors], axis=axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - x.data.max(axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def gather_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather columns of a 2-D tensor: out[b, ...] = x[b, idx[...]].

    `idx` may be any integer array; gradients scatter-add back into x.
    Used to build im2col patch matrices for convolution.
    """
    out = x.data[:, idx]

    def bwd(g):
        n, m = x.shape
        # bincount-based scatter-add: much faster than np.add.at
        offsets = (np.arange(n) * m).reshape((n,) + (1,) * idx.ndim)
        flat = (offsets + idx[None]).ravel()
        gx = np.bincount(flat, weights=np.ascontiguousarray(g).ravel(),
                         minlength=n * m)
        return (gx.reshape(n, m),)

    return Tensor(out, _parents=(x,), _backward=bwd)

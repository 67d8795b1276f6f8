"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by the deformation model, its loss and the MPC
objective are provided.  Graphs are built eagerly; ``backward`` walks them
in reverse topological order.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    # -- graph plumbing ---------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward)
        return Tensor(data)

    def backward(self, grad=None):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            # gradients are never updated in place, so sharing the buffer is safe
            self.grad = g
        else:
            self.grad = self.grad + g

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)
        out = None

        def bw(g):
            self._acc(_unbroadcast(g, self.shape))
            o._acc(_unbroadcast(g, o.shape))

        out = Tensor._make(self.data + o.data, (self, o), bw)
        return out

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: self._acc(-g))

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Tensor) else Tensor(other)))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)

        def bw(g):
            self._acc(_unbroadcast(g * o.data, self.shape))
            o._acc(_unbroadcast(g * self.data, o.shape))

        return Tensor._make(self.data * o.data, (self, o), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)

        def bw(g):
            self._acc(_unbroadcast(g / o.data, self.shape))
            o._acc(_unbroadcast(-g * self.data / o.data ** 2, o.shape))

        return Tensor._make(self.data / o.data, (self, o), bw)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p):
        assert not isinstance(p, Tensor)
        return Tensor._make(self.data ** p, (self,), lambda g: self._acc(g * p * self.data ** (p - 1)))

    def __matmul__(self, other):
        o = other if isinstance(other, Tensor) else Tensor(other)

        def bw(g):
            a, b = self.data, o.data
            if self.requires_grad:
                ga = g @ np.swapaxes(b, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b)
                self._acc(_unbroadcast(ga, a.shape))
            if o.requires_grad:
                if b.ndim == 2 and a.ndim > 2:
                    # shared weight matrix: fold the batch axes into one product
                    gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                elif b.ndim == 1:
                    gb = (np.swapaxes(a, -1, -2) @ g[..., None])[..., 0]
                else:
                    gb = np.swapaxes(a, -1, -2) @ g
                o._acc(_unbroadcast(gb, b.shape))

        return Tensor._make(self.data @ o.data, (self, o), bw)

    def __getitem__(self, idx):
        basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis)))
                    for i in (idx if isinstance(idx, tuple) else (idx,)))

        def bw(g):
            full = np.zeros_like(self.data)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            self._acc(full)

        return Tensor._make(self.data[idx], (self,), bw)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: self._acc(g.reshape(self.shape)))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor._make(self.data.transpose(*axes), (self,), lambda g: self._acc(g.transpose(*inv)))

    def swapaxes(self, a, b):
        return Tensor._make(np.swapaxes(self.data, a, b), (self,), lambda g: self._acc(np.swapaxes(g, a, b)))

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._acc(np.broadcast_to(g, self.shape))

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis, keepdims) * (1.0 / n)

    # -- nonlinearities -----------------------------------------------------

    def exp(self):
        e = np.exp(self.data)
        return Tensor._make(e, (self,), lambda g: self._acc(g * e))

    def cos(self):
        return Tensor._make(np.cos(self.data), (self,), lambda g: self._acc(-g * np.sin(self.data)))

    def sin(self):
        return Tensor._make(np.sin(self.data), (self,), lambda g: self._acc(g * np.cos(self.data)))

    def sqrt(self):
        r = np.sqrt(self.data)
        return Tensor._make(r, (self,), lambda g: self._acc(g * 0.5 / r))

    def gelu(self):
        x = self.data
        c = math.sqrt(2.0 / math.pi)
        x2 = x * x
        inner = c * x * (1.0 + 0.044715 * x2)
        th = np.tanh(inner)
        out = 0.5 * x * (1.0 + th)

        def bw(g):
            dinner = c * (1.0 + 3 * 0.044715 * x2)
            self._acc(g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * dinner))

        return Tensor._make(out, (self,), bw)

    def softmax(self, axis=-1):
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            self._acc(s * (g - (g * s).sum(axis=axis, keepdims=True)))

        return Tensor._make(s, (self,), bw)


def tensor(x, requires_grad=False) -> Tensor:
    return Tensor(x, requires_grad)


def concat(ts, axis=-1) -> Tensor:
    ts = [t if isinstance(t, Tensor) else Tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, splits, axis=axis)):
            t._acc(part)

    return Tensor._make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(ts, axis=0) -> Tensor:
    ts = [t if isinstance(t, Tensor) else Tensor(t) for t in ts]

    def bw(g):
        for k, t in enumerate(ts):
            t._acc(np.take(g, k, axis=axis))

    return Tensor._make(np.stack([t.data for t in ts], axis=axis), ts, bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps=1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    d = x.shape[-1]

    def bw(g):
        gain._acc(_unbroadcast(g * xhat, gain.shape))
        bias._acc(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            x._acc(inv / d * (d * gx - gx.sum(axis=-1, keepdims=True)
                              - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))

    return Tensor._make(out, (x, gain, bias), bw)


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)

    def bw(g):
        a._acc(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        b._acc(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), bw)


def custom(data, parents, vjp) -> Tensor:
    """Wrap an externally computed value whose vector-Jacobian product is ``vjp(g)``.

    ``vjp`` returns one gradient array per parent.
    """
    def bw(g):
        for p, gp in zip(parents, vjp(g)):
            p._acc(gp)

    return Tensor._make(data, parents, bw)

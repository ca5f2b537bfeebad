"""Minimal reverse-mode autodiff on numpy arrays.

Everything runs in float64. A Tensor wraps an ndarray and remembers how it
was produced; calling backward() on a scalar Tensor fills .grad on every
reachable leaf. No graph reuse: build, backward, throw away.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(value, parents, backward):
        out = Tensor(value)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), self.value.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar Tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- helpers ------------------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = ensure_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        return Tensor._make(self.value + other.value, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            a._accumulate(-g)
        return Tensor._make(-self.value, (self,), bwd)

    def __sub__(self, other):
        return self + (-ensure_tensor(other))

    def __rsub__(self, other):
        return ensure_tensor(other) + (-self)

    def __mul__(self, other):
        other = ensure_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g * b.value)
            if b.requires_grad:
                b._accumulate(g * a.value)
        return Tensor._make(self.value * other.value, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = ensure_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g / b.value)
            if b.requires_grad:
                b._accumulate(-g * a.value / (b.value * b.value))
        return Tensor._make(self.value / other.value, (self, other), bwd)

    def __rtruediv__(self, other):
        return ensure_tensor(other) / self

    def __pow__(self, exponent: float):
        def bwd(g, a=self, e=exponent):
            a._accumulate(g * e * np.power(a.value, e - 1))
        return Tensor._make(np.power(self.value, exponent), (self,), bwd)

    def __matmul__(self, other):
        other = ensure_tensor(other)
        def bwd(g, a=self, b=other):
            av, bv = a.value, b.value
            if a.requires_grad:
                if bv.ndim == 1:
                    a._accumulate(np.multiply.outer(g, bv) if g.ndim else g * bv)
                else:
                    a._accumulate(_unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape))
            if b.requires_grad:
                if av.ndim == 1:
                    b._accumulate(np.multiply.outer(av, g) if g.ndim else av * g)
                else:
                    b._accumulate(_unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape))
        return Tensor._make(self.value @ other.value, (self, other), bwd)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        def bwd(g, a=self):
            a._accumulate(g.reshape(a.value.shape))
        return Tensor._make(self.value.reshape(shape), (self,), bwd)

    def swapaxes(self, ax1: int, ax2: int):
        def bwd(g, a=self):
            a._accumulate(np.swapaxes(g, ax1, ax2))
        return Tensor._make(np.swapaxes(self.value, ax1, ax2), (self,), bwd)

    def __getitem__(self, key):
        def bwd(g, a=self, k=key):
            full = np.zeros_like(a.value)
            np.add.at(full, k, g)
            a._accumulate(full)
        return Tensor._make(self.value[key], (self,), bwd)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def bwd(g, a=self):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.value.shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.value.shape))
        return Tensor._make(self.value.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.value.size
        else:
            n = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise --------------------------------------------------------

    def exp(self):
        out_val = np.exp(self.value)
        def bwd(g, a=self, ov=out_val):
            a._accumulate(g * ov)
        return Tensor._make(out_val, (self,), bwd)

    def log(self):
        def bwd(g, a=self):
            a._accumulate(g / a.value)
        return Tensor._make(np.log(self.value), (self,), bwd)

    def sqrt(self):
        out_val = np.sqrt(self.value)
        def bwd(g, a=self, ov=out_val):
            a._accumulate(g * 0.5 / ov)
        return Tensor._make(out_val, (self,), bwd)

    def clip(self, lo: float, hi: float):
        """Clamp to [lo, hi]; gradient is zero outside the interval."""
        mask = (self.value >= lo) & (self.value <= hi)
        def bwd(g, a=self, m=mask):
            a._accumulate(g * m)
        return Tensor._make(np.clip(self.value, lo, hi), (self,), bwd)

    def gelu(self):
        x = self.value
        phi = 0.5 * (1.0 + erf(x / _SQRT2))
        def bwd(g, a=self, p=phi):
            xv = a.value
            a._accumulate(g * (p + xv * _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)))
        return Tensor._make(x * phi, (self,), bwd)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bwd(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t._accumulate(g[tuple(idx)])
    return Tensor._make(np.concatenate([t.value for t in tensors], axis=axis), tensors, bwd)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Row-stable softmax; the max shift is detached (shift invariance)."""
    t = ensure_tensor(t)
    shift = Tensor(t.value.max(axis=axis, keepdims=True))
    e = (t - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = ensure_tensor(t)
    shift = Tensor(t.value.max(axis=axis, keepdims=True))
    z = t - shift
    return z - z.exp().sum(axis=axis, keepdims=True).log()

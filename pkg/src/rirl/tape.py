"""Minimal reverse-mode tape over numpy arrays.

Supports exactly the ops the policies and discriminators need: affine maps,
pointwise nonlinearities, reductions, concatenation/slicing and a stable
logsumexp. Gradients accumulate into ``.grad`` on backward passes; everything
is float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "concat",
    "logsumexp",
    "gather",
    "Module",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, grad: np.ndarray) -> None:
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), self.data.shape)
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None else grad
        else:
            self.grad = self.grad + grad

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        for node in topo:
            if node._parents:  # keep leaf accumulation across backward calls
                node.grad = None
        self._accum(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accum(g)
                if other.requires_grad:
                    other._accum(g)
            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    self._accum(g * other.data)
                if other.requires_grad:
                    other._accum(g * self.data)
            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return Tensor(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(
                g * exponent * self.data ** (exponent - 1.0))
        return out

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data @ other.data, _parents=(self, other))
        if out.requires_grad:
            def bw(g):
                if self.requires_grad:
                    if other.data.ndim == 1:
                        self._accum(np.outer(g, other.data) if self.data.ndim == 2
                                    else g * other.data)
                    else:
                        self._accum(g @ other.data.T)
                if other.requires_grad:
                    if self.data.ndim == 1:
                        other._accum(np.outer(self.data, g) if other.data.ndim == 2
                                     else self.data * g)
                    else:
                        other._accum(self.data.T @ g)
            out._backward = bw
        return out

    # -- pointwise nonlinearities -------------------------------------------

    def exp(self):
        value = np.exp(self.data)
        out = Tensor(value, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * value)
        return out

    def log(self):
        out = Tensor(np.log(self.data), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g / self.data)
        return out

    def tanh(self):
        value = np.tanh(self.data)
        out = Tensor(value, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * (1.0 - value * value))
        return out

    def sigmoid(self):
        value = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(value, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * value * (1.0 - value))
        return out

    def softplus(self):
        # log(1 + e^x), computed stably
        value = np.maximum(self.data, 0.0) + np.log1p(np.exp(-np.abs(self.data)))
        out = Tensor(value, _parents=(self,))
        if out.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-self.data))
            out._backward = lambda g: self._accum(g * sig)
        return out

    def clip(self, lo: float, hi: float):
        """Hard clamp; gradient is zero outside [lo, hi]."""
        inside = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * inside)
        return out

    def relu0(self):
        """max(x, 0); subgradient 0 at the kink."""
        mask = self.data > 0.0
        out = Tensor(self.data * mask, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g * mask)
        return out

    # -- reductions & shaping ------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))
        if out.requires_grad:
            def bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape))
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    def __getitem__(self, index):
        out = Tensor(self.data[index], _parents=(self,))
        if out.requires_grad:
            parts = index if isinstance(index, tuple) else (index,)
            fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)

            def bw(g):
                full = np.zeros_like(self.data)
                if fancy:
                    np.add.at(full, index, g)  # advanced indexing may repeat targets
                else:
                    full[index] += g
                self._accum(full)
            out._backward = bw
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), _parents=tuple(tensors))
    if out.requires_grad:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(lo, hi)
                    t._accum(g[tuple(sl)])
        out._backward = bw
    return out


def logsumexp(t: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Numerically stable logsumexp with the softmax as its backward."""
    m = t.data.max(axis=axis, keepdims=True)
    shifted = np.exp(t.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    value = np.log(total) + m
    if not keepdims:
        value = np.squeeze(value, axis=axis)
    out = Tensor(value, _parents=(t,))
    if out.requires_grad:
        soft = shifted / total

        def bw(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            t._accum(g * soft)
        out._backward = bw
    return out


def gather(t: Tensor, index: np.ndarray, axis: int = -1) -> Tensor:
    """out[i] = t[i, index[i]] for 2-D t along the last axis."""
    if axis != -1 and axis != t.data.ndim - 1:
        raise ValueError("gather only supports the last axis")
    idx = np.asarray(index, dtype=np.intp)
    rows = np.arange(t.data.shape[0])
    out = Tensor(t.data[rows, idx], _parents=(t,))
    if out.requires_grad:
        def bw(g):
            full = np.zeros_like(t.data)
            np.add.at(full, (rows, idx), g)
            t._accum(full)
        out._backward = bw
    return out


class Module:
    """Parameter container; nests through attributes, lists and dicts."""

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        seen: set[int] = set()

        def visit(obj):
            if isinstance(obj, Tensor):
                if obj.requires_grad and id(obj) not in seen:
                    seen.add(id(obj))
                    out.append(obj)
            elif isinstance(obj, Module):
                for value in obj.__dict__.values():
                    visit(value)
            elif isinstance(obj, (list, tuple)):
                for value in obj:
                    visit(value)
            elif isinstance(obj, dict):
                for value in obj.values():
                    visit(value)

        visit(self)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

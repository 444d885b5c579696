"""Small reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` records the operation that produced it. Calling
``backward()`` on a scalar result walks the recorded graph in reverse
topological order and accumulates ``.grad`` on every tensor that requires
gradients. Inside ``with no_grad():`` nothing is recorded.

Supported operations: ``+ - * /`` with broadcasting, negation, ``@``,
two-operand :func:`einsum`, ``tanh``, ``exp``, ``log``, ``softmax``,
``log_softmax``, ``sum``, ``mean``, :func:`gather` and ``reshape``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = True


class AutodiffStateError(RuntimeError):
    """Raised when ``backward`` is called on something with no recorded graph."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __array_priority__ = 100  # make ndarray + Tensor dispatch to Tensor

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # graph construction

    @staticmethod
    def _make(data, parents: tuple, backward) -> "Tensor":
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            out._parents = parents
            out._backward = backward
        return out

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it."""
        if self._backward is None:
            raise AutodiffStateError(
                "backward() needs a tensor produced by a recorded forward computation"
            )
        if grad is None:
            if self.data.size != 1:
                raise AutodiffStateError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        return Tensor._make(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor._make(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-d operands; use einsum for batches")
        return Tensor._make(a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    # elementwise functions

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: (g * (1.0 - y * y),))

    def exp(self):
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,))

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    # reductions and shape

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def log_softmax(self, axis: int = -1):
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse
        p = np.exp(y)
        return Tensor._make(y, (self,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))

    def softmax(self, axis: int = -1):
        x = self.data
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        y = e / e.sum(axis=axis, keepdims=True)
        return Tensor._make(y, (self,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


class Parameter(Tensor):
    """A named leaf tensor that always requires gradients."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else self.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum without repeated indices inside one operand.

    The gradient for each operand is another einsum of the output gradient with
    the other operand, so every index of an operand must also appear in the
    output or in the other operand.
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s in (sa, sb):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index in operand {s!r}")
    for s, other in ((sa, sb), (sb, sa)):
        if set(s) - set(out) - set(other):
            raise ValueError(f"index summed only within one operand in {spec!r}")
    y = np.einsum(f"{sa},{sb}->{out}", a.data, b.data, optimize=True)
    ad, bd = a.data, b.data

    def back(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, bd, optimize=True)
        gb = np.einsum(f"{out},{sa}->{sb}", g, ad, optimize=True)
        return ga, gb

    return Tensor._make(y, (a, b), back)


def gather(x: Tensor, index, axis: int = -1) -> Tensor:
    """``take_along_axis``; ``index`` has ``x.ndim`` dims with size 1 on ``axis``."""
    idx = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.put_along_axis(out, idx, g, axis=axis)
        return (out,)

    return Tensor._make(np.take_along_axis(x.data, idx, axis=axis), (x,), back)


def tanh(x):
    return as_tensor(x).tanh()


def exp(x):
    return as_tensor(x).exp()


def log(x):
    return as_tensor(x).log()


def softmax(x, axis=-1):
    return as_tensor(x).softmax(axis)


def log_softmax(x, axis=-1):
    return as_tensor(x).log_softmax(axis)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def numerical_gradient(f: Callable[[], float], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad

"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Each ``Tensor`` records its parents and a closure that maps the output
gradient to parent gradients.  ``backward`` walks the graph in reverse
topological order.  Only the handful of operations needed by the graph
policy and the Dirichlet head are provided.
"""
from __future__ import annotations

import numpy as np
from scipy.special import digamma as _digamma
from scipy.special import gammaln as _gammaln
from scipy.special import polygamma as _polygamma


class GradientError(RuntimeError):
    """Raised by ``backward`` when gradients from a previous pass were not reset."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "op")
    # make ``ndarray <op> Tensor`` defer to the Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents=(), grad_fn=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._grad_fn = grad_fn
        self.op = op

    # -- basics -------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    @staticmethod
    def lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(data, parents, grad_fn, op):
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, needs, parents if needs else (), grad_fn if needs else None, op)

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        a, b = self, Tensor.lift(other)
        return Tensor._make(a.data + b.data, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-Tensor.lift(other))

    def __rsub__(self, other):
        return Tensor.lift(other) + (-self)

    def __mul__(self, other):
        a, b = self, Tensor.lift(other)
        return Tensor._make(a.data * b.data, (a, b),
                            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, Tensor.lift(other)
        return Tensor._make(
            a.data / b.data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / b.data ** 2, b.shape)),
            "div")

    def __matmul__(self, other):
        a, b = self, Tensor.lift(other)
        return Tensor._make(a.data @ b.data, (a, b),
                            lambda g: (g @ b.data.T, a.data.T @ g), "matmul")

    def __rmatmul__(self, other):
        return Tensor.lift(other) @ self

    def mix(self, A: np.ndarray, n_blocks: int = 1):
        """Apply a constant ``(n, n)`` matrix to each of ``n_blocks`` stacked row blocks.

        ``self`` is ``(n_blocks * n, d)``; block ``b`` becomes ``A @ block_b``.
        """
        A = np.asarray(A, dtype=np.float64)
        shape = self.shape
        blocks = self.data.reshape(n_blocks, A.shape[1], -1)
        out = (A @ blocks).reshape(n_blocks * A.shape[0], -1)
        return Tensor._make(out, (self,),
                            lambda g: ((A.T @ g.reshape(n_blocks, A.shape[0], -1)).reshape(shape),), "mix")

    def square(self):
        return Tensor._make(self.data ** 2, (self,), lambda g: (2.0 * self.data * g,), "square")

    def sum(self, axis=None):
        shape = self.shape

        def grad_fn(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis), (self,), grad_fn, "sum")

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def __getitem__(self, idx):
        shape = self.shape

        def grad_fn(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), grad_fn, "index")

    # -- elementwise nonlinearities --------------------------------------------
    def relu(self):
        m = self.data > 0
        return Tensor._make(self.data * m, (self,), lambda g: (g * m,), "relu")

    def softplus(self):
        x = self.data
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return Tensor._make(np.logaddexp(0.0, x), (self,), lambda g: (g * sig,), "softplus")

    def log(self):
        return Tensor._make(np.log(self.data), (self,), lambda g: (g / self.data,), "log")

    def exp(self):
        e = np.exp(self.data)
        return Tensor._make(e, (self,), lambda g: (g * e,), "exp")

    def gammaln(self):
        return Tensor._make(_gammaln(self.data), (self,), lambda g: (g * _digamma(self.data),), "gammaln")

    def digamma(self):
        return Tensor._make(_digamma(self.data), (self,), lambda g: (g * _polygamma(1, self.data),), "digamma")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- reverse pass --------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf.

        ``self`` must be a scalar.  Leaves that still carry a gradient from an
        earlier pass raise ``GradientError``; call ``zero_grad`` first.
        """
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        if not self.requires_grad:
            return
        order, seen = [], set()
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
        leaves = [n for n in order if n._grad_fn is None]
        stale = [n for n in leaves if n.grad is not None]
        if stale:
            raise GradientError("gradients from a previous backward pass were not reset (call zero_grad)")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._grad_fn(g)):
                if not p.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=np.float64).reshape(p.shape)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)

"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-free graph engine: every operation returns a `Tensor` that
remembers its parents and a vector-Jacobian closure.  The same functional
ops (`tanh`, `log_softmax`, ...) dispatch on input type, so model code
written against this module runs unchanged on plain numpy arrays (fast
forward-only path) or on `Tensor`s (differentiable path).

Gradient accumulation follows creation order of the nodes, so repeated
runs on identical inputs are bit-reproducible.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Sequence

import numpy as np

__all__ = [
    "NumericError",
    "Tensor",
    "backprop",
    "eval_with_grad",
    "finite_diff_grad",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "logaddexp",
    "logsumexp",
    "log_softmax",
    "softmax",
    "reduce_sum",
    "reshape",
    "take_rows",
    "stack",
]


class NumericError(RuntimeError):
    """A sanctioned primitive produced a non-finite value."""

    def __init__(self, primitive: str):
        super().__init__(f"numeric overflow in primitive '{primitive}'")
        self.primitive = primitive


_counter = itertools.count()


def _check_finite(value: np.ndarray, primitive: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericError(primitive)
    return value


def _unbroadcast(adj: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to the shape of a broadcast operand."""
    adj = np.asarray(adj, dtype=np.float64)
    while adj.ndim > len(shape):
        adj = adj.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and adj.shape[ax] != 1:
            adj = adj.sum(axis=ax, keepdims=True)
    return adj.reshape(shape)


class Tensor:
    """Node in the computation graph; wraps a float64 ndarray."""

    __slots__ = ("value", "parents", "vjp", "uid", "leaf_name")

    # make `ndarray <op> Tensor` defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        parents: Sequence["Tensor"] = (),
        vjp: Callable[[np.ndarray], tuple] | None = None,
        leaf_name: str | None = None,
        primitive: str = "constant",
    ):
        self.value = _check_finite(
            np.asarray(value, dtype=np.float64), primitive
        )
        self.parents = tuple(parents)
        self.vjp = vjp
        self.uid = next(_counter)
        self.leaf_name = leaf_name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # -- operator overloads ------------------------------------------------

    def __add__(self, other):
        return _binary_ew("add", self, other, lambda a, b: a + b,
                          lambda adj, a, b: adj, lambda adj, a, b: adj)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary_ew("sub", self, other, lambda a, b: a - b,
                          lambda adj, a, b: adj, lambda adj, a, b: -adj)

    def __rsub__(self, other):
        return _binary_ew("sub", other, self, lambda a, b: a - b,
                          lambda adj, a, b: adj, lambda adj, a, b: -adj)

    def __mul__(self, other):
        return _binary_ew("mul", self, other, lambda a, b: a * b,
                          lambda adj, a, b: adj * b, lambda adj, a, b: adj * a)

    __rmul__ = __mul__

    def __neg__(self):
        return _unary("neg", self, lambda a: -a, lambda adj, a, out: -adj)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        out = self.value[key]

        def vjp(adj):
            g = np.zeros_like(self.value)
            np.add.at(g, key, adj)
            return (g,)

        return Tensor(out, (self,), vjp, primitive="index")

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, uid={self.uid})"


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _unary(name, x, fwd, bwd):
    if not _is_tensor(x):
        return _check_finite(np.asarray(fwd(np.asarray(x, dtype=np.float64))), name)
    out = _check_finite(fwd(x.value), name)
    return Tensor(out, (x,), lambda adj, _x=x, _o=out: (bwd(adj, _x.value, _o),),
                  primitive=name)


def _binary_ew(name, a, b, fwd, bwd_a, bwd_b):
    ta, tb = _is_tensor(a), _is_tensor(b)
    av = a.value if ta else np.asarray(a, dtype=np.float64)
    bv = b.value if tb else np.asarray(b, dtype=np.float64)
    out = _check_finite(fwd(av, bv), name)
    if not (ta or tb):
        return out
    parents = tuple(x for x, t in ((a, ta), (b, tb)) if t)

    def vjp(adj):
        grads = []
        if ta:
            grads.append(_unbroadcast(bwd_a(adj, av, bv), av.shape))
        if tb:
            grads.append(_unbroadcast(bwd_b(adj, av, bv), bv.shape))
        return tuple(grads)

    return Tensor(out, parents, vjp, primitive=name)


# -- primitives -----------------------------------------------------------


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda adj, a, out: adj * (1.0 - out ** 2))


def sigmoid(x):
    def fwd(a):
        return 0.5 * (np.tanh(0.5 * a) + 1.0)

    return _unary("sigmoid", x, fwd, lambda adj, a, out: adj * out * (1.0 - out))


def exp(x):
    return _unary("exp", x, np.exp, lambda adj, a, out: adj * out)


def log(x):
    return _unary("log", x, np.log, lambda adj, a, out: adj / a)


def logaddexp(a, b):
    def bwd_a(adj, av, bv):
        return adj * 0.5 * (np.tanh(0.5 * (av - bv)) + 1.0)

    def bwd_b(adj, av, bv):
        return adj * 0.5 * (np.tanh(0.5 * (bv - av)) + 1.0)

    return _binary_ew("logaddexp", a, b, np.logaddexp, bwd_a, bwd_b)


def _np_logsumexp(a, axis=None, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def logsumexp(x, axis=None):
    if not _is_tensor(x):
        return _check_finite(
            np.asarray(_np_logsumexp(np.asarray(x, dtype=np.float64), axis=axis)),
            "logsumexp",
        )
    out = _check_finite(np.asarray(_np_logsumexp(x.value, axis=axis)), "logsumexp")

    def vjp(adj):
        lse = out if axis is None else np.expand_dims(out, axis)
        a = adj if axis is None else np.expand_dims(np.asarray(adj), axis)
        return (a * np.exp(x.value - lse),)

    return Tensor(out, (x,), vjp, primitive="logsumexp")


def _np_log_softmax(a, axis):
    return a - _np_logsumexp(a, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    if not _is_tensor(x):
        return _check_finite(
            _np_log_softmax(np.asarray(x, dtype=np.float64), axis), "log_softmax"
        )
    out = _check_finite(_np_log_softmax(x.value, axis), "log_softmax")

    def vjp(adj):
        s = np.sum(adj, axis=axis, keepdims=True)
        return (adj - np.exp(out) * s,)

    return Tensor(out, (x,), vjp, primitive="log_softmax")


def softmax(x, axis=-1):
    return exp(log_softmax(x, axis=axis))


def reduce_sum(x, axis=None):
    if not _is_tensor(x):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis)
    out = _check_finite(np.asarray(np.sum(x.value, axis=axis)), "sum")

    def vjp(adj):
        if axis is None:
            return (np.broadcast_to(adj, x.value.shape).copy(),)
        a = np.expand_dims(np.asarray(adj), axis)
        return (np.broadcast_to(a, x.value.shape).copy(),)

    return Tensor(out, (x,), vjp, primitive="sum")


def reshape(x, shape):
    if not _is_tensor(x):
        return np.asarray(x, dtype=np.float64).reshape(shape)
    out = x.value.reshape(shape)
    return Tensor(out, (x,), lambda adj: (np.asarray(adj).reshape(x.value.shape),),
                  primitive="reshape")


def take_rows(x, idx):
    """Row gather (embedding lookup)."""
    idx = np.asarray(idx, dtype=np.intp)
    if not _is_tensor(x):
        return np.asarray(x, dtype=np.float64)[idx]
    out = x.value[idx]

    def vjp(adj):
        g = np.zeros_like(x.value)
        np.add.at(g, idx, adj)
        return (g,)

    return Tensor(out, (x,), vjp, primitive="take_rows")


def stack(xs, axis=0):
    if not any(_is_tensor(x) for x in xs):
        return np.stack([np.asarray(x, dtype=np.float64) for x in xs], axis=axis)
    ts = [x if _is_tensor(x) else Tensor(x) for x in xs]
    out = np.stack([t.value for t in ts], axis=axis)

    def vjp(adj):
        parts = np.split(np.asarray(adj), len(ts), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor(out, tuple(ts), vjp, primitive="stack")


def matmul(a, b):
    ta, tb = _is_tensor(a), _is_tensor(b)
    av = a.value if ta else np.asarray(a, dtype=np.float64)
    bv = b.value if tb else np.asarray(b, dtype=np.float64)
    out = _check_finite(av @ bv, "matmul")
    if not (ta or tb):
        return out
    parents = tuple(x for x, t in ((a, ta), (b, tb)) if t)

    def grad_a(adj):
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ np.asarray(adj)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(np.asarray(adj), bv)
        return np.asarray(adj) @ bv.T

    def grad_b(adj):
        if av.ndim == 1 and bv.ndim == 2:
            return np.outer(av, np.asarray(adj))
        if av.ndim == 2 and bv.ndim == 1:
            return av.T @ np.asarray(adj)
        return av.T @ np.asarray(adj)

    def vjp(adj):
        grads = []
        if ta:
            grads.append(grad_a(adj))
        if tb:
            grads.append(grad_b(adj))
        return tuple(grads)

    return Tensor(out, parents, vjp, primitive="matmul")


# -- backward pass --------------------------------------------------------


def backprop(output: Tensor, seed=1.0) -> Dict[Tensor, np.ndarray]:
    """Run reverse-mode accumulation from `output`.

    Returns adjoints for every reachable leaf tensor (nodes without
    parents), keyed by the tensor object.  Traversal order is fixed by
    node creation order, so results are deterministic.
    """
    seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape).copy()
    adjoints: Dict[int, np.ndarray] = {output.uid: seed}
    nodes: Dict[int, Tensor] = {}

    stack_ = [output]
    while stack_:
        node = stack_.pop()
        if node.uid in nodes:
            continue
        nodes[node.uid] = node
        stack_.extend(node.parents)

    leaf_grads: Dict[Tensor, np.ndarray] = {}
    for uid in sorted(nodes, reverse=True):
        node = nodes[uid]
        adj = adjoints.pop(uid, None)
        if adj is None:
            continue
        if not node.parents:
            leaf_grads[node] = leaf_grads.get(node, 0.0) + adj
            continue
        for parent, padj in zip(node.parents, node.vjp(adj)):
            if parent.uid in adjoints:
                adjoints[parent.uid] = adjoints[parent.uid] + padj
            else:
                adjoints[parent.uid] = np.array(padj, dtype=np.float64)
    return leaf_grads


def eval_with_grad(f, params) -> tuple:
    """Evaluate a scalar function of a ParamSet and return (value, grads).

    `f` receives a dict mapping parameter names to tensors and must
    return a scalar built from the sanctioned primitives.
    """
    leaves = {
        name: Tensor(params.value(name), leaf_name=name) for name in params.names()
    }
    out = f(leaves)
    if not _is_tensor(out):
        raise TypeError("function did not return a Tensor")
    if out.shape != ():
        raise ValueError("eval_with_grad requires a scalar-valued function")
    leaf_grads = backprop(out)
    grads = {}
    for tensor, adj in leaf_grads.items():
        if tensor.leaf_name is not None:
            grads[tensor.leaf_name] = adj
    for name in params.names():
        grads.setdefault(name, np.zeros_like(params.value(name)))
    return float(out.value), grads


def finite_diff_grad(f, params, eps: float = 1e-6):
    """Central-difference gradient oracle, one scalar parameter at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = {name: params.value(name).copy() for name in params.names()}

    def call(arrs):
        out = f(arrs)
        return float(out.value) if _is_tensor(out) else float(out)

    grads = {}
    for name in params.names():
        arr = base[name]
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = call(base)
            flat[i] = orig - eps
            lo = call(base)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads

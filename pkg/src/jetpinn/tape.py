"""Reverse-mode automatic differentiation over numpy arrays.

Every value in a recorded computation is a :class:`Tensor` node holding a
float64 ndarray (scalars are 0-d arrays).  Nodes remember their parents and
one vector-Jacobian closure per parent, so a single reverse sweep over the
topologically ordered graph yields d(output)/d(leaf) for every parameter
leaf.  Nodes whose ancestors are all constants carry no graph at all, which
keeps constant-only evaluations (forcing terms, probe sampling, oracles)
free of bookkeeping overhead.

Nodes are array-valued rather than scalar-valued: a batch of residual
points or probe directions lives in one node.  The semantics are the same
as a scalar tape (a 0-d array is a scalar node); batching is what makes
CPU training runs feasible.
"""

from __future__ import annotations

import ctypes
import ctypes.util

import numpy as np


def _tune_allocator():
    """Keep large allocations on the heap so freed graph buffers are reused.

    A recorded graph holds hundreds of megabyte-scale arrays alive until the
    reverse sweep, so with the default malloc every node is fresh mmap'd
    pages and each epoch pays the page-fault cost again.  Raising the mmap
    and trim thresholds makes the arena reusable across epochs (about a 50x
    speedup on batched training).  Best effort: silently skipped off glibc.
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError, TypeError):
        pass


_tune_allocator()

__all__ = [
    "Tensor",
    "TapeError",
    "parameter",
    "constant",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "matmul",
    "linear",
    "tanh",
    "sin",
    "cos",
    "exp",
    "square",
    "tsum",
    "tmean",
    "reshape",
    "grad",
]


class TapeError(RuntimeError):
    """Raised for invalid tape operations (shape mismatch, non-scalar output)."""


class Tensor:
    """A node in the recorded computation graph.

    Attributes:
        value: the cached float64 ndarray.
        requires_grad: True if any ancestor is a parameter leaf.
    """

    __slots__ = ("value", "requires_grad", "_links")

    def __init__(self, value, requires_grad=False, links=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        # _links: tuple of (parent Tensor, vjp callable) for grad-requiring parents
        self._links = links

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def parameter(value) -> Tensor:
    """A gradient-requiring leaf."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> Tensor:
    """A leaf that never receives a gradient."""
    return Tensor(value)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, *links) -> Tensor:
    """Build a result node, recording only parents that require grad."""
    kept = tuple((p, fn) for p, fn in links if p.requires_grad)
    return Tensor(value, requires_grad=bool(kept), links=kept)


def custom_node(value, links) -> Tensor:
    """A node with caller-supplied (parent, vjp) links.

    For fused primitives that compute their forward value with raw numpy
    and supply hand-derived vector-Jacobian closures.  Non-grad parents are
    dropped, matching the built-in primitives.
    """
    return _node(value, *links)


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Public alias of the broadcast-reversing gradient reduction."""
    return _unbroadcast(g, shape)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value - b.value,
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _node(-a.value, (a, lambda g: -g))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value * b.value,
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    )


def scale(a, c) -> Tensor:
    """Multiply by a constant python scalar or ndarray (no gradient into c)."""
    a = _lift(a)
    # a python float hits numpy's fast scalar path; arrays pass through
    c = float(c) if np.ndim(c) == 0 else np.asarray(c, dtype=np.float64)
    return _node(a.value * c, (a, lambda g: _unbroadcast(g * c, a.value.shape)))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise TapeError("matmul expects 2-D operands")
    return _node(
        a.value @ b.value,
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    )


def linear(x, w, b=None) -> Tensor:
    """Affine map ``x @ w.T (+ b)`` over the last axis, for a (out, in) weight.

    Fused so a dense layer costs one node.  Leading axes of x are batch
    axes; the input is flattened to rows internally so one BLAS call covers
    the whole batch, and the bias gradient sums over all batch axes.
    """
    x, w = _lift(x), _lift(w)
    if x.value.ndim < 2 or w.value.ndim != 2:
        raise TapeError("linear expects a (..., in) input and 2-D weight")
    n_in = w.value.shape[1]
    if x.value.shape[-1] != n_in:
        raise TapeError(
            f"linear shape mismatch: input {x.value.shape} vs weight {w.value.shape}"
        )
    lead = x.value.shape[:-1]
    n_out = w.value.shape[0]
    y = (x.value.reshape(-1, n_in) @ w.value.T).reshape(lead + (n_out,))
    links = [
        (x, lambda g: (g.reshape(-1, n_out) @ w.value).reshape(x.value.shape)),
        (w, lambda g: g.reshape(-1, n_out).T @ x.value.reshape(-1, n_in)),
    ]
    if b is not None:
        b = _lift(b)
        y = y + b.value
        links.append((b, lambda g: g.reshape(-1, n_out).sum(axis=0)))
    return _node(y, *links)


def tanh(a) -> Tensor:
    a = _lift(a)
    t = np.tanh(a.value)
    return _node(t, (a, lambda g: g * (1.0 - t * t)))


def sin(a) -> Tensor:
    a = _lift(a)
    return _node(np.sin(a.value), (a, lambda g: g * np.cos(a.value)))


def cos(a) -> Tensor:
    a = _lift(a)
    return _node(np.cos(a.value), (a, lambda g: -g * np.sin(a.value)))


def exp(a) -> Tensor:
    a = _lift(a)
    e = np.exp(a.value)
    return _node(e, (a, lambda g: g * e))


def square(a) -> Tensor:
    a = _lift(a)
    return _node(a.value * a.value, (a, lambda g: 2.0 * g * a.value))


def tsum(a, axis=None) -> Tensor:
    a = _lift(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        g_exp = np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, shape).copy()

    return _node(a.value.sum(axis=axis), (a, vjp))


def tmean(a, axis=None) -> Tensor:
    a = _lift(a)
    if axis is None:
        n = a.value.size
    else:
        n = a.value.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(old)))


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def _toposort(output: Tensor) -> list:
    order = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._links:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Tensor, params) -> list:
    """Gradient of a scalar ``output`` with respect to each leaf in ``params``.

    Leaves not reachable from the output get a zero gradient of matching
    shape.
    """
    if output.value.size != 1:
        raise TapeError(f"grad requires a scalar output, got shape {output.value.shape}")
    params = list(params)
    adjoint = {id(output): np.ones_like(output.value)}
    for node in reversed(_toposort(output)):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        for parent, vjp in node._links:
            contrib = vjp(g)
            pid = id(parent)
            if pid in adjoint:
                adjoint[pid] = adjoint[pid] + contrib
            else:
                adjoint[pid] = contrib
        if not node._links:
            # keep leaf adjoints around for the final gather
            adjoint[id(node)] = g
    return [adjoint.get(id(p), np.zeros_like(p.value)) for p in params]

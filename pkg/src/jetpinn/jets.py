"""Truncated-Taylor (jet) forward propagation up to order 4.

A :class:`Jet` carries the Taylor coefficients c_0..c_K of the scalar map
t -> f(x + t v) about t = 0, so k! * c_k is the k-th directional derivative
D^k f(x)[v,...,v].  Coefficients are tape tensors, which means reverse-mode
parameter gradients flow through any jet computation for free.

Composition rules are the standard truncated power-series recurrences:
multiplication is a Cauchy product, tanh/exp follow their ODE-driven
recurrences and sin/cos propagate as a coupled pair.  Division, log and
sqrt are deliberately absent; no supported circuit needs them.
"""

from __future__ import annotations

import math

import numpy as np

from . import tape
from .tape import Tensor

__all__ = [
    "MAX_ORDER",
    "Jet",
    "JetError",
    "jet_constant",
    "jet_variable",
    "jet_add",
    "jet_sub",
    "jet_scale",
    "jet_mul",
    "jet_square",
    "jet_tanh",
    "jet_exp",
    "jet_sin",
    "jet_cos",
    "jet_sin_cos",
    "apply_primitive",
    "line_jets",
    "directional_derivatives",
    "bilinear_hvp",
    "mixed_third",
    "mixed_fourth_iijj",
]

MAX_ORDER = 4


class JetError(ValueError):
    """Order mismatch, unsupported order, or non-finite coefficients."""


class Jet:
    """Taylor coefficients of a scalar function along a line.

    coeffs[k] may be any array shape (a batch of expansion points shares one
    jet); all coefficients of one jet share a broadcast-compatible shape.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        coeffs = tuple(c if isinstance(c, Tensor) else tape.constant(c) for c in coeffs)
        if not 1 <= len(coeffs) <= MAX_ORDER + 1:
            raise JetError(f"jet order must be in [0, {MAX_ORDER}], got {len(coeffs) - 1}")
        self.coeffs = coeffs

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def values(self) -> list:
        """Coefficient ndarrays (detached from the tape)."""
        return [c.value for c in self.coeffs]

    def __repr__(self):
        return f"Jet(order={self.order}, shape={self.coeffs[0].value.shape})"


def jet_constant(value, order: int) -> Jet:
    """Jet of a constant: c_0 = value, higher coefficients zero."""
    _check_order(order)
    v = np.asarray(value, dtype=np.float64)
    zero = np.zeros_like(v)
    return Jet([v] + [zero] * order)


def jet_variable(x, v, order: int) -> Jet:
    """Jet of the affine input coordinate t -> x + t v."""
    _check_order(order)
    x = np.asarray(x, dtype=np.float64)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), x.shape)
    zero = np.zeros_like(x)
    coeffs = [x]
    if order >= 1:
        coeffs.append(v)
    coeffs.extend([zero] * (order - 1))
    return Jet(coeffs)


def _check_order(order: int):
    if not 0 <= order <= MAX_ORDER:
        raise JetError(f"jet order must be in [0, {MAX_ORDER}], got {order}")


def _same_order(a: Jet, b: Jet) -> int:
    if a.order != b.order:
        raise JetError(f"operand order mismatch: {a.order} vs {b.order}")
    return a.order


def jet_add(a: Jet, b: Jet) -> Jet:
    k = _same_order(a, b)
    return Jet([tape.add(a.coeffs[i], b.coeffs[i]) for i in range(k + 1)])


def jet_sub(a: Jet, b: Jet) -> Jet:
    k = _same_order(a, b)
    return Jet([tape.sub(a.coeffs[i], b.coeffs[i]) for i in range(k + 1)])


def jet_scale(a: Jet, c) -> Jet:
    return Jet([tape.scale(ci, c) for ci in a.coeffs])


def jet_shift(a: Jet, c) -> Jet:
    """Add a constant to the zeroth coefficient."""
    coeffs = list(a.coeffs)
    coeffs[0] = tape.add(coeffs[0], tape.constant(c))
    return Jet(coeffs)


# The nonlinear primitives below are fused: forward coefficients are computed
# with raw numpy, and each output coefficient becomes a single tape node with
# hand-derived links.  The reverse rule is uniform because the differential of
# a truncated-series map is again a truncated series product: for y = f(x(t))
# it is delta_y = f'(x(t)) * delta_x, and for y = a(t) b(t) it is
# delta_y = a * delta_b + b * delta_a.  Hence d y_k / d x_m is the (k-m)-th
# coefficient of the multiplier series, and each link is one multiply.

def _weight_vjp(w, shape, c=1.0):
    if c == 1.0:
        return lambda g: tape.unbroadcast(g * w, shape)
    return lambda g: tape.unbroadcast(c * (g * w), shape)


def _series_node(value, parents, weights, k, c=1.0) -> Tensor:
    """Output coefficient k with links d y_k / d x_m = c * weights[k - m]."""
    links = [
        (parents[m], _weight_vjp(weights[k - m], parents[m].value.shape, c))
        for m in range(k + 1)
    ]
    return tape.custom_node(value, links)


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Cauchy product of two truncated series."""
    order = _same_order(a, b)
    av = [c.value for c in a.coeffs]
    bv = [c.value for c in b.coeffs]
    out = []
    for k in range(order + 1):
        val = av[0] * bv[k]
        for j in range(1, k + 1):
            val = val + av[j] * bv[k - j]
        links = [
            (a.coeffs[m], _weight_vjp(bv[k - m], av[m].shape)) for m in range(k + 1)
        ] + [
            (b.coeffs[m], _weight_vjp(av[k - m], bv[m].shape)) for m in range(k + 1)
        ]
        out.append(tape.custom_node(val, links))
    return Jet(out)


def jet_square(a: Jet) -> Jet:
    """Cauchy product of a series with itself (paired terms fused)."""
    order = a.order
    av = [c.value for c in a.coeffs]
    out = []
    for k in range(order + 1):
        val = None
        for j in range(k // 2 + 1):
            t = av[j] * av[j] if 2 * j == k else 2.0 * (av[j] * av[k - j])
            val = t if val is None else val + t
        out.append(_series_node(val, a.coeffs, av, k, c=2.0))
    return Jet(out)


def _ode_forward(xv, y0, u0, extend):
    """Coefficients of y' = u(t) x'(t): y_k = (1/k) sum_{m=1..k} m x_m u_{k-m}.

    extend(k, ys, us) appends u_k; u is carried up to the full order so the
    reverse rule (multiplication by the u series) covers every link.
    """
    order = len(xv) - 1
    ys = [y0]
    us = [u0]
    for k in range(1, order + 1):
        acc = xv[1] * us[k - 1]
        for m in range(2, k + 1):
            acc = acc + float(m) * (xv[m] * us[k - m])
        ys.append(acc * (1.0 / k) if k > 1 else acc)
        extend(k, ys, us)
    return ys, us


def jet_tanh(x: Jet) -> Jet:
    """tanh driven by tanh' = 1 - tanh^2."""
    xv = [c.value for c in x.coeffs]
    y0 = np.tanh(xv[0])

    def extend(k, ys, us):
        # u_k = coefficient k of 1 - y(t)^2
        s = None
        for j in range(k // 2 + 1):
            t = ys[j] * ys[j] if 2 * j == k else 2.0 * (ys[j] * ys[k - j])
            s = t if s is None else s + t
        us.append(-s)

    ys, us = _ode_forward(xv, y0, 1.0 - y0 * y0, extend)
    return Jet([_series_node(ys[k], x.coeffs, us, k) for k in range(x.order + 1)])


def jet_exp(x: Jet) -> Jet:
    """exp via y' = y x'."""
    xv = [c.value for c in x.coeffs]
    y0 = np.exp(xv[0])

    def extend(k, ys, us):
        us.append(ys[k])

    ys, us = _ode_forward(xv, y0, y0, extend)
    return Jet([_series_node(ys[k], x.coeffs, us, k) for k in range(x.order + 1)])


def jet_sin_cos(x: Jet):
    """sin and cos propagated as a coupled pair; returns (sin_jet, cos_jet)."""
    order = x.order
    xv = [c.value for c in x.coeffs]
    ss = [np.sin(xv[0])]
    cs = [np.cos(xv[0])]
    for k in range(1, order + 1):
        sacc = xv[1] * cs[k - 1]
        cacc = xv[1] * ss[k - 1]
        for m in range(2, k + 1):
            xm = float(m) * xv[m]
            sacc = sacc + xm * cs[k - m]
            cacc = cacc + xm * ss[k - m]
        ss.append(sacc * (1.0 / k) if k > 1 else sacc)
        cs.append(cacc * (-1.0 / k))
    sin_jet = Jet([_series_node(ss[k], x.coeffs, cs, k) for k in range(order + 1)])
    cos_jet = Jet(
        [_series_node(cs[k], x.coeffs, ss, k, c=-1.0) for k in range(order + 1)]
    )
    return sin_jet, cos_jet


def jet_sin(x: Jet) -> Jet:
    return jet_sin_cos(x)[0]


def jet_cos(x: Jet) -> Jet:
    return jet_sin_cos(x)[1]


_PRIMITIVES = {
    "add": jet_add,
    "sub": jet_sub,
    "mul": jet_mul,
    "scale": jet_scale,
    "tanh": jet_tanh,
    "sin": jet_sin,
    "cos": jet_cos,
    "exp": jet_exp,
    "square": jet_square,
}


def apply_primitive(kind: str, *operands) -> Jet:
    """Dispatch a named primitive; raises JetError for unknown kinds."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise JetError(f"unknown jet primitive {kind!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# directional derivative contractions
# ---------------------------------------------------------------------------

def line_jets(x, v, order: int) -> list:
    """Per-coordinate input jets for the line x + t v.

    x, v: (..., d) arrays; returns d scalar jets with batch shape (...).
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), x.shape)
    return [jet_variable(x[..., i], v[..., i], order) for i in range(x.shape[-1])]


def directional_derivatives(circuit, x, v, order: int) -> np.ndarray:
    """k-th directional derivatives D^k f(x)[v^k] = k! c_k for k = 0..order.

    circuit: callable mapping a list of d scalar jets to one output jet.
    Returns an array of shape (order+1,) for a single point or
    (order+1, batch) for batched x.
    """
    _check_order(order)
    out = circuit(line_jets(x, v, order))
    if out.order != order:
        raise JetError(f"circuit changed jet order: {out.order} != {order}")
    vals = np.array([math.factorial(k) * out.coeffs[k].value for k in range(order + 1)])
    if not np.all(np.isfinite(vals)):
        raise JetError("non-finite jet coefficient (overflow in a recurrence)")
    return vals


def bilinear_hvp(circuit, x, w, v) -> np.ndarray:
    """w^T H v from same-direction second-order jets via polarization:
    [Q(w+v) - Q(w-v)] / 4 with Q(a) = D^2 f(x)[a,a]."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qp = directional_derivatives(circuit, x, w + v, 2)[2]
    qm = directional_derivatives(circuit, x, w - v, 2)[2]
    return (qp - qm) / 4.0


def mixed_third(circuit, x, v, w) -> np.ndarray:
    """D^3 f(x)[v,v,w] = [C(v+w) - C(v-w) - 2 C(w)] / 6 with C(a) = D^3 f[a,a,a]."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    tp = directional_derivatives(circuit, x, v + w, 3)[3]
    tm = directional_derivatives(circuit, x, v - w, 3)[3]
    tw = directional_derivatives(circuit, x, w, 3)[3]
    return (tp - tm - 2.0 * tw) / 6.0


def mixed_fourth_iijj(circuit, x, i: int, j: int) -> np.ndarray:
    """d^4 f / dx_i^2 dx_j^2 from fourth-order jets.

    Exact single-jet evaluation for i == j; otherwise the polarization
    [T(e_i+e_j) + T(e_i-e_j) - 2 T(e_i) - 2 T(e_j)] / 12 with
    T(a) = D^4 f[a,a,a,a].
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if not (0 <= i < d and 0 <= j < d):
        raise JetError(f"coordinate index out of range: ({i}, {j}) for d={d}")
    ei = np.zeros(d)
    ei[i] = 1.0
    if i == j:
        return directional_derivatives(circuit, x, ei, 4)[4]
    ej = np.zeros(d)
    ej[j] = 1.0
    tp = directional_derivatives(circuit, x, ei + ej, 4)[4]
    tm = directional_derivatives(circuit, x, ei - ej, 4)[4]
    ti = directional_derivatives(circuit, x, ei, 4)[4]
    tj = directional_derivatives(circuit, x, ej, 4)[4]
    return (tp + tm - 2.0 * ti - 2.0 * tj) / 12.0

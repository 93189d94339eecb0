"""PDE instances: nonlinear Sine-Gordon and biharmonic benchmark problems.

Each instance owns an anisotropic closed-form solution built from a chain
of two- or three-coordinate interaction terms times a boundary factor, the
forcing derived from that solution, and the residual operators (exact,
Hutchinson-probe, and coordinate-subsampling forms) for a wrapped network.

All residual evaluations are pure functions of (params, points, probes),
so batches of points and probe directions are evaluated as one flattened
jet pass through the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .jets import (
    Jet,
    jet_add,
    jet_cos,
    jet_exp,
    jet_mul,
    jet_scale,
    jet_sin,
    jet_variable,
    line_jets,
)
from .network import DomainSpec, boundary_factor_jet, hard_constraint_wrap, mlp_eval_jet
from .tape import Tensor

__all__ = [
    "PdeInstance",
    "ResidualValue",
    "make_instance",
    "exact_solution_jet",
    "exact_solution_circuit",
    "exact_value",
    "exact_value_grad_lap",
    "forcing_eval",
    "forcing_gradient",
    "residual_full",
    "residual_hte",
    "residual_sdgd",
    "gpinn_penalty",
    "residual_full_batch",
    "residual_hte_batch",
    "residual_coordinate_batch",
    "gpinn_penalty_batch",
    "network_line_eval",
    "exact_line_eval",
    "laplacian_from_lines",
    "biharmonic_from_lines",
    "fourth_order_directions",
]

OPERATORS = ("sine_gordon", "biharmonic")
SOLUTIONS = ("two_body", "three_body")

_WINDOW_ARITY = {"two_body": 2, "three_body": 3}


@dataclass(frozen=True)
class PdeInstance:
    """A fully specified PDE problem with its manufactured exact solution."""

    operator: str
    solution: str
    d: int
    domain: DomainSpec
    coeff_seed: int
    coeffs: np.ndarray  # interaction-term weights, one per window
    diffusion: np.ndarray | None = None  # sigma matrix; None means identity

    @property
    def n_terms(self) -> int:
        return self.d - _WINDOW_ARITY[self.solution] + 1

    @property
    def diffusion_matrix(self) -> np.ndarray | None:
        """sigma sigma^T, or None for the identity fast path."""
        if self.diffusion is None:
            return None
        return self.diffusion @ self.diffusion.T

    def descriptor(self) -> dict:
        return {
            "operator": self.operator,
            "solution": self.solution,
            "d": self.d,
            "domain": self.domain.kind,
            "coeff_seed": self.coeff_seed,
            "diffusion": "identity" if self.diffusion is None else self.diffusion.tolist(),
        }


@dataclass
class ResidualValue:
    value: float
    method: str
    point: np.ndarray


def make_instance(
    operator: str,
    d: int,
    coeff_seed: int = 0,
    solution: str | None = None,
    diffusion=None,
) -> PdeInstance:
    """Build an instance; interaction weights are N(0,1) from coeff_seed."""
    if operator not in OPERATORS:
        raise ValueError(f"unknown operator {operator!r}")
    if solution is None:
        solution = "two_body" if operator == "sine_gordon" else "three_body"
    if solution not in SOLUTIONS:
        raise ValueError(f"unknown solution family {solution!r}")
    arity = _WINDOW_ARITY[solution]
    if d < arity:
        raise ValueError(f"{solution} interactions need d >= {arity}, got d={d}")
    domain_kind = "unit_ball" if operator == "sine_gordon" else "annulus_1_2"
    n_terms = d - arity + 1
    coeffs = np.random.default_rng(coeff_seed).standard_normal(n_terms)
    if diffusion is not None:
        diffusion = np.asarray(diffusion, dtype=np.float64)
        if diffusion.shape != (d, d):
            raise ValueError(f"diffusion matrix must be ({d}, {d})")
        if operator == "biharmonic":
            raise ValueError("diffusion applies to the second-order operator only")
    return PdeInstance(
        operator=operator,
        solution=solution,
        d=d,
        domain=DomainSpec(domain_kind, d),
        coeff_seed=coeff_seed,
        coeffs=coeffs,
        diffusion=diffusion,
    )


# ---------------------------------------------------------------------------
# exact solution as a jet circuit
# ---------------------------------------------------------------------------

def _two_body_window(a: Jet, b: Jet) -> Jet:
    # sin(a + cos(b) + b cos(a))
    inner = jet_add(jet_add(a, jet_cos(b)), jet_mul(b, jet_cos(a)))
    return jet_sin(inner)


def _three_body_window(a: Jet, b: Jet, c: Jet) -> Jet:
    return jet_exp(jet_mul(jet_mul(a, b), c))


_WINDOW_FN = {"two_body": _two_body_window, "three_body": _three_body_window}


def _interaction_sum_jet(instance: PdeInstance, coord_jets) -> Jet:
    window = _WINDOW_FN[instance.solution]
    arity = _WINDOW_ARITY[instance.solution]
    acc = None
    for j in range(instance.n_terms):
        term = jet_scale(window(*coord_jets[j : j + arity]), instance.coeffs[j])
        acc = term if acc is None else jet_add(acc, term)
    return acc


def exact_solution_jet(instance: PdeInstance, input_jets) -> Jet:
    """Jet of the closed-form solution (boundary factor times interaction sum)."""
    jets = list(input_jets)
    if len(jets) != instance.d:
        raise ValueError(f"expected {instance.d} coordinate jets, got {len(jets)}")
    factor = boundary_factor_jet(instance.domain, jets)
    return jet_mul(factor, _interaction_sum_jet(instance, jets))


def exact_solution_circuit(instance: PdeInstance):
    """The exact solution as a circuit usable with the jet contraction helpers."""
    return lambda coord_jets: exact_solution_jet(instance, coord_jets)


# ---------------------------------------------------------------------------
# closed evaluation of the exact solution (value / gradient / Laplacian)
#
# u = P(|x|^2) * S(x) with S a sum of short-window terms, so the Laplacian
# assembles from per-window jets along each window arm plus the polynomial
# radial factor.  This is the per-epoch forcing fast path; the generic
# coordinate-jet route below serves as its independent cross-check.
# ---------------------------------------------------------------------------

def _radial_factor(instance: PdeInstance, s: np.ndarray):
    """P(s), P'(s), P''(s) for s = |x|^2."""
    if instance.domain.kind == "unit_ball":
        return 1.0 - s, -np.ones_like(s), np.zeros_like(s)
    # (1 - s)(4 - s) = 4 - 5 s + s^2
    return (1.0 - s) * (4.0 - s), 2.0 * s - 5.0, 2.0 * np.ones_like(s)


def _window_derivatives(instance: PdeInstance, X: np.ndarray, order: int):
    """Per-window directional derivatives along each window arm.

    Returns (vals, darm) with vals (n, n_terms) window values and darm a
    list over arms of (order+1, n, n_terms) coefficient stacks (k! c_k).
    """
    window = _WINDOW_FN[instance.solution]
    arity = _WINDOW_ARITY[instance.solution]
    nw = instance.n_terms
    arms = [X[:, t : t + nw] for t in range(arity)]
    vals = None
    per_arm = []
    for t in range(arity):
        jets = [
            jet_variable(arms[s], 1.0 if s == t else 0.0, order) for s in range(arity)
        ]
        out = window(*jets)
        fact = 1.0
        stack = []
        for k in range(order + 1):
            stack.append(fact * out.coeffs[k].value)
            fact *= k + 1
        per_arm.append(np.array(stack))
        if vals is None:
            vals = per_arm[-1][0]
    return vals, per_arm


def exact_value(instance: PdeInstance, X: np.ndarray) -> np.ndarray:
    """u_exact at a batch of points (n, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    vals, _ = _window_derivatives(instance, X, 0)
    s = (X**2).sum(axis=1)
    P, _, _ = _radial_factor(instance, s)
    return P * (vals @ instance.coeffs)


def exact_value_grad_lap(instance: PdeInstance, X: np.ndarray):
    """u_exact, grad u_exact and Laplacian of u_exact at (n, d) points."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    arity = _WINDOW_ARITY[instance.solution]
    nw = instance.n_terms
    c = instance.coeffs
    vals, per_arm = _window_derivatives(instance, X, 2)

    S = vals @ c
    gradS = np.zeros((n, d))
    lapS = np.zeros(n)
    for t in range(arity):
        gradS[:, t : t + nw] += per_arm[t][1] * c
        lapS += (per_arm[t][2] * c).sum(axis=1)

    s = (X**2).sum(axis=1)
    P, dP, ddP = _radial_factor(instance, s)
    gradP = 2.0 * X * dP[:, None]
    lapP = 4.0 * s * ddP + 2.0 * d * dP

    u = P * S
    grad_u = P[:, None] * gradS + S[:, None] * gradP
    lap_u = P * lapS + 2.0 * (gradP * gradS).sum(axis=1) + S * lapP
    return u, grad_u, lap_u


# ---------------------------------------------------------------------------
# generic direction-batch evaluation (shared by exact solution and network)
# ---------------------------------------------------------------------------

def exact_line_eval(instance: PdeInstance):
    """eval_line(x_rows, v_rows, order) -> output Jet for the exact solution."""

    def eval_line(x_rows, v_rows, order):
        return exact_solution_jet(instance, line_jets(x_rows, v_rows, order))

    return eval_line


def network_line_eval(instance: PdeInstance, params):
    """eval_line for the hard-constraint-wrapped network."""

    def eval_line(x_rows, v_rows, order):
        vec = jet_variable(x_rows, v_rows, order)
        return hard_constraint_wrap(
            instance.domain, vec, mlp_eval_jet(params, vec)
        )

    return eval_line


def network_direction_eval(instance: PdeInstance, params):
    """eval_dirs(X, dirs, order) with X (n, d) and dirs (n, m, d).

    The primal coefficient is the (n, 1, d) point batch shared by all m
    directions per point, so per-point work is not repeated per direction;
    broadcasting joins the streams inside the jet recurrences.  Output jet
    coefficients have shape (n, 1) (primal) or (n, m).
    """

    def eval_dirs(X, dirs, order):
        X = np.asarray(X, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        n, d = X.shape
        coeffs = [X[:, None, :]]
        if order >= 1:
            coeffs.append(dirs)
        coeffs.extend([np.zeros((1, 1, d))] * (order - 1))
        vec = Jet(coeffs)
        return hard_constraint_wrap(instance.domain, vec, mlp_eval_jet(params, vec))

    return eval_dirs


def exact_direction_eval(instance: PdeInstance):
    """Same (X, dirs, order) contract for the exact solution (row-flattened)."""
    eval_line = exact_line_eval(instance)

    def eval_dirs(X, dirs, order):
        X = np.asarray(X, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        n, m, d = dirs.shape
        out = eval_line(np.repeat(X, m, axis=0), dirs.reshape(-1, d), order)
        return Jet([tape.reshape(c, (n, m)) for c in out.coeffs])

    return eval_dirs


def laplacian_from_lines(eval_line, X: np.ndarray) -> Tensor:
    """Sum of second coordinate derivatives via d order-2 jets per point."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    x_rep = np.repeat(X, d, axis=0)
    v_rep = np.tile(np.eye(d), (n, 1))
    out = eval_line(x_rep, v_rep, 2)
    q = tape.scale(out.coeffs[2], 2.0)  # 2 c_2 = second directional derivative
    return tape.tsum(tape.reshape(q, (n, d)), axis=1)


def fourth_order_directions(d: int):
    """Direction set and weights so that sum_k w_k D^4 u[a_k^4] = Delta^2 u.

    Coordinate directions plus e_i +- e_j pairs; the weights fold the
    polarization identity for all iijj cross terms.
    """
    dirs = [np.eye(d)]
    weights = [np.full(d, 1.0 - (d - 1) / 3.0)]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    if pairs:
        plus = np.zeros((len(pairs), d))
        minus = np.zeros((len(pairs), d))
        for p, (i, j) in enumerate(pairs):
            plus[p, i] = plus[p, j] = 1.0
            minus[p, i] = 1.0
            minus[p, j] = -1.0
        dirs.extend([plus, minus])
        weights.extend([np.full(len(pairs), 1.0 / 6.0)] * 2)
    return np.concatenate(dirs), np.concatenate(weights)


def biharmonic_from_lines(eval_line, X: np.ndarray) -> Tensor:
    """Exact biharmonic operator from order-4 jets along the polarized set."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    dirs, wts = fourth_order_directions(d)
    m = dirs.shape[0]
    x_rep = np.repeat(X, m, axis=0)
    v_rep = np.tile(dirs, (n, 1))
    out = eval_line(x_rep, v_rep, 4)
    t4 = tape.scale(out.coeffs[4], 24.0)  # 4! c_4
    return tape.tsum(tape.scale(tape.reshape(t4, (n, m)), wts), axis=1)


# ---------------------------------------------------------------------------
# forcing
# ---------------------------------------------------------------------------

def forcing_eval(instance: PdeInstance, X: np.ndarray) -> np.ndarray:
    """g(x) derived from the exact solution.

    Sine-Gordon: Laplacian of u_exact plus sin(u_exact), assembled from
    per-window jets (O(d) work per point).  Biharmonic: Delta^2 u_exact via
    the polarized order-4 jet set (O(d^2) per point).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if instance.operator == "sine_gordon":
        u, _, lap = exact_value_grad_lap(instance, X)
        return lap + np.sin(u)
    return biharmonic_from_lines(exact_line_eval(instance), X).value


def forcing_gradient(instance: PdeInstance, X: np.ndarray) -> np.ndarray:
    """grad g for the Sine-Gordon forcing, via order-3 coordinate-pair jets.

    d_k g = sum_j D^3 u[e_j, e_j, e_k] + cos(u) d_k u.
    """
    if instance.operator != "sine_gordon":
        raise ValueError("forcing_gradient applies to the Sine-Gordon operator")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    eval_line = exact_line_eval(instance)

    # coordinate jets: T_k = D^3 u[e_k^3]
    x_rep = np.repeat(X, d, axis=0)
    v_rep = np.tile(np.eye(d), (n, 1))
    out = eval_line(x_rep, v_rep, 3)
    t_coord = (6.0 * out.coeffs[3].value).reshape(n, d)

    grad_lap = t_coord.copy()  # the j == k diagonal contribution
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]
    if pairs:
        plus = np.zeros((len(pairs), d))
        minus = np.zeros((len(pairs), d))
        for p, (j, k) in enumerate(pairs):
            plus[p, j] = plus[p, k] = 1.0
            minus[p, j] = 1.0
            minus[p, k] = -1.0
        dirs = np.concatenate([plus, minus])
        x_rep = np.repeat(X, dirs.shape[0], axis=0)
        v_rep = np.tile(dirs, (n, 1))
        out = eval_line(x_rep, v_rep, 3)
        t = (6.0 * out.coeffs[3].value).reshape(n, 2, len(pairs))
        tp, tm = t[:, 0, :], t[:, 1, :]
        j_idx = np.array([p[0] for p in pairs])
        k_idx = np.array([p[1] for p in pairs])
        # D^3[jjk] feeds column k, D^3[kkj] feeds column j
        d3_jjk = (tp - tm - 2.0 * t_coord[:, k_idx]) / 6.0
        d3_kkj = (tp + tm - 2.0 * t_coord[:, j_idx]) / 6.0
        np.add.at(grad_lap, (slice(None), k_idx), d3_jjk)
        np.add.at(grad_lap, (slice(None), j_idx), d3_kkj)

    u, grad_u, _ = exact_value_grad_lap(instance, X)
    return grad_lap + np.cos(u)[:, None] * grad_u


# ---------------------------------------------------------------------------
# residual operators on the wrapped network
# ---------------------------------------------------------------------------

def _wrapped_values(instance, params, X) -> Tensor:
    """u_theta (hard-constraint wrapped) values at (n, d) points."""
    eval_line = network_line_eval(instance, params)
    return eval_line(X, np.zeros_like(X), 0).coeffs[0]


def _primal_from(out: Jet, n: int) -> Tensor:
    """The shared primal values (n,) out of a direction-eval output jet."""
    return tape.reshape(out.coeffs[0], (n,))


def first_order_part(instance: PdeInstance, u: Tensor, g: np.ndarray) -> Tensor:
    """The non-trace residual contribution (sin(u) - g, or -g for biharmonic).

    A time coordinate, when present, is folded into x and contributes here.
    """
    if instance.operator == "sine_gordon":
        return tape.sub(tape.sin(u), tape.constant(g))
    return tape.constant(-g)


def _paired_quadratic(eval_dirs, X, w, v):
    """(w^T H v) per point and direction via polarization; w, v are (n, m, d)."""
    qp = eval_dirs(X, w + v, 2)
    qm = eval_dirs(X, w - v, 2)
    diff = tape.sub(qp.coeffs[2], qm.coeffs[2])
    return tape.scale(diff, 0.5), qp  # (2c2+ - 2c2-)/4


def residual_hte_batch(instance, params, X, probe_vectors, g=None, u=None):
    """Probe-estimated residual at each point; probe_vectors is (n, V, d).

    Returns (r, u) with r and u tape tensors of shape (n,).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    pv = np.asarray(probe_vectors, dtype=np.float64)
    if pv.shape[0] != n or pv.shape[2] != d:
        raise ValueError(f"probe array shape {pv.shape} incompatible with points {X.shape}")
    eval_dirs = network_direction_eval(instance, params)
    if g is None:
        g = forcing_eval(instance, X)

    if instance.operator == "sine_gordon":
        m = instance.diffusion_matrix
        if m is None:
            out = eval_dirs(X, pv, 2)
            q = tape.scale(out.coeffs[2], 2.0)  # (n, V)
        else:
            q, out = _paired_quadratic(eval_dirs, X, pv @ m.T, pv)
        if u is None:
            u = _primal_from(out, n)
        trace = tape.tmean(q, axis=1)
        r = tape.add(trace, first_order_part(instance, u, g))
    else:
        out = eval_dirs(X, pv, 4)
        if u is None:
            u = _primal_from(out, n)
        t4 = tape.scale(out.coeffs[4], 24.0)  # (n, V)
        est = tape.scale(tape.tmean(t4, axis=1), 1.0 / 3.0)
        r = tape.add(est, first_order_part(instance, u, g))
    return r, u


def residual_coordinate_batch(instance, params, X, idx, scale_factor, g=None, u=None):
    """Residual with the trace from coordinate second derivatives.

    idx is (n, B) coordinate indices per point; scale_factor multiplies the
    subset sum (d/B for dimension subsampling, 1 for the full operator).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    idx = np.asarray(idx)
    B = idx.shape[1]
    eval_dirs = network_direction_eval(instance, params)
    if g is None:
        g = forcing_eval(instance, X)

    dirs = np.zeros((n, B, d))
    dirs[np.arange(n)[:, None], np.arange(B)[None, :], idx] = 1.0
    m = instance.diffusion_matrix
    if m is None:
        out = eval_dirs(X, dirs, 2)
        q = tape.scale(out.coeffs[2], 2.0)  # (n, B)
    else:
        q, out = _paired_quadratic(eval_dirs, X, m.T[idx], dirs)
    if u is None:
        u = _primal_from(out, n)
    trace = tape.scale(tape.tsum(q, axis=1), float(scale_factor))
    return tape.add(trace, first_order_part(instance, u, g)), u


def residual_full_batch(instance, params, X, g=None, u=None):
    """Exact-operator residual (full Laplacian trace or full biharmonic)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if instance.operator == "sine_gordon":
        idx = np.tile(np.arange(d), (n, 1))
        return residual_coordinate_batch(instance, params, X, idx, 1.0, g=g, u=u)
    eval_dirs = network_direction_eval(instance, params)
    if g is None:
        g = forcing_eval(instance, X)
    dirs, wts = fourth_order_directions(d)
    out = eval_dirs(X, np.broadcast_to(dirs, (n,) + dirs.shape), 4)
    if u is None:
        u = _primal_from(out, n)
    t4 = tape.scale(out.coeffs[4], 24.0)  # (n, m)
    op = tape.tsum(tape.scale(t4, wts), axis=1)
    return tape.add(op, first_order_part(instance, u, g)), u


# single-point contract wrappers -------------------------------------------

def residual_full(instance, params, x) -> ResidualValue:
    x = np.asarray(x, dtype=np.float64)
    r, _ = residual_full_batch(instance, params, x[None, :])
    return ResidualValue(float(r.value[0]), "full", x)


def residual_hte(instance, params, x, probes) -> ResidualValue:
    x = np.asarray(x, dtype=np.float64)
    if instance.operator == "biharmonic" and probes.distribution != "gaussian":
        raise ValueError("biharmonic residual estimation requires gaussian probes")
    r, _ = residual_hte_batch(instance, params, x[None, :], probes.vectors[None, :, :])
    return ResidualValue(float(r.value[0]), f"hte({probes.V})", x)


def residual_sdgd(instance, params, x, B, rng) -> ResidualValue:
    x = np.asarray(x, dtype=np.float64)
    d = instance.d
    if not 1 <= B <= d:
        raise ValueError(f"need 1 <= B <= d, got B={B}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    idx = rng.choice(d, size=B, replace=False)[None, :]
    r, _ = residual_coordinate_batch(instance, params, x[None, :], idx, d / B)
    return ResidualValue(float(r.value[0]), f"sdgd({B})", x)


# ---------------------------------------------------------------------------
# gradient-enhanced penalty |grad_x r_hat|^2
# ---------------------------------------------------------------------------

def _third_order_dirs(eval_dirs, X, dirs):
    out = eval_dirs(X, dirs, 3)
    return tape.scale(out.coeffs[3], 6.0), out  # 3! c_3, shape (n, m)


def gpinn_penalty_batch(
    instance,
    params,
    X,
    probe_vectors,
    mode: str = "exact_loop",
    u: Tensor | None = None,
    grad_g: np.ndarray | None = None,
    W: int | None = None,
    w_vectors: np.ndarray | None = None,
    dirs_eval=None,
):
    """Squared norm of the gradient of the probe-estimated residual, per point.

    exact_loop computes all d components d_k r_hat; probe mode estimates the
    squared norm with W extra directions (w_vectors (n, W, d), Rademacher by
    contract of the caller).  dirs_eval can override the network evaluation
    (same contract as network_direction_eval) for harness use.
    """
    if instance.operator != "sine_gordon":
        raise ValueError("the gradient penalty is defined for the Sine-Gordon residual")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    pv = np.asarray(probe_vectors, dtype=np.float64)
    V = pv.shape[1]
    eval_dirs = dirs_eval if dirs_eval is not None else network_direction_eval(instance, params)
    if u is None:
        u = _wrapped_values(instance, params, X)
    if grad_g is None:
        grad_g = forcing_gradient(instance, X)
    cos_u = tape.reshape(tape.cos(u), (n, 1))

    if mode == "exact_loop":
        # coordinate sweep: T(e_k), d_k u
        eye = np.broadcast_to(np.eye(d), (n, d, d))
        t_e, out_e = _third_order_dirs(eval_dirs, X, eye)
        t_e3 = tape.reshape(t_e, (n, 1, d))
        du = out_e.coeffs[1]  # (n, d)

        # probe-coordinate pairs v_i +- e_k
        v_rep = np.repeat(pv.reshape(n, V, 1, d), d, axis=2)  # (n,V,d,d)
        e_rep = np.broadcast_to(np.eye(d), (n, V, d, d))
        tp, _ = _third_order_dirs(eval_dirs, X, (v_rep + e_rep).reshape(n, -1, d))
        tm, _ = _third_order_dirs(eval_dirs, X, (v_rep - e_rep).reshape(n, -1, d))
        tp = tape.reshape(tp, (n, V, d))
        tm = tape.reshape(tm, (n, V, d))
        d3 = tape.scale(
            tape.sub(tape.sub(tp, tm), tape.scale(t_e3, 2.0)), 1.0 / 6.0
        )
        mixed = tape.tmean(d3, axis=1)  # (n, d): (1/V) sum_i D^3 u[v_i, v_i, e_k]
        comp = tape.sub(tape.add(mixed, tape.mul(cos_u, du)), tape.constant(grad_g))
        return tape.tsum(tape.square(comp), axis=1)

    if mode == "probe":
        wv = np.asarray(w_vectors, dtype=np.float64)
        if wv.ndim != 3 or wv.shape[0] != n or wv.shape[2] != d:
            raise ValueError("probe mode needs w_vectors of shape (n, W, d)")
        W_ = wv.shape[1]
        if W is not None and W != W_:
            raise ValueError("W disagrees with w_vectors")
        # T(w) and w^T grad u
        t_w, out_w = _third_order_dirs(eval_dirs, X, wv)
        t_w3 = tape.reshape(t_w, (n, 1, W_))
        wdu = out_w.coeffs[1]  # (n, W)
        # pairs v_i +- w_j
        v_rep = np.repeat(pv.reshape(n, V, 1, d), W_, axis=2)
        w_rep = np.broadcast_to(wv.reshape(n, 1, W_, d), (n, V, W_, d))
        tp, _ = _third_order_dirs(eval_dirs, X, (v_rep + w_rep).reshape(n, -1, d))
        tm, _ = _third_order_dirs(eval_dirs, X, (v_rep - w_rep).reshape(n, -1, d))
        tp = tape.reshape(tp, (n, V, W_))
        tm = tape.reshape(tm, (n, V, W_))
        d3 = tape.scale(tape.sub(tape.sub(tp, tm), tape.scale(t_w3, 2.0)), 1.0 / 6.0)
        mixed = tape.tmean(d3, axis=1)  # (n, W)
        wgg = np.einsum("nwd,nd->nw", wv, grad_g)
        s = tape.sub(tape.add(mixed, tape.mul(cos_u, wdu)), tape.constant(wgg))
        return tape.tmean(tape.square(s), axis=1)

    raise ValueError(f"unknown gpinn mode {mode!r}")


def gpinn_penalty(instance, params, x, probes, mode="exact_loop", W=None, rng=None):
    """Single-point penalty; probe mode draws W Rademacher directions from rng."""
    x = np.asarray(x, dtype=np.float64)
    pv = probes.vectors[None, :, :]
    if mode == "probe":
        if W is None or W < 1:
            raise ValueError("probe mode needs W >= 1")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        wv = rng.integers(0, 2, size=(1, W, instance.d)).astype(np.float64) * 2.0 - 1.0
        pen = gpinn_penalty_batch(instance, params, x[None, :], pv, mode="probe", w_vectors=wv)
    else:
        pen = gpinn_penalty_batch(instance, params, x[None, :], pv, mode=mode)
    return float(pen.value[0])

"""Randomized trace, biharmonic, and gradient-norm estimators.

Probe vectors satisfy E[v v^T] = I for each supported distribution, which
makes v^T A v an unbiased trace sample.  The module also carries the
closed-form variance expressions for the Hutchinson (Rademacher) and
dimension-subsampling estimators, both in the enumeration-verified form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "ProbeBatch",
    "TraceEstimate",
    "sample_probes",
    "hutchinson_trace",
    "sdgd_trace",
    "loss_hte_biased",
    "loss_hte_unbiased",
    "biharmonic_hte",
    "grad_norm_hte",
    "trace_estimator_variance_closed",
    "matrix_quadratic_oracle",
]

DISTRIBUTIONS = ("rademacher", "gaussian", "coordinate")


@dataclass
class ProbeBatch:
    """V direction vectors plus the distribution they were drawn from."""

    distribution: str
    d: int
    V: int
    vectors: np.ndarray  # (V, d)
    rng_seed: object = None

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown probe distribution {self.distribution!r}")
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (self.V, self.d):
            raise ValueError(f"probe array shape {self.vectors.shape} != {(self.V, self.d)}")


@dataclass
class TraceEstimate:
    value: float
    method: str  # "hutchinson" | "sdgd" | "exact"
    batch: int
    seed: object = None

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("estimator batch must be >= 1")


def sample_probes(distribution: str, d: int, V: int, seed) -> ProbeBatch:
    """Draw V i.i.d. probe directions; deterministic for a given seed.

    seed may be anything numpy SeedSequence accepts (int or list of ints),
    or an existing Generator (then rng_seed is recorded as None).
    """
    if d < 1 or V < 1:
        raise ValueError(f"need d >= 1 and V >= 1, got d={d}, V={V}")
    if isinstance(seed, np.random.Generator):
        rng, recorded = seed, None
    else:
        rng, recorded = np.random.default_rng(seed), seed
    if distribution == "rademacher":
        vectors = rng.integers(0, 2, size=(V, d)).astype(np.float64) * 2.0 - 1.0
    elif distribution == "gaussian":
        vectors = rng.standard_normal((V, d))
    elif distribution == "coordinate":
        idx = rng.integers(0, d, size=V)
        vectors = np.zeros((V, d))
        vectors[np.arange(V), idx] = math.sqrt(d)
    else:
        raise ValueError(f"unknown probe distribution {distribution!r}")
    return ProbeBatch(distribution, d, V, vectors, recorded)


def _apply_oracle(oracle, vectors: np.ndarray) -> np.ndarray:
    """Evaluate a scalar-per-direction oracle, batched when it supports it."""
    V = vectors.shape[0]
    try:
        vals = np.asarray(oracle(vectors), dtype=np.float64)
        if vals.shape == (V,):
            return vals
    except Exception:
        pass
    return np.array([float(oracle(v)) for v in vectors])


def hutchinson_trace(hvp_oracle, probes: ProbeBatch) -> TraceEstimate:
    """(1/V) sum_i v_i^T A v_i; unbiased for Tr(A) under any supported probes."""
    vals = _apply_oracle(hvp_oracle, probes.vectors)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite quadratic-form value from the oracle")
    return TraceEstimate(float(vals.mean()), "hutchinson", probes.V, probes.rng_seed)


def sdgd_trace(diag_oracle, d: int, B: int, rng) -> TraceEstimate:
    """(d/B) sum over a uniform without-replacement subset of diagonal entries."""
    if not 1 <= B <= d:
        raise ValueError(f"need 1 <= B <= d, got B={B}, d={d}")
    if isinstance(rng, np.random.Generator):
        gen, recorded = rng, None
    else:
        gen, recorded = np.random.default_rng(rng), rng
    idx = gen.choice(d, size=B, replace=False)
    total = float(sum(float(diag_oracle(int(i))) for i in idx))
    return TraceEstimate(d / B * total, "sdgd", B, recorded)


def _estimate_value(x) -> float:
    return x.value if isinstance(x, TraceEstimate) else float(x)


def loss_hte_biased(trace_estimate, b_theta) -> float:
    """Residual loss 0.5 (trace_estimate + B)^2 with a single probe set."""
    t = _estimate_value(trace_estimate)
    b = float(b_theta)
    if not (math.isfinite(t) and math.isfinite(b)):
        raise ValueError("non-finite loss inputs")
    return 0.5 * (t + b) ** 2


def loss_hte_unbiased(trace_est_1, trace_est_2, b_theta) -> float:
    """0.5 (T1 + B)(T2 + B) with independent probe sets; unbiased for the exact loss."""
    if (
        isinstance(trace_est_1, TraceEstimate)
        and isinstance(trace_est_2, TraceEstimate)
        and trace_est_1.seed is not None
        and trace_est_1.seed == trace_est_2.seed
    ):
        raise ValueError("trace estimates share a probe seed; independence violated")
    t1, t2 = _estimate_value(trace_est_1), _estimate_value(trace_est_2)
    b = float(b_theta)
    if not all(math.isfinite(v) for v in (t1, t2, b)):
        raise ValueError("non-finite loss inputs")
    return 0.5 * (t1 + b) * (t2 + b)


def biharmonic_hte(tvp_oracle, probes: ProbeBatch) -> float:
    """(1/3) mean of fourth-order same-direction contractions, Gaussian probes only.

    The 1/3 constant comes from the Gaussian fourth moment; Rademacher
    probes weight diagonal and cross fourth derivatives differently and are
    rejected.
    """
    if probes.distribution != "gaussian":
        raise ValueError("biharmonic estimation requires gaussian probes")
    vals = _apply_oracle(tvp_oracle, probes.vectors)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite fourth-order contraction from the oracle")
    return float(vals.mean() / 3.0)


def grad_norm_hte(jvp_oracle, probes: ProbeBatch) -> float:
    """(1/V) sum (v^T grad u)^2; unbiased for |grad u|^2."""
    vals = _apply_oracle(jvp_oracle, probes.vectors)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite directional derivative from the oracle")
    return float((vals**2).mean())


def matrix_quadratic_oracle(A: np.ndarray):
    """Vectorized v -> v^T A v for a dense matrix (handy for tests and the CLI)."""
    A = np.asarray(A, dtype=np.float64)

    def oracle(v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1:
            return float(v @ A @ v)
        return np.einsum("ki,ij,kj->k", v, A, v)

    return oracle


def trace_estimator_variance_closed(A: np.ndarray, method: str, batch: int) -> float:
    """Closed-form estimator variance for a fixed matrix.

    method "hte": (1/V) sum_{i != j} (A_ij^2 + A_ij A_ji) for Rademacher
    probes; the transpose-pairing term matters for the general (possibly
    non-symmetric) case and reduces to (2/V) sum_{i != j} A_ij^2 when A is
    symmetric.

    method "sdgd": mean over all C(d, B) subsets of the squared deviation of
    the rescaled subset sum from the exact trace.
    """
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ValueError("A must be square")
    if method == "hte":
        V = batch
        if V < 1:
            raise ValueError("V must be >= 1")
        off = A - np.diag(np.diag(A))
        return float((off**2).sum() + (off * off.T).sum()) / V
    if method == "sdgd":
        B = batch
        if not 1 <= B <= d:
            raise ValueError(f"need 1 <= B <= d, got B={B}, d={d}")
        n_subsets = math.comb(d, B)
        if n_subsets > 2_000_000:
            raise ValueError(f"subset enumeration too large: C({d},{B}) = {n_subsets}")
        diag = np.diag(A)
        tr = float(diag.sum())
        acc = 0.0
        for subset in combinations(range(d), B):
            est = d / B * float(diag[list(subset)].sum())
            acc += (est - tr) ** 2
        return acc / n_subsets
    raise ValueError(f"unknown variance method {method!r}")

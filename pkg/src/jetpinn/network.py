"""The scalar surrogate model: a tanh MLP evaluated over jets.

The network maps a vector jet (coefficients of shape (batch, d)) to a
scalar output jet; hard-constraint wrappers multiply the output by a factor
that vanishes on the boundary of the domain so the boundary condition holds
identically and no boundary loss is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tape
from .jets import Jet, JetError, jet_mul, jet_scale, jet_shift, jet_square, jet_tanh

__all__ = [
    "MlpParams",
    "DomainSpec",
    "init_params",
    "mlp_eval_jet",
    "hard_constraint_wrap",
    "squared_radius_jet",
    "boundary_factor_jet",
    "save_params",
    "load_params",
]

PARAMS_SCHEMA = "jetpinn-params-v1"


@dataclass
class DomainSpec:
    """Solution domain: the open unit ball or the annulus 1 < |x| < 2."""

    kind: str  # "unit_ball" | "annulus_1_2"
    d: int

    def __post_init__(self):
        if self.kind not in ("unit_ball", "annulus_1_2"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")


class MlpParams:
    """Weights and biases of a fully connected tanh network with scalar output."""

    def __init__(self, layer_sizes, weights, biases):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights = list(weights)
        self.biases = list(biases)
        self._validate()

    def _validate(self):
        sizes = self.layer_sizes
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output")
        if sizes[-1] != 1:
            raise ValueError(f"output width must be 1, got {sizes[-1]}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("weights/biases count must match layer count")
        for ell, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (sizes[ell + 1], sizes[ell])
            if w.value.shape != want:
                raise ValueError(f"layer {ell} weight shape {w.value.shape} != {want}")
            if b.value.shape != (sizes[ell + 1],):
                raise ValueError(f"layer {ell} bias shape {b.value.shape} != {(sizes[ell + 1],)}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> list:
        """All parameter leaves, in a fixed (W0, b0, W1, b1, ...) order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def num_params(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.layer_sizes,
            [tape.parameter(w.value.copy()) for w in self.weights],
            [tape.parameter(b.value.copy()) for b in self.biases],
        )


def init_params(layer_sizes, rng: np.random.Generator) -> MlpParams:
    """Symmetric zero-mean initialization scaled by 1/sqrt(fan_in); zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(tape.parameter(rng.uniform(-bound, bound, size=(fan_out, fan_in))))
        biases.append(tape.parameter(np.zeros(fan_out)))
    return MlpParams(sizes, weights, biases)


def _as_vector_jet(input_jets) -> Jet:
    """Accept a vector jet with (..., d) coefficients or a list of d scalar jets."""
    if isinstance(input_jets, Jet):
        return input_jets
    jets = list(input_jets)
    order = jets[0].order
    for j in jets:
        if j.order != order:
            raise JetError("input jets must share one order")
    coeffs = []
    for k in range(order + 1):
        coeffs.append(np.stack([j.coeffs[k].value for j in jets], axis=-1))
    return Jet(coeffs)


def mlp_eval_jet(params: MlpParams, input_jets) -> Jet:
    """Push a vector input jet through the network; returns the scalar output jet.

    The output jet's k! c_k is the k-th directional derivative of the raw
    (unwrapped) network along the input line.
    """
    x = _as_vector_jet(input_jets)
    if x.coeffs[0].value.shape[-1] != params.input_dim:
        raise ValueError(
            f"input dimension {x.coeffs[0].value.shape[-1]} != network input {params.input_dim}"
        )
    # coefficients may carry different (broadcast-compatible) batch shapes,
    # e.g. one primal row shared by many probe directions
    coeffs = list(x.coeffs)
    n_layers = len(params.weights)
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        coeffs = [
            tape.linear(c, w, b if k == 0 else None) for k, c in enumerate(coeffs)
        ]
        if ell < n_layers - 1:
            coeffs = list(jet_tanh(Jet(coeffs)).coeffs)
    # drop the trailing width-1 output axis, keeping each batch shape
    out = [tape.reshape(c, c.value.shape[:-1]) for c in coeffs]
    return Jet(out)


def squared_radius_jet(input_jets) -> Jet:
    """Jet of |x + t v|^2, built from jet primitives so derivatives are consistent."""
    x = _as_vector_jet(input_jets)
    sq = jet_square(x)
    return Jet([tape.tsum(c, axis=-1) for c in sq.coeffs])


def boundary_factor_jet(domain: DomainSpec, input_jets) -> Jet:
    """Jet of the hard-constraint factor vanishing on the domain boundary."""
    r2 = squared_radius_jet(input_jets)
    one_minus = jet_shift(jet_scale(r2, -1.0), 1.0)  # 1 - |x|^2
    if domain.kind == "unit_ball":
        return one_minus
    if domain.kind == "annulus_1_2":
        four_minus = jet_shift(jet_scale(r2, -1.0), 4.0)  # 4 - |x|^2
        return jet_mul(one_minus, four_minus)
    raise ValueError(f"unknown domain kind {domain.kind!r}")


def hard_constraint_wrap(domain: DomainSpec, input_jets, net_output: Jet) -> Jet:
    """Multiply the raw network jet by the boundary factor jet."""
    return jet_mul(boundary_factor_jet(domain, input_jets), net_output)


# ---------------------------------------------------------------------------
# checkpoint format (stable across runs; documented in the README)
# ---------------------------------------------------------------------------

def save_params(params: MlpParams, path):
    payload = {
        "schema": PARAMS_SCHEMA,
        "layer_sizes": list(params.layer_sizes),
        "weights": [w.value.tolist() for w in params.weights],
        "biases": [b.value.tolist() for b in params.biases],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_params(path) -> MlpParams:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != PARAMS_SCHEMA:
        raise ValueError(f"unrecognized checkpoint schema {payload.get('schema')!r}")
    weights = [tape.parameter(np.array(w)) for w in payload["weights"]]
    biases = [tape.parameter(np.array(b)) for b in payload["biases"]]
    return MlpParams(payload["layer_sizes"], weights, biases)

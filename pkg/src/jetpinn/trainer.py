"""Training loop: Adam on randomized-residual losses with resampled points.

Each epoch draws fresh collocation points and fresh probe directions from
its own deterministic random stream, evaluates the chosen residual form as
one batched jet pass, and takes a single Adam step.  The learning rate
decays linearly to zero.  Boundary conditions are hard constraints, so the
loss has no boundary term.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .network import MlpParams, init_params
from .problems import (
    PdeInstance,
    exact_value,
    forcing_eval,
    forcing_gradient,
    gpinn_penalty_batch,
    make_instance,
    network_line_eval,
    residual_coordinate_batch,
    residual_full_batch,
    residual_hte_batch,
)

__all__ = [
    "TrainConfig",
    "RunReport",
    "AdamState",
    "adam_step",
    "lr_schedule",
    "sample_domain_points",
    "relative_l2",
    "train",
]

METHODS = ("full", "hte", "hte_unbiased", "sdgd")


@dataclass
class TrainConfig:
    """Everything that determines a training run, including all randomness."""

    operator: str = "sine_gordon"
    d: int = 10
    method: str = "hte"
    V: int = 16  # probes per point for hte methods
    B: int = 1  # coordinates per point for sdgd
    distribution: str = "rademacher"
    epochs: int = 1000
    n_points: int = 100
    lr0: float = 1e-3
    hidden: tuple = (128, 128, 128)
    seed: int = 0
    coeff_seed: int = 0
    solution: str | None = None
    gpinn: bool = False
    gpinn_mode: str = "exact_loop"
    gpinn_W: int = 4
    lambda_g: float | None = None  # None: balance against the residual loss at init
    n_eval: int = 20000
    eval_every: int = 0  # 0: only at the end
    eval_chunk: int = 2000

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method in ("hte", "hte_unbiased") and self.V < 1:
            raise ValueError("hte methods need V >= 1")
        if self.method == "sdgd" and not 1 <= self.B <= self.d:
            raise ValueError(f"sdgd needs 1 <= B <= d, got B={self.B}")
        if self.epochs < 1 or self.n_points < 1:
            raise ValueError("epochs and n_points must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.gpinn and self.operator != "sine_gordon":
            raise ValueError("the gradient penalty applies to the Sine-Gordon operator")
        if self.gpinn and self.method not in ("hte", "hte_unbiased"):
            raise ValueError("the gradient penalty needs probe-based residuals")

    def layer_sizes(self):
        return (self.d, *self.hidden, 1)


@dataclass
class RunReport:
    """Everything a run produced, ready for serialization."""

    config: dict
    n_params: int
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    lambda_g: float | None = None
    eval_epochs: list = field(default_factory=list)
    eval_errors: list = field(default_factory=list)
    final_error: float = float("nan")
    best_error: float = float("nan")
    wall_time: float = 0.0
    diverged: bool = False


class AdamState:
    """First and second moment accumulators, one pair per parameter leaf."""

    def __init__(self, params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params.parameters()]
        self.v = [np.zeros_like(p.value) for p in params.parameters()]


def adam_step(params: MlpParams, grads, state: AdamState, lr: float):
    """One in-place Adam update (epsilon added outside the square root)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params.parameters(), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def lr_schedule(lr0: float, epoch: int, epochs: int) -> float:
    """Linear decay from lr0 at epoch 0 to zero at the final epoch."""
    return lr0 * (1.0 - epoch / epochs)


def sample_domain_points(domain, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the domain via uniform direction + radius inversion."""
    d = domain.d
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    u = rng.random(n)
    if domain.kind == "unit_ball":
        r = u ** (1.0 / d)
    elif domain.kind == "annulus_1_2":
        r = (1.0 + u * (2.0**d - 1.0)) ** (1.0 / d)
    else:
        raise ValueError(f"unknown domain kind {domain.kind!r}")
    return z * r[:, None]


def relative_l2(instance: PdeInstance, params: MlpParams, X, u_ref=None, chunk=2000):
    """Relative L2 error of the wrapped network against the exact solution."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if u_ref is None:
        u_ref = exact_value(instance, X)
    eval_line = network_line_eval(instance, params)
    preds = []
    for lo in range(0, X.shape[0], chunk):
        xc = X[lo : lo + chunk]
        preds.append(eval_line(xc, np.zeros_like(xc), 0).coeffs[0].value)
    u_hat = np.concatenate(preds)
    return float(np.linalg.norm(u_hat - u_ref) / np.linalg.norm(u_ref))


def _sample_probes_array(distribution, n, V, d, rng):
    if distribution == "rademacher":
        return rng.integers(0, 2, size=(n, V, d)).astype(np.float64) * 2.0 - 1.0
    if distribution == "gaussian":
        return rng.standard_normal((n, V, d))
    raise ValueError(f"unsupported training probe distribution {distribution!r}")


def _epoch_residual(instance, params, cfg, X, g, rng):
    """Residual tensors for one epoch; returns (loss_core, r, u, probes)."""
    n, d = X.shape
    if cfg.method == "full":
        r, u = residual_full_batch(instance, params, X, g=g)
        probes = None
        loss = tape.scale(tape.tmean(tape.square(r)), 0.5)
    elif cfg.method == "hte":
        dist = cfg.distribution
        if instance.operator == "biharmonic":
            dist = "gaussian"
        probes = _sample_probes_array(dist, n, cfg.V, d, rng)
        r, u = residual_hte_batch(instance, params, X, probes, g=g)
        loss = tape.scale(tape.tmean(tape.square(r)), 0.5)
    elif cfg.method == "hte_unbiased":
        dist = cfg.distribution
        if instance.operator == "biharmonic":
            dist = "gaussian"
        probes = _sample_probes_array(dist, n, cfg.V, d, rng)
        probes2 = _sample_probes_array(dist, n, cfg.V, d, rng)
        r, u = residual_hte_batch(instance, params, X, probes, g=g)
        r2, _ = residual_hte_batch(instance, params, X, probes2, g=g, u=u)
        loss = tape.scale(tape.tmean(tape.mul(r, r2)), 0.5)
    elif cfg.method == "sdgd":
        # per-point coordinate subsets without replacement
        idx = np.argsort(rng.random((n, d)), axis=1)[:, : cfg.B]
        r, u = residual_coordinate_batch(instance, params, X, idx, d / cfg.B, g=g)
        probes = None
        loss = tape.scale(tape.tmean(tape.square(r)), 0.5)
    else:
        raise ValueError(f"unknown method {cfg.method!r}")
    return loss, r, u, probes


def train(config: TrainConfig, instance: PdeInstance | None = None, callback=None):
    """Run the full protocol; returns (params, RunReport).

    All randomness derives from config.seed through spawned substreams, so a
    run is bitwise reproducible.  callback(epoch, loss_value) is invoked
    once per epoch when given.
    """
    cfg = config
    cfg.validate()
    if instance is None:
        instance = make_instance(
            cfg.operator, cfg.d, coeff_seed=cfg.coeff_seed, solution=cfg.solution
        )
    root = np.random.SeedSequence(cfg.seed)
    init_ss, eval_ss, epoch_root = root.spawn(3)
    epoch_seeds = epoch_root.spawn(cfg.epochs)

    params = init_params(cfg.layer_sizes(), np.random.default_rng(init_ss))
    state = AdamState(params)
    report = RunReport(config=dict(vars(cfg)), n_params=params.num_params())
    report.config["hidden"] = list(cfg.hidden)

    X_eval = sample_domain_points(instance.domain, cfg.n_eval, np.random.default_rng(eval_ss))
    u_eval = exact_value(instance, X_eval)

    best = float("inf")
    best_params = None
    lam = cfg.lambda_g
    t0 = time.perf_counter()

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(epoch_seeds[epoch])
        X = sample_domain_points(instance.domain, cfg.n_points, rng)
        g = forcing_eval(instance, X)
        loss, r, u, probes = _epoch_residual(instance, params, cfg, X, g, rng)

        if cfg.gpinn:
            grad_g = forcing_gradient(instance, X)
            if cfg.gpinn_mode == "probe":
                wv = rng.integers(0, 2, size=(cfg.n_points, cfg.gpinn_W, cfg.d))
                wv = wv.astype(np.float64) * 2.0 - 1.0
                pen = gpinn_penalty_batch(
                    instance, params, X, probes, mode="probe", u=u,
                    grad_g=grad_g, w_vectors=wv,
                )
            else:
                pen = gpinn_penalty_batch(
                    instance, params, X, probes, mode="exact_loop", u=u, grad_g=grad_g
                )
            pen_mean = tape.scale(tape.tmean(pen), 0.5)
            if lam is None:
                # balance the two loss terms at initialization
                pm = float(pen_mean.value)
                lam = float(loss.value) / pm if pm > 0 else 1.0
                report.lambda_g = lam
            loss = tape.add(loss, tape.scale(pen_mean, lam))
            report.penalty.append(float(pen_mean.value))

        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            report.diverged = True
            break
        lr = lr_schedule(cfg.lr0, epoch, cfg.epochs)
        report.loss.append(loss_val)
        report.lr.append(lr)

        grads = tape.grad(loss, params.parameters())
        adam_step(params, grads, state, lr)

        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            err = relative_l2(instance, params, X_eval, u_eval, chunk=cfg.eval_chunk)
            report.eval_epochs.append(epoch + 1)
            report.eval_errors.append(err)
            if err < best:
                best = err
                best_params = params.copy()
        if callback is not None:
            callback(epoch, loss_val)

    report.final_error = relative_l2(instance, params, X_eval, u_eval, chunk=cfg.eval_chunk)
    if report.final_error < best:
        best = report.final_error
        best_params = None  # final weights are the best weights
    report.best_error = best
    report.wall_time = time.perf_counter() - t0
    if best_params is not None:
        # keep the best-seen weights as the run's deliverable
        params = best_params
    return params, report

"""High-dimensional PDE solving with jet-propagated randomized residuals.

Subpackage map:
    tape        reverse-mode autodiff over numpy arrays
    jets        truncated Taylor propagation (order <= 4) and contractions
    network     tanh MLP on jets, hard boundary constraints, checkpoints
    estimators  probe sampling, randomized trace/biharmonic estimators
    problems    PDE instances, exact solutions, forcing, residual operators
    trainer     Adam training loop, sampling, evaluation
    reporting   run reports, delimited outputs, figures
    cli         command-line entry point
"""

from .estimators import (
    ProbeBatch,
    TraceEstimate,
    biharmonic_hte,
    hutchinson_trace,
    loss_hte_biased,
    loss_hte_unbiased,
    matrix_quadratic_oracle,
    sample_probes,
    sdgd_trace,
    trace_estimator_variance_closed,
)
from .jets import Jet, JetError, directional_derivatives
from .network import DomainSpec, MlpParams, init_params, load_params, save_params
from .problems import (
    PdeInstance,
    exact_value,
    forcing_eval,
    gpinn_penalty,
    make_instance,
    residual_full,
    residual_hte,
    residual_sdgd,
)
from .tape import Tensor
from .trainer import RunReport, TrainConfig, relative_l2, train

__all__ = [
    "Jet",
    "JetError",
    "Tensor",
    "DomainSpec",
    "MlpParams",
    "PdeInstance",
    "ProbeBatch",
    "TraceEstimate",
    "RunReport",
    "TrainConfig",
    "biharmonic_hte",
    "directional_derivatives",
    "matrix_quadratic_oracle",
    "exact_value",
    "forcing_eval",
    "gpinn_penalty",
    "hutchinson_trace",
    "init_params",
    "load_params",
    "loss_hte_biased",
    "loss_hte_unbiased",
    "make_instance",
    "relative_l2",
    "residual_full",
    "residual_hte",
    "residual_sdgd",
    "sample_probes",
    "save_params",
    "sdgd_trace",
    "train",
    "trace_estimator_variance_closed",
]

__version__ = "1.0.0"

"""Command-line interface.

Subcommands:
    train      run one training job, write report/series/figure/checkpoint
    sweep      repeat a training job over a list of probe counts
    estimate   randomized trace estimates for a seeded test matrix
    variance   closed-form versus empirical estimator variance
    check      internal consistency checks on a problem instance

Experiment files are JSON with schema "jetpinn-experiment-v1"; every field
is validated and unknown fields are rejected so typos fail loudly.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .estimators import (
    hutchinson_trace,
    matrix_quadratic_oracle,
    sample_probes,
    sdgd_trace,
    trace_estimator_variance_closed,
)
from .network import save_params
from .problems import (
    exact_line_eval,
    exact_value_grad_lap,
    forcing_eval,
    laplacian_from_lines,
    make_instance,
)
from .reporting import render_sweep_figure, write_run_artifacts, write_sweep_summary
from .trainer import TrainConfig, sample_domain_points, train

EXPERIMENT_SCHEMA = "jetpinn-experiment-v1"

_CONFIG_FIELDS = {
    "operator": str,
    "d": int,
    "method": str,
    "V": int,
    "B": int,
    "distribution": str,
    "epochs": int,
    "n_points": int,
    "lr0": float,
    "hidden": list,
    "seed": int,
    "coeff_seed": int,
    "solution": str,
    "gpinn": bool,
    "gpinn_mode": str,
    "gpinn_W": int,
    "lambda_g": float,
    "n_eval": int,
    "eval_every": int,
    "eval_chunk": int,
}


class ConfigError(ValueError):
    pass


def load_experiment(path) -> dict:
    """Read and validate an experiment file; returns {config: ..., sweep: ...}."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read experiment file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("experiment file must hold a JSON object")
    if payload.get("schema") != EXPERIMENT_SCHEMA:
        raise ConfigError(
            f"expected schema {EXPERIMENT_SCHEMA!r}, got {payload.get('schema')!r}"
        )
    cfg = payload.get("config", {})
    if not isinstance(cfg, dict):
        raise ConfigError("'config' must be an object")
    for key, val in cfg.items():
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown config field {key!r}")
        want = _CONFIG_FIELDS[key]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            continue
        if want is int and isinstance(val, bool):
            raise ConfigError(f"config field {key!r} must be {want.__name__}")
        if val is not None and not isinstance(val, want):
            raise ConfigError(f"config field {key!r} must be {want.__name__}")
    sweep = payload.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or "V" not in sweep:
            raise ConfigError("'sweep' must be an object with a 'V' list")
        if not isinstance(sweep["V"], list) or not all(
            isinstance(v, int) and v >= 1 for v in sweep["V"]
        ):
            raise ConfigError("'sweep.V' must be a list of positive integers")
    extra = set(payload) - {"schema", "config", "sweep"}
    if extra:
        raise ConfigError(f"unknown top-level fields: {sorted(extra)}")
    return {"config": cfg, "sweep": sweep}


def _build_config(args) -> TrainConfig:
    cfg_dict = {}
    if args.config:
        cfg_dict.update(load_experiment(args.config)["config"])
    for key in _CONFIG_FIELDS:
        val = getattr(args, key, None)
        if val is not None:
            cfg_dict[key] = val
    if "hidden" in cfg_dict:
        cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    cfg = TrainConfig(**cfg_dict)
    cfg.validate()
    return cfg


def _add_train_flags(p):
    p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--operator", choices=("sine_gordon", "biharmonic"))
    p.add_argument("--d", type=int)
    p.add_argument("--method", choices=("full", "hte", "hte_unbiased", "sdgd"))
    p.add_argument("--V", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--distribution", choices=("rademacher", "gaussian"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--coeff-seed", dest="coeff_seed", type=int)
    p.add_argument("--gpinn", action="store_const", const=True, default=None)
    p.add_argument("--gpinn-mode", dest="gpinn_mode", choices=("exact_loop", "probe"))
    p.add_argument("--gpinn-W", dest="gpinn_W", type=int)
    p.add_argument("--n-eval", dest="n_eval", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--outdir", required=True, help="directory for run artifacts")


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    params, report = train(cfg)
    paths = write_run_artifacts(report, args.outdir)
    ckpt = f"{args.outdir}/params.json"
    save_params(params, ckpt)
    paths["checkpoint"] = ckpt
    print(f"final_error\t{report.final_error:.6e}")
    print(f"best_error\t{report.best_error:.6e}")
    print(f"wall_time_s\t{report.wall_time:.2f}")
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return 1 if report.diverged else 0


def _cmd_sweep(args) -> int:
    if not args.config:
        print("error: sweep requires --config with a 'sweep' section", file=sys.stderr)
        return 2
    exp = load_experiment(args.config)
    if exp["sweep"] is None:
        print("error: experiment file has no 'sweep' section", file=sys.stderr)
        return 2
    rows = []
    for V in exp["sweep"]["V"]:
        cfg_dict = dict(exp["config"])
        cfg_dict["V"] = V
        if "hidden" in cfg_dict:
            cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
        cfg = TrainConfig(**cfg_dict)
        cfg.validate()
        params, report = train(cfg)
        subdir = f"{args.outdir}/V{V}"
        write_run_artifacts(report, subdir)
        save_params(params, f"{subdir}/params.json")
        rows.append(
            {
                "V": V,
                "final_error": report.final_error,
                "best_error": report.best_error,
                "final_loss": report.loss[-1] if report.loss else None,
                "wall_time_s": report.wall_time,
                "diverged": report.diverged,
            }
        )
        print(f"V={V}\tfinal_error={report.final_error:.6e}")
    summary = write_sweep_summary(rows, f"{args.outdir}/sweep.json")
    figure = render_sweep_figure(rows, f"{args.outdir}/sweep.png")
    print(f"sweep_summary\t{summary}")
    print(f"sweep_figure\t{figure}")
    return 0


def _cmd_estimate(args) -> int:
    rng = np.random.default_rng(args.matrix_seed)
    A = rng.standard_normal((args.d, args.d))
    A = 0.5 * (A + A.T)
    oracle = matrix_quadratic_oracle(A)
    exact = float(np.trace(A))
    probes = sample_probes(args.distribution, args.d, args.V, args.seed)
    est = hutchinson_trace(oracle, probes)
    print(f"exact_trace\t{exact:.10e}")
    print(f"hutchinson_{args.distribution}_{args.V}\t{est.value:.10e}")
    sd = sdgd_trace(lambda i: A[i, i], args.d, min(args.B, args.d), args.seed)
    print(f"sdgd_{sd.batch}\t{sd.value:.10e}")
    return 0


def _cmd_variance(args) -> int:
    rng = np.random.default_rng(args.matrix_seed)
    A = rng.standard_normal((args.d, args.d))
    if args.symmetric:
        A = 0.5 * (A + A.T)
    closed = trace_estimator_variance_closed(A, args.method, args.batch)
    oracle = matrix_quadratic_oracle(A)
    vals = np.empty(args.trials)
    for t in range(args.trials):
        if args.method == "hte":
            probes = sample_probes("rademacher", args.d, args.batch, [args.seed, t])
            vals[t] = hutchinson_trace(oracle, probes).value
    if args.method == "hte":
        empirical = float(vals.var())
    else:
        gen = np.random.default_rng(args.seed)
        for t in range(args.trials):
            vals[t] = sdgd_trace(lambda i: A[i, i], args.d, args.batch, gen).value
        empirical = float(vals.var())
    print(f"closed_form\t{closed:.10e}")
    print(f"empirical_{args.trials}\t{empirical:.10e}")
    return 0


def _cmd_check(args) -> int:
    """Cross-check the fast closed-form paths against generic jet evaluation."""
    instance = make_instance(args.operator, args.d, coeff_seed=args.coeff_seed)
    rng = np.random.default_rng(args.seed)
    X = sample_domain_points(instance.domain, args.points, rng)
    ok = True
    if instance.operator == "sine_gordon":
        u, _, lap = exact_value_grad_lap(instance, X)
        lap_jets = laplacian_from_lines(exact_line_eval(instance), X).value
        err = float(np.max(np.abs(lap - lap_jets)))
        ok &= err < 1e-8
        print(f"laplacian_consistency\t{err:.3e}\t{'ok' if err < 1e-8 else 'FAIL'}")
        g = forcing_eval(instance, X)
        err_g = float(np.max(np.abs(g - (lap_jets + np.sin(u)))))
        ok &= err_g < 1e-8
        print(f"forcing_consistency\t{err_g:.3e}\t{'ok' if err_g < 1e-8 else 'FAIL'}")
    else:
        g = forcing_eval(instance, X)
        finite = bool(np.all(np.isfinite(g)))
        ok &= finite
        print(f"forcing_finite\t{'ok' if finite else 'FAIL'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="jetpinn",
        description="high-dimensional PDE training with randomized jet residuals",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    _add_train_flags(p_train)
    p_train.set_defaults(fn=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="train across a probe-count sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--outdir", required=True)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_est = sub.add_parser("estimate", help="trace estimates for a seeded matrix")
    p_est.add_argument("--d", type=int, default=16)
    p_est.add_argument("--V", type=int, default=8)
    p_est.add_argument("--B", type=int, default=4)
    p_est.add_argument("--distribution", default="rademacher",
                       choices=("rademacher", "gaussian", "coordinate"))
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--matrix-seed", type=int, default=0)
    p_est.set_defaults(fn=_cmd_estimate)

    p_var = sub.add_parser("variance", help="closed-form vs empirical variance")
    p_var.add_argument("--d", type=int, default=16)
    p_var.add_argument("--method", default="hte", choices=("hte", "sdgd"))
    p_var.add_argument("--batch", type=int, default=4)
    p_var.add_argument("--trials", type=int, default=2000)
    p_var.add_argument("--symmetric", action="store_true")
    p_var.add_argument("--seed", type=int, default=0)
    p_var.add_argument("--matrix-seed", type=int, default=0)
    p_var.set_defaults(fn=_cmd_variance)

    p_check = sub.add_parser("check", help="instance self-consistency checks")
    p_check.add_argument("--operator", default="sine_gordon",
                         choices=("sine_gordon", "biharmonic"))
    p_check.add_argument("--d", type=int, default=6)
    p_check.add_argument("--points", type=int, default=20)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--coeff-seed", dest="coeff_seed", type=int, default=0)
    p_check.set_defaults(fn=_cmd_check)

    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

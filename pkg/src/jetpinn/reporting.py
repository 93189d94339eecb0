"""Run artifacts: JSON reports, delimited series, and rendered figures.

A training run emits three files into its output directory: report.json
(config echo plus summary metrics), loss.csv (per-epoch loss and learning
rate) and loss.png (the loss curve).  A probe-count sweep additionally
emits sweep.json and an error-versus-probes figure.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .trainer import RunReport

__all__ = [
    "REPORT_SCHEMA",
    "write_run_report",
    "write_loss_csv",
    "render_loss_figure",
    "write_run_artifacts",
    "write_sweep_summary",
    "render_sweep_figure",
]

REPORT_SCHEMA = "jetpinn-report-v1"


def _report_payload(report: RunReport) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "config": report.config,
        "n_params": report.n_params,
        "epochs_run": len(report.loss),
        "final_loss": report.loss[-1] if report.loss else None,
        "final_error": report.final_error,
        "best_error": report.best_error,
        "eval_epochs": report.eval_epochs,
        "eval_errors": report.eval_errors,
        "lambda_g": report.lambda_g,
        "wall_time_s": report.wall_time,
        "diverged": report.diverged,
    }


def write_run_report(report: RunReport, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_report_payload(report), fh, indent=2)
        fh.write("\n")
    return path


def write_loss_csv(report: RunReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["epoch", "loss", "lr"]
        has_pen = bool(report.penalty)
        if has_pen:
            header.append("penalty")
        writer.writerow(header)
        for e, (lo, lr) in enumerate(zip(report.loss, report.lr)):
            row = [e, f"{lo:.10e}", f"{lr:.10e}"]
            if has_pen:
                row.append(f"{report.penalty[e]:.10e}")
            writer.writerow(row)
    return path


def render_loss_figure(report: RunReport, path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(report.loss))
    ax.semilogy(epochs, report.loss, lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    title = f"{report.config.get('operator')} d={report.config.get('d')} {report.config.get('method')}"
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_run_artifacts(report: RunReport, outdir) -> dict:
    """Write report.json, loss.csv and loss.png; returns the path map."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return {
        "report": str(write_run_report(report, outdir / "report.json")),
        "loss_csv": str(write_loss_csv(report, outdir / "loss.csv")),
        "loss_png": str(render_loss_figure(report, outdir / "loss.png")),
    }


def write_sweep_summary(rows: list, path) -> Path:
    """rows: dicts with at least V / final_error / best_error / wall_time_s."""
    path = Path(path)
    with open(path, "w") as fh:
        json.dump({"schema": "jetpinn-sweep-v1", "runs": rows}, fh, indent=2)
        fh.write("\n")
    return path


def render_sweep_figure(rows: list, path, x_key="V", y_key="final_error") -> Path:
    path = Path(path)
    xs = [r[x_key] for r in rows]
    ys = [r[y_key] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(xs, ys, "o-")
    ax.set_xlabel(x_key)
    ax.set_ylabel(y_key.replace("_", " "))
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

"""Error metrics and report rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MetricError
from .network import MlpParams
from .operators import Problem, residual_field

__all__ = [
    "rel_l2_error",
    "linf_error",
    "residual_linf",
    "ratio_table",
    "trajectory_stats",
    "ErrorReport",
    "ERRORS_CSV_HEADER",
    "write_errors_csv",
]


def _paired(exact, approx):
    exact = np.asarray(exact, dtype=np.float64).ravel()
    approx = np.asarray(approx, dtype=np.float64).ravel()
    if exact.shape != approx.shape or exact.size == 0:
        raise MetricError("metric inputs must be nonempty arrays of equal length")
    return exact, approx


def rel_l2_error(exact, approx) -> float:
    """||exact - approx||_2 / ||exact||_2."""
    exact, approx = _paired(exact, approx)
    denom = float(np.linalg.norm(exact))
    if denom == 0.0:
        raise MetricError("relative error undefined: exact values have zero norm")
    return float(np.linalg.norm(exact - approx)) / denom


def linf_error(exact, approx) -> float:
    exact, approx = _paired(exact, approx)
    return float(np.abs(exact - approx).max())


def residual_linf(params: MlpParams, problem: Problem, points: np.ndarray) -> float:
    """Max interior residual magnitude over the given test points."""
    r = residual_field(params, points, problem)
    if not np.isfinite(r).all():
        raise MetricError("residual not finite on test points")
    return float(np.abs(r).max())


def ratio_table(errors) -> np.ndarray:
    """Consecutive halving ratios e[i] / e[i+1].

    The input lists errors at a regularization halved entry to entry, so
    the table quantifies the observed convergence rate.
    """
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size < 2:
        raise MetricError("ratio table needs at least two entries")
    if (e[1:] == 0.0).any():
        raise MetricError("ratio table would divide by a zero error")
    return e[:-1] / e[1:]


def trajectory_stats(objectives: np.ndarray, states: np.ndarray, minimizers):
    """Per-step ensemble summaries.

    Returns (f_hat, err_mean): mean objective across trajectories at
    every step, and mean distance to the nearest listed minimizer
    (None when no minimizer is listed).
    """
    objectives = np.asarray(objectives, dtype=np.float64)
    if objectives.ndim != 2 or objectives.size == 0:
        raise MetricError("objectives must be (n_traj, horizon + 1)")
    f_hat = objectives.mean(axis=0)
    if minimizers is None or len(minimizers) == 0:
        return f_hat, None
    minimizers = np.asarray(minimizers, dtype=np.float64)
    diff = states[:, :, None, :] - minimizers[None, None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1)).min(axis=-1)
    return f_hat, dist.mean(axis=0)


ERRORS_CSV_HEADER = "lambda,e_l2_rel,e_linf,residual_eps,n_test,seed"


@dataclass
class ErrorReport:
    """One row of a solve's error summary against an exact solution."""

    lam: float
    e_l2_rel: float
    e_linf: float
    residual_eps: float
    n_test: int
    seed: int

    def csv_row(self) -> str:
        return "%.17g,%.17g,%.17g,%.17g,%d,%d" % (
            self.lam, self.e_l2_rel, self.e_linf, self.residual_eps, self.n_test, self.seed)


def write_errors_csv(path, reports) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(ERRORS_CSV_HEADER + "\n")
        for r in reports:
            f.write(r.csv_row() + "\n")

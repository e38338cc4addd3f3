"""Mirrored Euler-Maruyama dynamics with truncated, state-dependent noise.

One step moves every trajectory by a gradient descent increment plus a
Gaussian kick scaled by the learned amplitude, hard-thresholded at tau,
then reflects the result back into the box:

    y   = x - eta grad f(x) + sqrt(eta) h_tau(x) xi,   xi ~ N(0, I)
    x'  = Mirr(y)   componentwise

Each trajectory draws from its own generator (base seed XOR trajectory
index), so results do not depend on how trajectories are batched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import tune_allocator
from .domain import Box
from .exceptions import DynamicsError
from .network import MlpParams, forward_laplacian_batch
from .operators import ControlSet, Problem, noise_coeff

__all__ = [
    "LangevinConfig",
    "TrajectoryLog",
    "estimate_kappa",
    "truncated_noise",
    "mirror",
    "em_step",
    "network_noise_field",
    "run_trajectories",
]


@dataclass
class LangevinConfig:
    step_size: float
    horizon: int
    truncation: float
    n_traj: int
    seed: int

    def __post_init__(self):
        if not (np.isfinite(self.step_size) and self.step_size > 0.0):
            raise ValueError("step_size must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if not (np.isfinite(self.truncation) and self.truncation >= 0.0):
            raise ValueError("truncation must be nonnegative")
        if self.n_traj < 1:
            raise ValueError("need at least one trajectory")


@dataclass
class TrajectoryLog:
    """States and objective values of every trajectory, plus per-trajectory
    running minima (the reported answer is the best visited point)."""

    states: np.ndarray      # (n_traj, horizon + 1, d)
    objectives: np.ndarray  # (n_traj, horizon + 1)
    best_points: np.ndarray
    best_values: np.ndarray
    best_indices: np.ndarray


def estimate_kappa(gradient: Callable[[np.ndarray], np.ndarray], domain: Box,
                   n_samples: int, rng) -> float:
    """kappa = max-norm gradient bound squared over uniform samples, halved."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    x = rng.uniform(domain.lower, domain.upper, size=(n_samples, domain.dimension))
    g = np.asarray(gradient(x))
    if not np.isfinite(g).all():
        raise DynamicsError("gradient not finite while estimating kappa")
    m = np.abs(g).max(axis=1).max()
    return 0.5 * float(m) ** 2


def truncated_noise(h, tau: float):
    """h 1{h >= tau}, threshold inclusive."""
    h = np.asarray(h, dtype=np.float64)
    out = np.where(h >= tau, h, 0.0)
    if np.ndim(h) == 0:
        return float(out)
    return out


def mirror(x, domain: Box):
    """Componentwise reflection into the box.

    Unfolds the reflected trajectory over the 2w-periodic tiling:
    z = (x - a) / w, r = z - floor(z); even copies map to a + w r, odd
    copies to b - w r.  The identity on the box itself.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, up = domain.lower, domain.upper
    w = domain.widths
    z = (x - lo) / w
    k = np.floor(z)
    r = z - k
    even = np.mod(k, 2.0) == 0.0
    out = np.where(even, lo + w * r, up - w * r)
    # guard against one-ulp excursions of the folded coordinate
    return np.clip(out, lo, up)


def em_step(x: np.ndarray, gradient, noise_fn, xi: np.ndarray,
            config: LangevinConfig, domain: Box) -> np.ndarray:
    """One mirrored Euler-Maruyama step for a batch of states."""
    g = np.asarray(gradient(x))
    h = truncated_noise(noise_fn(x), config.truncation)
    y = x - config.step_size * g + np.sqrt(config.step_size) * h[:, None] * xi
    return mirror(y, domain)


def network_noise_field(params: MlpParams, lam: float, control: ControlSet):
    """Noise amplitude induced by a trained network's laplacian."""

    def noise(x):
        _, _, lap = forward_laplacian_batch(params, np.asarray(x, dtype=np.float64))
        return noise_coeff(lap, lam, control)

    return noise


def run_trajectories(problem: Problem, noise, config: LangevinConfig) -> TrajectoryLog:
    """Simulate n_traj mirrored trajectories over the configured horizon.

    noise is either a callable (N, d) -> (N,) giving the untruncated
    amplitude, or MlpParams from which that field is built.  Initial
    states are uniform on the box.  Trajectory j consumes only its own
    stream seeded with (seed XOR j): first the initial state, then the
    horizon's Gaussian increments, so any batching gives identical logs.
    """
    tune_allocator()
    if isinstance(noise, MlpParams):
        noise = network_noise_field(noise, problem.lam, problem.control)
    d = problem.domain.dimension
    n, t_max = config.n_traj, config.horizon
    x = np.empty((n, d))
    xi = np.empty((n, t_max, d))
    for j in range(n):
        rng = np.random.default_rng(config.seed ^ j)
        x[j] = rng.uniform(problem.domain.lower, problem.domain.upper, size=d)
        xi[j] = rng.standard_normal((t_max, d))
    states = np.empty((n, t_max + 1, d))
    states[:, 0] = x
    for k in range(t_max):
        x = em_step(x, problem.gradient, noise, xi[:, k], config, problem.domain)
        if not np.isfinite(x).all():
            bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
            raise DynamicsError(f"trajectory {bad} left the finite range at step {k + 1}",
                                trajectory=bad, step=k + 1)
        states[:, k + 1] = x
    flat = states.reshape(n * (t_max + 1), d)
    objectives = np.asarray(problem.evaluate(flat)).reshape(n, t_max + 1)
    best_indices = objectives.argmin(axis=1)
    rows = np.arange(n)
    return TrajectoryLog(
        states=states,
        objectives=objectives,
        best_points=states[rows, best_indices],
        best_values=objectives[rows, best_indices],
        best_indices=best_indices,
    )

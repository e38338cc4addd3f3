"""Physics-informed training of the value network.

Each iteration draws fresh interior and boundary collocation points,
forms the weighted loss

    L = alpha_res * mean |R|^2 + alpha_bnd * mean |grad v . n|^2

on a tape, pulls the exact parameter gradient back through it, and
applies a sign-based (LION) update.  Interior points are uniform on the
open box; boundary points land on faces with probability proportional
to face measure, paired with the outward unit normal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .domain import Box
from .exceptions import TrainingError
from .network import MlpParams, watch_params, backward, zeros_like_params
from .operators import Problem, interior_residual_vars, boundary_residual_vars

__all__ = [
    "TrainConfig",
    "TrainLog",
    "sample_interior",
    "sample_boundary",
    "loss",
    "lion_step",
    "train",
]

# interior collocation points handled per tape; bounds peak memory for
# high-dimensional Hessian propagation without changing results for any
# fixed batch size
_CHUNK = 2048


@dataclass
class TrainConfig:
    alpha_res: float
    alpha_bnd: float
    n_interior: int
    n_boundary: int
    iterations: int
    learning_rate: float = 3e-4
    lr_schedule: str = "constant"  # "constant" or "cosine"
    lr_min: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.alpha_res < 0.0 or self.alpha_bnd < 0.0:
            raise ValueError("loss weights must be nonnegative")
        if self.n_interior < 1 or self.n_boundary < 1:
            raise ValueError("need at least one interior and one boundary point")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.learning_rate <= 0.0 or self.lr_min <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")

    def lr_at(self, t: int) -> float:
        if self.lr_schedule == "constant" or self.iterations <= 1:
            return self.learning_rate
        frac = t / (self.iterations - 1)
        return self.lr_min + 0.5 * (self.learning_rate - self.lr_min) * (1.0 + np.cos(np.pi * frac))


@dataclass
class TrainLog:
    """Per-logged-iteration training record."""

    iterations: list[int] = field(default_factory=list)
    loss_total: list[float] = field(default_factory=list)
    loss_pde: list[float] = field(default_factory=list)
    loss_bnd: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, it, total, pde, bnd, lr, secs):
        for v in (total, pde, bnd, lr, secs):
            if not np.isfinite(v):
                raise ValueError("train log values must be finite")
        self.iterations.append(int(it))
        self.loss_total.append(float(total))
        self.loss_pde.append(float(pde))
        self.loss_bnd.append(float(bnd))
        self.lr.append(float(lr))
        self.seconds.append(float(secs))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as f:
            f.write("iter,loss_total,loss_pde,loss_bnd,lr,seconds\n")
            for row in zip(self.iterations, self.loss_total, self.loss_pde,
                           self.loss_bnd, self.lr, self.seconds):
                f.write("%d,%.17g,%.17g,%.17g,%.17g,%.17g\n" % row)


# ---------------------------------------------------------------------------
# collocation sampling


def _redraw_onto_open(x, lo, up, rng):
    # uniform draws land on the closed lower edge with probability ~2^-53;
    # redraw any such draw so points are strictly interior per coordinate
    while True:
        bad = (x <= lo) | (x >= up)
        if not bad.any():
            return x
        x[bad] = rng.uniform(np.broadcast_to(lo, x.shape)[bad], np.broadcast_to(up, x.shape)[bad])


def sample_interior(domain: Box, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform on the open box."""
    if n < 1:
        raise ValueError("need n >= 1")
    x = rng.uniform(domain.lower, domain.upper, size=(n, domain.dimension))
    return _redraw_onto_open(x, domain.lower, domain.upper, rng)


def sample_boundary(domain: Box, n: int, rng: np.random.Generator):
    """n boundary points with outward unit normals.

    Faces are chosen with probability proportional to their
    (d-1)-measure; the two faces of each axis pair are equally likely.
    Returns (points (n, d), normals (n, d)).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    d = domain.dimension
    widths = domain.widths
    if d == 1:
        areas = np.ones(2)
    else:
        per_axis = np.prod(widths) / widths
        areas = np.repeat(per_axis, 2)
    probs = areas / areas.sum()
    face = rng.choice(2 * d, size=n, p=probs)
    x = rng.uniform(domain.lower, domain.upper, size=(n, d))
    x = _redraw_onto_open(x, domain.lower, domain.upper, rng)
    axis = face // 2
    high = (face % 2).astype(bool)
    rows = np.arange(n)
    x[rows, axis] = np.where(high, domain.upper[axis], domain.lower[axis])
    normals = np.zeros((n, d))
    normals[rows, axis] = np.where(high, 1.0, -1.0)
    return x, normals


# ---------------------------------------------------------------------------
# loss


def _loss_vars(tape: Tape, params: MlpParams, problem: Problem, interior, boundary, config: TrainConfig):
    points, normals = boundary
    pvars = watch_params(tape, params)
    r = interior_residual_vars(tape, pvars, interior, problem)
    if not np.isfinite(r.value).all():
        bad = int(np.flatnonzero(~np.isfinite(r.value))[0])
        raise TrainingError(f"non-finite residual at collocation point {interior[bad]}",
                            point=interior[bad])
    b = boundary_residual_vars(tape, pvars, points, normals)
    term_pde = ad.mean(ad.square(r))
    term_bnd = ad.mean(ad.square(b))
    total = config.alpha_res * term_pde + config.alpha_bnd * term_bnd
    return total, term_pde, term_bnd


def loss(params: MlpParams, problem: Problem, interior, boundary, config: TrainConfig, tape: Tape) -> float:
    """Weighted collocation loss, recorded on the given tape.

    After the call the tape root is the loss scalar, so backward(tape)
    yields the exact parameter gradient, third-order terms included.
    """
    total, _, _ = _loss_vars(tape, params, problem, interior, boundary, config)
    tape.set_root(total)
    return float(total.value)


def _loss_and_grad(params, problem, interior, boundary, config):
    """Loss terms and parameter gradient, chunking the interior batch.

    Chunk results combine linearly: each chunk tape's root is that
    chunk's sum of squared residuals, scaled into the batch mean
    afterwards.  The chunk size is fixed, so results are reproducible.
    """
    n = interior.shape[0]
    if n <= _CHUNK:
        tape = Tape()
        total, t_pde, t_bnd = _loss_vars(tape, params, problem, interior, boundary, config)
        tape.set_root(total)
        grads = backward(tape)
        return float(total.value), float(t_pde.value), float(t_bnd.value), grads

    ssq = 0.0
    acc = None
    for start in range(0, n, _CHUNK):
        chunk = interior[start:start + _CHUNK]
        tape = Tape()
        pvars = watch_params(tape, params)
        r = interior_residual_vars(tape, pvars, chunk, problem)
        if not np.isfinite(r.value).all():
            bad = int(np.flatnonzero(~np.isfinite(r.value))[0])
            raise TrainingError(f"non-finite residual at collocation point {chunk[bad]}",
                                point=chunk[bad])
        root = ad.sum_(ad.square(r))
        tape.set_root(root)
        g = backward(tape)
        ssq += float(root.value)
        if acc is None:
            acc = [(gw, gb) for gw, gb in g]
        else:
            acc = [(aw + gw, ab + gb) for (aw, ab), (gw, gb) in zip(acc, g)]
    t_pde = ssq / n

    points, normals = boundary
    tape = Tape()
    pvars = watch_params(tape, params)
    b = boundary_residual_vars(tape, pvars, points, normals)
    root = ad.mean(ad.square(b))
    tape.set_root(root)
    gb_ = backward(tape)
    t_bnd = float(root.value)

    ci = config.alpha_res / n
    cb = config.alpha_bnd
    grads = [(ci * aw + cb * gw, ci * ab + cb * gb) for (aw, ab), (gw, gb) in zip(acc, gb_)]
    total = config.alpha_res * t_pde + config.alpha_bnd * t_bnd
    return total, t_pde, t_bnd, grads


# ---------------------------------------------------------------------------
# optimizer


def lion_step(params: MlpParams, grads, momentum, lr: float, config: TrainConfig):
    """One sign-based update; returns (new params, new momentum).

    c = beta1 m + (1 - beta1) g
    p <- p - lr (sign(c) + weight_decay * p)
    m <- beta2 m + (1 - beta2) g
    """
    b1, b2, wd = config.beta1, config.beta2, config.weight_decay
    new_w, new_b, new_m = [], [], []
    for (w, bias), (gw, gb), (mw, mb) in zip(zip(params.weights, params.biases), grads, momentum):
        cw = b1 * mw + (1.0 - b1) * gw
        cb = b1 * mb + (1.0 - b1) * gb
        new_w.append(w - lr * (np.sign(cw) + wd * w))
        new_b.append(bias - lr * (np.sign(cb) + wd * bias))
        new_m.append((b2 * mw + (1.0 - b2) * gw, b2 * mb + (1.0 - b2) * gb))
    out = MlpParams(list(params.layer_sizes), new_w, new_b)
    return out, new_m


# ---------------------------------------------------------------------------
# training loop


def train(problem: Problem, params: MlpParams, config: TrainConfig):
    """Run the collocation training loop; returns (params, TrainLog).

    Deterministic for a fixed config: one generator seeded by
    config.seed drives all sampling, and gradient reductions run in a
    fixed order.  iterations = 0 returns the parameters unchanged.
    """
    ad.tune_allocator()
    rng = np.random.default_rng(config.seed)
    momentum = zeros_like_params(params)
    log = TrainLog()
    t0 = time.perf_counter()
    for t in range(config.iterations):
        interior = sample_interior(problem.domain, config.n_interior, rng)
        boundary = sample_boundary(problem.domain, config.n_boundary, rng)
        lr = config.lr_at(t)
        total, t_pde, t_bnd, grads = _loss_and_grad(params, problem, interior, boundary, config)
        if not np.isfinite(total):
            raise TrainingError(
                f"non-finite loss at iteration {t}: total={total}, pde={t_pde}, bnd={t_bnd}",
                iteration=t)
        if t % config.log_every == 0 or t == config.iterations - 1:
            log.append(t, total, t_pde, t_bnd, lr, time.perf_counter() - t0)
        params, momentum = lion_step(params, grads, momentum, lr, config)
    return params, log

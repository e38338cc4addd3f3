"""Benchmark objectives and the manufactured source instance.

Each benchmark bundles a vectorized objective, its analytic gradient,
the search box, and the known global minimizers.  Objectives accept
(N, d) arrays and return (N,); gradients return (N, d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import Box
from .exceptions import ConfigError
from .operators import ControlSet, log_partition

__all__ = [
    "Benchmark",
    "ManufacturedCosine",
    "manufactured_cosine",
    "double_well_1d",
    "gaussian_mixture_2d",
    "easom_2d",
    "hartmann_6d",
    "BENCHMARK_NAMES",
    "get",
    "GAUSS_MIX_MEANS",
    "GAUSS_MIX_WEIGHTS",
]


@dataclass
class Benchmark:
    name: str
    dimension: int
    domain: Box
    evaluate: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    minimizers: np.ndarray
    notes: str = ""

    def __post_init__(self):
        self.minimizers = np.asarray(self.minimizers, dtype=np.float64).reshape(-1, self.dimension)
        if self.domain.dimension != self.dimension:
            raise ValueError("domain dimension does not match benchmark dimension")
        if len(self.minimizers) and not self.domain.contains(self.minimizers, strict=True).all():
            raise ValueError("every listed minimizer must lie strictly inside the box")


@dataclass
class ManufacturedCosine(Benchmark):
    """Source instance with a known separable-cosine solution.

    evaluate() is the source term g, not an objective to minimize, and
    gradient() is the drift field of the equation, identically zero.
    The exact solution value, gradient, and laplacian are exposed for
    error reports.
    """

    exact_value: Callable[[np.ndarray], np.ndarray] = None
    exact_gradient: Callable[[np.ndarray], np.ndarray] = None
    exact_laplacian: Callable[[np.ndarray], np.ndarray] = None
    rho: float = 1.0
    control: ControlSet = field(default_factory=lambda: ControlSet(0.2, 1.0))


def _check_points(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected points of shape (N, {d})")
    return x


# ---------------------------------------------------------------------------
# manufactured separable-cosine instance


def manufactured_cosine(dimension: int, rho: float = 1.0,
                        control: ControlSet | None = None,
                        exploratory_lam: float | None = None) -> ManufacturedCosine:
    """Instance on [-3, 3]^d whose exact solution is prod_i cos(pi x_i / 3).

    The source g is chosen so the exact solution solves the hard-minimum
    equation: g = rho v - min_u (u lap v).  With exploratory_lam set, g
    instead absorbs the soft minimum at that lam, making the exact
    solution solve the regularized equation identically.
    """
    if control is None:
        control = ControlSet(0.2, 1.0)
    d = int(dimension)
    k = np.pi / 3.0

    def value(x):
        x = _check_points(x, d)
        return np.prod(np.cos(k * x), axis=1)

    def grad_value(x):
        x = _check_points(x, d)
        c = np.cos(k * x)
        s = np.sin(k * x)
        out = np.empty_like(x)
        for i in range(d):
            others = np.prod(np.delete(c, i, axis=1), axis=1) if d > 1 else 1.0
            out[:, i] = -k * s[:, i] * others
        return out

    def laplacian(x):
        return -d * k * k * value(x)

    def source(x):
        lap = laplacian(x)
        if exploratory_lam is None:
            soft = np.minimum(control.u_min * lap, control.u_max * lap)
        else:
            soft = log_partition(lap, exploratory_lam, control)
        return rho * value(x) - soft

    def zero_drift(x):
        x = _check_points(x, d)
        return np.zeros_like(x)

    return ManufacturedCosine(
        name=f"cosine_d{d}",
        dimension=d,
        domain=Box.cube(-3.0, 3.0, d),
        evaluate=source,
        gradient=zero_drift,
        minimizers=np.empty((0, d)),
        notes="manufactured source instance; evaluate() is the source term, drift is zero",
        exact_value=value,
        exact_gradient=grad_value,
        exact_laplacian=laplacian,
        rho=rho,
        control=control,
    )


# ---------------------------------------------------------------------------
# double well on [-6, 6]


def double_well_1d() -> Benchmark:
    """Piecewise-quadratic double well: global minimum 0 at x = 4, local
    minimum 2 at x = -3, C^1 across the joins."""

    def evaluate(x):
        x = _check_points(x, 1)[:, 0]
        conds = [x > 6.0, x > 2.0, x > -2.0, x > -6.0]
        vals = [4.0 * x - 20.0, (x - 4.0) ** 2, 8.0 - x * x, 2.0 * (x + 3.0) ** 2 + 2.0]
        return np.select(conds, vals, default=-(12.0 * x + 52.0))

    def gradient(x):
        xc = _check_points(x, 1)[:, 0]
        conds = [xc > 6.0, xc > 2.0, xc > -2.0, xc > -6.0]
        vals = [np.full_like(xc, 4.0), 2.0 * (xc - 4.0), -2.0 * xc, 4.0 * (xc + 3.0)]
        return np.select(conds, vals, default=-12.0)[:, None]

    return Benchmark(
        name="double_well_1d",
        dimension=1,
        domain=Box.cube(-6.0, 6.0, 1),
        evaluate=evaluate,
        gradient=gradient,
        minimizers=np.array([[4.0]]),
        notes="piecewise quadratic, barrier max 8 at x = 0",
    )


# ---------------------------------------------------------------------------
# 5 x 5 Gaussian mixture on [-1, 5]^2

GAUSS_MIX_MEANS = np.array([[a, b] for a in range(5) for b in range(5)], dtype=np.float64)

GAUSS_MIX_WEIGHTS = np.array([
    0.4559, 0.2559, 0.3089, 0.2974, 0.2947,
    0.4972, 0.5326, 0.3268, 0.4997, 0.5220,
    0.4020, 0.3167, 0.5011, 0.3068, 0.4747,
    0.4392, 0.5339, 1.6552, 0.4931, 0.4037,
    0.3124, 0.2915, 0.3972, 0.4242, 0.2974,
])

_GAUSS_MIX_VAR = 0.1  # isotropic component variance


def gaussian_mixture_2d() -> Benchmark:
    """Negative mixture of 25 isotropic Gaussians on the integer grid.

    The component at (3, 2) dominates, so the global minimizer sits
    there (weight 1.6552 against at most 0.5339 elsewhere).
    """

    def _exps(x):
        diff = x[:, None, :] - GAUSS_MIX_MEANS[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        return np.exp(-0.5 * sq / _GAUSS_MIX_VAR), diff

    def evaluate(x):
        x = _check_points(x, 2)
        e, _ = _exps(x)
        return -(e @ GAUSS_MIX_WEIGHTS)

    def gradient(x):
        x = _check_points(x, 2)
        e, diff = _exps(x)
        return np.einsum("ni,nid,i->nd", e, diff, GAUSS_MIX_WEIGHTS) / _GAUSS_MIX_VAR

    return Benchmark(
        name="gauss_mix_2d",
        dimension=2,
        domain=Box.cube(-1.0, 5.0, 2),
        evaluate=evaluate,
        gradient=gradient,
        minimizers=np.array([[3.0, 2.0]]),
        notes="25 local minima near the grid points",
    )


# ---------------------------------------------------------------------------
# Easom on [-10, 10]^2


def easom_2d() -> Benchmark:
    """Easom function: value -1 at (pi, pi), nearly flat elsewhere."""

    def _parts(x):
        a = x[:, 0] - np.pi
        b = x[:, 1] - np.pi
        g = np.exp(-(a * a + b * b))
        return a, b, g

    def evaluate(x):
        x = _check_points(x, 2)
        _, _, g = _parts(x)
        return -np.cos(x[:, 0]) * np.cos(x[:, 1]) * g

    def gradient(x):
        x = _check_points(x, 2)
        a, b, g = _parts(x)
        c1, c2 = np.cos(x[:, 0]), np.cos(x[:, 1])
        s1, s2 = np.sin(x[:, 0]), np.sin(x[:, 1])
        out = np.empty_like(x)
        out[:, 0] = g * (s1 * c2 + 2.0 * a * c1 * c2)
        out[:, 1] = g * (c1 * s2 + 2.0 * b * c1 * c2)
        return out

    return Benchmark(
        name="easom_2d",
        dimension=2,
        domain=Box.cube(-10.0, 10.0, 2),
        evaluate=evaluate,
        gradient=gradient,
        minimizers=np.array([[np.pi, np.pi]]),
        notes="gradient is exponentially small away from the minimizer",
    )


# ---------------------------------------------------------------------------
# rescaled Hartmann-6 on [0, 1]^6

_HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])

_HARTMANN_A = np.array([
    [10.0, 3.0, 17.0, 3.50, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])

_HARTMANN_P = 1e-4 * np.array([
    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
])

HARTMANN_MINIMIZER = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])


def hartmann_unscaled(x: np.ndarray) -> np.ndarray:
    x = _check_points(x, 6)
    diff = x[:, None, :] - _HARTMANN_P[None, :, :]
    q = np.einsum("ij,nij->ni", _HARTMANN_A, diff * diff)
    return -(np.exp(-q) @ _HARTMANN_ALPHA)


def hartmann_6d() -> Benchmark:
    """Affinely rescaled Hartmann-6: f = (raw + 2.58) / 1.94.

    The raw form attains about -3.32237 at the listed minimizer, so the
    rescaled minimum is about -0.382665 (the rescale shifts and shrinks
    values; the minimizer itself is unchanged).
    """

    def evaluate(x):
        return (hartmann_unscaled(x) + 2.58) / 1.94

    def gradient(x):
        x = _check_points(x, 6)
        diff = x[:, None, :] - _HARTMANN_P[None, :, :]
        q = np.einsum("ij,nij->ni", _HARTMANN_A, diff * diff)
        e = np.exp(-q) * _HARTMANN_ALPHA
        return 2.0 * np.einsum("ni,ij,nij->nj", e, _HARTMANN_A, diff) / 1.94

    return Benchmark(
        name="hartmann_6d",
        dimension=6,
        domain=Box.cube(0.0, 1.0, 6),
        evaluate=evaluate,
        gradient=gradient,
        minimizers=HARTMANN_MINIMIZER[None, :],
        notes="rescaled so values stay O(1); raw minimum -3.32237 maps to -0.382665",
    )


# ---------------------------------------------------------------------------
# registry

BENCHMARK_NAMES = (
    "double_well_1d",
    "gauss_mix_2d",
    "easom_2d",
    "hartmann_6d",
    "cosine_d1",
    "cosine_d2",
    "cosine_d4",
)


def get(name: str, rho: float | None = None, control: ControlSet | None = None) -> Benchmark:
    """Look up a benchmark by registry name.

    The cosine instances take the equation's rho and control set, since
    their source term depends on both; the rest ignore those arguments.
    """
    if name == "double_well_1d":
        return double_well_1d()
    if name == "gauss_mix_2d":
        return gaussian_mixture_2d()
    if name == "easom_2d":
        return easom_2d()
    if name == "hartmann_6d":
        return hartmann_6d()
    if name.startswith("cosine_d"):
        try:
            d = int(name.removeprefix("cosine_d"))
        except ValueError:
            raise ConfigError(f"unknown benchmark {name!r}") from None
        if f"cosine_d{d}" not in BENCHMARK_NAMES:
            raise ConfigError(f"unknown benchmark {name!r}; cosine instances ship for d in (1, 2, 4)")
        return manufactured_cosine(d, rho=rho if rho is not None else 1.0, control=control)
    raise ConfigError(f"unknown benchmark {name!r}; known: {', '.join(BENCHMARK_NAMES)}")

"""Operators of the entropy-regularized control equation.

The equation couples a scalar value function v on a box to an objective
f through

    -rho v(x) + f(x) - grad v(x) . grad f(x) + H_lam(lap v(x)) = 0

with homogeneous Neumann conditions grad v . n = 0 on the box faces.
H_lam is the soft minimum of u * lap over the control interval
U = [u_min, u_max], the log-partition of a Gibbs density over U:

    H_lam(q) = -lam * log integral_U exp(-u q / lam) du.

Everything here is expressed through the dimensionless ratio
z = -delta * q / lam with delta = u_max - u_min; branch thresholds use
|z| = BRANCH_EPS.  The closed forms

    H_lam = -lam * ((u_min / delta) z + log delta + log((e^z - 1) / z))
    E[u]  = u_min + delta * psi(z),   psi(z) = ((z - 1) e^z + 1) / (z (e^z - 1))

are evaluated with three stable branches each (Taylor for small |z|,
factored exponentials for either sign), exact at z = 0 and continuous
across the thresholds to machine precision.  The sampling amplitude is
h_lam = sqrt(2 E[u]).

The module also carries a slow quadrature oracle used by the tests: a
composite Gauss-Legendre rule with per-piece exponent shifts and
log-space accumulation, trustworthy far beyond the overflow range of
the naive integral.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .domain import Box
from .exceptions import ConfigError, EvaluationError, OracleRangeError
from .network import MlpParams, Jet, forward_laplacian_batch, jet_vars

__all__ = [
    "BRANCH_EPS",
    "ControlSet",
    "Problem",
    "gibbs_exponent",
    "log_partition",
    "noise_coeff",
    "classical_control",
    "pde_residual",
    "classical_pde_residual",
    "boundary_residual",
    "residual_field",
    "oracle_partition",
    "OracleValues",
    "log_partition_vars",
    "interior_residual_vars",
    "boundary_residual_vars",
]

# branch threshold on |z|; the Taylor window overlaps the factored forms
# to ~1e-20 relative, so the crossover is smooth
BRANCH_EPS = 1e-2


@dataclass(frozen=True)
class ControlSet:
    """Control interval U = [u_min, u_max], 0 <= u_min < u_max."""

    u_min: float
    u_max: float

    def __post_init__(self):
        if not (np.isfinite(self.u_min) and np.isfinite(self.u_max)):
            raise ValueError("control bounds must be finite")
        if not (0.0 <= self.u_min < self.u_max):
            raise ValueError("control set needs 0 <= u_min < u_max")

    @property
    def width(self) -> float:
        return self.u_max - self.u_min


@dataclass
class Problem:
    """One instance of the value equation on a box.

    evaluate and gradient are vectorized callables: (N, d) points to
    (N,) objective values and (N, d) objective gradients.  gradient is
    the drift field of the equation (identically zero for manufactured
    source instances).
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    domain: Box
    rho: float
    lam: float
    control: ControlSet

    def __post_init__(self):
        if not (np.isfinite(self.rho) and self.rho > 0.0):
            raise ValueError("rho must be positive")
        if not (np.isfinite(self.lam) and self.lam > 0.0):
            raise ValueError("lam must be positive")


def _as_float_array(x):
    return np.asarray(x, dtype=np.float64)


def _like(ref, out):
    """Return a python float when the input was scalar."""
    if np.ndim(ref) == 0:
        return float(out)
    return out


def gibbs_exponent(laplacian, lam: float, control: ControlSet):
    """z = -(u_max - u_min) * laplacian / lam."""
    lap = _as_float_array(laplacian)
    return _like(laplacian, -control.width * lap / lam)


def _log_ratio(z: np.ndarray) -> np.ndarray:
    """log((e^z - 1) / z), stable for any finite z; equals 0 at z = 0."""
    z = _as_float_array(z)
    mid = np.abs(z) < BRANCH_EPS
    pos = z > BRANCH_EPS
    neg = z < -BRANCH_EPS
    zm = np.where(mid, z, 0.0)
    zp = np.where(pos, z, 1.0)
    zn = np.where(neg, z, -1.0)
    w = zm * zm
    out_mid = 0.5 * zm + w * (1.0 / 24.0 + w * (-1.0 / 2880.0 + w * (1.0 / 181440.0)))
    out_pos = zp + np.log1p(-np.exp(-zp)) - np.log(zp)
    out_neg = np.log1p(-np.exp(zn)) - np.log(-zn)
    return np.where(mid, out_mid, np.where(pos, out_pos, out_neg))


def _psi(z: np.ndarray) -> np.ndarray:
    """Mean-control weight psi(z) = ((z - 1) e^z + 1) / (z (e^z - 1)).

    Strictly increasing from 0 to 1 over the real line, 1/2 at z = 0.
    """
    z = _as_float_array(z)
    mid = np.abs(z) < BRANCH_EPS
    pos = z > BRANCH_EPS
    neg = z < -BRANCH_EPS
    zm = np.where(mid, z, 0.0)
    zp = np.where(pos, z, 1.0)
    zn = np.where(neg, z, -1.0)
    w = zm * zm
    out_mid = 0.5 + zm * (1.0 / 12.0 + w * (-1.0 / 720.0 + w * (1.0 / 30240.0)))
    en = np.exp(-zp)
    out_pos = ((zp - 1.0) + en) / (zp * (1.0 - en))
    em = np.expm1(zn)
    out_neg = (zn + (zn - 1.0) * em) / (zn * em)
    return np.where(mid, out_mid, np.where(pos, out_pos, out_neg))


def _check_lam(lam: float) -> float:
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0.0):
        raise ConfigError(f"exploration level must be positive, got {lam}")
    return lam


def log_partition(laplacian, lam: float, control: ControlSet):
    """H_lam(laplacian): soft minimum of u * laplacian over the control set."""
    lam = _check_lam(lam)
    lap = _as_float_array(laplacian)
    delta = control.width
    z = -delta * lap / lam
    out = -lam * ((control.u_min / delta) * z + np.log(delta) + _log_ratio(z))
    return _like(laplacian, out)


def noise_coeff(laplacian, lam: float, control: ControlSet):
    """Sampling amplitude h_lam = sqrt(2 E[u]) under the Gibbs density.

    Always inside [sqrt(2 u_min), sqrt(2 u_max)] and nondecreasing as
    the curvature decreases (z increases).
    """
    lam = _check_lam(lam)
    lap = _as_float_array(laplacian)
    delta = control.width
    z = -delta * lap / lam
    eu = control.u_min + delta * _psi(z)
    eu = np.clip(eu, control.u_min, control.u_max)
    return _like(laplacian, np.sqrt(2.0 * eu))


def classical_control(laplacian, control: ControlSet):
    """Bang-bang minimizer of u * laplacian: u_min when laplacian >= 0."""
    lap = _as_float_array(laplacian)
    out = np.where(lap >= 0.0, control.u_min, control.u_max)
    return _like(laplacian, out)


# ---------------------------------------------------------------------------
# residuals


def _objective_at(problem: Problem, x: np.ndarray):
    f = _as_float_array(problem.evaluate(x))
    gf = _as_float_array(problem.gradient(x))
    if not np.isfinite(f).all():
        bad = int(np.flatnonzero(~np.isfinite(f))[0])
        raise EvaluationError(f"objective is not finite at {x[bad]}", point=x[bad])
    if not np.isfinite(gf).all():
        bad = int(np.flatnonzero(~np.isfinite(gf).all(axis=-1))[0])
        raise EvaluationError(f"objective gradient is not finite at {x[bad]}", point=x[bad])
    return f, gf


def pde_residual(jet: Jet, x: np.ndarray, problem: Problem) -> float:
    """Interior residual of the regularized equation at one point."""
    x = _as_float_array(x)
    f, gf = _objective_at(problem, x[None, :])
    lap = float(np.trace(jet.hessian))
    h = log_partition(lap, problem.lam, problem.control)
    return float(-problem.rho * jet.value + f[0] - jet.gradient @ gf[0] + h)


def classical_pde_residual(jet: Jet, x: np.ndarray, problem: Problem) -> float:
    """Residual with the hard minimum min_u u * lap in place of H_lam."""
    x = _as_float_array(x)
    f, gf = _objective_at(problem, x[None, :])
    lap = float(np.trace(jet.hessian))
    hard = min(problem.control.u_min * lap, problem.control.u_max * lap)
    return float(-problem.rho * jet.value + f[0] - jet.gradient @ gf[0] + hard)


def boundary_residual(jet: Jet, x: np.ndarray, normal: np.ndarray) -> float:
    """Neumann residual grad v . n at a boundary point."""
    normal = _as_float_array(normal)
    if normal.shape != jet.gradient.shape:
        raise ValueError("normal and gradient dimensions differ")
    return float(jet.gradient @ normal)


def residual_field(params: MlpParams, x: np.ndarray, problem: Problem) -> np.ndarray:
    """Interior residuals of a network jet over a batch of points."""
    x = _as_float_array(x)
    f, gf = _objective_at(problem, x)
    v, g, lap = forward_laplacian_batch(params, x)
    hl = log_partition(lap, problem.lam, problem.control)
    return -problem.rho * v + f - np.sum(g * gf, axis=-1) + hl


# ---------------------------------------------------------------------------
# quadrature oracle (tests only; slow but honest)


@dataclass(frozen=True)
class OracleValues:
    """Quadrature values: log Z, H = -lam log Z, and h = sqrt(2 E[u])."""

    log_z: float
    log_partition: float
    noise: float


# per-piece exponent range; far below the overflow bound so a 64-node
# rule is converged to machine precision on every piece
_ORACLE_PIECE_RANGE = 40.0

_LEGGAUSS_CACHE: dict = {}


def _leggauss_cached(nodes: int):
    got = _LEGGAUSS_CACHE.get(nodes)
    if got is None:
        got = _LEGGAUSS_CACHE[nodes] = np.polynomial.legendre.leggauss(nodes)
    return got


def oracle_partition(laplacian: float, lam: float, control: ControlSet, nodes: int = 64) -> OracleValues:
    """Composite Gauss-Legendre quadrature of the control integral.

    Splits [u_min, u_max] so the exponent varies by at most
    _ORACLE_PIECE_RANGE per piece, shifts each piece by its own maximum
    exponent, and accumulates across pieces in log space.  Raises
    OracleRangeError if the accumulation still leaves the finite range.
    """
    if nodes < 2:
        raise ValueError("oracle needs at least 2 quadrature nodes")
    lap = float(laplacian)
    delta = control.width
    # substitute u = u_min + delta t, t in [0, 1]: the u_min part of the
    # exponent factors out exactly, so the remaining integrals only see
    # an exponent range of |z|; this keeps the mean well conditioned
    # even when |lap| u_min / lam is huge
    zq = -delta * lap / lam
    span = abs(zq)
    pieces = max(1, int(np.ceil(span / _ORACLE_PIECE_RANGE)))
    edges = np.linspace(0.0, 1.0, pieces + 1)
    t, w = _leggauss_cached(nodes)
    log_i0 = np.empty(pieces)
    log_i1 = np.empty(pieces)
    for k in range(pieces):
        a, b = edges[k], edges[k + 1]
        half = 0.5 * (b - a)
        tt = 0.5 * (a + b) + half * t
        e = zq * tt
        shift = e.max()
        q = w * np.exp(e - shift)
        s0 = half * q.sum()
        s1 = half * (q * tt).sum()
        if not (s0 > 0.0 and s1 > 0.0 and np.isfinite(s0) and np.isfinite(s1)):
            raise OracleRangeError(f"quadrature piece degenerated at laplacian={lap}, lam={lam}")
        log_i0[k] = shift + np.log(s0)
        log_i1[k] = shift + np.log(s1)
    m0 = log_i0.max()
    log_q0 = m0 + np.log(np.exp(log_i0 - m0).sum())
    m1 = log_i1.max()
    log_q1 = m1 + np.log(np.exp(log_i1 - m1).sum())
    # Z = delta exp(-lap u_min / lam) Q0 with Q0 = int_0^1 exp(z t) dt
    log_z = -lap * control.u_min / lam + np.log(delta) + log_q0
    mean_u = control.u_min + delta * float(np.exp(log_q1 - log_q0))
    h = float(np.sqrt(2.0 * mean_u))
    hval = float(-lam * log_z)
    if not (np.isfinite(log_z) and np.isfinite(hval) and np.isfinite(h)):
        raise OracleRangeError(f"oracle left the finite range at laplacian={lap}, lam={lam}")
    return OracleValues(float(log_z), hval, h)


# ---------------------------------------------------------------------------
# taped twins used by the trainer


# One fused tape primitive for H_lam(z).  Its derivative needs no new
# machinery: d/dz log((e^z - 1)/z) = psi(z), so H'(z) is the (stable)
# Gibbs mean already used by noise_coeff.


def _log_partition_z_fwd(iv, aux):
    (z,) = iv
    lam, u_min, delta = aux
    return -lam * ((u_min / delta) * z + np.log(delta) + _log_ratio(z))


def _log_partition_z_vjp(g, iv, out, aux):
    (z,) = iv
    lam, u_min, delta = aux
    return (g * (-lam * (u_min / delta + _psi(z))),)


ad.register_primitive("log_partition_z", _log_partition_z_fwd, _log_partition_z_vjp)


def log_partition_vars(lap: ad.Var, lam: float, control: ControlSet) -> ad.Var:
    """H_lam of a taped laplacian, same branch structure as log_partition."""
    lam = _check_lam(lam)
    delta = control.width
    # same operation order as log_partition, so the values agree bitwise
    z = (lap * (-delta)) / lam
    return ad.apply_primitive("log_partition_z", (z,), aux=(lam, control.u_min, delta))


def interior_residual_vars(tape: ad.Tape, pvars, x: np.ndarray, problem: Problem) -> ad.Var:
    """Taped interior residuals for a batch of collocation points."""
    f, gf = _objective_at(problem, x)
    v, g, lap = jet_vars(tape, pvars, x, derivatives="laplacian")
    hl = log_partition_vars(lap, problem.lam, problem.control)
    drift = ad.sum_(g * gf, axis=-1)
    return -problem.rho * v + (f - drift) + hl


def boundary_residual_vars(tape: ad.Tape, pvars, x: np.ndarray, normals: np.ndarray) -> ad.Var:
    """Taped Neumann residuals grad v . n for boundary points."""
    _, g, _ = jet_vars(tape, pvars, x, derivatives="gradient")
    return ad.sum_(g * normals, axis=-1)

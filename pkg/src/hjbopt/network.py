"""Fully connected tanh networks carrying exact derivative jets.

A jet is the triple (value, gradient, Hessian) of the scalar network
output with respect to its input point.  Jets are propagated layer by
layer in closed form:

  affine s = W a + b:   value W a + b,  Jacobian W J,  Hessian W H
  tanh   t = tanh(s):   t' J_s,  and  t'' J_s J_s^T + t' H_s  per unit

where J and H collect per-unit input derivatives.  The output layer is
affine with identity activation.  Batched arrays use the layout

  A: (N, n)        activations
  J: (N, d, n)     J[p, k, j] = d a_j / d x_k
  H: (N, d, d, n)  H[p, k, l, j] = d^2 a_j / d x_k d x_l

so every affine map is a single matmul over the trailing axis.  The same
propagation is available recorded on a Tape, which makes parameter
gradients of Hessian-dependent losses exact (third-order mixed
derivatives fall out of reverse accumulation mechanically).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var, backward as _tape_backward

__all__ = [
    "MlpParams",
    "Jet",
    "init_network",
    "forward_jet",
    "forward_jet_batch",
    "forward_laplacian_batch",
    "watch_params",
    "jet_vars",
    "backward",
    "zeros_like_params",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class MlpParams:
    """Weights and biases of a tanh MLP with scalar output."""

    layer_sizes: list[int]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        sizes = list(self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output")
        if any(int(s) <= 0 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if sizes[-1] != 1:
            raise ValueError("output layer must be scalar")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("parameter count does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]):
                raise ValueError(f"weight {l} has shape {w.shape}, expected {(sizes[l + 1], sizes[l])}")
            if b.shape != (sizes[l + 1],):
                raise ValueError(f"bias {l} has shape {b.shape}, expected {(sizes[l + 1],)}")

    @property
    def dimension(self) -> int:
        return int(self.layer_sizes[0])

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class Jet:
    """Network output and its first two input derivatives at one point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        d = self.gradient.shape[0]
        if self.hessian.shape != (d, d):
            raise ValueError("hessian shape does not match gradient dimension")


def init_network(seed: int, layer_sizes: list[int]) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output")
    if any(n <= 0 for n in layer_sizes):
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        s = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(list(layer_sizes), weights, biases)


def zeros_like_params(params: MlpParams):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]


# ---------------------------------------------------------------------------
# plain forward pass


def forward_jet_batch(params: MlpParams, x: np.ndarray, need_hessian: bool = True):
    """Evaluate jets for a batch of points.

    Returns (values (N,), gradients (N, d), hessians (N, d, d)); the
    Hessian entry is None when need_hessian is False.  Hessians are
    symmetrized, though the propagation already produces symmetric
    arrays up to bit-identical floating point.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dimension:
        raise ValueError(f"expected points of shape (N, {params.dimension})")
    n, d = x.shape
    a = x
    j = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    h = np.zeros((n, d, d, d)) if need_hessian else None
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        j = j @ w.T
        if need_hessian:
            h = h @ w.T
        if l == last:
            break
        t = np.tanh(a)
        t1 = 1.0 - t * t
        if need_hessian:
            t2 = -2.0 * t * t1
            h = t2[:, None, None, :] * (j[:, :, None, :] * j[:, None, :, :]) + t1[:, None, None, :] * h
        a = t
        j = t1[:, None, :] * j
    values = a[:, 0]
    grads = j[:, :, 0]
    if not need_hessian:
        return values, grads, None
    hess = h[:, :, :, 0]
    hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    return values, grads, hess


def forward_laplacian_batch(params: MlpParams, x: np.ndarray):
    """Values, gradients, and Laplacians for a batch of points.

    Propagates the Hessian trace instead of the full matrix (see
    jet_vars), so the cost per layer is independent of d beyond the
    gradient rows.  Returns (values (N,), gradients (N, d), laps (N,)).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dimension:
        raise ValueError(f"expected points of shape (N, {params.dimension})")
    n, d = x.shape
    a = x
    j = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    lap = np.zeros((n, d))
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        j = j @ w.T
        lap = lap @ w.T
        if l == last:
            break
        t = np.tanh(a)
        t1 = 1.0 - t * t
        lap = (-2.0 * t * t1) * np.square(j).sum(axis=1) + t1 * lap
        a = t
        j = t1[:, None, :] * j
    return a[:, 0], j[:, :, 0], lap[:, 0]


def forward_jet(params: MlpParams, x: np.ndarray) -> Jet:
    """Exact (value, gradient, Hessian) of the network at one point."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.dimension,):
        raise ValueError(f"expected a point of shape ({params.dimension},)")
    v, g, h = forward_jet_batch(params, x[None, :])
    return Jet(float(v[0]), g[0], h[0])


# ---------------------------------------------------------------------------
# taped forward pass


def watch_params(tape: Tape, params: MlpParams):
    """Register every weight and bias as a watched leaf, in layer order."""
    return [(tape.watch(w), tape.watch(b)) for w, b in zip(params.weights, params.biases)]


def jet_vars(tape: Tape, pvars, x: np.ndarray, derivatives: str = "laplacian"):
    """Taped twin of the jet forward pass.

    pvars comes from watch_params on the same tape.  derivatives selects
    the second-order payload: "gradient" carries none, "laplacian"
    carries the running trace (N,) and "hessian" the full (N, d, d)
    array.  Returns (value (N,), gradient (N, d), payload or None).

    The gradient and laplacian modes run on a stacked state (value row,
    d gradient rows, optional trace row) so each layer is two tape
    nodes.  Carrying the trace alone is exact: the affine contraction
    and the tanh Hessian update are entrywise in the (k, l) derivative
    index pair.  The full-Hessian mode is assembled from generic
    primitives instead and serves as an independent cross-check.
    """
    if derivatives not in ("gradient", "laplacian", "hessian"):
        raise ValueError(f"unknown derivatives mode {derivatives!r}")
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if derivatives == "hessian":
        return _jet_vars_hessian(tape, pvars, x)
    has_lap = derivatives == "laplacian"
    slabs = [x[None, :, :], np.broadcast_to(np.eye(d)[:, None, :], (d, n, d))]
    if has_lap:
        slabs.append(np.zeros((1, n, d)))
    s = np.concatenate(slabs, axis=0)
    last = len(pvars) - 1
    for l, (wv, bv) in enumerate(pvars):
        s = ad.affine_jet(s, wv, bv)
        if l != last:
            s = ad.tanh_jet_step(s, d, has_lap)
    v = ad.reshape(ad.take_rows(s, 0, 1), (n,))
    g = ad.transpose2(ad.reshape(ad.take_rows(s, 1, 1 + d), (d, n)))
    if not has_lap:
        return v, g, None
    lap = ad.reshape(ad.take_rows(s, 1 + d, 2 + d), (n,))
    return v, g, lap


def _jet_vars_hessian(tape: Tape, pvars, x: np.ndarray):
    n, d = x.shape
    a = x
    j = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    h = np.zeros((n, d, d, d))
    last = len(pvars) - 1
    for l, (wv, bv) in enumerate(pvars):
        m = wv.value.shape[0]
        a = ad.matmul_last(a, wv) + bv
        j = ad.matmul_last(j, wv)
        h = ad.matmul_last(h, wv)
        if l == last:
            break
        t = ad.tanh(a)
        t1 = 1.0 - ad.square(t)
        t2 = -2.0 * (t * t1)
        outer = ad.reshape(j, (n, d, 1, m)) * ad.reshape(j, (n, 1, d, m))
        h = ad.reshape(t2, (n, 1, 1, m)) * outer + ad.reshape(t1, (n, 1, 1, m)) * h
        j = ad.reshape(t1, (n, 1, m)) * j
        a = t
    v = ad.reshape(a, (n,))
    g = ad.reshape(j, (n, d))
    return v, g, ad.reshape(h, (n, d, d))


def backward(tape: Tape, seed_value: float = 1.0):
    """Gradient of the tape root in MlpParams shape.

    The watched leaves must have been created by watch_params, so they
    alternate weight, bias per layer.  Returns a list of (dW, db) pairs.
    """
    flat = _tape_backward(tape, seed_value)
    if len(flat) % 2 != 0:
        raise ValueError("watched leaves do not pair into weights and biases")
    return [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]


# ---------------------------------------------------------------------------
# checkpoints: one file, JSON header line + little-endian float64 payload


def save_checkpoint(path, params: MlpParams, seed: int) -> None:
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_sizes": [int(s) for s in params.layer_sizes],
        "seed": int(seed),
        "weights": [list(w.shape) for w in params.weights],
        "biases": [list(b.shape) for b in params.biases],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for w in params.weights:
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        for b in params.biases:
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (MlpParams, seed)."""
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"unreadable checkpoint header: {e}") from e
    for key in ("format_version", "layer_sizes", "seed", "weights", "biases"):
        if key not in header:
            raise ValueError(f"checkpoint header missing field {key!r}")
    if header["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {header['format_version']}")
    sizes = [int(s) for s in header["layer_sizes"]]
    wshapes = [tuple(int(v) for v in s) for s in header["weights"]]
    bshapes = [tuple(int(v) for v in s) for s in header["biases"]]
    count = sum(int(np.prod(s)) for s in wshapes) + sum(int(np.prod(s)) for s in bshapes)
    if len(payload) != 8 * count:
        raise ValueError(f"checkpoint payload has {len(payload)} bytes, expected {8 * count}")
    flat = np.frombuffer(payload, dtype="<f8")
    weights, biases = [], []
    ofs = 0
    for s in wshapes:
        k = int(np.prod(s))
        weights.append(flat[ofs:ofs + k].reshape(s).astype(np.float64))
        ofs += k
    for s in bshapes:
        k = int(np.prod(s))
        biases.append(flat[ofs:ofs + k].reshape(s).astype(np.float64))
        ofs += k
    params = MlpParams(sizes, weights, biases)
    return params, int(header["seed"])

"""Reverse-mode automatic differentiation over numpy arrays.

The tape records operations at matrix granularity (affine maps, elementwise
nonlinearities, reductions), not per-scalar.  Network evaluation routines
build their forward pass out of these primitives, including the propagation
of input-space derivatives, so reverse accumulation through the tape yields
exact parameter gradients of any scalar assembled from values, gradients,
and Hessians of the network.  Only first-order vector-Jacobian rules are
needed for that: the higher-order input derivatives are explicit values on
the tape.

Conventions:
  * every (op, inputs) pair is recorded in execution order;
  * non-Var inputs are treated as constants and receive no adjoint;
  * accumulation order in backward is fixed by the recording order, so
    gradients are bit-reproducible for a given graph.
"""

from __future__ import annotations

import ctypes

import numpy as np

__all__ = ["Tape", "Var", "backward", "register_primitive", "apply_primitive",
           "tune_allocator"]

_ALLOCATOR_TUNED = False


def tune_allocator() -> bool:
    """Ask glibc to keep large freed blocks for reuse instead of unmapping.

    The tape allocates and frees megabyte-scale temporaries every training
    iteration; with default thresholds each one round-trips through mmap
    and page zeroing, which roughly doubles step time.  No-op (returns
    False) when the C library has no mallopt.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return True
    try:
        libc = ctypes.CDLL(None)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        return False
    _ALLOCATOR_TUNED = True
    return True


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "idx", "value")

    # keep numpy from absorbing Var into object arrays; binary ops with
    # ndarrays then fall back to the reflected Var methods
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", idx: int, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={np.shape(self.value)})"


class _Node:
    __slots__ = ("op", "iidx", "ivals", "value", "aux")

    def __init__(self, op, iidx, ivals, value, aux):
        self.op = op        # primitive name
        self.iidx = iidx    # per input: node index, or None for constants
        self.ivals = ivals  # per input: the value used in the forward pass
        self.value = value
        self.aux = aux


class Tape:
    """Record of a computation, replayable and differentiable."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.watched: list[int] = []
        self.root: int | None = None

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, watch: bool = False) -> Var:
        value = np.asarray(value, dtype=np.float64)
        idx = len(self.nodes)
        self.nodes.append(_Node("leaf", (), (), value, None))
        if watch:
            self.watched.append(idx)
        return Var(self, idx, value)

    def watch(self, value) -> Var:
        return self.leaf(value, watch=True)

    def set_root(self, var: Var) -> None:
        if var.tape is not self:
            raise ValueError("root Var belongs to a different tape")
        if np.size(var.value) != 1:
            raise ValueError("tape root must be a scalar")
        self.root = var.idx

    def _record(self, op, inputs, value, aux=None) -> Var:
        iidx = []
        ivals = []
        for x in inputs:
            if isinstance(x, Var):
                if x.tape is not self:
                    raise ValueError("inputs recorded on different tapes")
                iidx.append(x.idx)
                ivals.append(x.value)
            else:
                iidx.append(None)
                ivals.append(x)
        idx = len(self.nodes)
        self.nodes.append(_Node(op, tuple(iidx), tuple(ivals), value, aux))
        return Var(self, idx, value)

    def replay(self) -> bool:
        """Recompute every node from its recorded inputs.

        Returns True when all recomputed values match the recorded ones
        bit for bit; raises otherwise.  Leaves are taken as given.
        """
        new_vals: list = [None] * len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.op == "leaf":
                new_vals[i] = node.value
                continue
            ivals = tuple(
                new_vals[j] if j is not None else raw
                for j, raw in zip(node.iidx, node.ivals)
            )
            if node.op in _STASHED:
                out, _ = _FORWARD[node.op](ivals, node.aux[0])
            else:
                out = _FORWARD[node.op](ivals, node.aux)
            if not np.array_equal(np.asarray(out), np.asarray(node.value), equal_nan=True):
                raise AssertionError(f"replay mismatch at node {i} ({node.op})")
            new_vals[i] = out
        return True


# ---------------------------------------------------------------------------
# primitive registry


def _unbroadcast(g, shape):
    """Sum an adjoint down to the shape it was broadcast from."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape_of(x):
    return np.shape(x)


_FORWARD = {}
_VJP = {}


def _prim(name, fwd, vjp):
    _FORWARD[name] = fwd
    _VJP[name] = vjp


_prim(
    "add",
    lambda iv, aux: iv[0] + iv[1],
    lambda g, iv, out, aux: (
        _unbroadcast(g, _shape_of(iv[0])),
        _unbroadcast(g, _shape_of(iv[1])),
    ),
)

_prim(
    "sub",
    lambda iv, aux: iv[0] - iv[1],
    lambda g, iv, out, aux: (
        _unbroadcast(g, _shape_of(iv[0])),
        _unbroadcast(-g, _shape_of(iv[1])),
    ),
)

_prim(
    "mul",
    lambda iv, aux: iv[0] * iv[1],
    lambda g, iv, out, aux: (
        _unbroadcast(g * iv[1], _shape_of(iv[0])),
        _unbroadcast(g * iv[0], _shape_of(iv[1])),
    ),
)

_prim(
    "div",
    lambda iv, aux: iv[0] / iv[1],
    lambda g, iv, out, aux: (
        _unbroadcast(g / iv[1], _shape_of(iv[0])),
        _unbroadcast(-g * iv[0] / (iv[1] * iv[1]), _shape_of(iv[1])),
    ),
)

_prim("neg", lambda iv, aux: -iv[0], lambda g, iv, out, aux: (-g,))

_prim(
    "tanh",
    lambda iv, aux: np.tanh(iv[0]),
    lambda g, iv, out, aux: (g * (1.0 - out * out),),
)

_prim("exp", lambda iv, aux: np.exp(iv[0]), lambda g, iv, out, aux: (g * out,))

_prim("log", lambda iv, aux: np.log(iv[0]), lambda g, iv, out, aux: (g / iv[0],))

_prim(
    "log1p",
    lambda iv, aux: np.log1p(iv[0]),
    lambda g, iv, out, aux: (g / (1.0 + iv[0]),),
)

_prim(
    "sqrt",
    lambda iv, aux: np.sqrt(iv[0]),
    lambda g, iv, out, aux: (g * (0.5 / out),),
)

_prim(
    "square",
    lambda iv, aux: np.square(iv[0]),
    lambda g, iv, out, aux: (g * (2.0 * iv[0]),),
)

_prim(
    "abs",
    lambda iv, aux: np.abs(iv[0]),
    lambda g, iv, out, aux: (g * np.sign(iv[0]),),
)


def _matmul_last_fwd(iv, aux):
    x, w = iv
    return np.matmul(x, np.transpose(w))


def _matmul_last_vjp(g, iv, out, aux):
    x, w = iv
    gx = np.matmul(g, w)
    g2 = np.reshape(g, (-1, g.shape[-1]))
    x2 = np.reshape(np.asarray(x), (-1, np.shape(x)[-1]))
    gw = np.matmul(g2.T, x2)
    return (gx, gw)


# y[..., o] = sum_i x[..., i] * w[o, i]
_prim("matmul_last", _matmul_last_fwd, _matmul_last_vjp)


# Fused layer steps on a stacked jet state S of shape (r, N, n): slab 0
# holds the activation a, slabs 1..d the gradient rows da/dx_k, and,
# when the Laplacian is carried, slab d+1 the running trace of the
# Hessian.  The slab axis comes first so every slab is a contiguous
# block; one dgemm on the (r*N, n) view applies a layer's weight to all
# slabs at once, and the tanh update is a single node, so each layer
# contributes two tape nodes with one consumer each.
#
# Carrying the trace instead of the full Hessian is exact: the affine
# contraction and the tanh Hessian update both act entrywise in the
# (k, l) derivative index pair, so the trace closes over them.
#
# aux for tanh_jet_step is (d, has_lap); the forward pass stashes the
# factors its reverse rule needs (see _STASHED).


def _affine_jet_fwd(iv, aux):
    s, w, b = iv
    r, n, k = s.shape
    out = np.matmul(s.reshape(r * n, k), np.transpose(w)).reshape(r, n, -1)
    out[0] += b
    return out


def _affine_jet_vjp(g, iv, out, aux):
    s, w, b = iv
    g = np.asarray(g)
    r, n, m = g.shape
    g2 = g.reshape(r * n, m)
    gs = np.matmul(g2, w).reshape(r, n, -1)
    s2 = np.reshape(np.asarray(s), (r * n, -1))
    gw = np.matmul(g2.T, s2)
    gb = g[0].sum(axis=0)
    return (gs, gw, gb)


_prim("affine_jet", _affine_jet_fwd, _affine_jet_vjp)


def _tanh_jet_step_fwd(iv, aux):
    (s,) = iv
    d, has_lap = aux
    out = np.empty_like(s)
    t = np.tanh(s[0], out=out[0])
    t1 = np.multiply(t, t)
    np.subtract(1.0, t1, out=t1)
    j = s[1:1 + d]
    np.multiply(t1, j, out=out[1:1 + d])
    if not has_lap:
        return out, (t1, None, None)
    t2 = np.multiply(t, t1)
    t2 *= -2.0
    ssq = np.einsum("kij,kij->ij", j, j)
    lap = np.multiply(t2, ssq, out=out[1 + d])
    lap += t1 * s[1 + d]
    return out, (t1, t2, ssq)


def _tanh_jet_step_vjp(g, iv, out, aux):
    (s,) = iv
    (d, has_lap), (t1, t2, ssq) = aux
    j = s[1:1 + d]
    g = np.asarray(g)
    gj = g[1:1 + d]
    if t2 is None:
        t2 = -2.0 * out[0] * t1  # d(1 - t^2)/da through the tanh
    gin = np.empty_like(g)
    ga = np.multiply(g[0], t1, out=gin[0])
    dot = np.einsum("kij,kij->ij", gj, j)
    dot *= t2
    ga += dot
    np.multiply(t1, gj, out=gin[1:1 + d])
    if has_lap:
        gl = g[1 + d]
        lap = s[1 + d]
        # dt2/da = (4 - 6 t1) t1
        u = np.subtract(4.0, 6.0 * t1)
        u *= t1
        u *= ssq
        u += t2 * lap
        u *= gl
        ga += u
        w = np.multiply(gl, t2)
        w *= 2.0
        gin[1:1 + d] += w * j
        np.multiply(gl, t1, out=gin[1 + d])
    return (gin,)


_prim("tanh_jet_step", _tanh_jet_step_fwd, _tanh_jet_step_vjp)


def _take_rows_vjp(g, iv, out, aux):
    lo, hi = aux
    z = np.zeros(np.shape(iv[0]))
    z[lo:hi] = g
    return (z,)


# leading-axis slice (r, N, n) -> (hi - lo, N, n)
_prim("take_rows", lambda iv, aux: iv[0][aux[0]:aux[1]], _take_rows_vjp)


def _transpose2_vjp(g, iv, out, aux):
    return (np.transpose(np.asarray(g)),)


# materialized 2-d transpose; the reverse rule transposes the adjoint back
_prim("transpose2", lambda iv, aux: np.ascontiguousarray(np.transpose(iv[0])), _transpose2_vjp)


def _where_vjp(g, iv, out, aux):
    mask = aux
    return (
        _unbroadcast(np.where(mask, g, 0.0), _shape_of(iv[0])),
        _unbroadcast(np.where(mask, 0.0, g), _shape_of(iv[1])),
    )


_prim("where", lambda iv, aux: np.where(aux, iv[0], iv[1]), _where_vjp)


def _sum_fwd(iv, aux):
    return np.sum(iv[0], axis=aux)


def _sum_vjp(g, iv, out, aux):
    shape = _shape_of(iv[0])
    if aux is None:
        return (np.broadcast_to(g, shape),)
    axes = aux if isinstance(aux, tuple) else (aux,)
    axes = tuple(a % len(shape) for a in axes)
    g = np.expand_dims(g, axes)
    return (np.broadcast_to(g, shape),)


_prim("sum", _sum_fwd, _sum_vjp)


def _mean_vjp(g, iv, out, aux):
    shape = _shape_of(iv[0])
    n = 1
    for s in shape:
        n *= s
    return (np.broadcast_to(g / n, shape),)


_prim("mean", lambda iv, aux: np.mean(iv[0]), _mean_vjp)


def _trace_fwd(iv, aux):
    return np.trace(iv[0], axis1=-2, axis2=-1)


def _trace_vjp(g, iv, out, aux):
    d = _shape_of(iv[0])[-1]
    return (np.asarray(g)[..., None, None] * np.eye(d),)


# trace over the two trailing axes: (..., d, d) -> (...)
_prim("trace_last2", _trace_fwd, _trace_vjp)

_prim(
    "reshape",
    lambda iv, aux: np.reshape(iv[0], aux),
    lambda g, iv, out, aux: (np.reshape(g, _shape_of(iv[0])),),
)


# ---------------------------------------------------------------------------
# recording helpers


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise ValueError("at least one operand must be a Var")


# ops whose forward pass returns (value, stash); the stash rides along
# in node.aux so the reverse rule can reuse forward intermediates
_STASHED = frozenset({"tanh_jet_step"})


def _apply(op, inputs, aux=None) -> Var:
    tape = _tape_of(*inputs)
    ivals = tuple(x.value if isinstance(x, Var) else x for x in inputs)
    out = _FORWARD[op](ivals, aux)
    if op in _STASHED:
        out, stash = out
        aux = (aux, stash)
    return tape._record(op, inputs, out, aux)


def add(a, b):
    return _apply("add", (a, b))


def sub(a, b):
    return _apply("sub", (a, b))


def mul(a, b):
    return _apply("mul", (a, b))


def div(a, b):
    return _apply("div", (a, b))


def neg(a):
    return _apply("neg", (a,))


def tanh(a):
    return _apply("tanh", (a,))


def exp(a):
    return _apply("exp", (a,))


def log(a):
    return _apply("log", (a,))


def log1p(a):
    return _apply("log1p", (a,))


def sqrt(a):
    return _apply("sqrt", (a,))


def square(a):
    return _apply("square", (a,))


def absolute(a):
    return _apply("abs", (a,))


def matmul_last(x, w):
    """x[..., i], w[o, i] -> y[..., o] = sum_i x[..., i] w[o, i]."""
    return _apply("matmul_last", (x, w))


def affine_jet(s, w, b):
    """One layer's affine map on a stacked jet state: s @ w.T, bias on slab 0."""
    return _apply("affine_jet", (s, w, b))


def tanh_jet_step(s, d: int, has_lap: bool):
    """Tanh activation and chain rule applied to a stacked jet state."""
    return _apply("tanh_jet_step", (s,), aux=(int(d), bool(has_lap)))


def take_rows(s, lo: int, hi: int):
    """Slice slabs lo:hi off the leading axis of a (r, N, n) array."""
    return _apply("take_rows", (s,), aux=(int(lo), int(hi)))


def transpose2(a):
    """Transpose of a 2-d array, materialized contiguously."""
    return _apply("transpose2", (a,))


def register_primitive(name: str, fwd, vjp) -> None:
    """Add a primitive: fwd(ivals, aux) -> value, vjp(g, ivals, out, aux) -> grads."""
    if name in _FORWARD:
        raise ValueError(f"primitive {name!r} already registered")
    _prim(name, fwd, vjp)


def apply_primitive(name: str, inputs, aux=None) -> Var:
    """Record a registered primitive applied to Vars and constants."""
    return _apply(name, tuple(inputs), aux)


def where(mask, a, b):
    mask = np.asarray(mask, dtype=bool)
    return _apply("where", (a, b), aux=mask)


def sum_(a, axis=None):
    return _apply("sum", (a,), aux=axis)


def mean(a):
    return _apply("mean", (a,))


def trace_last2(a):
    return _apply("trace_last2", (a,))


def reshape(a, shape):
    return _apply("reshape", (a,), aux=tuple(shape))


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, seed_value: float = 1.0) -> list[np.ndarray]:
    """Accumulate d(root)/d(leaf) for every watched leaf.

    Returns one array per watched leaf, in watch order; leaves the root
    never depended on get zeros.  The traversal order is the reverse of
    the recording order, so the reduction over a batch is deterministic.
    """
    if tape.root is None:
        raise ValueError("tape has no root; call set_root first")
    adj: list = [None] * len(tape.nodes)
    root_val = tape.nodes[tape.root].value
    adj[tape.root] = np.full(np.shape(root_val), float(seed_value))
    for i in range(len(tape.nodes) - 1, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = tape.nodes[i]
        if node.op == "leaf":
            continue
        grads = _VJP[node.op](g, node.ivals, node.value, node.aux)
        for j, gj in zip(node.iidx, grads):
            if j is None or gj is None:
                continue
            if adj[j] is None:
                adj[j] = gj
            else:
                adj[j] = adj[j] + gj
        adj[i] = None  # free as we go
    out = []
    for idx in tape.watched:
        g = adj[idx]
        if g is None:
            g = np.zeros_like(tape.nodes[idx].value)
        out.append(np.asarray(g, dtype=np.float64))
    return out

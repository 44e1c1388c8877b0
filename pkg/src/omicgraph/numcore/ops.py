"""Differentiable operations on :class:`Tensor`.

Each function computes the forward value with numpy/scipy and registers a
closure returning one gradient per parent (``None`` for non-differentiable
inputs).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DimensionError
from .sparse import SparseMatrix
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for tensor of rank {x.ndim}")
    return axis % x.ndim


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- arithmetic ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def spmm(s: SparseMatrix, d, values: Tensor | None = None) -> Tensor:
    """Sparse (n, m) times dense (m, k).

    When ``values`` is given it replaces ``s.values`` (same pattern) and the
    product is also differentiable with respect to those values.
    """
    d = as_tensor(d)
    if d.ndim != 2 or s.n_cols != d.shape[0]:
        raise DimensionError(f"spmm: sparse {s.shape} incompatible with dense {d.shape}")
    if values is None:
        mat = s
        parents = (d,)
    else:
        if values.shape != (s.nnz,):
            raise DimensionError(f"spmm: values shape {values.shape} != ({s.nnz},)")
        mat = s.with_values(values.data)
        parents = (d, values)
    csr = mat.to_scipy()
    out = np.asarray(csr @ d.data)

    def bw(g):
        gd = np.asarray(csr.T @ g) if d.requires_grad else None
        if values is None:
            return (gd,)
        gv = None
        if values.requires_grad:
            gv = np.einsum("ij,ij->i", g[s.rows], d.data[s.col_indices])
        return gd, gv

    return make_node(out, parents, bw, "spmm")


# -- elementwise ----------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return make_node(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = expit(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return make_node(out, (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        return make_node(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), bw, "softmax")


def dropout(x, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- shape / reduction ------------------------------------------------------------

def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    axis = _check_axis(tensors[0], axis)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_node(out, tuple(tensors), bw, "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return make_node(x.data.T, (x,), lambda g: (g.T,), "transpose")


def sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis(x, axis)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(out, (x,), bw, "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def bw(g):
        return (np.full(x.shape, float(np.sum(g)) / n),)

    return make_node(np.asarray(x.data.mean()), (x,), bw, "mean")


def mean_rows(x) -> Tensor:
    """Column means as a (1, d) row."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("mean_rows expects a matrix")
    n = x.shape[0]
    return make_node(
        x.data.mean(axis=0, keepdims=True), (x,),
        lambda g: (np.broadcast_to(g / n, x.shape).copy(),), "mean_rows",
    )


def segment_mean(x, offsets: np.ndarray) -> Tensor:
    """Mean over contiguous row blocks ``offsets[i]:offsets[i+1]``."""
    x = as_tensor(x)
    offsets = np.asarray(offsets)
    counts = np.diff(offsets)
    if np.any(counts <= 0):
        raise DimensionError("segment_mean: empty segment")
    out = np.add.reduceat(x.data, offsets[:-1], axis=0) / counts[:, None]

    def bw(g):
        return (np.repeat(g / counts[:, None], counts, axis=0),)

    return make_node(out, (x,), bw, "segment_mean")


def gather_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_node(x.data[idx], (x,), bw, "gather_rows")


def scatter_rows(x, idx, n_rows: int) -> Tensor:
    """Place rows of ``x`` at positions ``idx`` of a zero matrix (unpooling)."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n_rows,) + x.shape[1:])
    out[idx] = x.data
    return make_node(out, (x,), lambda g: (g[idx],), "scatter_rows")


def segment_softmax(x, offsets: np.ndarray) -> Tensor:
    """Softmax along axis 0 within each contiguous, nonempty row segment."""
    x = as_tensor(x)
    offsets = np.asarray(offsets)
    counts = np.diff(offsets)
    if np.any(counts <= 0):
        raise DimensionError("segment_softmax: empty segment")
    starts = offsets[:-1]
    seg_max = np.maximum.reduceat(x.data, starts, axis=0)
    e = np.exp(x.data - np.repeat(seg_max, counts, axis=0))
    denom = np.add.reduceat(e, starts, axis=0)
    out = e / np.repeat(denom, counts, axis=0)

    def bw(g):
        dot = np.add.reduceat(g * out, starts, axis=0)
        return (out * (g - np.repeat(dot, counts, axis=0)),)

    return make_node(out, (x,), bw, "segment_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gb = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, gg, gb

    return make_node(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def bce_with_logits(logits, targets: np.ndarray, index: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy on (optionally indexed) logits.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so large |z| stays finite.
    """
    logits = as_tensor(logits)
    z_all = logits.data.reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if index is None:
        index = np.arange(z_all.size)
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ValueError("bce_with_logits: empty mask")
    z = z_all[index]
    y = targets[index] if targets.size == z_all.size else targets
    if y.shape != z.shape:
        raise DimensionError("bce_with_logits: labels do not match the masked logits")
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    m = index.size

    def bw(g):
        full = np.zeros(z_all.size)
        np.add.at(full, index, float(np.sum(g)) * (expit(z) - y) / m)
        return (full.reshape(logits.shape),)

    return make_node(np.asarray(loss.mean()), (logits,), bw, "bce_with_logits")

"""Reverse-mode automatic differentiation over float64 numpy arrays.

Minimal tape engine: each op builds a Value whose vjp closure maps the
output gradient to parent gradients. backward() walks the graph once in
reverse topological order. Everything is float64 end to end; given the same
inputs the same graph produces bit-identical gradients.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class Value:
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def wrap(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out = Value(a.data + b.data, (a, b))
    out._vjp = lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))
    return out


def mul(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out = Value(a.data * b.data, (a, b))
    out._vjp = lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape),
    )
    return out


def div(a, b) -> Value:
    a, b = wrap(a), wrap(b)
    out = Value(a.data / b.data, (a, b))

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    out._vjp = vjp
    return out


def matmul(a: Value, b: Value) -> Value:
    a, b = wrap(a), wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Value(a.data @ b.data, (a, b))
    out._vjp = lambda g: (g @ b.data.T, a.data.T @ g)
    return out


def affine(x: Value, w: Value, b: Value) -> Value:
    """x @ w + b with an explicit shape check."""
    x, w, b = wrap(x), wrap(w), wrap(b)
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"affine shape mismatch: input dim {x.data.shape[1]}, weight rows {w.data.shape[0]}")
    return add(matmul(x, w), b)


def relu(a: Value) -> Value:
    a = wrap(a)
    mask = a.data > 0
    out = Value(np.where(mask, a.data, 0.0), (a,))
    out._vjp = lambda g: (g * mask,)
    return out


def pow_const(a: Value, p: float) -> Value:
    a = wrap(a)
    out = Value(a.data**p, (a,))
    out._vjp = lambda g: (g * p * a.data ** (p - 1.0),)
    return out


def vsum(a: Value, axis=None, keepdims: bool = False) -> Value:
    a = wrap(a)
    out = Value(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    out._vjp = vjp
    return out


def vmean(a: Value, axis=None, keepdims: bool = False) -> Value:
    a = wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def transpose(a: Value) -> Value:
    a = wrap(a)
    out = Value(a.data.T, (a,))
    out._vjp = lambda g: (g.T,)
    return out


def concat_cols(vals: Sequence[Value]) -> Value:
    vals = [wrap(v) for v in vals]
    widths = [v.data.shape[1] for v in vals]
    out = Value(np.concatenate([v.data for v in vals], axis=1), tuple(vals))
    offs = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offs[i] : offs[i + 1]] for i in range(len(vals)))

    out._vjp = vjp
    return out


def _scatter_add_rows(n_rows: int, idx: np.ndarray, g: np.ndarray) -> np.ndarray:
    # bincount on a flattened index beats np.add.at by a wide margin
    ncol = g.shape[1]
    flat = (idx[:, None] * ncol + np.arange(ncol)[None, :]).ravel()
    return np.bincount(flat, weights=g.ravel(), minlength=n_rows * ncol).reshape(n_rows, ncol)


def gather_rows(table: Value, idx: np.ndarray) -> Value:
    """Row lookup table[idx]; backward scatter-adds into the table."""
    table = wrap(table)
    idx = np.asarray(idx, dtype=np.int64)
    out = Value(table.data[idx], (table,))
    n_rows = table.data.shape[0]
    out._vjp = lambda g: (_scatter_add_rows(n_rows, idx, g),)
    return out


def sparse_matmul(m: sp.spmatrix, x: Value) -> Value:
    """Constant sparse matrix times dense Value. Used for all segment ops."""
    x = wrap(x)
    mt = m.T.tocsr()
    out = Value(m @ x.data, (x,))
    out._vjp = lambda g: (mt @ g,)
    return out


def segment_matrix(seg_ids: np.ndarray, n_segments: int, n_items: int, mean: bool = False) -> sp.csr_matrix:
    """CSR matrix S with S @ x = per-segment sum (or mean) of rows of x."""
    seg_ids = np.asarray(seg_ids, dtype=np.int64)
    if mean:
        counts = np.bincount(seg_ids, minlength=n_segments).astype(np.float64)
        counts[counts == 0] = 1.0
        data = 1.0 / counts[seg_ids]
    else:
        data = np.ones(len(seg_ids), dtype=np.float64)
    m = sp.csr_matrix((data, (seg_ids, np.arange(n_items))), shape=(n_segments, n_items))
    return m


def softmax_rows(a: Value) -> Value:
    a = wrap(a)
    if not np.isfinite(a.data).all():
        raise ValueError("softmax_rows: non-finite input")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Value(y, (a,))

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    out._vjp = vjp
    return out


def log_clamped(a: Value, lo: float = 1e-12) -> Value:
    """log(max(a, lo)); gradient is zero where the clamp is active."""
    a = wrap(a)
    clamped = np.maximum(a.data, lo)
    out = Value(np.log(clamped), (a,))
    mask = a.data > lo
    out._vjp = lambda g: (g * mask / clamped,)
    return out


def logdet_ridge(a: Value, ridge: float) -> Value:
    """log det(A + ridge*I) for symmetric PSD A, via Cholesky.

    Gradient is the (symmetrized) inverse of the ridged matrix. A
    factorization failure after the ridge signals a non-PSD (or non-finite)
    input and yields a NaN value instead of raising.
    """
    a = wrap(a)
    d = a.data.shape[0]
    m = a.data + ridge * np.eye(d)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        # overflowing parameters produce a non-finite or indefinite matrix;
        # surface that as a NaN loss so training loops can flag divergence
        out = Value(np.float64("nan"), (a,))
        out._vjp = lambda g: (np.full_like(m, np.float64("nan")),)
        return out
    out = Value(2.0 * np.sum(np.log(np.diag(chol))), (a,))

    def vjp(g):
        import scipy.linalg as sla

        inv = sla.cho_solve((chol, True), np.eye(d))
        return (float(g) * 0.5 * (inv + inv.T),)

    out._vjp = vjp
    return out


def _topo_order(root: Value) -> list[Value]:
    topo: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        v, processed = stack.pop()
        if processed:
            topo.append(v)
            continue
        if id(v) in visited:
            continue
        visited.add(id(v))
        stack.append((v, True))
        for p in v._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return topo


def backward(root: Value) -> None:
    """Accumulate gradients of `root` (a scalar) into every reachable Value."""
    if root.data.size != 1:
        raise ValueError("backward expects a scalar root")
    topo = _topo_order(root)
    root.grad = np.ones_like(root.data)
    for v in reversed(topo):
        if v._vjp is None or v.grad is None:
            continue
        for parent, g in zip(v._parents, v._vjp(v.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g

"""Minimal dense-tensor reverse-mode autodiff engine.

Float64 only, rank 0..2, define-by-run. Every operation records its
parents and a backward rule on the result node; ``backward`` on a scalar
walks the recorded graph in reverse creation order and accumulates
gradients on ``requires_grad`` leaves. Node ids increase monotonically
with creation, so creation order is a topological order of the graph.

There is no broadcasting beyond the explicit row/column vector ops
below; shapes are validated and mismatches raise ``ShapeMismatch``.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NotScalar, ShapeMismatch, ZeroNormRow

_NODE_IDS = itertools.count()


class Tensor:
    """Dense float64 array with optional gradient.

    ``values`` is the row-major data array, ``grad`` (populated by
    ``backward``) has the same shape, and ``requires_grad`` marks leaves
    that should receive gradients. Result tensors of operations keep
    references to their parent nodes plus a backward rule.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_nid", "_op")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim > 2:
            raise ShapeMismatch(f"rank {arr.ndim} tensors are not supported")
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._nid = next(_NODE_IDS)
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise NotScalar(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar for the common arithmetic
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _result(values: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    out._nid = next(_NODE_IDS)
    out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(values) -> Tensor:
    """Leaf tensor that never receives a gradient."""
    return Tensor(values, requires_grad=False)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _result(a.values + float(b), (a,), lambda g: (g,), "add_const")
    b = _as_tensor(b)
    _check_same_shape(a, b, "add")
    return _result(a.values + b.values, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return add(a, -float(b))
    b = _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return _result(a.values - b.values, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return _result(-a.values, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return scale(a, float(b))
    b = _as_tensor(b)
    _check_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.values * c, (a,), lambda g: (g * c,), "scale")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    av, bv = a.values, b.values
    out = av / bv
    return _result(out, (a, b), lambda g: (g / bv, -g * out / bv), "div")


def exp(a: Tensor) -> Tensor:
    ev = np.exp(a.values)
    return _result(ev, (a,), lambda g: (g * ev,), "exp")


def log(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.log(av), (a,), lambda g: (g / av,), "log")


def sqrt(a: Tensor) -> Tensor:
    rv = np.sqrt(a.values)
    return _result(rv, (a,), lambda g: (g / (2.0 * rv),), "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _result(a.values * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    tv = np.tanh(a.values)
    return _result(tv, (a,), lambda g: (g * (1.0 - tv * tv),), "tanh")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ``b`` may be scalar-shaped. Ties route the gradient to ``a``."""
    av, bv = a.values, b.values
    if av.shape != bv.shape and bv.size != 1:
        raise ShapeMismatch(f"maximum: shapes {av.shape} and {bv.shape} differ")
    take_a = av >= bv

    def back(g):
        ga = g * take_a
        gb = g * ~take_a
        if bv.size == 1:
            gb = np.sum(gb).reshape(bv.shape)
        return (ga, gb)

    return _result(np.maximum(av, bv), (a, b), back, "maximum")


# ---------------------------------------------------------------------------
# matrix ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim == 2 and bv.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")
    if av.ndim == 2 and bv.ndim == 1:
        if av.shape[1] != bv.shape[0]:
            raise ShapeMismatch(f"matmul: {av.shape} @ {bv.shape}")
        return _result(av @ bv, (a, b), lambda g: (np.outer(g, bv), av.T @ g), "matvec")
    raise ShapeMismatch(f"matmul: unsupported ranks {av.ndim} and {bv.ndim}")


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeMismatch("transpose: rank-2 only")
    return _result(np.ascontiguousarray(a.values.T), (a,), lambda g: (g.T,), "transpose")


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ShapeMismatch("dot: rank-1 only")
    _check_same_shape(a, b, "dot")
    av, bv = a.values, b.values
    return _result(np.array(av @ bv), (a, b), lambda g: (g * bv, g * av), "dot")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array(np.sum(a.values)), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy() if shape else g,), "sum")


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.values.size)


# ---------------------------------------------------------------------------
# row/column broadcast helpers (the only broadcasting in the engine)


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an (m, n) matrix."""
    if a.values.ndim != 2 or v.values.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeMismatch(f"add_rowvec: {a.shape} + {v.shape}")
    return _result(a.values + v.values, (a, v), lambda g: (g, g.sum(axis=0)), "add_rowvec")


def mul_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of an (m, n) matrix by a length-n vector."""
    if a.values.ndim != 2 or v.values.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeMismatch(f"mul_rowvec: {a.shape} * {v.shape}")
    av, vv = a.values, v.values
    return _result(av * vv, (a, v), lambda g: (g * vv, (g * av).sum(axis=0)), "mul_rowvec")


def mul_colvec(a: Tensor, v: Tensor) -> Tensor:
    """Scale row i of an (m, n) matrix by v[i]."""
    if a.values.ndim != 2 or v.values.ndim != 1 or a.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"mul_colvec: {a.shape} * {v.shape}")
    av, vv = a.values, v.values
    col = vv[:, None]
    return _result(av * col, (a, v), lambda g: (g * col, (g * av).sum(axis=1)), "mul_colvec")


def div_colvec(a: Tensor, v: Tensor) -> Tensor:
    """Divide row i of an (m, n) matrix by v[i]."""
    if a.values.ndim != 2 or v.values.ndim != 1 or a.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"div_colvec: {a.shape} / {v.shape}")
    av, vv = a.values, v.values
    col = vv[:, None]
    out = av / col

    def back(g):
        return (g / col, -(g * out).sum(axis=1) / vv)

    return _result(out, (a, v), back, "div_colvec")


def broadcast_colvec(v: Tensor, ncols: int) -> Tensor:
    """Tile a length-m vector into an (m, ncols) matrix of identical columns."""
    if v.values.ndim != 1:
        raise ShapeMismatch("broadcast_colvec: rank-1 input required")
    out = np.repeat(v.values[:, None], ncols, axis=1)
    return _result(out, (v,), lambda g: (g.sum(axis=1),), "broadcast_colvec")


def diag_part(a: Tensor) -> Tensor:
    if a.values.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch("diag_part: square matrix required")
    n = a.shape[0]

    def back(g):
        gm = np.zeros((n, n))
        np.fill_diagonal(gm, g)
        return (gm,)

    return _result(np.diag(a.values).copy(), (a,), back, "diag_part")


# ---------------------------------------------------------------------------
# indexing


def row(a: Tensor, i: int) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeMismatch("row: rank-2 input required")
    shape = a.shape

    def back(g):
        gm = np.zeros(shape)
        gm[i] = g
        return (gm,)

    return _result(a.values[i].copy(), (a,), back, "row")


def take(v: Tensor, idx) -> Tensor:
    """Gather elements of a rank-1 tensor at integer indices."""
    if v.values.ndim != 1:
        raise ShapeMismatch("take: rank-1 input required")
    idx = np.asarray(idx, dtype=np.intp)
    n = v.shape[0]

    def back(g):
        gv = np.zeros(n)
        np.add.at(gv, idx, g)
        return (gv,)

    return _result(v.values[idx].copy(), (v,), back, "take")


def take2d(a: Tensor, rows_idx, cols_idx) -> Tensor:
    """Gather a[rows_idx[k], cols_idx[k]] into a rank-1 tensor."""
    if a.values.ndim != 2:
        raise ShapeMismatch("take2d: rank-2 input required")
    ri = np.asarray(rows_idx, dtype=np.intp)
    ci = np.asarray(cols_idx, dtype=np.intp)
    shape = a.shape

    def back(g):
        gm = np.zeros(shape)
        np.add.at(gm, (ri, ci), g)
        return (gm,)

    return _result(a.values[ri, ci].copy(), (a,), back, "take2d")


def element(v: Tensor, i: int) -> Tensor:
    """Single element of a rank-1 tensor as a scalar tensor."""
    if v.values.ndim != 1:
        raise ShapeMismatch("element: rank-1 input required")
    n = v.shape[0]

    def back(g):
        gv = np.zeros(n)
        gv[i] = g
        return (gv,)

    return _result(np.array(v.values[i]), (v,), back, "element")


def drop_index(v: Tensor, i: int) -> Tensor:
    """Rank-1 tensor with element i removed."""
    if v.values.ndim != 1:
        raise ShapeMismatch("drop_index: rank-1 input required")
    n = v.shape[0]
    keep = np.concatenate([np.arange(i), np.arange(i + 1, n)])

    def back(g):
        gv = np.zeros(n)
        gv[keep] = g
        return (gv,)

    return _result(v.values[keep].copy(), (v,), back, "drop_index")


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"concat_rows: {a.shape} and {b.shape}")
    m = a.shape[0]
    return _result(np.concatenate([a.values, b.values], axis=0), (a, b),
                   lambda g: (g[:m], g[m:]), "concat_rows")


# ---------------------------------------------------------------------------
# reductions and normalizations


def row_max(a: Tensor) -> Tensor:
    """Per-row maximum of an (m, n) matrix; gradient routes to the first argmax."""
    if a.values.ndim != 2:
        raise ShapeMismatch("row_max: rank-2 input required")
    arg = np.argmax(a.values, axis=1)
    m, n = a.shape

    def back(g):
        gm = np.zeros((m, n))
        gm[np.arange(m), arg] = g
        return (gm,)

    return _result(a.values[np.arange(m), arg].copy(), (a,), back, "row_max")


def logsumexp(v: Tensor) -> Tensor:
    """Stable log-sum-exp of a rank-1 tensor (max-subtraction)."""
    if v.values.ndim != 1:
        raise ShapeMismatch("logsumexp: rank-1 input required")
    m = np.max(v.values)
    e = np.exp(v.values - m)
    s = np.sum(e)
    soft = e / s
    return _result(np.array(m + np.log(s)), (v,), lambda g: (g * soft,), "logsumexp")


def logsumexp_rows(a: Tensor) -> Tensor:
    """Stable per-row log-sum-exp of an (m, n) matrix."""
    if a.values.ndim != 2:
        raise ShapeMismatch("logsumexp_rows: rank-2 input required")
    m = np.max(a.values, axis=1, keepdims=True)
    e = np.exp(a.values - m)
    s = np.sum(e, axis=1, keepdims=True)
    soft = e / s
    out = (m + np.log(s)).ravel()
    return _result(out, (a,), lambda g: (g[:, None] * soft,), "logsumexp_rows")


def softmax(v: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax of logits divided by ``temperature`` (rank-1, or row-wise on rank-2).

    Uses max-subtraction, so arbitrarily large logits do not overflow and
    adding a constant to all logits leaves the output unchanged.
    """
    t = float(temperature)
    if t <= 0.0:
        raise ValueError(f"temperature must be > 0, got {t}")
    if not np.all(np.isfinite(v.values)):
        raise ValueError("softmax input must be finite")
    if v.values.ndim == 1:
        z = v.values / t
        e = np.exp(z - np.max(z))
        y = e / np.sum(e)

        def back(g):
            return ((y * (g - np.dot(g, y))) / t,)

        return _result(y, (v,), back, "softmax")
    if v.values.ndim == 2:
        z = v.values / t
        e = np.exp(z - np.max(z, axis=1, keepdims=True))
        y = e / np.sum(e, axis=1, keepdims=True)

        def back(g):
            return ((y * (g - np.sum(g * y, axis=1, keepdims=True))) / t,)

        return _result(y, (v,), back, "softmax_rows")
    raise ShapeMismatch("softmax: rank-1 or rank-2 input required")


def l2_normalize(v: Tensor) -> Tensor:
    """Normalize a rank-1 tensor, or each row of a rank-2 tensor, to unit norm.

    Raises ZeroNormRow when any row norm is <= 1e-12.
    """
    if v.values.ndim == 1:
        r = float(np.linalg.norm(v.values))
        if r <= 1e-12:
            raise ZeroNormRow("vector norm <= 1e-12")
        y = v.values / r

        def back(g):
            return ((g - np.dot(g, y) * y) / r,)

        return _result(y, (v,), back, "l2_normalize")
    if v.values.ndim == 2:
        r = np.linalg.norm(v.values, axis=1)
        if np.any(r <= 1e-12):
            raise ZeroNormRow("matrix row norm <= 1e-12")
        y = v.values / r[:, None]

        def back(g):
            return ((g - np.sum(g * y, axis=1, keepdims=True) * y) / r[:, None],)

        return _result(y, (v,), back, "l2_normalize_rows")
    raise ShapeMismatch("l2_normalize: rank-1 or rank-2 input required")


# ---------------------------------------------------------------------------
# graph walk


def trace(root: Tensor) -> list[tuple[int, str, tuple[int, ...]]]:
    """Reachable graph of ``root`` as (node id, op, parent ids), in node-id order.

    Node ids increase with creation, so this order is topological:
    inputs always precede their consumers.
    """
    nodes = sorted(_reachable(root), key=lambda t: t._nid)
    return [(t._nid, t._op, tuple(p._nid for p in t._parents)) for t in nodes]


def _reachable(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node._nid in seen:
            continue
        seen[node._nid] = node
        stack.extend(node._parents)
    return list(seen.values())


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar (single element). Gradients accumulate into
    existing leaf ``grad`` buffers; call ``zero_grad`` between passes for
    fresh values. Repeated passes over the same graph are deterministic.
    """
    if loss.values.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    order = sorted(_reachable(loss), key=lambda t: t._nid)
    grads: dict[int, np.ndarray] = {loss._nid: np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(node._nid, None)
        if g is None:
            continue
        if not node._parents:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._nid)
            # out-of-place accumulation: backward rules may return aliased arrays
            grads[parent._nid] = pg if prev is None else prev + pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor. The relative error per
    coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    ``eps`` must lie in [1e-7, 1e-3].
    """
    eps = float(eps)
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    leaf = Tensor(x.values, requires_grad=True)
    out = f(leaf)
    if out.values.size != 1:
        raise NotScalar("finite_diff_check needs a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(leaf.values) if leaf.grad is None else leaf.grad

    flat = leaf.values.ravel()
    worst = 0.0
    for k in range(flat.size):
        orig = flat[k]
        pert = leaf.values.copy()
        pert.ravel()[k] = orig + eps
        f_plus = f(Tensor(pert)).item()
        pert.ravel()[k] = orig - eps
        f_minus = f(Tensor(pert)).item()
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic.ravel()[k]
        rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, rel)
    return worst

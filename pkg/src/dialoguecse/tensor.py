"""Dense rank-2 tensors with reverse-mode automatic differentiation.

Every value in the numerical core is a 2-D float array (column vectors and
scalars are 1xd / 1x1 tensors).  Differentiable operations record a
``TapeNode`` holding a backward closure on a module-level tape; since the
tape preserves execution order, walking it once in reverse is a reverse
topological traversal, and gradients accumulate additively across fan-out.

Two precisions are supported: float32 for training speed and float64 for
gradient checking.  Operations never mix precisions silently.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateVectorError, EmptyPoolError, ShapeError

__all__ = [
    "Tensor",
    "TapeNode",
    "tape",
    "reset_tape",
    "no_grad",
    "grad_enabled",
    "backward",
    "add",
    "add_const",
    "add_rowvec",
    "sub",
    "mul",
    "mul_scalar",
    "scale",
    "neg",
    "matmul",
    "transpose",
    "relu",
    "absolute",
    "exp",
    "log",
    "sigmoid",
    "softplus",
    "sum_all",
    "softmax_rows",
    "layer_norm_rows",
    "masked_mean_rows",
    "slice_cols",
    "slice_rows",
    "concat_cols",
    "gather_rows",
    "attention",
    "attention_batch",
    "cosine",
]

SINGLE = np.float32
DOUBLE = np.float64


class Tensor:
    """A rank-2 array with an optional gradient slot.

    ``data`` is always a C-contiguous (rows, cols) float array; ``grad`` is
    either None or an array of identical shape.  Tensors are treated as
    immutable once an operation has consumed them (the optimizer mutates
    parameters in place only between tape resets).
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are rank-2, got array of rank {arr.ndim}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DOUBLE)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    # -- constructors -------------------------------------------------

    @staticmethod
    def zeros(rows: int, cols: int, dtype=SINGLE, requires_grad: bool = False) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = np.zeros((rows, cols), dtype=dtype)
        t.grad = None
        t.requires_grad = requires_grad
        return t

    @staticmethod
    def from_array(arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an existing 2-D float array without copying."""
        t = Tensor.__new__(Tensor)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are rank-2, got array of rank {arr.ndim}")
        t.data = np.ascontiguousarray(arr)
        t.grad = None
        t.requires_grad = requires_grad
        return t

    # -- properties ---------------------------------------------------

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        """Precision cast; returns a detached tensor."""
        return Tensor.from_array(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor({self.rows}x{self.cols}, {self.data.dtype}{flag})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_const(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class TapeNode:
    """One recorded operation: op name, operands, output, backward rule.

    ``backward`` maps the output gradient to one gradient (or None) per
    input, in input order.
    """

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward: Callable[[np.ndarray], tuple],
    ):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE: list[TapeNode] = []
_GRAD_ENABLED = True


def tape() -> list[TapeNode]:
    """The live tape (execution order)."""
    return _TAPE


def reset_tape() -> None:
    _TAPE.clear()


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable tape recording (evaluation, finite-difference probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor.from_array(out_data)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.append(TapeNode(op, inputs, out, backward))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(input) into ``grad`` of every reachable tensor.

    Seeds the 1x1 loss with gradient one and walks the tape once in
    reverse.  Gradients add across fan-out; call ``reset_tape`` (and clear
    parameter grads) before building the next graph.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss tensor, got {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad; nothing to backpropagate")
    loss.grad = np.ones((1, 1), dtype=loss.dtype)
    for node in reversed(_TAPE):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.backward(out_grad)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            # adopted arrays are never mutated in place (accumulation
            # rebinds), so backward rules may hand out shared views
            t.grad = g if t.grad is None else t.grad + g


# -- shape / dtype guards ----------------------------------------------


def _same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed precisions {a.dtype} and {b.dtype}")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    _same_dtype(a, b, op)


# -- elementwise and affine ops ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def add_const(a: Tensor, c: float) -> Tensor:
    return _record("add_const", (a,), a.data + a.dtype.type(c), lambda g: (g,))


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a 1xd row vector to every row of a."""
    if v.rows != 1 or v.cols != a.cols:
        raise ShapeError(f"add_rowvec: {a.shape} + {v.shape}")
    _same_dtype(a, v, "add_rowvec")
    return _record(
        "add_rowvec",
        (a, v),
        a.data + v.data,
        lambda g: (g, g.sum(axis=0, keepdims=True)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _same_shape(a, b, "mul")
    return _record("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Scale a matrix by a 1x1 tensor, differentiable in both operands."""
    if s.shape != (1, 1):
        raise ShapeError(f"mul_scalar: scalar operand has shape {s.shape}")
    _same_dtype(a, s, "mul_scalar")
    return _record(
        "mul_scalar",
        (a, s),
        a.data * s.data[0, 0],
        lambda g: (g * s.data[0, 0], np.array([[np.sum(g * a.data)]], dtype=a.dtype)),
    )


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; dA = dC @ B^T, dB = A^T @ dC."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _same_dtype(a, b, "matmul")

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record("matmul", (a, b), a.data @ b.data, bwd)


def transpose(a: Tensor) -> Tensor:
    return _record("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


# -- nonlinearities -------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is taken as 0."""
    out = np.maximum(a.data, 0)
    return _record("relu", (a,), out, lambda g: (g * (a.data > 0),))


def absolute(a: Tensor) -> Tensor:
    """|x|; the subgradient at 0 is taken as 0 (sign convention)."""
    return _record("absolute", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    # exp of the negated magnitude only, to avoid overflow on either tail
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; gradient is sigmoid(x)."""
    out = np.logaddexp(a.dtype.type(0), a.data)

    def bwd(g):
        x = a.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)

    return _record("softplus", (a,), out, bwd)


# -- reductions -----------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    out = np.array([[a.data.sum()]], dtype=a.dtype)
    return _record("sum_all", (a,), out, lambda g: (np.full_like(a.data, g[0, 0]),))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax_rows", (a,), out, bwd)


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Standardize each row (population variance + eps), then scale/shift."""
    if eps <= 0:
        raise ValueError(f"layer_norm_rows: eps must be > 0, got {eps}")
    if gain.shape != (1, a.cols) or bias.shape != (1, a.cols):
        raise ShapeError(
            f"layer_norm_rows: gain {gain.shape} / bias {bias.shape} for input {a.shape}"
        )
    _same_dtype(a, gain, "layer_norm_rows")
    _same_dtype(a, bias, "layer_norm_rows")
    mean = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.dtype.type(eps))
    xhat = (a.data - mean) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        d = a.cols
        dxhat = g * gain.data
        # per-row: dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        da = inv * (dxhat - m1 - xhat * m2)
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return (da, dgain, dbias)

    return _record("layer_norm_rows", (a, gain, bias), out, bwd)


def masked_mean_rows(a: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over rows where mask == 1, as a 1xd tensor.

    The mask is a plain integer/bool vector of length ``rows`` and is not
    differentiated through.
    """
    m = np.asarray(mask).reshape(-1)
    if m.shape[0] != a.rows:
        raise ShapeError(f"masked_mean_rows: mask length {m.shape[0]} for {a.shape}")
    active = np.flatnonzero(m)
    if active.size == 0:
        raise EmptyPoolError("masked_mean_rows: mask selects no rows")
    out = a.data[active].mean(axis=0, keepdims=True)

    def bwd(g):
        da = np.zeros_like(a.data)
        da[active] = g / a.dtype.type(active.size)
        return (da,)

    return _record("masked_mean_rows", (a,), out, bwd)


# -- structural ops -------------------------------------------------------


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")

    def bwd(g):
        da = np.zeros_like(a.data)
        da[:, start:stop] = g
        return (da,)

    return _record("slice_cols", (a,), a.data[:, start:stop].copy(), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.rows):
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {a.shape}")

    def bwd(g):
        da = np.zeros_like(a.data)
        da[start:stop] = g
        return (da,)

    return _record("slice_rows", (a,), a.data[start:stop].copy(), bwd)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat_cols: empty part list")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ, {p.shape} vs {parts[0].shape}")
        _same_dtype(p, parts[0], "concat_cols")
    widths = [p.cols for p in parts]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _record("concat_cols", parts, np.concatenate([p.data for p in parts], axis=1), bwd)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Select rows of an embedding table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index vector")
    if idx.min() < 0 or idx.max() >= table.rows:
        raise ShapeError(f"gather_rows: ids outside [0, {table.rows})")

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _record("gather_rows", (table,), table.data[idx], bwd)


# -- attention core -------------------------------------------------------


def attention_batch(
    q: Tensor, k: Tensor, v: Tensor, key_masks: np.ndarray, n_heads: int
) -> Tensor:
    """Multi-head scaled dot-product attention over packed sequences.

    q, k, v are (B*n)xd: B equal-length segments of n rows each, laid out
    contiguously (sequence packing).  ``key_masks`` is a (B, n) 0/1 array;
    attention never crosses segment boundaries, and logits at masked key
    positions are set to -inf before the row softmax, so masked keys get
    exactly zero weight.  Query rows at masked positions are still
    computed; callers exclude them via their own masks.
    """
    masks = np.asarray(key_masks)
    if masks.ndim != 2:
        raise ShapeError(f"attention: key_masks must be (B, n), got shape {masks.shape}")
    n_seq, n = masks.shape
    rows, d = q.shape
    if rows != n_seq * n:
        raise ShapeError(f"attention: {n_seq} segments of {n} rows need {n_seq * n} rows, got {rows}")
    if k.shape != (rows, d) or v.shape != (rows, d):
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} must agree")
    if d % n_heads != 0:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    _same_dtype(q, k, "attention")
    _same_dtype(q, v, "attention")
    if not masks.any(axis=1).all():
        raise EmptyPoolError("attention: a segment has all key positions masked")
    dh = d // n_heads
    inv_sqrt = q.dtype.type(1.0 / np.sqrt(dh))

    def split(x):  # (B*n, d) -> (B, heads, n, dh)
        return x.reshape(n_seq, n, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    logits = (qh @ kh.transpose(0, 1, 3, 2)) * inv_sqrt
    logits = np.where(masks[:, None, None, :] != 0, logits, -np.inf)
    logits -= logits.max(axis=3, keepdims=True)
    e = np.exp(logits)
    attn = e / e.sum(axis=3, keepdims=True)
    out = (attn @ vh).transpose(0, 2, 1, 3).reshape(rows, d)

    def bwd(g):
        gh = split(g)
        dv = attn.transpose(0, 1, 3, 2) @ gh
        da = gh @ vh.transpose(0, 1, 3, 2)
        ds = attn * (da - (da * attn).sum(axis=3, keepdims=True))
        dq = (ds @ kh) * inv_sqrt
        dk = (ds.transpose(0, 1, 3, 2) @ qh) * inv_sqrt

        def join(x):  # (B, heads, n, dh) -> (B*n, d)
            return x.transpose(0, 2, 1, 3).reshape(rows, d)

        return (join(dq), join(dk), join(dv))

    return _record("attention", (q, k, v), out, bwd)


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray, n_heads: int) -> Tensor:
    """Multi-head attention over a single nxd sequence (one-segment pack)."""
    m = np.asarray(key_mask).reshape(1, -1)
    if m.shape[1] != q.rows:
        raise ShapeError(f"attention: mask length {m.shape[1]} for sequence length {q.rows}")
    return attention_batch(q, k, v, m, n_heads)


# -- similarity -----------------------------------------------------------


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two 1xd vectors as a 1x1 tensor."""
    if u.rows != 1 or v.rows != 1 or u.cols != v.cols:
        raise ShapeError(f"cosine: need matching 1xd vectors, got {u.shape} and {v.shape}")
    _same_dtype(u, v, "cosine")
    ud, vd = u.data[0], v.data[0]
    nu = np.sqrt(np.dot(ud, ud))
    nv = np.sqrt(np.dot(vd, vd))
    if nu == 0 or nv == 0:
        raise DegenerateVectorError("cosine: zero-norm input vector")
    c = np.dot(ud, vd) / (nu * nv)
    out = np.array([[c]], dtype=u.dtype)

    def bwd(g):
        s = g[0, 0]
        du = s * (vd / (nu * nv) - c * ud / (nu * nu))
        dv_ = s * (ud / (nu * nv) - c * vd / (nv * nv))
        return (du.reshape(1, -1), dv_.reshape(1, -1))

    return _record("cosine", (u, v), out, bwd)


def as_constant(arr: np.ndarray, dtype) -> Tensor:
    """A non-trainable tensor matching the requested precision."""
    return Tensor.from_array(np.ascontiguousarray(arr, dtype=dtype))

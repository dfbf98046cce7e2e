"""
Dense tensors with tape-based reverse-mode differentiation, written on numpy.

Primitives record a pullback closure on the active `Tape` whenever one of their
inputs requires a gradient. Shapes are explicit: apart from scalar operands to
`add` and `scale`, nothing broadcasts. Row-wise bias addition goes through
`broadcast_rows`.
"""
import contextlib
import contextvars
import logging
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from dmlm.core.errors import NonScalarLoss, ShapeMismatch

logger = logging.getLogger(__name__)

_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    """Switch storage precision for newly created tensors (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported storage dtype: {dtype}")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage precision, e.g. `with precision(np.float64):`."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """A numpy array plus gradient bookkeeping."""
    __slots__ = ("values", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.values = np.array(values, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.name = name

    @classmethod
    def _from_array(cls, values: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.values = values
        out.requires_grad = requires_grad
        out.is_leaf = False
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def __getitem__(self, index) -> "Tensor":
        return getitem(self, index)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.values.dtype} requires_grad={self.requires_grad}>"


def constant(values, dtype=None) -> Tensor:
    """A tensor that never receives a gradient."""
    return Tensor(values, requires_grad=False, dtype=dtype)


class Record(NamedTuple):
    inputs: tuple
    output: Tensor
    pullback: Callable


_active_tape: contextvars.ContextVar = contextvars.ContextVar("dmlm_active_tape", default=None)


class Tape:
    """Ordered record of primitive applications. Single-owner: do not share across tasks."""

    def __init__(self):
        self.records: list = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into `.grad` of every requires_grad leaf on this tape."""
        if loss.values.shape != ():
            raise NonScalarLoss(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad or not self.records:
            logger.debug("backward() on a loss with no recorded dependencies; gradients unchanged.")
            return

        grads = {id(loss): np.ones_like(loss.values)}
        for record in reversed(self.records):
            upstream = grads.pop(id(record.output), None)
            if upstream is None:
                continue
            input_grads = record.pullback(upstream)
            for tensor, g in zip(record.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    if tensor.grad is None:
                        tensor.grad = np.zeros_like(tensor.values)
                    tensor.grad += g
                else:
                    key = id(tensor)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g


def current_tape() -> Optional[Tape]:
    return _active_tape.get()


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Run the pullbacks of `tape` (default: the active tape) from a scalar loss."""
    tape = tape or _active_tape.get()
    if tape is None:
        raise NonScalarLoss("backward() called with no tape; wrap the forward pass in `with Tape():`")
    tape.backward(loss)


def _result(values: np.ndarray, inputs: Sequence[Tensor], pullback: Callable) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._from_array(values, requires_grad=requires)
    tape = _active_tape.get()
    if requires and tape is not None:
        tape.records.append(Record(tuple(inputs), out, pullback))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- primitives ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values

    def pullback(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _result(av @ bv, (a, b), pullback)


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum of equal-shape tensors, or tensor plus a Python scalar."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.values + a.values.dtype.type(c), (a,), lambda g: (g,))
    _same_shape("add", a, b)
    return _result(a.values + b.values, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.values.dtype.type(c)
    return _result(a.values * c, (a,), lambda g: (g * c,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat: empty input")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != axis % len(ref)):
            raise ShapeMismatch(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def pullback(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, tensors, pullback)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (non-fancy) slicing; the gradient scatters back into a zero array."""
    out = np.array(a.values[index])

    def pullback(g):
        full = np.zeros_like(a.values)
        full[index] = g
        return (full,)

    return _result(out, (a,), pullback)


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of `table` selected by integer `ids` (shape (n,) -> (n, dim))."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.values.ndim != 2 or ids.ndim != 1:
        raise ShapeMismatch(f"embedding_gather: table {table.shape}, ids {ids.shape}")

    def pullback(g):
        full = np.zeros_like(table.values)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.values[ids], (table,), pullback)


def pick(a: Tensor, rows, cols) -> Tensor:
    """Entries a[rows[i], cols[i]] as a 1-D tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if a.values.ndim != 2 or rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeMismatch(f"pick: matrix {a.shape}, rows {rows.shape}, cols {cols.shape}")

    def pullback(g):
        full = np.zeros_like(a.values)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return _result(a.values[rows, cols], (a,), pullback)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeMismatch(f"transpose: expected a matrix, got {a.shape}")
    return _result(np.ascontiguousarray(a.values.T), (a,), lambda g: (g.T,))


def broadcast_rows(b: Tensor, n: int) -> Tensor:
    """Tile a vector into n identical rows."""
    if b.values.ndim != 1:
        raise ShapeMismatch(f"broadcast_rows: expected a vector, got {b.shape}")
    out = np.tile(b.values, (n, 1))
    return _result(out, (b,), lambda g: (g.sum(axis=0),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (np.tanh(0.5 * a.values) + 1.0)
    y = y.astype(a.values.dtype, copy=False)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = (a.values > 0).astype(a.values.dtype)
    return _result(a.values * mask, (a,), lambda g: (g * mask,))


def softmax_lastdim(a: Tensor) -> Tensor:
    """Max-subtracted softmax over the last axis. Each row needs at least one finite entry."""
    shifted = a.values - np.max(a.values, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def pullback(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _result(y, (a,), pullback)


def normalize_rows(a: Tensor) -> Tensor:
    """Divide every row by its sum (rows must have positive mass)."""
    s = np.sum(a.values, axis=-1, keepdims=True)
    y = a.values / s

    def pullback(g):
        return ((g - np.sum(g * y, axis=-1, keepdims=True)) / s,)

    return _result(y, (a,), pullback)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, no affine terms."""
    mu = np.mean(a.values, axis=-1, keepdims=True)
    centered = a.values - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std

    def pullback(g):
        g_mean = np.mean(g, axis=-1, keepdims=True)
        gy_mean = np.mean(g * y, axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return _result(y.astype(a.values.dtype, copy=False), (a,), pullback)


def log(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.log(av), (a,), lambda g: (g / av,))


def reduce_sum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    total = np.asarray(np.sum(a.values), dtype=a.values.dtype)
    return _result(total, (a,), lambda g: (np.full_like(a.values, g),))


def reduce_mean(a: Tensor) -> Tensor:
    n = max(a.size, 1)
    total = np.asarray(np.sum(a.values) / n, dtype=a.values.dtype)
    return _result(total, (a,), lambda g: (np.full_like(a.values, g / n),))


def all_finite(a: Tensor) -> bool:
    return bool(np.all(np.isfinite(a.values)))

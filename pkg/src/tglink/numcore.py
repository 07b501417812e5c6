"""2-D float64 tensors with a reverse-mode tape, plus seeded sampling streams.

numpy provides the array arithmetic; the tape, the adjoint rules and the
broadcast contract are local. Binary ops broadcast only a scalar (1x1) or a
per-row column vector (m x 1) second operand; the one extra pattern the model
needs, adding a (1 x n) bias row, has its own op (`add_row`) with an explicit
sum-over-rows adjoint.

Random draws (`gaussian`, `beta`, `permutation`) are never recorded on the
tape: gradients treat them as constants.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError

# default guard for checked division
DIV_FLOOR = 1e-12


class Tensor:
    """A (rows, cols) matrix of float64, optionally tracked for gradients.

    Tensors are treated as immutable once produced; optimizers that update
    leaf parameters in place must do so between tapes, never mid-graph.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _grad_fn=None, _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._grad_fn = _grad_fn
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op!r})"

    # operator sugar; scalars are lifted to 1x1 constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values, requires_grad=False):
    """Build a tensor from nested lists / arrays; 1-D input becomes one row."""
    return Tensor(values, requires_grad=requires_grad)


def column(values, requires_grad=False):
    """Build an (n, 1) column tensor from a flat sequence."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(rows, cols, requires_grad=False):
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((1, 1), float(x)))


def _result(data, parents, grad_fn, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _grad_fn=grad_fn, _op=op)
    return Tensor(data, _op=op)


def _binary_mode(a, b, op, allow_row=False):
    """Classify the broadcast pattern of a binary op's second operand."""
    if a.shape == b.shape:
        return "same"
    if b.shape == (1, 1):
        return "scalar"
    if b.shape == (a.rows, 1):
        return "col"
    if allow_row and b.shape == (1, a.cols):
        return "row"
    raise DimensionError(f"{op}: cannot broadcast {b.shape} onto {a.shape}")

def _unbroadcast(g, shape):
    """Sum a full-shape gradient back down to the broadcast operand's shape."""
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum().reshape(1, 1)
    if shape[1] == 1:
        return g.sum(axis=1, keepdims=True)
    return g.sum(axis=0, keepdims=True)


def _add_like(a, b, sign, op, allow_row=False):
    a, b = _lift(a), _lift(b)
    _binary_mode(a, b, op, allow_row)
    data = a.data + sign * b.data

    def grad_fn(g):
        ga = g if a.requires_grad else None
        gb = _unbroadcast(sign * g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), grad_fn, op)


def add(a, b):
    """Elementwise a + b; b may be a scalar or a per-row column."""
    return _add_like(a, b, 1.0, "add")


def sub(a, b):
    """Elementwise a - b; b may be a scalar or a per-row column."""
    return _add_like(a, b, -1.0, "sub")


def add_row(a, row):
    """(m, n) + (1, n) bias row; adjoint for the row sums over rows."""
    a, row = _lift(a), _lift(row)
    if row.shape != (1, a.cols):
        raise DimensionError(f"add_row: bias {row.shape} does not match {a.shape}")
    data = a.data + row.data

    def grad_fn(g):
        ga = g if a.requires_grad else None
        gb = g.sum(axis=0, keepdims=True) if row.requires_grad else None
        return ga, gb

    return _result(data, (a, row), grad_fn, "add_row")


def mul(a, b):
    """Elementwise a * b; b may be a scalar or a per-row column."""
    a, b = _lift(a), _lift(b)
    _binary_mode(a, b, "mul")
    data = a.data * b.data

    def grad_fn(g):
        ga = g * b.data if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), grad_fn, "mul")


def div(a, b, floor=DIV_FLOOR, unchecked=False):
    """Elementwise a / b; b may be a scalar or a per-row column.

    Rejects |b| < floor unless the caller opts into unchecked division.
    """
    a, b = _lift(a), _lift(b)
    _binary_mode(a, b, "div")
    if not unchecked and np.abs(b.data).min(initial=np.inf) < floor:
        raise DomainError(f"div: denominator magnitude below floor {floor}")
    data = a.data / b.data

    def grad_fn(g):
        ga = g / b.data if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), grad_fn, "div")


def _sub_any(a, b):
    # internal: also permits a (1, n) row second operand (used by reductions)
    return _add_like(a, b, -1.0, "sub", allow_row=True)


def matmul(a, b):
    """Standard matrix product; inner dimensions must agree."""
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} x {b.shape} inner dimensions differ")
    data = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), grad_fn, "matmul")


def tanh(a):
    a = _lift(a)
    data = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - data * data),)

    return _result(data, (a,), grad_fn, "tanh")


def sigmoid(a):
    a = _lift(a)
    # numerically symmetric form, stable for large |x|
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def grad_fn(g):
        return (g * data * (1.0 - data),)

    return _result(data, (a,), grad_fn, "sigmoid")


def exp(a):
    a = _lift(a)
    data = np.exp(a.data)

    def grad_fn(g):
        return (g * data,)

    return _result(data, (a,), grad_fn, "exp")


def log(a):
    a = _lift(a)
    if a.data.size and a.data.min() <= 0.0:
        raise DomainError("log: non-positive input")
    data = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return _result(data, (a,), grad_fn, "log")


def sqrt(a):
    """Elementwise square root of a non-negative tensor.

    The adjoint at exactly zero is taken as 0 (the central-difference limit of
    sqrt of a quadratic), so degenerate variances do not poison gradients.
    """
    a = _lift(a)
    if a.data.size and a.data.min() < 0.0:
        raise DomainError("sqrt: negative input")
    data = np.sqrt(a.data)

    def grad_fn(g):
        safe = np.where(data > 0.0, data, 1.0)
        return (np.where(data > 0.0, g / (2.0 * safe), 0.0),)

    return _result(data, (a,), grad_fn, "sqrt")


def clamp(a, lo=None, hi=None):
    """Clip values to [lo, hi]; gradient passes only strictly inside the bounds."""
    a = _lift(a)
    data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi

    def grad_fn(g):
        return (np.where(inside, g, 0.0),)

    return _result(data, (a,), grad_fn, "clamp")


def clamp_min(a, lo):
    return clamp(a, lo=lo)


def select(mask, a, b):
    """Entrywise choice: out = a where mask is 1, b where mask is 0.

    Selection instead of mask*a + (1-mask)*b keeps chosen entries bit-exact.
    """
    a, b = _lift(a), _lift(b)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if m.shape != a.shape or a.shape != b.shape:
        raise DimensionError(f"select: mask {m.shape}, a {a.shape}, b {b.shape} must all match")
    take_a = m != 0.0
    data = np.where(take_a, a.data, b.data)

    def grad_fn(g):
        ga = np.where(take_a, g, 0.0) if a.requires_grad else None
        gb = np.where(take_a, 0.0, g) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), grad_fn, "select")


def permute_rows(a, perm):
    """Reorder rows: out[i, :] = a[perm[i], :] for a constant permutation."""
    a = _lift(a)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (a.rows,) or sorted(perm.tolist()) != list(range(a.rows)):
        raise ContractError(f"permute_rows: not a permutation of {a.rows} rows")
    data = a.data[perm]
    inv = np.argsort(perm)

    def grad_fn(g):
        return (g[inv],)

    return _result(data, (a,), grad_fn, "permute_rows")


def concat_cols(a, b):
    """Horizontal concatenation [a ; b] of two equal-height tensors."""
    a, b = _lift(a), _lift(b)
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row counts differ ({a.shape} vs {b.shape})")
    data = np.concatenate([a.data, b.data], axis=1)
    split = a.cols

    def grad_fn(g):
        ga = g[:, :split] if a.requires_grad else None
        gb = g[:, split:] if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), grad_fn, "concat_cols")


def slice_cols(a, start, stop):
    """Column slice a[:, start:stop]; adjoint zero-pads back to full width."""
    a = _lift(a)
    if not (0 <= start <= stop <= a.cols):
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
    data = a.data[:, start:stop].copy()

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _result(data, (a,), grad_fn, "slice_cols")


_AXES = ("rows", "cols", "all")


def _axis_count(a, axis):
    if axis == "cols":
        return a.cols
    if axis == "rows":
        return a.rows
    return a.rows * a.cols


def _check_reduce(a, axis):
    if axis not in _AXES:
        raise ContractError(f"unknown reduce axis {axis!r}")
    if _axis_count(a, axis) == 0:
        raise DomainError(f"reduce over empty axis {axis!r} on shape {a.shape}")


def total(a, axis="all"):
    """Sum over the named axis ('rows', 'cols' or 'all')."""
    a = _lift(a)
    _check_reduce(a, axis)
    if axis == "cols":
        data = a.data.sum(axis=1, keepdims=True)
    elif axis == "rows":
        data = a.data.sum(axis=0, keepdims=True)
    else:
        data = a.data.sum().reshape(1, 1)

    def grad_fn(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(data, (a,), grad_fn, f"sum[{axis}]")


def mean(a, axis="all"):
    """Arithmetic mean over the named axis."""
    a = _lift(a)
    _check_reduce(a, axis)
    n = _axis_count(a, axis)
    return mul(total(a, axis), 1.0 / n)


def var_population(a, axis="all"):
    """Population variance (1/N, not 1/(N-1)) over the named axis."""
    a = _lift(a)
    _check_reduce(a, axis)
    centered = _sub_any(a, mean(a, axis))
    return mean(mul(centered, centered), axis)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log}


def elementwise(op, a, b=None):
    """Dispatch pointwise ops by name; binary ops broadcast scalar/column b only."""
    if op in _ELEMENTWISE_BINARY:
        if b is None:
            raise ContractError(f"elementwise {op!r} needs two operands")
        return _ELEMENTWISE_BINARY[op](a, b)
    if op in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ContractError(f"elementwise {op!r} takes one operand")
        return _ELEMENTWISE_UNARY[op](a)
    raise ContractError(f"unknown elementwise op {op!r}")


def reduce(kind, a, axis):
    """Dispatch reductions by name: mean, sum or var_population."""
    if kind == "mean":
        return mean(a, axis)
    if kind == "sum":
        return total(a, axis)
    if kind == "var_population":
        return var_population(a, axis)
    raise ContractError(f"unknown reduce kind {kind!r}")


class Tape:
    """Topologically ordered record of the taped ops below one root tensor.

    Entries appear after all of their inputs' producing entries; one backward
    sweep visits each entry exactly once.
    """

    def __init__(self, entries):
        self.entries = entries

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls([t for t in order if t._grad_fn is not None])

    def __len__(self):
        return len(self.entries)


def backward(loss, wrt=None):
    """Reverse-mode gradients of a scalar loss.

    Returns a dict keyed by tensor identity, covering every requires_grad
    tensor reached by the tape; tensors listed in `wrt` that never reach the
    loss get zero gradients.
    """
    if not isinstance(loss, Tensor) or loss.shape != (1, 1):
        shape = loss.shape if isinstance(loss, Tensor) else type(loss)
        raise ContractError(f"backward needs a 1x1 loss tensor, got {shape}")
    tape = Tape.trace(loss)
    grads = {}
    if loss.requires_grad or loss._grad_fn is not None:
        grads[loss] = np.ones((1, 1))
    for node in reversed(tape.entries):
        g = grads.get(node)
        if g is None:
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent)
            # never accumulate in place: grad_fns may hand back aliased arrays
            grads[parent] = pg if acc is None else acc + pg
    result = {t: g for t, g in grads.items() if t.requires_grad}
    if wrt is not None:
        for t in wrt:
            result.setdefault(t, np.zeros(t.shape))
    return result


class Rng:
    """A deterministic PCG64 stream derived from one 64-bit seed.

    `stream(name)` derives an independent child keyed by the name path, so the
    same seed always reproduces the same draws in every named sub-stream.
    """

    algorithm = "pcg64"

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self._path = tuple(_path)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF]
        for name in self._path:
            raw = name.encode("utf-8")
            entropy.append(len(raw))
            entropy.extend(raw)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def stream(self, name):
        return Rng(self.seed, self._path + (str(name),))

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        out = self._gen.uniform(low, high, size)
        return float(out) if size is None else out

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def beta(self, a, b):
        return float(self._gen.beta(a, b))


def gaussian(rng, shape):
    """An i.i.d. standard-normal tensor; a constant for gradient purposes."""
    rows, cols = shape
    if rows < 0 or cols < 0:
        raise DomainError(f"gaussian: negative shape {shape}")
    return Tensor(rng.standard_normal((rows, cols)))


def beta(rng, alpha, beta_param):
    """One Beta(alpha, beta_param) draw in [0, 1].

    Delegates to the PCG64 generator's documented gamma-ratio beta sampler.
    """
    if alpha <= 0 or beta_param <= 0:
        raise DomainError(f"beta: parameters must be positive, got ({alpha}, {beta_param})")
    return rng.beta(alpha, beta_param)


def permutation(rng, n):
    """A uniformly random permutation of range(n)."""
    if n < 0:
        raise DomainError(f"permutation: negative length {n}")
    return rng.permutation(int(n))

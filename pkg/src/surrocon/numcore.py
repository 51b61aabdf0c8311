"""Dense float64 tensors and a reverse-mode autodiff tape.

Values are immutable numpy arrays wrapped in :class:`Tensor`; each operation
records a :class:`Node` on a dynamic tape that :func:`backward` walks exactly
once in reverse topological order. The tape is rebuilt every forward pass and
freed (by refcount) once the loss node goes away.

Broadcasting is deliberately narrow: elementwise ops want matching shapes,
`add` additionally accepts a (n,d)+(d,) row-wise bias. Any op that would
produce NaN/Inf raises :class:`NonFiniteError` on the spot rather than letting
the value propagate into a loss.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    NonFiniteError,
)


class Tensor:
    """Immutable row-major float64 array."""

    __slots__ = ("_arr",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if any(n < 1 for n in arr.shape):
            raise DimensionError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor holds non-finite values")
        arr.setflags(write=False)
        self._arr = arr

    @property
    def data(self):
        """Read-only numpy view of the values."""
        return self._arr

    @property
    def shape(self):
        return self._arr.shape

    @property
    def ndim(self):
        return self._arr.ndim

    @property
    def size(self):
        return self._arr.size

    def item(self):
        return float(self._arr.item())

    def tolist(self):
        return self._arr.tolist()

    def to_bytes(self):
        """Raw little-endian float64 bytes, row-major; shape carried externally."""
        return self._arr.astype("<f8", copy=False).tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf, shape):
        flat = np.frombuffer(buf, dtype="<f8")
        expected = int(np.prod(shape)) if shape else 1
        if flat.size != expected:
            raise DimensionError(f"blob holds {flat.size} values, shape {tuple(shape)} needs {expected}")
        return cls(flat.reshape(shape))

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, dtype=np.float64))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Node:
    """A value on the tape: Tensor plus gradient slot and backward rule.

    `_rule(g)` returns one gradient array per parent; leaves have no rule.
    `grad` is lazily allocated and accumulates across backward calls until
    `zero_grad`.
    """

    __slots__ = ("value", "grad", "_parents", "_rule")

    def __init__(self, value, parents=(), rule=None):
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.grad = None
        self._parents = tuple(parents)
        self._rule = rule

    @property
    def shape(self):
        return self.value.shape

    def set_value(self, tensor):
        """Rebind the stored value (optimizer updates); shape must not change."""
        tensor = tensor if isinstance(tensor, Tensor) else Tensor(tensor)
        if tensor.shape != self.value.shape:
            raise DimensionError(f"cannot rebind shape {self.value.shape} to {tensor.shape}")
        self.value = tensor

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self):
        kind = "leaf" if self._rule is None else "op"
        return f"Node({kind}, shape={self.shape})"


def leaf(value):
    """Wrap a Tensor/array as a tape leaf (parameter or input)."""
    return Node(value)


def _out(values, parents, rule, opname):
    if not np.isfinite(values).all():
        raise NonFiniteError(f"{opname} produced non-finite values")
    return Node(Tensor(values), parents, rule)


def matmul(a, b):
    """Matrix product of 2-D nodes; backward is dA = G.Bt, dB = At.G."""
    av, bv = a.value.data, b.value.data
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shapes {av.shape} x {bv.shape} do not chain")

    def rule(g):
        return g @ bv.T, av.T @ g

    return _out(av @ bv, (a, b), rule, "matmul")


def transpose(a):
    av = a.value.data
    if av.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {av.shape}")

    def rule(g):
        return (g.T,)

    return _out(np.ascontiguousarray(av.T), (a,), rule, "transpose")


def add(a, b):
    """Elementwise add; also accepts (n,d) + (d,) as a row-wise bias."""
    av, bv = a.value.data, b.value.data
    if av.shape == bv.shape:
        def rule(g):
            return g, g
    elif av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        def rule(g):
            return g, g.sum(axis=0)
    else:
        raise DimensionError(f"add shapes {av.shape} + {bv.shape} unsupported")
    return _out(av + bv, (a, b), rule, "add")


def sub(a, b):
    av, bv = a.value.data, b.value.data
    if av.shape != bv.shape:
        raise DimensionError(f"sub shapes {av.shape} - {bv.shape} differ")

    def rule(g):
        return g, -g

    return _out(av - bv, (a, b), rule, "sub")


def mul(a, b):
    """Elementwise product, matching shapes only."""
    av, bv = a.value.data, b.value.data
    if av.shape != bv.shape:
        raise DimensionError(f"mul shapes {av.shape} * {bv.shape} differ")

    def rule(g):
        return g * bv, g * av

    return _out(av * bv, (a, b), rule, "mul")


def scale(a, factor):
    """Multiply by a python float constant."""
    factor = float(factor)
    av = a.value.data

    def rule(g):
        return (g * factor,)

    return _out(av * factor, (a,), rule, "scale")


def mul_const(a, const):
    """Elementwise product with a constant array (e.g. a 0/1 mask); no grad to the constant."""
    cv = const.data if isinstance(const, Tensor) else np.asarray(const, dtype=np.float64)
    av = a.value.data
    if av.shape != cv.shape:
        raise DimensionError(f"mul_const shapes {av.shape} * {cv.shape} differ")

    def rule(g):
        return (g * cv,)

    return _out(av * cv, (a,), rule, "mul_const")


def relu(a):
    """max(0, x); gradient passes where x > 0, is zero where x <= 0."""
    av = a.value.data
    gate = (av > 0).astype(np.float64)

    def rule(g):
        return (g * gate,)

    return _out(np.maximum(av, 0.0), (a,), rule, "relu")


def softplus(a):
    """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
    av = a.value.data
    val = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    sig = np.empty_like(av)
    pos = av >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ex = np.exp(av[~pos])
    sig[~pos] = ex / (1.0 + ex)

    def rule(g):
        return (g * sig,)

    return _out(val, (a,), rule, "softplus")


def l2_normalize(a):
    """Divide each row of a matrix by its Euclidean norm.

    Backward uses the projection-complement rule
    dA = (G - (G.y_hat) y_hat) / ||a_row||.
    """
    av = a.value.data
    if av.ndim != 2:
        raise DimensionError(f"l2_normalize expects a matrix, got shape {av.shape}")
    norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
    if (norms <= 1e-12).any():
        raise DegenerateInputError("l2_normalize saw a row with near-zero norm")
    unit = av / norms

    def rule(g):
        inner = (g * unit).sum(axis=1, keepdims=True)
        return ((g - inner * unit) / norms,)

    return _out(unit, (a,), rule, "l2_normalize")


def log_sum_exp(a):
    """log sum exp of a non-empty vector, with max-subtraction; returns a scalar node."""
    av = a.value.data
    if av.ndim != 1 or av.size == 0:
        raise DimensionError(f"log_sum_exp expects a non-empty vector, got shape {av.shape}")
    m = av.max()
    shifted = np.exp(av - m)
    total = shifted.sum()
    soft = shifted / total

    def rule(g):
        return (g * soft,)

    return _out(np.asarray(m + np.log(total)), (a,), rule, "log_sum_exp")


def take(a, indices):
    """Gather flat row-major positions into a vector; backward scatters (and sums duplicates)."""
    av = a.value.data
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("take expects a non-empty 1-D index list")
    if idx.min() < 0 or idx.max() >= av.size:
        raise DimensionError(f"take index out of range for size {av.size}")
    flat = av.reshape(-1)

    def rule(g):
        ga = np.zeros(av.size, dtype=np.float64)
        np.add.at(ga, idx, g)
        return (ga.reshape(av.shape),)

    return _out(flat[idx], (a,), rule, "take")


def sum_all(a):
    """Sum every element into a scalar node."""
    av = a.value.data

    def rule(g):
        return (np.full(av.shape, float(g)),)

    return _out(np.asarray(av.sum()), (a,), rule, "sum_all")


def mean_all(a):
    """Mean of every element as a scalar node."""
    av = a.value.data
    n = av.size

    def rule(g):
        return (np.full(av.shape, float(g) / n),)

    return _out(np.asarray(av.mean()), (a,), rule, "mean_all")


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
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
    return order  # parents before children


def backward(loss):
    """Propagate d(loss)/d(node) to every reachable node.

    The pass-local gradients are accumulated into each node's `grad`, so
    calling backward again without zeroing adds another full gradient.
    Returns a map {leaf node -> gradient array} for the reachable leaves.
    """
    if loss.value.shape != ():
        raise ContractError(f"backward root must be scalar, got shape {loss.value.shape}")
    order = _toposort(loss)
    local = {id(loss): np.asarray(1.0)}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros(node.value.shape, dtype=np.float64)
        node.grad = node.grad + g
        if node._rule is None:
            continue
        parent_grads = node._rule(g)
        for parent, pg in zip(node._parents, parent_grads):
            pid = id(parent)
            if pid in local:
                local[pid] = local[pid] + pg
            else:
                local[pid] = pg
    return {node: node.grad for node in order if node._rule is None}

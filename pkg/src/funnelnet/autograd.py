"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every op records its parents and a vector-Jacobian closure on
the output tensor, and ``backward()`` replays the tape in reverse topological
order. Gradients accumulate (never overwrite), so shared parameters collect
contributions from every path and a second ``backward()`` without zeroing
doubles the gradients.

Everything is float64. Forward ops never emit NaN on finite inputs: sigmoid
and softmax are computed in overflow-free form, ``exp`` saturates its input,
and ``log`` raises on non-positive values.
"""

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "add", "sub", "mul", "scale", "neg", "matmul", "sigmoid",
    "tanh", "prelu", "exp", "log", "softmax_rows", "reduce_sum",
    "reduce_mean", "reduce_max", "reshape", "transpose", "concat",
    "gather_rows", "clip", "grad_check",
]

_EXP_SATURATION = 700.0  # exp input clip; keeps overflow finite instead of inf*0 -> NaN


class Tensor:
    """A node in the computation graph: value, lazily allocated grad, tape hooks."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, name=""):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim and not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjp = None
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, power):
        return _pow(self, power)

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` of every requires_grad node.

        ``self`` must be scalar. Gradient flow within one call uses a side
        table, so repeated calls accumulate cleanly into ``.grad``.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.array(g)
                else:
                    node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data, parents, vjp, op):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(a.data + b.data, (a, b), vjp, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b):
    """Hadamard product; with a scalar operand this is plain scaling."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _from_op(a.data * b.data, (a, b), vjp, "mul")


def scale(x, factor):
    """Multiply by a python scalar constant."""
    return mul(x, float(factor))


def neg(x):
    x = _as_tensor(x)
    return _from_op(-x.data, (x,), lambda g: (-g,), "neg")


def _pow(x, power):
    x = _as_tensor(x)
    p = float(power)

    def vjp(g):
        return (g * p * x.data ** (p - 1.0),)

    return _from_op(x.data ** p, (x,), vjp, "pow")


def matmul(a, b):
    """Matrix product; leading batch dimensions broadcast.

    Backward: dL/da = dL/dc @ b^T and dL/db = a^T @ dL/dc, summed over any
    broadcast batch dimensions.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul requires rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul batch dimensions differ: {a.shape} x {b.shape}") from None

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _from_op(a.data @ b.data, (a, b), vjp, "matmul")


def sigmoid(x):
    x = _as_tensor(x)
    t = np.exp(-np.abs(x.data))  # always <= 1, no overflow
    out = np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _from_op(out, (x,), vjp, "sigmoid")


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _from_op(out, (x,), vjp, "tanh")


def prelu(x, alpha):
    """x where x > 0, alpha * x otherwise; alpha is a learnable scalar.

    alpha's gradient is the sum of x * dL/dy over the x <= 0 entries.
    """
    x, alpha = _as_tensor(x), _as_tensor(alpha)
    if alpha.size != 1:
        raise DimensionError(f"prelu alpha must be scalar, got shape {alpha.shape}")
    scaled = x.data <= 0

    def vjp(g):
        gx = g * np.where(scaled, alpha.data, 1.0)
        galpha = np.asarray(np.sum(g * x.data, where=scaled)).reshape(alpha.shape)
        return gx, galpha

    data = np.where(scaled, alpha.data * x.data, x.data)
    return _from_op(data, (x, alpha), vjp, "prelu")


def exp(x):
    """Exponential with saturated input, so overflow never reaches NaN."""
    x = _as_tensor(x)
    out = np.exp(np.minimum(x.data, _EXP_SATURATION))

    def vjp(g):
        return (g * out,)

    return _from_op(out, (x,), vjp, "exp")


def log(x):
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log requires strictly positive input")

    def vjp(g):
        return (g / x.data,)

    return _from_op(np.log(x.data), (x,), vjp, "log")


def softmax_rows(x):
    """Softmax over the last axis, computed with per-row max subtraction."""
    x = _as_tensor(x)
    if x.ndim < 1:
        raise DimensionError("softmax_rows requires rank >= 1 input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return ((g - np.sum(g * out, axis=-1, keepdims=True)) * out,)

    return _from_op(out, (x,), vjp, "softmax")


def _check_axis(x, axis, op):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def reduce_sum(x, axis=None):
    x = _as_tensor(x)
    if axis is None:
        def vjp(g):
            return (np.broadcast_to(g, x.shape).copy(),)

        return _from_op(x.data.sum(), (x,), vjp, "sum")
    axis = _check_axis(x, axis, "reduce_sum")

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _from_op(x.data.sum(axis=axis), (x,), vjp, "sum")


def reduce_mean(x, axis=None):
    x = _as_tensor(x)
    if axis is None:
        n = x.size

        def vjp(g):
            return (np.broadcast_to(g / n, x.shape).copy(),)

        return _from_op(x.data.mean(), (x,), vjp, "mean")
    axis = _check_axis(x, axis, "reduce_mean")
    n = x.shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),)

    return _from_op(x.data.mean(axis=axis), (x,), vjp, "mean")


def reduce_max(x, axis):
    """Max over one axis; backward routes gradient to the first argmax on ties."""
    x = _as_tensor(x)
    axis = _check_axis(x, axis, "reduce_max")
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    data = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis=axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _from_op(data, (x,), vjp, "max")


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _from_op(data, (x,), vjp, "reshape")


def transpose(x):
    """Swap the last two axes (batched matrix transpose)."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"transpose requires rank >= 2, got {x.shape}")

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _from_op(np.swapaxes(x.data, -1, -2), (x,), vjp, "transpose")


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat requires at least one tensor")
    axis = _check_axis(tensors[0], axis, "concat")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _from_op(data, tuple(tensors), vjp, "concat")


def gather_rows(table, indices):
    """Row lookup ``table[indices]``; backward scatter-adds into the table."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows table must be rank 2, got {table.shape}")

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _from_op(table.data[idx], (table,), vjp, "gather")


def clip(x, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only where x is inside."""
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _from_op(np.clip(x.data, lo, hi), (x,), vjp, "clip")


def grad_check(f, inputs, eps=1e-5):
    """Compare backward() gradients of ``f(*inputs)`` with central differences.

    Returns the max over all input entries of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat, aflat = t.data.reshape(-1), analytic.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            plus = float(f(*inputs).data)
            flat[i] = saved - eps
            minus = float(f(*inputs).data)
            flat[i] = saved
            numeric = (plus - minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst

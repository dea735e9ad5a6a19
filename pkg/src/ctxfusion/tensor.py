"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the primitives the model stack needs are provided. Every op builds its
output eagerly and, when any operand requires a gradient, records a closure
that pushes the output gradient back to its operands. ``backward`` walks the
recorded graph in reverse topological order; gradients accumulate with ``+=``
and must be cleared explicitly with ``zero_grad`` between steps.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "no_grad",
    "matmul",
    "add",
    "mul",
    "scale",
    "tanh",
    "softmax",
    "concat",
    "reshape",
    "transpose",
    "permute",
    "mean",
    "sum",
    "take_rows",
    "layer_norm",
    "backward",
    "zero_grad",
    "grad_check",
]

_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class NonFiniteError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _index(self, key)

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False):
    """Leaf tensor from array-like data. Rejects non-finite values."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor data contains non-finite values")
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else tensor(x)


def _node(data, parents, backward_fn, op):
    """Wrap an op result, recording it when any parent needs a gradient."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, False, (), None, op)


def _accum(t, g):
    if not t.requires_grad:
        return
    # never in place: g may alias another node's buffer
    if t.grad is None:
        t.grad = g.reshape(t.shape)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` over axes that were broadcast."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- primitives ---------------------------------------------------------------


def matmul(a, b):
    """Batched matrix product over the last two axes.

    A 2-D right operand (the usual weight matrix) is applied to every leading
    index of ``a`` without materialising a broadcast copy.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.ndim == 2:
        k = a.shape[-1]
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def _bw(g):
            g2 = g.reshape(-1, b.shape[1])
            if a.requires_grad:
                _accum(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                _accum(b, a.data.reshape(-1, k).T @ g2)

        return _node(out, (a, b), _bw, "matmul")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _node(out, (a, b), _bw, "matmul")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data

    def _bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), _bw, "add")


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    out = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), _bw, "mul")


def scale(a, c):
    c = float(c)
    out = a.data * c

    def _bw(g):
        _accum(a, g * c)

    return _node(out, (a,), _bw, "scale")


def tanh(a):
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError("tanh: non-finite input")
    out = np.tanh(a.data)

    def _bw(g):
        _accum(a, g * (1.0 - out * out))

    return _node(out, (a,), _bw, "tanh")


def softmax(a, mask=None):
    """Softmax over the last axis.

    ``mask`` (optional) marks valid positions of the last axis with 1. Its shape
    is ``(B, L)`` where ``B`` divides the product of ``a``'s leading axes after
    the first, e.g. a key mask ``(batch, L_kv)`` for scores ``(batch, heads,
    L_q, L_kv)``. Masked positions get weight exactly 0.
    """
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError("softmax: non-finite input")
    shape = a.shape
    x2 = np.ascontiguousarray(a.data.reshape(-1, shape[-1]))
    mask_arr = None
    rows_per_mask = 1
    if mask is not None:
        mask_arr = np.ascontiguousarray(np.asarray(mask, dtype=np.uint8))
        if mask_arr.ndim != 2 or mask_arr.shape[1] != shape[-1] or x2.shape[0] % mask_arr.shape[0]:
            raise ShapeError("softmax mask", shape, mask_arr.shape)
        rows_per_mask = x2.shape[0] // mask_arr.shape[0]
    y2 = kernels.active.softmax_fwd(x2, mask_arr, rows_per_mask)
    out = y2.reshape(shape)

    def _bw(g):
        g2 = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        _accum(a, kernels.active.softmax_bwd(g2, y2).reshape(shape))

    return _node(out, (a,), _bw, "softmax")


def concat(tensors, axis=-1):
    """Concatenate along the last axis (the only axis the models need)."""
    tensors = [_as_tensor(t) for t in tensors]
    if axis not in (-1, tensors[0].ndim - 1):
        raise ValueError("concat only supports the last axis")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat", tensors[0].shape, t.shape)
    out = np.concatenate([t.data for t in tensors], axis=-1)
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def _bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accum(t, g[..., lo:hi])

    return _node(out, tuple(tensors), _bw, "concat")


def reshape(a, shape):
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None

    def _bw(g):
        _accum(a, g.reshape(a.shape))

    return _node(out, (a,), _bw, "reshape")


def transpose(a):
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape)
    out = np.swapaxes(a.data, -1, -2)

    def _bw(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _node(out, (a,), _bw, "transpose")


def permute(a, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", a.shape, axes)
    out = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def _bw(g):
        _accum(a, np.transpose(g, inverse))

    return _node(out, (a,), _bw, "permute")


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(out, (a,), _bw, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _index(a, key):
    """Basic (slice/int) indexing; covers leading-axis range slicing."""
    out = np.array(a.data[key], dtype=np.float64)

    def _bw(g):
        full = np.zeros(a.shape)
        full[key] += g
        _accum(a, full)

    return _node(out, (a,), _bw, "index")


def take_rows(weight, ids):
    """Gather rows of a 2-D ``weight`` by integer ``ids`` (embedding lookup)."""
    ids = np.asarray(ids)
    if weight.ndim != 2:
        raise ShapeError("take_rows", weight.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"take_rows: id out of range for table of {weight.shape[0]} rows")
    out = weight.data[ids]

    def _bw(g):
        full = np.zeros(weight.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        _accum(weight, full)

    return _node(out, (weight,), _bw, "take_rows")


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalise over the last axis with population variance, then scale/shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, shift.shape)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    out2, xhat, rstd = kernels.active.layer_norm_fwd(x2, gain.data, shift.data, float(eps))

    def _bw(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx, ggain, gshift = kernels.active.layer_norm_bwd(g2, xhat, rstd, gain.data)
        _accum(x, gx.reshape(x.shape))
        _accum(gain, ggain)
        _accum(shift, gshift)

    return _node(out2.reshape(x.shape), (x, gain, shift), _bw, "layer_norm")


# -- graph traversal ------------------------------------------------------------


def _topo_order(root):
    order, seen = [], set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    _accum(loss, np.ones(loss.shape))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params):
    for p in params:
        p.grad = None


def grad_check(f, x, h=1e-6, coords=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensor ``x`` (which must require grad) to a scalar tensor.
    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``coords`` optionally restricts the probe to a subset of flat indices.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("grad_check: step h must lie in [1e-7, 1e-3]")
    x.grad = None
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("grad_check: f is non-finite at x")
    backward(out)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data.sum())
            flat[i] = orig - h
            fm = float(f(x).data.sum())
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"grad_check: f is non-finite near coordinate {i}")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    x.grad = None
    return worst
